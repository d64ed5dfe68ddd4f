//! Oracles and generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use droplab::bioassay::{culture_rhs, PadCulture, Strain};
use droplab::protocol::MAX_RATIO;
use droplab::stage::{
    Contents, Direction, DropletId, GridPos, Layout, PlateState, StageConfig, TiltCommand,
};
use rand::Rng;

/// Explicit Euler with `steps` equal steps over `dt_min`, clamping at zero.
pub fn euler_culture(culture: &PadCulture, strain: &Strain, concs: &BTreeMap<String, f64>, dt_min: f64, steps: usize) -> PadCulture {
    let kill = strain.kill_rate(concs);
    let h = dt_min / 60.0 / steps as f64;
    let (mut n, mut p) = (culture.n_normal, culture.n_persister);
    for _ in 0..steps {
        let (dn, dp) = culture_rhs(strain, kill, n, p);
        n = (n + h * dn).max(0.0);
        p = (p + h * dp).max(0.0);
    }
    PadCulture::new(n, p)
}

/// Fewest steps of any ordered ratio sequence reaching `target` from
/// `stock` within `tol`, by enumerating every sequence up to `max_steps`.
pub fn dilution_oracle(stock: f64, target: f64, max_steps: usize, tol: f64) -> Option<usize> {
    fn search(factor: u64, depth: usize, want: usize, stock: f64, target: f64, tol: f64) -> bool {
        if depth == want {
            return ((stock / factor as f64 - target) / target).abs() <= tol * (1.0 + 1e-12);
        }
        (1..=MAX_RATIO as u64).any(|k| search(factor * (1 + k), depth + 1, want, stock, target, tol))
    }
    (0..=max_steps).find(|&n| search(1, 0, n, stock, target, tol))
}

/// One stage operation of a randomized conservation sequence.
#[derive(Debug, Clone)]
pub enum Op {
    Dispense { volume_ul: f64, amp: f64, tet: f64, at: GridPos },
    Tilt(TiltCommand),
    /// Merge the `a`-th and `b`-th droplet (indices taken modulo the count).
    Merge(usize, usize),
    /// Deliver every droplet that covers a pad site.
    Deliver,
    Evaporate(f64),
}

pub const CONSERVATION_COLS: i32 = 8;
pub const CONSERVATION_ROWS: i32 = 8;

/// Evaporation rates are powers of two so that volumes stay exactly
/// representable and volume sums can be compared with `==`.
pub fn conservation_plate() -> PlateState {
    let mut layout = Layout::grid(CONSERVATION_COLS, CONSERVATION_ROWS);
    layout.add_pad(GridPos::new(2, 2), "s").add_pad(GridPos::new(5, 5), "s");
    let config = StageConfig {
        evap_droplet_ul_per_min: 0.0625,
        evap_pad_ul_per_min: 0.125,
        ..StageConfig::default()
    };
    PlateState::from_layout(&layout, config).expect("grid layout is valid")
}

pub fn random_op<R: Rng>(rng: &mut R) -> Op {
    match rng.random_range(0..100) {
        0..30 => Op::Dispense {
            // Quarter-microlitre steps keep every volume sum exact.
            volume_ul: rng.random_range(2..=200) as f64 * 0.25,
            amp: rng.random_range(0.0..100.0),
            tet: if rng.random_bool(0.5) { rng.random_range(0.0..10.0) } else { 0.0 },
            at: GridPos::new(rng.random_range(0..CONSERVATION_COLS), rng.random_range(0..CONSERVATION_ROWS)),
        },
        30..80 => {
            let dir = Direction::ALL[rng.random_range(0..4)];
            Op::Tilt(TiltCommand::toward(dir, rng.random_range(1.0..15.0)))
        }
        80..85 => Op::Merge(rng.random_range(0..64), rng.random_range(0..64)),
        85..95 => Op::Deliver,
        _ => Op::Evaporate(rng.random_range(1..=5) as f64),
    }
}

pub fn random_ops<R: Rng>(rng: &mut R, n: usize) -> Vec<Op> {
    (0..n).map(|_| random_op(rng)).collect()
}

pub const CONSERVED_DRUGS: [&str; 2] = ["amp", "tet"];

/// Ledger of what the plate should hold.
#[derive(Debug, Clone)]
pub struct Expected {
    pub volume: f64,
    pub mass: BTreeMap<&'static str, f64>,
}

impl Expected {
    pub fn of(plate: &PlateState) -> Self {
        Self {
            volume: plate.total_volume(),
            mass: CONSERVED_DRUGS.iter().map(|&d| (d, plate.total_mass(d))).collect(),
        }
    }
}

/// Apply `op`, update the expectation and check conservation plus the
/// settlement invariants. Rejected operations must leave the plate unchanged.
pub fn apply_and_check(plate: &mut PlateState, op: &Op, expected: &mut Expected) -> Result<(), String> {
    let before = plate.clone();
    let mut evaporated = false;
    let accepted = match op {
        Op::Dispense { volume_ul, amp, tet, at } => {
            let mut contents = Contents::media().with_solute("amp", *amp);
            if *tet > 0.0 {
                contents = contents.with_solute("tet", *tet);
            }
            let ok = plate.dispense(*volume_ul, contents, *at).is_ok();
            if ok {
                expected.volume += volume_ul;
                *expected.mass.get_mut("amp").unwrap() += volume_ul * amp;
                *expected.mass.get_mut("tet").unwrap() += volume_ul * tet;
            }
            ok
        }
        Op::Tilt(cmd) => plate.apply_tilt(*cmd).is_ok(),
        Op::Merge(a, b) => {
            let ids: Vec<DropletId> = plate.droplets().iter().map(|d| d.id).collect();
            if ids.is_empty() {
                false
            } else {
                plate.merge(ids[a % ids.len()], ids[b % ids.len()]).is_ok()
            }
        }
        Op::Deliver => {
            let sites: Vec<GridPos> = plate.pads().iter().map(|p| p.pos()).collect();
            let mut any = false;
            for site in sites {
                let covering = plate.droplets().iter().find(|d| d.covers(site)).map(|d| d.id);
                if let Some(id) = covering {
                    plate.deliver_to_pad(id, site).map_err(|e| e.to_string())?;
                    any = true;
                }
            }
            any
        }
        Op::Evaporate(dt) => {
            plate.evaporate(*dt).map_err(|e| e.to_string())?;
            evaporated = true;
            true
        }
    };
    if !accepted && (plate.droplets() != before.droplets() || plate.pads() != before.pads()) {
        return Err(format!("rejected {op:?} changed the plate"));
    }
    plate.check_invariants().map_err(|e| format!("after {op:?}: {e}"))?;
    if evaporated {
        expected.volume = plate.total_volume();
    } else if plate.total_volume() != expected.volume {
        return Err(format!(
            "after {op:?}: volume {} expected {}",
            plate.total_volume(),
            expected.volume
        ));
    }
    for (drug, want) in &expected.mass {
        let got = plate.total_mass(drug);
        let scale = want.abs().max(1e-300);
        if (got - want).abs() / scale > 1e-9 {
            return Err(format!("after {op:?}: {drug} mass {got} expected {want}"));
        }
    }
    Ok(())
}

/// Run a whole sequence from a fresh conservation plate.
pub fn check_sequence(ops: &[Op]) -> Result<(), String> {
    let mut plate = conservation_plate();
    let mut expected = Expected::of(&plate);
    for op in ops {
        apply_and_check(&mut plate, op, &mut expected)?;
    }
    Ok(())
}

pub fn droplab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_droplab"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("droplab binary runs")
}

/// Repository root, where the shipped configs live.
pub fn repo_root() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../.."))
}

/// Every file under `dir` as (relative path, bytes), sorted by path.
pub fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).expect("readable file")));
            }
        }
    }
    out.sort();
    out
}

/// Interval between readings, over which each Euler reference segment runs.
pub const EULER_SEGMENT_MIN: f64 = 20.0;
pub const EULER_STEPS: usize = 10_000;

/// One culture held at constant drug concentrations for `duration_min`.
#[derive(Debug, Clone)]
pub struct CultureCase {
    pub label: String,
    pub strain: Strain,
    pub concs: BTreeMap<String, f64>,
    pub duration_min: f64,
}

/// Every strain/drug/dose combination the shipped examples and scenarios run.
pub fn example_culture_cases() -> Vec<CultureCase> {
    use droplab::scenarios::*;
    let mut out = Vec::new();
    let mut push = |label: String, strain: &Strain, concs: BTreeMap<String, f64>, duration_min: f64| {
        out.push(CultureCase {
            label,
            strain: strain.clone(),
            concs,
            duration_min,
        })
    };
    for s in panel_strains() {
        push(format!("panel {} control", s.id), &s, BTreeMap::new(), 480.0);
        for d in PANEL_DRUGS {
            push(format!("panel {} {d}", s.id), &s, BTreeMap::from([(d.to_string(), PANEL_DOSE)]), 480.0);
        }
    }
    let opts = AssayOptions::default();
    for seed in 0..5 {
        let ladder = ampicillin_ladder(seed, &opts);
        let s = &ladder.strains["wt"];
        for c in AMP_LADDER {
            push(format!("ladder seed {seed} amp {c}"), s, BTreeMap::from([("amp".to_string(), c)]), 480.0);
        }
    }
    let scenario = cocktail_scenario(droplab::optimizer::EvalMode::Bypass);
    let l = scenario.space.levels.unwrap();
    for i in 0..l * l * l {
        let idx = [i / (l * l), (i / l) % l, i % l];
        let concs: BTreeMap<String, f64> = scenario
            .space
            .drugs
            .iter()
            .enumerate()
            .map(|(d, name)| (name.clone(), scenario.space.level_value(d, idx[d])))
            .collect();
        push(format!("cocktail {idx:?}"), &scenario.strain, concs, scenario.duration_min);
    }
    let base = |id: &str| Strain::new(id, 1.0, 1e6, 1e-3);
    let kill_curves = [
        base("susceptible").with_drug("amp", susceptible()),
        base("tolerant").with_drug("amp", tolerant()),
        base("resistant").with_drug("amp", resistant()),
        base("persister").with_drug("amp", susceptible()).with_persisters(0.01, 0.005, 0.05, 0.02),
    ];
    for s in &kill_curves {
        for c in [0.0, 32.0] {
            push(format!("kill curve {} amp {c}", s.id), s, BTreeMap::from([("amp".to_string(), c)]), 480.0);
        }
    }
    out
}

/// Largest relative gap in total density between RK4 and the Euler
/// reference over every reading of the case.
pub fn rk4_vs_euler(case: &CultureCase) -> f64 {
    use droplab::bioassay::step_culture;
    let start = PadCulture::inoculate(&case.strain, case.strain.inoculum);
    let (mut rk, mut eu) = (start.clone(), start);
    let mut worst: f64 = 0.0;
    let mut t = 0.0;
    while t < case.duration_min - 1e-9 {
        let dt = EULER_SEGMENT_MIN.min(case.duration_min - t);
        rk = step_culture(&rk, &case.strain, &case.concs, dt).expect("valid step");
        eu = euler_culture(&eu, &case.strain, &case.concs, dt, EULER_STEPS);
        worst = worst.max(((rk.total() - eu.total()) / eu.total()).abs());
        t += dt;
    }
    worst
}

/// Ten logistic parameter sets spanning slow to fast growth, small to large
/// capacity and short to long lags; all reach their plateau within 12 h.
pub fn growth_grid() -> Vec<droplab::imaging::GrowthParams> {
    const R: [f64; 10] = [0.4, 0.6, 0.8, 1.0, 1.2, 1.5, 1.8, 2.2, 2.6, 3.0];
    const K: [f64; 5] = [0.2, 0.5, 1.0, 2.0, 5.0];
    (0..10)
        .map(|i| droplab::imaging::GrowthParams {
            r: R[i],
            k: K[i % 5],
            lag: 0.5 + 0.5 * ((3 * i) % 10) as f64,
        })
        .collect()
}

/// Noiseless scan every 20 min for 12 h, as (minutes, value).
pub fn sample_curve(p: &droplab::imaging::GrowthParams) -> Vec<(f64, f64)> {
    (0..=36)
        .map(|i| {
            let t = 20.0 * i as f64;
            (t, droplab::imaging::logistic_with_lag(p, t / 60.0))
        })
        .collect()
}

pub fn relative_error(got: f64, want: f64) -> f64 {
    ((got - want) / want).abs()
}
