//! Ready-made plates, strain panels and assay protocols.
//!
//! Every assay uses the same strip layout: pad `i` sits at `(3i+1, 4)` and
//! its dose is mixed on the anchor two rows above it. A dose is `3 µL` of
//! stock at `14 P` diluted 1:3 with media to `12 µL` at `3.5 P`, which brings
//! a `30 µL` pad to `P`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use crate::bioassay::{DoseResponse, Strain};
use crate::optimizer::{CocktailScenario, CocktailSpace, EvalMode, SearchConfig};
use crate::runner::Strains;
use crate::stage::{GridPos, Layout, PlateState, StageConfig};

pub const PANEL_DRUGS: [&str; 4] = ["amp", "amx", "tet", "cip"];
pub const PANEL_STRAINS: [&str; 3] = ["bla", "tetA", "gyrA"];

/// Pad concentration of every treated pad in the drug panel, µg/mL.
pub const PANEL_DOSE: f64 = 32.0;

/// Stock-to-dose dilution ratio: one part stock, three parts media.
const DOSE_DILUTION: f64 = 4.0;
const STOCK_UL: f64 = 3.0;
const DOSE_UL: f64 = STOCK_UL * DOSE_DILUTION;

pub fn susceptible() -> DoseResponse {
    DoseResponse::new(2.5, 4.0, 2.0)
}

pub fn tolerant() -> DoseResponse {
    DoseResponse::new(1.6, 4.0, 2.0)
}

pub fn resistant() -> DoseResponse {
    DoseResponse::new(0.5, 256.0, 2.0)
}

fn base_strain(id: &str) -> Strain {
    Strain::new(id, 1.0, 1e6, 1e-3).with_inoculum(1e3)
}

/// Three strains, each resistant to a different part of the panel:
/// `bla` to both β-lactams, `tetA` to tetracycline (and persister-prone),
/// `gyrA` to ciprofloxacin (and tolerant to β-lactams).
pub fn panel_strains() -> Vec<Strain> {
    vec![
        base_strain("bla")
            .with_drug("amp", resistant())
            .with_drug("amx", resistant())
            .with_drug("tet", susceptible())
            .with_drug("cip", susceptible()),
        base_strain("tetA")
            .with_drug("amp", susceptible())
            .with_drug("amx", susceptible())
            .with_drug("tet", resistant())
            .with_drug("cip", susceptible())
            .with_persisters(0.01, 0.005, 0.05, 0.02),
        base_strain("gyrA")
            .with_drug("amp", tolerant())
            .with_drug("amx", tolerant())
            .with_drug("tet", susceptible())
            .with_drug("cip", resistant()),
    ]
}

/// Drugs each panel strain is engineered to resist.
pub fn panel_resistance() -> BTreeMap<String, BTreeSet<String>> {
    [("bla", vec!["amp", "amx"]), ("tetA", vec!["tet"]), ("gyrA", vec!["cip"])]
        .into_iter()
        .map(|(s, d)| (s.to_string(), d.into_iter().map(String::from).collect()))
        .collect()
}

pub fn strain_map(strains: Vec<Strain>) -> Strains {
    strains.into_iter().map(|s| (s.id.clone(), s)).collect()
}

/// One pad of an assay strip. `drug = None` makes it a drug-free control
/// that still receives a media droplet of the same volume.
#[derive(Debug, Clone, PartialEq)]
pub struct AssayPad {
    pub name: String,
    pub strain: String,
    pub drug: Option<String>,
    pub conc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssayOptions {
    pub duration_min: f64,
    pub image_period_min: f64,
    /// Period and droplet volume of media replenishment.
    pub replenish: Option<(f64, f64)>,
}

impl Default for AssayOptions {
    fn default() -> Self {
        Self {
            duration_min: 480.0,
            image_period_min: 20.0,
            replenish: Some((20.0, 2.0)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Assay {
    pub plate: PlateState,
    pub strains: Strains,
    pub pads: Vec<AssayPad>,
    pub protocol: String,
}

pub fn pad_site(i: usize) -> GridPos {
    GridPos::new(3 * i as i32 + 1, 4)
}

pub fn mixing_site(i: usize) -> GridPos {
    GridPos::new(3 * i as i32 + 1, 2)
}

/// A 5-row strip of `+` anchors with one pad per entry of `strains`.
pub fn assay_layout(strains: &[&str]) -> Layout {
    let mut layout = Layout::grid(3 * strains.len() as i32, 5);
    for (i, s) in strains.iter().enumerate() {
        layout.add_pad(pad_site(i), *s);
    }
    layout
}

fn fmt_num(x: f64) -> String {
    format!("{x}")
}

/// Protocol text dosing every pad once, imaging all pads periodically and
/// optionally replenishing them.
pub fn assay_protocol(pads: &[AssayPad], opts: &AssayOptions) -> String {
    let names: Vec<&str> = pads.iter().map(|p| p.name.as_str()).collect();
    let drugs: BTreeSet<&str> = pads.iter().filter_map(|p| p.drug.as_deref()).collect();
    let mut s = String::new();
    writeln!(s, "DURATION {}min", fmt_num(opts.duration_min)).unwrap();
    if !drugs.is_empty() {
        writeln!(s, "DRUGS {}", drugs.into_iter().collect::<Vec<_>>().join(", ")).unwrap();
    }
    for (i, p) in pads.iter().enumerate() {
        writeln!(s, "PAD {} AT {}", p.name, pad_site(i)).unwrap();
    }
    writeln!(s, "DILUENT media:1").unwrap();
    writeln!(s, "IMAGE PADS {} EVERY {}min", names.join(","), fmt_num(opts.image_period_min)).unwrap();
    if let Some((period, vol)) = opts.replenish {
        writeln!(
            s,
            "REPLENISH PADS {} EVERY {}min WITH {}uL",
            names.join(","),
            fmt_num(period),
            fmt_num(vol)
        )
        .unwrap();
    }
    for (i, p) in pads.iter().enumerate() {
        let label = format!("dose_{}", p.name);
        let at = mixing_site(i);
        match &p.drug {
            Some(drug) => {
                let dose = p.conc * 3.5;
                let stock = dose * DOSE_DILUTION;
                writeln!(s, "DISPENSE {}uL {drug}:{} media:1 AT {at} AS {label}", fmt_num(STOCK_UL), fmt_num(stock)).unwrap();
                writeln!(s, "DILUTE {label} {drug} TO {} TOL 1%", fmt_num(dose)).unwrap();
            }
            None => {
                writeln!(s, "DISPENSE {}uL media:1 AT {at} AS {label}", fmt_num(DOSE_UL)).unwrap();
            }
        }
        writeln!(s, "DELIVER {label} TO {}", p.name).unwrap();
    }
    s
}

pub fn assay(pads: Vec<AssayPad>, strains: Vec<Strain>, opts: &AssayOptions) -> Assay {
    let strain_ids: Vec<&str> = pads.iter().map(|p| p.strain.as_str()).collect();
    let plate = PlateState::from_layout(&assay_layout(&strain_ids), StageConfig::default())
        .expect("strip layout is valid");
    let protocol = assay_protocol(&pads, opts);
    Assay {
        plate,
        strains: strain_map(strains),
        pads,
        protocol,
    }
}

/// Every panel strain against every panel drug plus one control per strain:
/// 12 treated pads and 3 controls imaged every 20 min for 8 h.
pub fn panel_pads() -> Vec<AssayPad> {
    let mut pads = Vec::new();
    for strain in PANEL_STRAINS {
        for drug in PANEL_DRUGS {
            pads.push(AssayPad {
                name: format!("{strain}_{drug}"),
                strain: strain.into(),
                drug: Some(drug.into()),
                conc: PANEL_DOSE,
            });
        }
        pads.push(AssayPad {
            name: format!("{strain}_ctrl"),
            strain: strain.into(),
            drug: None,
            conc: 0.0,
        });
    }
    pads
}

pub fn drug_panel(opts: &AssayOptions) -> Assay {
    assay(panel_pads(), panel_strains(), opts)
}

/// Readout noise used by the drug-panel run.
pub const PANEL_NOISE_SIGMA: f64 = 25.0;

/// Pad concentrations of the ampicillin ladder, µg/mL.
pub const AMP_LADDER: [f64; 6] = [0.0, 2.0, 4.0, 8.0, 16.0, 32.0];

/// Spread of the batch inoculum between ladder repeats (log-space sigma).
pub const INOCULUM_LOG_SIGMA: f64 = 0.3;

/// Ampicillin ladder on an ampicillin-susceptible strain. All pads are
/// seeded from one batch whose density is drawn from `seed`.
pub fn ampicillin_ladder(seed: u64, opts: &AssayOptions) -> Assay {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = LogNormal::new(0.0, INOCULUM_LOG_SIGMA).expect("finite sigma").sample(&mut rng);
    let strain = base_strain("wt")
        .with_drug("amp", susceptible())
        .with_inoculum(1e3 * jitter);
    let pads = AMP_LADDER
        .iter()
        .enumerate()
        .map(|(i, &c)| AssayPad {
            name: format!("amp{i}"),
            strain: "wt".into(),
            drug: (c > 0.0).then(|| "amp".to_string()),
            conc: c,
        })
        .collect();
    assay(pads, vec![strain], opts)
}

/// Three-drug search problem on a 5-level lattice: the strain is strongly
/// susceptible to `amp`, weakly to `cip` and indifferent to `tet`.
pub fn cocktail_scenario(mode: EvalMode) -> CocktailScenario {
    let strain = base_strain("target")
        .with_drug("amp", DoseResponse::new(2.5, 8.0, 2.0))
        .with_drug("cip", DoseResponse::new(1.2, 4.0, 2.0));
    CocktailScenario {
        strain,
        space: CocktailSpace {
            drugs: vec!["amp".into(), "cip".into(), "tet".into()],
            cmax: vec![32.0; 3],
            levels: Some(5),
        },
        duration_min: 240.0,
        dose_ul: 24.0,
        replenish: Some((20.0, 2.0)),
        mode,
    }
}

/// Search settings used against [`cocktail_scenario`]: the 50-evaluation
/// budget, not the generation cap or stop rule, ends the search.
pub fn cocktail_search_config(seed: u64) -> SearchConfig {
    SearchConfig {
        population: 8,
        f: 0.7,
        cr: 0.3,
        max_generations: 100,
        stall_generations: 100,
        seed,
        max_evaluations: Some(50),
        ..Default::default()
    }
}
