use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{CocktailSpace, Objective, OptimizerError};
use crate::bioassay::{step_culture, survival_percent, FluorescenceModel, PadCulture, Strain};
use crate::protocol::{compile, parse_script, plan_dilution, DEFAULT_MAX_DILUTION_STEPS, MAX_RATIO};
use crate::runner::{inoculate, run_plan};
use crate::scenarios::{assay_layout, mixing_site, pad_site, strain_map};
use crate::stage::{PlateState, StageConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Compile a dosing protocol and replay it on the stage.
    Pipeline,
    /// Hold the genome concentrations on a bare culture from time zero.
    Bypass,
}

/// One strain, one treated pad and one drug-free control. In pipeline mode
/// each drug arrives as one `dose_ul` droplet mixed from a stock series
/// (each stock `STOCK_STEP` times weaker than the previous one) and the
/// control receives the same volume of media.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocktailScenario {
    pub strain: Strain,
    pub space: CocktailSpace,
    pub duration_min: f64,
    #[serde(rename = "dose_uL")]
    pub dose_ul: f64,
    /// Replenishment period and droplet volume.
    pub replenish: Option<(f64, f64)>,
    pub mode: EvalMode,
}

/// Ratio between consecutive stocks of a drug.
const STOCK_STEP: f64 = 12.0;
const STOCKS: i32 = 4;
/// Strongest stock relative to the highest dose droplet concentration.
const STOCK_HEADROOM: f64 = 3.0;

/// Every compound factor reachable in at most `steps` mixes.
fn reachable_factors(steps: usize) -> BTreeSet<u64> {
    let mut all = BTreeSet::from([1u64]);
    let mut frontier = all.clone();
    for _ in 0..steps {
        frontier = frontier
            .iter()
            .flat_map(|f| (1..=MAX_RATIO as u64).map(move |k| f * (1 + k)))
            .collect();
        all.extend(&frontier);
    }
    all
}

impl CocktailScenario {
    fn pad_volume(&self) -> f64 {
        StageConfig::default().pad_initial_ul + self.dose_ul * self.space.dims() as f64
    }

    pub fn plate(&self) -> PlateState {
        let id = self.strain.id.as_str();
        PlateState::from_layout(&assay_layout(&[id, id]), StageConfig::default()).expect("strip layout is valid")
    }

    /// Stock concentrations of drug `d`, strongest first.
    fn stocks(&self, d: usize) -> Vec<f64> {
        let top = self.space.cmax[d] * self.pad_volume() / self.dose_ul * STOCK_HEADROOM;
        (0..STOCKS).map(|j| top / STOCK_STEP.powi(j)).collect()
    }

    /// Protocol dosing `genome` onto the treated pad.
    pub fn protocol(&self, genome: &[f64]) -> String {
        let mut s = String::new();
        writeln!(s, "DURATION {}min", self.duration_min).unwrap();
        writeln!(s, "DRUGS {}", self.space.drugs.join(", ")).unwrap();
        writeln!(s, "PAD treated AT {}", pad_site(0)).unwrap();
        writeln!(s, "PAD control AT {}", pad_site(1)).unwrap();
        writeln!(s, "DILUENT media:1").unwrap();
        if let Some((period, vol)) = self.replenish {
            writeln!(s, "REPLENISH PADS treated,control EVERY {period}min WITH {vol}uL").unwrap();
        }
        let factors = reachable_factors(DEFAULT_MAX_DILUTION_STEPS);
        let (m_t, m_c) = (mixing_site(0), mixing_site(1));
        for (d, drug) in self.space.drugs.iter().enumerate() {
            let label = format!("dose_{drug}");
            let target = genome[d] * self.pad_volume() / self.dose_ul;
            // Weakest stock that still reaches the target.
            match self.stocks(d).into_iter().rev().find(|&st| st >= target * (1.0 - 1e-12)) {
                Some(stock) if target > 0.0 => {
                    // Nearest reachable dilution, tolerating at least 1%.
                    let err = factors
                        .iter()
                        .map(|&f| ((stock / f as f64 - target) / target).abs())
                        .fold(f64::INFINITY, f64::min);
                    let tol = (err * 1.001).max(0.01);
                    let plan = plan_dilution(stock, target, 1.0, DEFAULT_MAX_DILUTION_STEPS, tol)
                        .expect("tolerance admits the nearest factor");
                    let stock_ul = self.dose_ul / plan.factor;
                    writeln!(s, "DISPENSE {stock_ul}uL {drug}:{stock} media:1 AT {m_t} AS {label}").unwrap();
                    if plan.step_count() > 0 {
                        writeln!(s, "DILUTE {label} {drug} TO {target} TOL {}%", tol * 100.0).unwrap();
                    }
                }
                _ => writeln!(s, "DISPENSE {}uL media:1 AT {m_t} AS {label}", self.dose_ul).unwrap(),
            }
            writeln!(s, "DELIVER {label} TO treated").unwrap();
            writeln!(s, "DISPENSE {}uL media:1 AT {m_c} AS ctrl_{drug}", self.dose_ul).unwrap();
            writeln!(s, "DELIVER ctrl_{drug} TO control").unwrap();
        }
        s
    }

    fn pipeline(&self, genome: &[f64], seed: u64) -> Result<f64, String> {
        let script = parse_script(&self.protocol(genome)).map_err(|e| e.to_string())?;
        let mut plate = self.plate();
        let plan = compile(&script, &plate).map_err(|e| e.to_string())?;
        let strains = strain_map(vec![self.strain.clone()]);
        inoculate(&mut plate, &strains).map_err(|e| e.to_string())?;
        let out = run_plan(&plan, &plate, &strains, &FluorescenceModel::default(), seed)
            .map_err(|e| e.to_string())?;
        let culture = |i| &out.plate.pad_at(pad_site(i)).expect("strip pad").culture;
        Ok(survival_percent(culture(0), culture(1)))
    }

    fn bypass(&self, genome: &[f64]) -> Result<f64, String> {
        let start = PadCulture::inoculate(&self.strain, self.strain.inoculum);
        let concs: BTreeMap<String, f64> = self.space.drugs.iter().cloned().zip(genome.iter().copied()).collect();
        let treated = step_culture(&start, &self.strain, &concs, self.duration_min).map_err(|e| e.to_string())?;
        let control = step_culture(&start, &self.strain, &BTreeMap::new(), self.duration_min)
            .map_err(|e| e.to_string())?;
        Ok(survival_percent(&treated, &control))
    }
}

impl Objective for CocktailScenario {
    fn survival(&self, genome: &[f64], seed: u64) -> Result<f64, OptimizerError> {
        let r = match self.mode {
            EvalMode::Pipeline => self.pipeline(genome, seed),
            EvalMode::Bypass => self.bypass(genome),
        };
        r.map_err(|detail| OptimizerError::Evaluation {
            genome: genome.to_vec(),
            detail,
        })
    }
}
