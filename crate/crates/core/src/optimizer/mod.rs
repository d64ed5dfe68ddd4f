//! Directed evolutionary search for the cheapest killing cocktail:
//! differential evolution over per-drug concentrations, scored by survival
//! plus a weighted drug burden.

mod de;
mod scenario;

pub use de::{
    brute_force_oracle, evolve, run_search, write_history_csv, Evaluator, GenerationRecord,
    OracleResult, SearchConfig, SearchResult,
};
pub use scenario::{CocktailScenario, EvalMode};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error("population of {0} is too small (need at least 4)")]
    PopulationTooSmall(usize),
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("lattice of {points} genomes exceeds the exhaustive limit")]
    GridTooLarge { points: f64 },
    #[error("evaluating {genome:?}: {detail}")]
    Evaluation { genome: Vec<f64>, detail: String },
    #[error("i/o: {0}")]
    Io(String),
}

/// Search bounds: concentration of drug `i` lies in `[0, cmax[i]]`, optionally
/// restricted to `levels` evenly spaced values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocktailSpace {
    pub drugs: Vec<String>,
    pub cmax: Vec<f64>,
    #[serde(default)]
    pub levels: Option<usize>,
}

impl CocktailSpace {
    pub fn dims(&self) -> usize {
        self.drugs.len()
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: &str| Err(OptimizerError::InvalidConfig(m.into()));
        if self.drugs.is_empty() || self.drugs.len() != self.cmax.len() {
            return bad("need one cmax per drug");
        }
        if self.cmax.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return bad("cmax must be positive");
        }
        if self.levels == Some(0) {
            return bad("levels must be at least 1");
        }
        Ok(())
    }

    /// Value of level `i` of drug `d`.
    pub fn level_value(&self, d: usize, i: usize) -> f64 {
        match self.levels {
            Some(l) if l > 1 => self.cmax[d] * i as f64 / (l - 1) as f64,
            _ => 0.0,
        }
    }

    /// Clamp to bounds and, when quantized, snap to the nearest level.
    pub fn project(&self, genome: &mut [f64]) {
        for (d, v) in genome.iter_mut().enumerate() {
            let c = v.clamp(0.0, self.cmax[d]);
            *v = match self.levels {
                Some(l) if l > 1 => {
                    let i = (c / self.cmax[d] * (l - 1) as f64).round() as usize;
                    self.level_value(d, i.min(l - 1))
                }
                Some(_) => 0.0,
                None => c,
            };
        }
    }

    /// `Σ c_d / cmax_d`.
    pub fn burden(&self, genome: &[f64]) -> f64 {
        genome.iter().zip(&self.cmax).map(|(c, m)| c / m).sum()
    }
}

/// Anything that can report percent survival for a cocktail.
pub trait Objective {
    fn survival(&self, genome: &[f64], seed: u64) -> Result<f64, OptimizerError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub genome: Vec<f64>,
    pub survival_pct: f64,
    pub burden: f64,
    /// `survival + lambda * 100 * burden / D`; lower is better.
    pub fitness: f64,
    pub seed: u64,
}

impl FitnessRecord {
    pub fn score(genome: Vec<f64>, survival_pct: f64, space: &CocktailSpace, lambda: f64, seed: u64) -> Self {
        let burden = space.burden(&genome);
        let fitness = survival_pct + lambda * 100.0 * burden / space.dims() as f64;
        Self {
            genome,
            survival_pct,
            burden,
            fitness,
            seed,
        }
    }
}
