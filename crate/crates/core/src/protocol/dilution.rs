use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest diluent-to-stock ratio of a single mixing step.
pub const MAX_RATIO: u32 = 9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DilutionError {
    #[error("no plan within {max_steps} steps reaches the target within {tol} relative tolerance")]
    Unreachable { max_steps: usize, tol: f64 },
    #[error("target must satisfy 0 < target <= stock")]
    TargetExceedsStock,
}

/// A serial dilution. Step `k` merges the whole current droplet with `k`
/// times its volume of diluent, so the compound factor is the product of `1 + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DilutionPlan {
    /// Diluent parts per stock part, one entry per step (`1:k` mixes).
    pub ratios: Vec<u32>,
    pub factor: f64,
    pub achieved: f64,
    /// Total diluent dispensed when starting from `unit_vol` of stock.
    #[serde(rename = "diluent_uL")]
    pub diluent_ul: f64,
}

impl DilutionPlan {
    pub fn step_count(&self) -> usize {
        self.ratios.len()
    }
}

pub(crate) fn within(achieved: f64, target: f64, tol: f64) -> bool {
    ((achieved - target) / target).abs() <= tol * (1.0 + 1e-12)
}

/// Fewest-step plan; ties go to the least diluent, then to the
/// lexicographically smallest ratio sequence.
pub fn plan_dilution(
    stock: f64,
    target: f64,
    unit_vol: f64,
    max_steps: usize,
    tol: f64,
) -> Result<DilutionPlan, DilutionError> {
    if !(target > 0.0 && target <= stock && stock.is_finite()) {
        return Err(DilutionError::TargetExceedsStock);
    }
    for steps in 0..=max_steps {
        let mut best: Option<(u64, Vec<u32>)> = None;
        let mut seq = vec![1u32; steps];
        // Non-decreasing sequences cover every multiset once, and the sorted
        // order of a multiset is its lexicographically smallest arrangement.
        loop {
            let factor: u64 = seq.iter().map(|&k| 1 + k as u64).product();
            if within(stock / factor as f64, target, tol) {
                let better = match &best {
                    None => true,
                    Some((f, s)) => factor < *f || (factor == *f && seq < *s),
                };
                if better {
                    best = Some((factor, seq.clone()));
                }
            }
            if !next_non_decreasing(&mut seq) {
                break;
            }
        }
        if let Some((factor, ratios)) = best {
            let f = factor as f64;
            return Ok(DilutionPlan {
                ratios,
                factor: f,
                achieved: stock / f,
                diluent_ul: unit_vol * (f - 1.0),
            });
        }
    }
    Err(DilutionError::Unreachable { max_steps, tol })
}

fn next_non_decreasing(seq: &mut [u32]) -> bool {
    let Some(i) = seq.iter().rposition(|&k| k < MAX_RATIO) else {
        return false;
    };
    let v = seq[i] + 1;
    for k in &mut seq[i..] {
        *k = v;
    }
    true
}
