use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::model::{PadCulture, Strain};
use super::BioassayError;

/// Linear GFP readout with an optional Gaussian noise floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FluorescenceModel {
    pub baseline: f64,
    pub noise_sigma: f64,
}

impl Default for FluorescenceModel {
    fn default() -> Self {
        Self {
            baseline: 50.0,
            noise_sigma: 0.0,
        }
    }
}

impl FluorescenceModel {
    pub fn noiseless(&self, culture: &PadCulture, strain: &Strain) -> f64 {
        strain.gfp_per_cell * culture.total() + self.baseline
    }

    /// Noisy reading; draws from `rng` only when the noise floor is non-zero.
    pub fn read<R: Rng + ?Sized>(&self, culture: &PadCulture, strain: &Strain, rng: &mut R) -> f64 {
        let clean = self.noiseless(culture, strain);
        if self.noise_sigma > 0.0 {
            let n = Normal::new(0.0, self.noise_sigma).expect("finite sigma");
            clean + n.sample(rng)
        } else {
            clean
        }
    }
}

/// Upper slack on survival so a treated culture marginally above its
/// control through rounding is not clipped.
pub const SURVIVAL_EPS: f64 = 1e-6;

/// `100 * treated / control` on total live density, clamped to `[0, 100 (1 + eps)]`.
pub fn survival_percent(treated: &PadCulture, control: &PadCulture) -> f64 {
    let c = control.total();
    if c <= 0.0 {
        return 0.0;
    }
    (100.0 * treated.total() / c).clamp(0.0, 100.0 * (1.0 + SURVIVAL_EPS))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub pad_id: String,
    pub t_min: f64,
    pub intensity: f64,
    #[serde(rename = "N_normal")]
    pub n_normal: f64,
    #[serde(rename = "N_persister")]
    pub n_persister: f64,
}

/// CSV with columns `pad_id, t_min, intensity, N_normal, N_persister`.
pub fn write_series_csv<W: Write>(rows: &[SeriesRow], out: W) -> Result<(), BioassayError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| BioassayError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| BioassayError::Io(e.to_string()))
}

pub fn read_series_csv(text: &str) -> Result<Vec<SeriesRow>, BioassayError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| BioassayError::Io(e.to_string()))
}
