//! Bacterial growth and kill kinetics on gel pads, fluorescence readout and
//! resilience classification.

mod classify;
mod model;
mod readout;

pub use classify::{
    classify_resilience, Classification, ClassifierConfig, DosePoint, Resilience, SurvivalPoint,
};
pub use model::{
    culture_rhs, load_strains, step_culture, DoseResponse, PadCulture, Reading, Strain,
    MAX_RK4_STEP_MIN,
};
pub use readout::{
    read_series_csv, survival_percent, write_series_csv, FluorescenceModel, SeriesRow,
    SURVIVAL_EPS,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BioassayError {
    #[error("time step must be non-negative, got {0} min")]
    NegativeDt(f64),
    #[error("invalid strain: {0}")]
    InvalidStrain(String),
    #[error("insufficient series: {0}")]
    InsufficientSeries(String),
    #[error("unknown strain {0}")]
    UnknownStrain(String),
    #[error("i/o: {0}")]
    Io(String),
}
