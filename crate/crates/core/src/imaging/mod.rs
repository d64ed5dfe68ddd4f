//! Scanner-side analysis: autofocus over focal stacks, turbidity readout,
//! logistic growth fits and persister latency.

mod focus;
mod growth;
mod image;

pub use focus::{autofocus, focus_measure, FocalStack, DEFAULT_STACK_PLANES};
pub use growth::{
    detect_persister_latency, fit_growth, logistic_with_lag, nelder_mead, synthetic_batch,
    write_colony_csv, BatchSpec, ColonyRecord, GrowthFit, GrowthFitConfig, GrowthParams,
    LatencyFlag, SyntheticBatch,
};
pub use image::{
    box_blur, checkerboard, gaussian_blur, measure_turbidity, random_texture, read_pgm,
    render_pad, segment, write_pgm, GrayImage, Roi,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImagingError {
    #[error("image is {width}x{height}; at least 3x3 is required")]
    ImageTooSmall { width: usize, height: usize },
    #[error("{pixels} pixels do not fill a {width}x{height} image")]
    SizeMismatch {
        width: usize,
        height: usize,
        pixels: usize,
    },
    #[error("region {roi:?} lies outside a {width}x{height} image")]
    RoiOutOfBounds { roi: Roi, width: usize, height: usize },
    #[error("invalid focal stack: {0}")]
    InvalidStack(String),
    #[error("invalid PGM: {0}")]
    Pgm(String),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("fit diverged: residual {residual} above ceiling {ceiling}")]
    FitDiverged { residual: f64, ceiling: f64 },
    #[error("need at least 3 control curves, got {0}")]
    InsufficientControls(usize),
    #[error("i/o: {0}")]
    Io(String),
}
