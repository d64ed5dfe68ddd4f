//! Replays compiled plans on a plate while the pad cultures grow, and turns
//! the recorded readings into per-pad assay summaries.

mod analysis;
mod replay;

pub use analysis::{detection_time, summarize, time_kill_series, PadSummary};
pub use replay::{inoculate, run_plan, Delivery, PlanExecutor, RunOutput, StepReport, Strains};

use thiserror::Error;

use crate::bioassay::BioassayError;
use crate::stage::{DropletId, StageError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error("action {index} (line {line}): {source}")]
    Stage {
        index: usize,
        line: usize,
        #[source]
        source: StageError,
    },
    #[error("action {index}: plan expected droplet {expected}, stage assigned {got}")]
    Diverged {
        index: usize,
        expected: DropletId,
        got: DropletId,
    },
    #[error("statement {statement} (line {line}): postcondition failed: {detail}")]
    CheckFailed {
        statement: usize,
        line: usize,
        detail: String,
    },
    #[error("unknown pad `{0}`")]
    UnknownPad(String),
    #[error(transparent)]
    Bioassay(#[from] BioassayError),
}
