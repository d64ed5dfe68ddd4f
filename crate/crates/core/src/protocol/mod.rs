//! The `.dprot` assay language and its compiler: parsing, serial-dilution
//! planning, droplet routing and timed plan generation.

mod compile;
mod dilution;
mod parse;
mod route;
mod script;

pub use compile::{
    advance_chunks, compile, Action, Check, CompileError, CompileErrorKind, CompiledPlan,
    PlannedAction, PlannedCheck, ADVANCE_CHUNK_MIN, CLOCK_SLACK_MIN,
};
pub use dilution::{plan_dilution, DilutionError, DilutionPlan, MAX_RATIO};
pub(crate) use dilution::within;
pub use parse::{parse_script, ParseError};
pub use route::{plan_merge, plan_route, plan_route_with_budget, release_angle, RouteError, ROUTE_BUDGET};
pub use script::{ProtocolScript, Statement, DEFAULT_MAX_DILUTION_STEPS};
