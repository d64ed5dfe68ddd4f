//! Simulation twin of a tilt-actuated open droplet microfluidics platform
//! used for antibiotic cocktail screening.
//!
//! The crate is organised bottom-up:
//!
//! - [`stage`]: anchors, droplets, tilt hops, merging, gel pads, evaporation.
//! - [`bioassay`]: growth/kill kinetics, fluorescence, resilience classes.
//! - [`protocol`]: the `.dprot` assay language, dilution and route planners, compiler.
//! - [`runner`]: replays compiled plans on a plate while cultures grow.
//! - [`optimizer`]: differential-evolution search over drug cocktails.
//! - [`imaging`]: autofocus, turbidity, growth-curve fitting, persister latency.
//! - [`session`]: NDJSON command sessions and their log replay.
//! - [`scenarios`]: ready-made plates and assays used by the examples and CLI.

pub mod bioassay;
pub mod cli;
pub mod imaging;
pub mod optimizer;
pub mod protocol;
pub mod runner;
pub mod scenarios;
pub mod session;
pub mod stage;
