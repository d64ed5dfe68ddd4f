//! Tilting-stage physics: anchors, droplets, hops, merging, gel pads and evaporation.

mod config;
mod layout;
mod plate;
mod types;

pub use config::{StageConfig, HOP_TOLERANCE_DEG};
pub use layout::{Layout, PadSpec};
pub use plate::{GelPad, PlateState};
pub use types::{
    Anchor, AnchorKind, Axis, Contents, Direction, Droplet, DropletId, Footprint, GridPos,
    HoldAngles, StageEvent, TiltCommand,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StageError {
    #[error("anchor {0} is occupied")]
    OccupiedAnchor(GridPos),
    #[error("no anchor at {0}")]
    NoSuchAnchor(GridPos),
    #[error("volume must be positive, got {0} uL")]
    NonPositiveVolume(f64),
    #[error("tilt angle {0} deg is outside (0, theta_max]")]
    InvalidAngle(f64),
    #[error("droplets {0} and {1} are not on the same anchor")]
    NotColocated(DropletId, DropletId),
    #[error("droplet {droplet} is not on the pad site at {pad}")]
    NotAtPadSite { droplet: DropletId, pad: GridPos },
    #[error("no droplet {0}")]
    NoSuchDroplet(DropletId),
    #[error("no gel pad at {0}")]
    NoSuchPad(GridPos),
    #[error("concentrations and densities must be finite and non-negative, media fraction in [0, 1]")]
    InvalidContents,
    #[error("hold angles violate the {0:?} symbol invariants")]
    InvalidHoldAngles(AnchorKind),
    #[error("time step must be non-negative, got {0} min")]
    NegativeDt(f64),
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
}
