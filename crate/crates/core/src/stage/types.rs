use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::StageError;

/// Integer anchor coordinates on the scribed sheet: `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPos {
    pub x: i32,
    pub y: i32,
}

impl GridPos {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn step(self, dir: Direction) -> Self {
        let (dx, dy) = dir.delta();
        Self::new(self.x + dx, self.y + dy)
    }

    pub fn offset(self, dx: i32, dy: i32) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }

    pub fn manhattan(self, other: GridPos) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl fmt::Display for GridPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    #[serde(alias = "x")]
    X,
    #[serde(alias = "y")]
    Y,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Axis::X => f.write_str("X"),
            Axis::Y => f.write_str("Y"),
        }
    }
}

/// Downhill direction of a tilt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "+x")]
    PosX,
    #[serde(rename = "-x")]
    NegX,
    #[serde(rename = "+y")]
    PosY,
    #[serde(rename = "-y")]
    NegY,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::PosX,
        Direction::NegX,
        Direction::PosY,
        Direction::NegY,
    ];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::PosX => (1, 0),
            Direction::NegX => (-1, 0),
            Direction::PosY => (0, 1),
            Direction::NegY => (0, -1),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn axis(self) -> Axis {
        match self {
            Direction::PosX | Direction::NegX => Axis::X,
            Direction::PosY | Direction::NegY => Axis::Y,
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Direction::PosX | Direction::PosY => 1.0,
            Direction::NegX | Direction::NegY => -1.0,
        }
    }
}

/// The scribed symbol at an anchor. `+` pins uniformly, `>`/`<` are
/// directional gates, pad sites hold a gel pad and never release droplets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorKind {
    #[serde(alias = "+")]
    Cross,
    #[serde(alias = ">")]
    GateRight,
    #[serde(alias = "<")]
    GateLeft,
    #[serde(alias = "pad")]
    PadSite,
}

impl AnchorKind {
    pub fn symbol(self) -> char {
        match self {
            AnchorKind::Cross => '+',
            AnchorKind::GateRight => '>',
            AnchorKind::GateLeft => '<',
            AnchorKind::PadSite => 'O',
        }
    }
}

/// Hold angles in degrees, indexed by [`Direction::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldAngles(pub [f64; 4]);

impl HoldAngles {
    pub fn uniform(deg: f64) -> Self {
        Self([deg; 4])
    }

    pub fn get(&self, dir: Direction) -> f64 {
        self.0[dir.index()]
    }

    pub fn validate(&self, kind: AnchorKind) -> Result<(), StageError> {
        if self.0.iter().any(|&a| !(a > 0.0 && a <= 90.0)) {
            return Err(StageError::InvalidHoldAngles(kind));
        }
        let lower = |d: Direction| {
            Direction::ALL
                .iter()
                .filter(|&&o| o != d)
                .all(|&o| self.get(d) < self.get(o))
        };
        let ok = match kind {
            AnchorKind::Cross => self.0.iter().all(|&a| a == self.0[0]),
            AnchorKind::GateRight => lower(Direction::PosX),
            AnchorKind::GateLeft => lower(Direction::NegX),
            AnchorKind::PadSite => true,
        };
        if ok {
            Ok(())
        } else {
            Err(StageError::InvalidHoldAngles(kind))
        }
    }
}

/// A scribed symbol as stored in layout files: position and kind only.
/// Hold angles come from [`super::StageConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub x: i32,
    pub y: i32,
    pub kind: AnchorKind,
}

impl Anchor {
    pub fn new(pos: GridPos, kind: AnchorKind) -> Self {
        Self {
            x: pos.x,
            y: pos.y,
            kind,
        }
    }

    pub fn pos(&self) -> GridPos {
        GridPos::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DropletId(pub u64);

impl fmt::Display for DropletId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Footprint {
    Single,
    /// Occupies the 2x2 block whose lowest corner is the droplet anchor.
    Quad,
}

impl Footprint {
    pub fn cells(self, anchor: GridPos) -> impl Iterator<Item = GridPos> {
        let n = match self {
            Footprint::Single => 1,
            Footprint::Quad => 4,
        };
        (0..n).map(move |i| anchor.offset(i % 2, i / 2))
    }
}

/// What a droplet carries: drug concentrations (µg/mL), cell densities
/// (cells/µL) and the volume fraction that is growth medium.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Contents {
    #[serde(default)]
    pub solutes: BTreeMap<String, f64>,
    #[serde(default)]
    pub cells: BTreeMap<String, f64>,
    #[serde(default)]
    pub media_fraction: f64,
}

impl Contents {
    pub fn media() -> Self {
        Self {
            media_fraction: 1.0,
            ..Self::default()
        }
    }

    pub fn with_solute(mut self, drug: impl Into<String>, conc: f64) -> Self {
        self.solutes.insert(drug.into(), conc);
        self
    }

    pub fn with_cells(mut self, strain: impl Into<String>, density: f64) -> Self {
        self.cells.insert(strain.into(), density);
        self
    }

    pub fn with_media_fraction(mut self, frac: f64) -> Self {
        self.media_fraction = frac;
        self
    }

    pub(crate) fn validate(&self) -> Result<(), StageError> {
        let bad = self
            .solutes
            .values()
            .chain(self.cells.values())
            .any(|v| !(v.is_finite() && *v >= 0.0));
        if bad || !(0.0..=1.0).contains(&self.media_fraction) {
            return Err(StageError::InvalidContents);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Droplet {
    pub id: DropletId,
    #[serde(rename = "volume_uL")]
    pub volume_ul: f64,
    #[serde(flatten)]
    pub contents: Contents,
    pub anchor: GridPos,
    pub footprint: Footprint,
}

impl Droplet {
    pub fn concentration(&self, drug: &str) -> f64 {
        self.contents.solutes.get(drug).copied().unwrap_or(0.0)
    }

    /// Solute mass in µL·µg/mL (ng).
    pub fn mass(&self, drug: &str) -> f64 {
        self.volume_ul * self.concentration(drug)
    }

    pub fn cells(&self) -> impl Iterator<Item = GridPos> {
        self.footprint.cells(self.anchor)
    }

    pub fn covers(&self, pos: GridPos) -> bool {
        self.cells().any(|c| c == pos)
    }
}

/// One tilt-then-return agitation of the stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltCommand {
    pub axis: Axis,
    pub angle_deg: f64,
}

impl TiltCommand {
    pub fn new(axis: Axis, angle_deg: f64) -> Self {
        Self { axis, angle_deg }
    }

    pub fn toward(dir: Direction, magnitude_deg: f64) -> Self {
        Self::new(dir.axis(), dir.sign() * magnitude_deg)
    }

    pub fn direction(&self) -> Direction {
        match (self.axis, self.angle_deg >= 0.0) {
            (Axis::X, true) => Direction::PosX,
            (Axis::X, false) => Direction::NegX,
            (Axis::Y, true) => Direction::PosY,
            (Axis::Y, false) => Direction::NegY,
        }
    }

    pub fn magnitude(&self) -> f64 {
        self.angle_deg.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum StageEvent {
    Dispensed {
        id: DropletId,
        at: GridPos,
    },
    Moved {
        id: DropletId,
        from: GridPos,
        to: GridPos,
    },
    Merged {
        into: DropletId,
        absorbed: Vec<DropletId>,
        at: GridPos,
        #[serde(rename = "volume_uL")]
        volume_ul: f64,
    },
    Delivered {
        id: DropletId,
        pad: GridPos,
    },
    Dried {
        id: DropletId,
        at: GridPos,
    },
}
