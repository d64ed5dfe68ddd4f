use serde::{Deserialize, Serialize};

use super::types::{Anchor, AnchorKind, GridPos};
use super::StageError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PadSpec {
    pub x: i32,
    pub y: i32,
    pub strain: String,
}

impl PadSpec {
    pub fn pos(&self) -> GridPos {
        GridPos::new(self.x, self.y)
    }
}

/// Plate layout file: `{cols, rows, anchors: [{x, y, kind}], pads: [{x, y, strain}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub cols: i32,
    pub rows: i32,
    pub anchors: Vec<Anchor>,
    #[serde(default)]
    pub pads: Vec<PadSpec>,
}

impl Layout {
    /// A fully populated grid of `+` symbols.
    pub fn grid(cols: i32, rows: i32) -> Self {
        let anchors = (0..rows)
            .flat_map(|y| (0..cols).map(move |x| Anchor::new(GridPos::new(x, y), AnchorKind::Cross)))
            .collect();
        Self {
            cols,
            rows,
            anchors,
            pads: Vec::new(),
        }
    }

    pub fn set_kind(&mut self, pos: GridPos, kind: AnchorKind) -> &mut Self {
        match self.anchors.iter_mut().find(|a| a.pos() == pos) {
            Some(a) => a.kind = kind,
            None => self.anchors.push(Anchor::new(pos, kind)),
        }
        self
    }

    pub fn remove_anchor(&mut self, pos: GridPos) -> &mut Self {
        self.anchors.retain(|a| a.pos() != pos);
        self
    }

    pub fn add_pad(&mut self, pos: GridPos, strain: impl Into<String>) -> &mut Self {
        self.set_kind(pos, AnchorKind::PadSite);
        self.pads.push(PadSpec {
            x: pos.x,
            y: pos.y,
            strain: strain.into(),
        });
        self
    }

    pub fn from_json(text: &str) -> Result<Self, StageError> {
        serde_json::from_str(text).map_err(|e| StageError::InvalidLayout(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serializes")
    }

    /// Character map, one row per line, `.` where no symbol is scribed.
    pub fn render(&self) -> String {
        let mut rows = vec![vec!['.'; self.cols.max(0) as usize]; self.rows.max(0) as usize];
        for a in &self.anchors {
            if a.x >= 0 && a.y >= 0 && a.x < self.cols && a.y < self.rows {
                rows[a.y as usize][a.x as usize] = a.kind.symbol();
            }
        }
        rows.into_iter()
            .map(|r| r.into_iter().collect::<String>())
            .collect::<Vec<_>>()
            .join("\n")
    }
}
