use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bioassay::SeriesRow;
use crate::stage::{Axis, Contents, GridPos, StageEvent};

/// Version reported in the `hello` response.
pub const WIRE_VERSION: u32 = 1;

fn one() -> usize {
    1
}

fn media() -> Contents {
    Contents::media()
}

/// Client-to-server message. Every command carries a `seq` that the single
/// response echoes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    Hello {
        seq: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        client: Option<String>,
    },
    Tilt {
        seq: u64,
        axis: Axis,
        angle_deg: f64,
    },
    Dispense {
        seq: u64,
        #[serde(rename = "volume_uL")]
        volume_ul: f64,
        at: GridPos,
        #[serde(default = "media")]
        contents: Contents,
    },
    LoadProtocol {
        seq: u64,
        source: String,
    },
    Step {
        seq: u64,
        #[serde(default = "one")]
        count: usize,
    },
    RunUntil {
        seq: u64,
        t_min: f64,
    },
    DryRunTilt {
        seq: u64,
        axis: Axis,
        angle_deg: f64,
    },
    QueryState {
        seq: u64,
    },
    Subscribe {
        seq: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        events: Option<Vec<EventKind>>,
    },
}

impl Command {
    pub fn seq(&self) -> u64 {
        match self {
            Command::Hello { seq, .. }
            | Command::Tilt { seq, .. }
            | Command::Dispense { seq, .. }
            | Command::LoadProtocol { seq, .. }
            | Command::Step { seq, .. }
            | Command::RunUntil { seq, .. }
            | Command::DryRunTilt { seq, .. }
            | Command::QueryState { seq }
            | Command::Subscribe { seq, .. } => *seq,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Hello { .. } => "hello",
            Command::Tilt { .. } => "tilt",
            Command::Dispense { .. } => "dispense",
            Command::LoadProtocol { .. } => "load_protocol",
            Command::Step { .. } => "step",
            Command::RunUntil { .. } => "run_until",
            Command::DryRunTilt { .. } => "dry_run_tilt",
            Command::QueryState { .. } => "query_state",
            Command::Subscribe { .. } => "subscribe",
        }
    }

    /// Commands that change the session and are written to its log.
    pub fn mutates(&self) -> bool {
        matches!(
            self,
            Command::Tilt { .. }
                | Command::Dispense { .. }
                | Command::LoadProtocol { .. }
                | Command::Step { .. }
                | Command::RunUntil { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    State,
    Moves,
    Merges,
    Reading,
    PlanProgress,
}

impl EventKind {
    pub const ALL: [EventKind; 5] = [
        EventKind::State,
        EventKind::Moves,
        EventKind::Merges,
        EventKind::Reading,
        EventKind::PlanProgress,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// The message is not valid JSON or does not match any command.
    Schema,
    /// The protocol text failed to parse or compile.
    Protocol,
    /// The stage or culture model rejected the command.
    Simulation,
}

/// Server-to-client message: one response or error per command, followed
/// by any subscribed events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Response {
        seq: u64,
        command: String,
        result: Value,
    },
    Error {
        seq: Option<u64>,
        kind: ErrorKind,
        detail: String,
    },
    State {
        t_min: f64,
        snapshot: Value,
    },
    Moves {
        t_min: f64,
        moves: Vec<StageEvent>,
    },
    Merges {
        t_min: f64,
        merges: Vec<StageEvent>,
    },
    Reading {
        t_min: f64,
        #[serde(flatten)]
        row: SeriesRow,
    },
    PlanProgress {
        t_min: f64,
        pc: usize,
        total: usize,
        line: usize,
    },
}

impl Message {
    pub fn seq(&self) -> Option<u64> {
        match self {
            Message::Response { seq, .. } => Some(*seq),
            Message::Error { seq, .. } => *seq,
            _ => None,
        }
    }

    /// Simulated time of an event; `None` for responses and errors.
    pub fn t_min(&self) -> Option<f64> {
        match self {
            Message::State { t_min, .. }
            | Message::Moves { t_min, .. }
            | Message::Merges { t_min, .. }
            | Message::Reading { t_min, .. }
            | Message::PlanProgress { t_min, .. } => Some(*t_min),
            _ => None,
        }
    }

    pub fn kind(&self) -> Option<EventKind> {
        match self {
            Message::State { .. } => Some(EventKind::State),
            Message::Moves { .. } => Some(EventKind::Moves),
            Message::Merges { .. } => Some(EventKind::Merges),
            Message::Reading { .. } => Some(EventKind::Reading),
            Message::PlanProgress { .. } => Some(EventKind::PlanProgress),
            _ => None,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("message serializes")
    }
}
