//! Interactive sessions over newline-delimited JSON.
//!
//! A session owns one plate, an optional compiled protocol with its program
//! counter, and an append-only log of the mutating commands it accepted.
//! Commands are atomic: each runs on a copy of the state that replaces the
//! original only on success. Replaying the log from the initial state
//! reproduces the current state exactly.

mod server;
mod wire;

pub use server::{serve_lines, serve_tcp, SessionFactory};
pub use wire::{Command, ErrorKind, EventKind, Message, WIRE_VERSION};

use std::collections::BTreeSet;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::bioassay::FluorescenceModel;
use crate::protocol::{compile, parse_script, CompiledPlan};
use crate::runner::{inoculate, PlanExecutor, RunError, StepReport, Strains};
use crate::stage::{PlateState, StageEvent, TiltCommand};

/// Mutating commands between full snapshots.
pub const SNAPSHOT_EVERY: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("schema: {0}")]
    Schema(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("simulation: {0}")]
    Simulation(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<RunError> for SessionError {
    fn from(e: RunError) -> Self {
        SessionError::Simulation(e.to_string())
    }
}

impl SessionError {
    fn kind(&self) -> ErrorKind {
        match self {
            SessionError::Schema(_) => ErrorKind::Schema,
            SessionError::Protocol(_) => ErrorKind::Protocol,
            SessionError::Simulation(_) | SessionError::Io(_) => ErrorKind::Simulation,
        }
    }
}

/// Everything a command can change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub plate: PlateState,
    pub executor: PlanExecutor,
    /// Source of the loaded protocol, if any.
    pub protocol: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub index: usize,
    pub command: Command,
}

/// Full state after the first `log_len` log entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub log_len: usize,
    pub state: SessionState,
}

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    seed: u64,
    strains: Strains,
    fluorescence: FluorescenceModel,
    initial: SessionState,
    state: SessionState,
    log: Vec<LogEntry>,
    snapshots: Vec<Snapshot>,
    subscriptions: BTreeSet<EventKind>,
    log_dir: Option<PathBuf>,
}

fn empty_plan() -> CompiledPlan {
    CompiledPlan {
        duration_min: 0.0,
        pads: Default::default(),
        actions: Vec::new(),
        checks: Vec::new(),
    }
}

fn sim<E: std::fmt::Display>(e: E) -> SessionError {
    SessionError::Simulation(e.to_string())
}

impl Session {
    /// Start a session on `plate`, seeding each pad with its strain's inoculum.
    pub fn new(
        id: impl Into<String>,
        mut plate: PlateState,
        strains: Strains,
        fluorescence: FluorescenceModel,
        seed: u64,
    ) -> Result<Self, SessionError> {
        inoculate(&mut plate, &strains)?;
        let executor = PlanExecutor::new(empty_plan(), strains.clone(), fluorescence, seed, &plate);
        let initial = SessionState {
            plate,
            executor,
            protocol: None,
        };
        Ok(Self {
            id: id.into(),
            seed,
            strains,
            fluorescence,
            state: initial.clone(),
            initial: initial.clone(),
            log: Vec::new(),
            snapshots: vec![Snapshot {
                log_len: 0,
                state: initial,
            }],
            subscriptions: BTreeSet::new(),
            log_dir: None,
        })
    }

    /// Persist the log as JSON lines and each snapshot as JSON under `dir`.
    pub fn with_log_dir(mut self, dir: impl Into<PathBuf>) -> Result<Self, SessionError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| SessionError::Io(e.to_string()))?;
        self.log_dir = Some(dir);
        self.persist_snapshot(&self.snapshots[0])?;
        Ok(self)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn initial_state(&self) -> &SessionState {
        &self.initial
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    /// Handle one NDJSON line; returns the response followed by any events.
    pub fn handle_line(&mut self, line: &str) -> Vec<Message> {
        let value: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return vec![error(None, &SessionError::Schema(e.to_string()))],
        };
        let seq = value.get("seq").and_then(Value::as_u64);
        match serde_json::from_value::<Command>(value) {
            Ok(cmd) => self.handle(&cmd),
            Err(e) => vec![error(seq, &SessionError::Schema(e.to_string()))],
        }
    }

    /// Execute `cmd` atomically; returns the response followed by any events.
    pub fn handle(&mut self, cmd: &Command) -> Vec<Message> {
        let seq = cmd.seq();
        if let Command::Subscribe { events, .. } = cmd {
            self.subscriptions = events.clone().unwrap_or_else(|| EventKind::ALL.to_vec()).into_iter().collect();
            return vec![Message::Response {
                seq,
                command: cmd.name().into(),
                result: json!({ "events": self.subscriptions }),
            }];
        }
        let mut next = self.state.clone();
        let outcome = apply(&mut next, cmd, self.seed).and_then(|(result, events)| {
            if cmd.mutates() {
                self.commit(cmd, next)?;
            }
            Ok((result, events))
        });
        match outcome {
            Ok((mut result, events)) => {
                if let Command::Hello { .. } = cmd {
                    result["session"] = json!(self.id);
                }
                let mut out = vec![Message::Response {
                    seq,
                    command: cmd.name().into(),
                    result,
                }];
                out.extend(events.into_iter().filter(|e| e.kind().is_some_and(|k| self.subscriptions.contains(&k))));
                if cmd.mutates() && self.subscriptions.contains(&EventKind::State) {
                    out.push(Message::State {
                        t_min: self.state.plate.clock_min(),
                        snapshot: snapshot_value(&self.state),
                    });
                }
                out
            }
            Err(e) => vec![error(Some(seq), &e)],
        }
    }

    fn commit(&mut self, cmd: &Command, next: SessionState) -> Result<(), SessionError> {
        let entry = LogEntry {
            index: self.log.len(),
            command: cmd.clone(),
        };
        if let Some(dir) = &self.log_dir {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join(format!("{}.log.jsonl", self.id)))
                .map_err(|e| SessionError::Io(e.to_string()))?;
            let line = serde_json::to_string(&entry).expect("log entry serializes");
            writeln!(f, "{line}").map_err(|e| SessionError::Io(e.to_string()))?;
        }
        self.log.push(entry);
        self.state = next;
        if self.log.len().is_multiple_of(SNAPSHOT_EVERY) {
            let snap = Snapshot {
                log_len: self.log.len(),
                state: self.state.clone(),
            };
            self.persist_snapshot(&snap)?;
            self.snapshots.push(snap);
        }
        Ok(())
    }

    fn persist_snapshot(&self, snap: &Snapshot) -> Result<(), SessionError> {
        if let Some(dir) = &self.log_dir {
            let path = dir.join(format!("{}.snapshot.{:06}.json", self.id, snap.log_len));
            let text = serde_json::to_string(snap).expect("snapshot serializes");
            std::fs::write(path, text).map_err(|e| SessionError::Io(e.to_string()))?;
        }
        Ok(())
    }

    /// State reached by applying `entries` to `from`.
    pub fn replay(from: &SessionState, entries: &[LogEntry], seed: u64) -> Result<SessionState, SessionError> {
        let mut state = from.clone();
        for e in entries {
            apply(&mut state, &e.command, seed)?;
        }
        Ok(state)
    }

    /// Replay the whole log from the latest snapshot.
    pub fn replay_latest(&self) -> Result<SessionState, SessionError> {
        let snap = self.snapshots.last().expect("initial snapshot");
        Self::replay(&snap.state, &self.log[snap.log_len..], self.seed)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn strains(&self) -> &Strains {
        &self.strains
    }

    pub fn fluorescence(&self) -> &FluorescenceModel {
        &self.fluorescence
    }
}

fn error(seq: Option<u64>, e: &SessionError) -> Message {
    let detail = match e {
        SessionError::Schema(d) | SessionError::Protocol(d) | SessionError::Simulation(d) | SessionError::Io(d) => d.clone(),
    };
    Message::Error {
        seq,
        kind: e.kind(),
        detail,
    }
}

fn snapshot_value(state: &SessionState) -> Value {
    serde_json::to_value(&state.plate).expect("plate serializes")
}

fn progress(state: &SessionState) -> Value {
    let ex = &state.executor;
    json!({
        "pc": ex.pc(),
        "total": ex.plan().actions.len(),
        "done": ex.is_done(),
        "t_min": state.plate.clock_min(),
    })
}

/// Split stage events into `moves` and `merges` messages at time `t`.
fn stage_messages(t: f64, events: &[StageEvent], out: &mut Vec<Message>) {
    let moves: Vec<StageEvent> = events.iter().filter(|e| matches!(e, StageEvent::Moved { .. })).cloned().collect();
    let merges: Vec<StageEvent> = events.iter().filter(|e| matches!(e, StageEvent::Merged { .. })).cloned().collect();
    if !moves.is_empty() {
        out.push(Message::Moves { t_min: t, moves });
    }
    if !merges.is_empty() {
        out.push(Message::Merges { t_min: t, merges });
    }
}

fn report_messages(state: &SessionState, reports: &[StepReport], out: &mut Vec<Message>) {
    let total = state.executor.plan().actions.len();
    for r in reports {
        stage_messages(r.t_min, &r.events, out);
        out.extend(r.readings.iter().map(|row| Message::Reading {
            t_min: row.t_min,
            row: row.clone(),
        }));
        out.push(Message::PlanProgress {
            t_min: r.t_min,
            pc: r.index + 1,
            total,
            line: r.line,
        });
    }
}

/// Apply one command to `state`. On error `state` may be partially changed;
/// [`Session::handle`] only ever passes a scratch copy.
fn apply(state: &mut SessionState, cmd: &Command, seed: u64) -> Result<(Value, Vec<Message>), SessionError> {
    let mut events = Vec::new();
    let result = match cmd {
        Command::Hello { .. } => json!({
            "version": WIRE_VERSION,
            "t_min": state.plate.clock_min(),
        }),
        Command::Tilt { axis, angle_deg, .. } => {
            let ev = state.plate.apply_tilt(TiltCommand::new(*axis, *angle_deg)).map_err(sim)?;
            let t = state.plate.clock_min();
            stage_messages(t, &ev, &mut events);
            json!({ "t_min": t, "events": ev })
        }
        Command::DryRunTilt { axis, angle_deg, .. } => {
            let ev = state.plate.preview_tilt(TiltCommand::new(*axis, *angle_deg)).map_err(sim)?;
            json!({ "t_min": state.plate.clock_min(), "events": ev })
        }
        Command::Dispense {
            volume_ul, at, contents, ..
        } => {
            let id = state.plate.dispense(*volume_ul, contents.clone(), *at).map_err(sim)?;
            json!({ "id": id, "t_min": state.plate.clock_min() })
        }
        Command::LoadProtocol { source, .. } => {
            let script = parse_script(source).map_err(|e| SessionError::Protocol(e.to_string()))?;
            let plan = compile(&script, &state.plate).map_err(|e| SessionError::Protocol(e.to_string()))?;
            // Bring the cultures level with the clock before handing over.
            let now = state.plate.clock_min();
            state.executor.advance_to(&mut state.plate, now)?;
            let total = plan.actions.len();
            let duration = plan.duration_min;
            let pads = plan.pads.clone();
            let strains = state.executor.strains().clone();
            let fluorescence = *state.executor.fluorescence();
            state.executor = PlanExecutor::new(plan, strains, fluorescence, seed, &state.plate);
            state.protocol = Some(source.clone());
            json!({ "actions": total, "duration_min": duration, "pads": pads })
        }
        Command::Step { count, .. } => {
            let mut reports = Vec::new();
            for _ in 0..*count {
                match state.executor.step(&mut state.plate)? {
                    Some(r) => reports.push(r),
                    None => break,
                }
            }
            report_messages(state, &reports, &mut events);
            let mut p = progress(state);
            p["steps"] = serde_json::to_value(&reports).expect("reports serialize");
            p
        }
        Command::RunUntil { t_min, .. } => {
            if !t_min.is_finite() || *t_min < state.plate.clock_min() {
                return Err(SessionError::Simulation(format!(
                    "run_until target {t_min} min is before the clock ({} min)",
                    state.plate.clock_min()
                )));
            }
            let (reports, tail) = state.executor.run_until(&mut state.plate, *t_min)?;
            report_messages(state, &reports, &mut events);
            stage_messages(state.plate.clock_min(), &tail, &mut events);
            let mut p = progress(state);
            p["steps"] = json!(reports.len());
            p
        }
        Command::QueryState { .. } => {
            let mut p = progress(state);
            p["snapshot"] = snapshot_value(state);
            p["protocol_loaded"] = json!(state.protocol.is_some());
            p
        }
        Command::Subscribe { .. } => json!({}),
    };
    Ok((result, events))
}
