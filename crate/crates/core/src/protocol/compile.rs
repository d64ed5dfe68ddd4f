use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dilution::{plan_dilution, DilutionError};
use super::route::{plan_merge, plan_route, RouteError};
use super::script::{ProtocolScript, Statement};
use crate::stage::{
    AnchorKind, Contents, DropletId, GridPos, PlateState, StageError, StageEvent, TiltCommand,
};

/// Longest evaporation chunk when the clock advances between actions.
pub const ADVANCE_CHUNK_MIN: f64 = 1.0;

/// Split `dt` into equal chunks no longer than [`ADVANCE_CHUNK_MIN`].
pub fn advance_chunks(dt: f64) -> impl Iterator<Item = f64> {
    let n = if dt > 0.0 {
        (dt / ADVANCE_CHUNK_MIN - 1e-9).ceil().max(1.0) as usize
    } else {
        0
    };
    let h = if n > 0 { dt / n as f64 } else { 0.0 };
    std::iter::repeat_n(h, n)
}

/// Clock differences at or below this are treated as simultaneous.
pub const CLOCK_SLACK_MIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", content = "args", rename_all = "snake_case")]
pub enum Action {
    Dispense {
        #[serde(rename = "volume_uL")]
        volume_ul: f64,
        contents: Contents,
        at: GridPos,
        /// Id the stage is expected to assign.
        id: DropletId,
    },
    Tilt(TiltCommand),
    Deliver {
        droplet: DropletId,
        pad: String,
        at: GridPos,
    },
    Image {
        pads: Vec<String>,
    },
    Noop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedAction {
    pub t_min: f64,
    #[serde(flatten)]
    pub action: Action,
    /// Index of the source statement and its line in the protocol file.
    pub statement: usize,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum Check {
    /// Droplet anchored exactly at `anchor`.
    At { droplet: DropletId, anchor: GridPos },
    /// Droplet footprint covers `pos` (after a merging route).
    Covers { droplet: DropletId, pos: GridPos },
    Concentration {
        droplet: DropletId,
        drug: String,
        target: f64,
        tol: f64,
    },
    Absent { droplet: DropletId },
}

/// A statement postcondition, to be verified once `after_actions` actions have run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedCheck {
    pub after_actions: usize,
    pub statement: usize,
    pub line: usize,
    #[serde(flatten)]
    pub check: Check,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompiledPlan {
    pub duration_min: f64,
    pub pads: BTreeMap<String, GridPos>,
    pub actions: Vec<PlannedAction>,
    pub checks: Vec<PlannedCheck>,
}

impl CompiledPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn count(&self, pred: impl Fn(&Action) -> bool) -> usize {
        self.actions.iter().filter(|a| pred(&a.action)).count()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileErrorKind {
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error(transparent)]
    Dilution(#[from] DilutionError),
    #[error("unknown droplet label `{0}`")]
    UnknownLabel(String),
    #[error("droplet `{0}` no longer exists on the plate")]
    DropletLost(String),
    #[error("pad `{pad}` declared at {at} but the plate has no gel pad there")]
    NoPadSite { pad: String, at: GridPos },
    #[error("unknown pad `{0}`")]
    UnknownPad(String),
    #[error("periodic statements need a DURATION header")]
    MissingDuration,
    #[error("no free anchor near {0} can supply a routable droplet")]
    NoSource(GridPos),
    #[error("droplet `{label}` carries no `{drug}` to dilute")]
    NothingToDilute { label: String, drug: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("statement {statement} (line {line}): {kind}")]
pub struct CompileError {
    pub statement: usize,
    pub line: usize,
    pub kind: CompileErrorKind,
}

#[derive(Debug, Clone)]
enum Task {
    Replenish { pads: Vec<String>, volume_ul: f64 },
    Image { pads: Vec<String> },
}

#[derive(Debug, Clone)]
struct Periodic {
    task: Task,
    period: f64,
    next_k: u64,
    statement: usize,
    line: usize,
}

impl Periodic {
    fn due(&self) -> f64 {
        self.next_k as f64 * self.period
    }
}

/// Maximum number of candidate source anchors tried before giving up.
const SOURCE_ATTEMPTS: usize = 24;

struct Compiler {
    w: PlateState,
    labels: BTreeMap<String, DropletId>,
    pads: BTreeMap<String, GridPos>,
    diluent: Contents,
    duration: Option<f64>,
    periodic: Vec<Periodic>,
    actions: Vec<PlannedAction>,
    checks: Vec<PlannedCheck>,
    route_cache: HashMap<String, (GridPos, Vec<TiltCommand>)>,
    statement: usize,
    line: usize,
}

type Step<T> = Result<T, CompileErrorKind>;

impl Compiler {
    fn push(&mut self, action: Action) {
        self.actions.push(PlannedAction {
            t_min: self.w.clock_min(),
            action,
            statement: self.statement,
            line: self.line,
        });
    }

    fn check(&mut self, check: Check) {
        self.checks.push(PlannedCheck {
            after_actions: self.actions.len(),
            statement: self.statement,
            line: self.line,
            check,
        });
    }

    fn relabel(&mut self, events: &[StageEvent]) {
        for e in events {
            if let StageEvent::Merged { into, absorbed, .. } = e {
                for id in self.labels.values_mut() {
                    if absorbed.contains(id) {
                        *id = *into;
                    }
                }
            }
        }
    }

    fn dispense(&mut self, volume_ul: f64, contents: Contents, at: GridPos) -> Step<DropletId> {
        let t = self.w.clock_min();
        let id = self.w.dispense(volume_ul, contents.clone(), at)?;
        self.actions.push(PlannedAction {
            t_min: t,
            action: Action::Dispense {
                volume_ul,
                contents,
                at,
                id,
            },
            statement: self.statement,
            line: self.line,
        });
        Ok(id)
    }

    fn tilt(&mut self, cmd: TiltCommand) -> Step<Vec<StageEvent>> {
        let t = self.w.clock_min();
        let events = self.w.apply_tilt(cmd)?;
        self.actions.push(PlannedAction {
            t_min: t,
            action: Action::Tilt(cmd),
            statement: self.statement,
            line: self.line,
        });
        self.relabel(&events);
        Ok(events)
    }

    fn deliver(&mut self, id: DropletId, pad: &str, at: GridPos) -> Step<()> {
        self.w.deliver_to_pad(id, at)?;
        self.push(Action::Deliver {
            droplet: id,
            pad: pad.to_string(),
            at,
        });
        Ok(())
    }

    fn advance(&mut self, dt: f64) {
        for h in advance_chunks(dt) {
            self.w.evaporate(h).expect("non-negative chunk");
        }
    }

    fn advance_to(&mut self, t: f64) {
        let dt = t - self.w.clock_min();
        if dt > CLOCK_SLACK_MIN {
            self.advance(dt);
        }
    }

    fn label(&self, name: &str) -> Step<DropletId> {
        let id = *self
            .labels
            .get(name)
            .ok_or_else(|| CompileErrorKind::UnknownLabel(name.to_string()))?;
        if self.w.droplet(id).is_none() {
            return Err(CompileErrorKind::DropletLost(name.to_string()));
        }
        Ok(id)
    }

    fn pad(&self, name: &str) -> Step<GridPos> {
        self.pads
            .get(name)
            .copied()
            .ok_or_else(|| CompileErrorKind::UnknownPad(name.to_string()))
    }

    fn others(&self, id: DropletId) -> BTreeSet<DropletId> {
        self.w
            .droplets()
            .iter()
            .map(|d| d.id)
            .filter(|&x| x != id)
            .collect()
    }

    fn route(&mut self, id: DropletId, to: GridPos) -> Step<()> {
        let parked = self.others(id);
        let tilts = plan_route(&self.w, id, to, &parked)?;
        for t in tilts {
            self.tilt(t)?;
        }
        Ok(())
    }

    /// Free anchors ordered by distance to `near`, then row, then column.
    fn source_candidates(&self, near: GridPos) -> Vec<GridPos> {
        let mut c: Vec<GridPos> = self
            .w
            .anchors()
            .iter()
            .filter(|a| a.kind != AnchorKind::PadSite && a.pos() != near)
            .map(|a| a.pos())
            .filter(|&p| self.w.is_free(p))
            .collect();
        c.sort_by_key(|p| (p.manhattan(near), p.y, p.x));
        c
    }

    /// Dispense `volume_ul` of `contents` at the nearest anchor from which it
    /// can be routed to `target`, then route it there. With `anywhere`, a
    /// merge with the droplet on `target` may happen off `target`.
    fn supply(&mut self, target: GridPos, volume_ul: f64, contents: &Contents, anywhere: bool) -> Step<DropletId> {
        let mut tried = 0;
        for src in self.source_candidates(target) {
            let mut trial = self.w.clone();
            let Ok(id) = trial.dispense(volume_ul, contents.clone(), src) else {
                continue;
            };
            tried += 1;
            let parked = trial.droplets().iter().map(|d| d.id).filter(|&x| x != id).collect();
            let planned = if anywhere {
                plan_merge(&trial, id, target, &parked)
            } else {
                plan_route(&trial, id, target, &parked)
            };
            if let Ok(tilts) = planned {
                let id = self.dispense(volume_ul, contents.clone(), src)?;
                for t in tilts {
                    self.tilt(t)?;
                }
                return Ok(id);
            }
            if tried >= SOURCE_ATTEMPTS {
                break;
            }
        }
        Err(CompileErrorKind::NoSource(target))
    }

    fn cached_route_valid(&self, src: GridPos, tilts: &[TiltCommand], pad: GridPos, volume_ul: f64) -> bool {
        let mut trial = self.w.clone();
        let Ok(id) = trial.dispense(volume_ul, self.diluent.clone(), src) else {
            return false;
        };
        let before: Vec<_> = self.w.droplets().iter().map(|d| (d.id, d.anchor)).collect();
        for &t in tilts {
            match trial.apply_tilt(t) {
                Ok(ev) if ev.iter().all(|e| !matches!(e, StageEvent::Merged { .. })) => {}
                _ => return false,
            }
        }
        let after: Vec<_> = trial
            .droplets()
            .iter()
            .filter(|d| d.id != id)
            .map(|d| (d.id, d.anchor))
            .collect();
        before == after && trial.droplet(id).is_some_and(|d| d.covers(pad))
    }

    fn replenish_pad(&mut self, name: &str, volume_ul: f64) -> Step<()> {
        let pad = self.pad(name)?;
        let cached = self.route_cache.get(name).cloned();
        let id = match cached {
            Some((src, tilts)) if self.cached_route_valid(src, &tilts, pad, volume_ul) => {
                let id = self.dispense(volume_ul, self.diluent.clone(), src)?;
                for t in tilts {
                    self.tilt(t)?;
                }
                id
            }
            _ => {
                let start = self.actions.len();
                let diluent = self.diluent.clone();
                let id = self.supply(pad, volume_ul, &diluent, false)?;
                let Action::Dispense { at, .. } = self.actions[start].action else {
                    unreachable!("supply starts with a dispense")
                };
                let tilts = self.actions[start + 1..]
                    .iter()
                    .filter_map(|a| match a.action {
                        Action::Tilt(c) => Some(c),
                        _ => None,
                    })
                    .collect();
                self.route_cache.insert(name.to_string(), (at, tilts));
                id
            }
        };
        self.deliver(id, name, pad)?;
        self.check(Check::Absent { droplet: id });
        Ok(())
    }

    fn run_task(&mut self, idx: usize) -> Step<()> {
        let p = self.periodic[idx].clone();
        let (saved_s, saved_l) = (self.statement, self.line);
        self.statement = p.statement;
        self.line = p.line;
        let r = match &p.task {
            Task::Replenish { pads, volume_ul } => pads
                .iter()
                .try_for_each(|pad| self.replenish_pad(pad, *volume_ul)),
            Task::Image { pads } => {
                self.push(Action::Image { pads: pads.clone() });
                Ok(())
            }
        };
        self.statement = saved_s;
        self.line = saved_l;
        r
    }

    /// Fire every periodic task due at or before `until`, in due-time order.
    fn fire_due(&mut self, until: f64) -> Result<(), CompileError> {
        let limit = self.duration.unwrap_or(f64::NEG_INFINITY);
        loop {
            let next = self
                .periodic
                .iter()
                .enumerate()
                .filter(|(_, p)| p.due() <= until + CLOCK_SLACK_MIN && p.due() <= limit + CLOCK_SLACK_MIN)
                .min_by(|a, b| a.1.due().total_cmp(&b.1.due()).then(a.0.cmp(&b.0)))
                .map(|(i, p)| (i, p.due()));
            let Some((i, due)) = next else {
                return Ok(());
            };
            self.advance_to(due);
            self.run_task(i).map_err(|kind| CompileError {
                statement: self.periodic[i].statement,
                line: self.periodic[i].line,
                kind,
            })?;
            self.periodic[i].next_k += 1;
        }
    }

    fn register(&mut self, task: Task, period: f64, first_k_min: u64) -> Step<()> {
        if self.duration.is_none() {
            return Err(CompileErrorKind::MissingDuration);
        }
        let now = self.w.clock_min();
        let k = ((now - CLOCK_SLACK_MIN) / period).ceil().max(first_k_min as f64) as u64;
        self.periodic.push(Periodic {
            task,
            period,
            next_k: k,
            statement: self.statement,
            line: self.line,
        });
        Ok(())
    }

    fn statement(&mut self, s: &Statement) -> Step<()> {
        match s {
            Statement::Duration { .. } | Statement::Drugs { .. } => {}
            Statement::Pad { name, at } => {
                if self.w.pad_at(*at).is_none() {
                    return Err(CompileErrorKind::NoPadSite {
                        pad: name.clone(),
                        at: *at,
                    });
                }
                self.pads.insert(name.clone(), *at);
            }
            Statement::Diluent { contents } => self.diluent = contents.clone(),
            Statement::Dispense {
                volume_ul,
                contents,
                at,
                label,
            } => {
                let id = self.dispense(*volume_ul, contents.clone(), *at)?;
                self.labels.insert(label.clone(), id);
                self.check(Check::At {
                    droplet: id,
                    anchor: *at,
                });
            }
            Statement::Route { droplet, to } => {
                let id = self.label(droplet)?;
                let merging = self.w.droplet_at(*to).is_some_and(|d| d.id != id);
                self.route(id, *to)?;
                let id = self.label(droplet)?;
                self.check(if merging {
                    Check::Covers { droplet: id, pos: *to }
                } else {
                    Check::At {
                        droplet: id,
                        anchor: *to,
                    }
                });
            }
            Statement::Dilute {
                droplet,
                drug,
                target,
                tol_pct,
                max_steps,
            } => {
                let id = self.label(droplet)?;
                let d = self.w.droplet(id).expect("label checked");
                let c = d.concentration(drug);
                if c <= 0.0 {
                    return Err(CompileErrorKind::NothingToDilute {
                        label: droplet.clone(),
                        drug: drug.clone(),
                    });
                }
                let tol = tol_pct / 100.0;
                let plan = plan_dilution(c, *target, d.volume_ul, *max_steps, tol)?;
                let diluent = self.diluent.clone();
                for k in plan.ratios {
                    let id = self.label(droplet)?;
                    let d = self.w.droplet(id).expect("label checked");
                    let (anchor, volume) = (d.anchor, d.volume_ul);
                    self.supply(anchor, k as f64 * volume, &diluent, true)?;
                }
                let id = self.label(droplet)?;
                self.check(Check::Concentration {
                    droplet: id,
                    drug: drug.clone(),
                    target: *target,
                    tol,
                });
            }
            Statement::Deliver { droplet, pad } => {
                let id = self.label(droplet)?;
                let at = self.pad(pad)?;
                if !self.w.droplet(id).expect("label checked").covers(at) {
                    self.route(id, at)?;
                }
                let id = self.label(droplet)?;
                self.deliver(id, pad, at)?;
                self.labels.remove(droplet);
                self.check(Check::Absent { droplet: id });
            }
            Statement::Replenish {
                pads,
                period_min,
                volume_ul,
            } => {
                for p in pads {
                    self.pad(p)?;
                }
                self.register(
                    Task::Replenish {
                        pads: pads.clone(),
                        volume_ul: *volume_ul,
                    },
                    *period_min,
                    1,
                )?;
            }
            Statement::Image { pads, period_min } => {
                for p in pads {
                    self.pad(p)?;
                }
                match period_min {
                    Some(period) => self.register(Task::Image { pads: pads.clone() }, *period, 0)?,
                    None => self.push(Action::Image { pads: pads.clone() }),
                }
            }
            Statement::Tilt { cmd } => {
                self.tilt(*cmd)?;
            }
            Statement::Wait { .. } => unreachable!("waits are handled by the driver"),
        }
        Ok(())
    }
}

/// Expand a script into a timed action list by simulating it on a copy of `plate`.
pub fn compile(script: &ProtocolScript, plate: &PlateState) -> Result<CompiledPlan, CompileError> {
    let mut c = Compiler {
        w: plate.clone(),
        labels: BTreeMap::new(),
        pads: BTreeMap::new(),
        diluent: Contents::media(),
        duration: script.duration_min(),
        periodic: Vec::new(),
        actions: Vec::new(),
        checks: Vec::new(),
        route_cache: HashMap::new(),
        statement: 0,
        line: 0,
    };
    for (i, s) in script.statements.iter().enumerate() {
        c.statement = i;
        c.line = script.line_of(i);
        let err = |kind| CompileError {
            statement: i,
            line: script.line_of(i),
            kind,
        };
        if let Statement::Wait { minutes } = s {
            let until = c.w.clock_min() + minutes;
            c.fire_due(until)?;
            c.advance_to(until);
            continue;
        }
        c.fire_due(c.w.clock_min())?;
        c.statement = i;
        c.line = script.line_of(i);
        c.statement(s).map_err(err)?;
    }
    let end = c.duration.unwrap_or(c.w.clock_min()).max(c.w.clock_min());
    c.fire_due(end)?;
    c.advance_to(end);
    // The closing no-op belongs to no statement: it marks the end of the run.
    c.statement = script.statements.len();
    c.line = 0;
    c.push(Action::Noop);
    Ok(CompiledPlan {
        duration_min: end,
        pads: c.pads,
        actions: c.actions,
        checks: c.checks,
    })
}
