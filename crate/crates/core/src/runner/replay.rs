use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RunError;
use crate::bioassay::{step_culture, BioassayError, FluorescenceModel, SeriesRow, Strain};
use crate::protocol::{advance_chunks, within, Action, Check, CompiledPlan, PlannedCheck, CLOCK_SLACK_MIN};
use crate::stage::{GridPos, PlateState, StageError, StageEvent};

/// Strain library keyed by strain id.
pub type Strains = BTreeMap<String, Strain>;

/// One droplet absorbed by a pad.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub t_min: f64,
    pub pad: String,
    #[serde(rename = "volume_uL")]
    pub volume_ul: f64,
    /// Drug mass carried by the droplet.
    pub drug_mass: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Image readings in acquisition order.
    pub series: Vec<SeriesRow>,
    pub deliveries: Vec<Delivery>,
    /// Lowest volume each pad reached, keyed by pad name.
    pub min_pad_volume_ul: BTreeMap<String, f64>,
    /// Pads that fell below the dry floor at some point.
    pub dried_pads: BTreeSet<String>,
    /// Strain growing on each pad, keyed by pad name.
    pub pad_strains: BTreeMap<String, String>,
    pub plate: PlateState,
}

impl RunOutput {
    pub fn rows_for<'a>(&'a self, pad: &'a str) -> impl Iterator<Item = &'a SeriesRow> + 'a {
        self.series.iter().filter(move |r| r.pad_id == pad)
    }

    /// Time of the first delivery that brought drug to `pad`.
    pub fn exposure_start(&self, pad: &str) -> Option<f64> {
        self.deliveries
            .iter()
            .find(|d| d.pad == pad && d.drug_mass.values().any(|&m| m > 0.0))
            .map(|d| d.t_min)
    }

    /// Drugs delivered to `pad` at any point.
    pub fn drugs_for(&self, pad: &str) -> BTreeSet<String> {
        self.deliveries
            .iter()
            .filter(|d| d.pad == pad)
            .flat_map(|d| d.drug_mass.iter().filter(|(_, &m)| m > 0.0).map(|(k, _)| k.clone()))
            .collect()
    }

    pub fn pad_names(&self) -> impl Iterator<Item = &String> {
        self.min_pad_volume_ul.keys()
    }
}

/// Seed every pad with its strain's inoculum density.
pub fn inoculate(plate: &mut PlateState, strains: &Strains) -> Result<(), RunError> {
    for pad in plate.pads_mut() {
        let strain = strains
            .get(&pad.strain)
            .ok_or_else(|| BioassayError::UnknownStrain(pad.strain.clone()))?;
        pad.culture = crate::bioassay::PadCulture::inoculate(strain, strain.inoculum);
    }
    Ok(())
}

/// What one executed action did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub index: usize,
    pub line: usize,
    /// Stage clock when the action started.
    pub t_min: f64,
    /// Time the plan scheduled the action for.
    pub scheduled_min: f64,
    pub action: Action,
    /// Stage events in order, including any droplets that dried while the
    /// clock advanced to the action.
    pub events: Vec<StageEvent>,
    pub readings: Vec<SeriesRow>,
}

/// Executes a compiled plan one action at a time against a plate owned by
/// the caller, integrating every pad culture between actions. The whole
/// executor, including its noise generator, serializes losslessly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanExecutor {
    plan: CompiledPlan,
    strains: Strains,
    fluorescence: FluorescenceModel,
    rng: ChaCha8Rng,
    pc: usize,
    checks_done: usize,
    /// Time up to which the cultures have been integrated.
    bio_t: f64,
    min_vol: BTreeMap<String, f64>,
    dried: BTreeSet<String>,
    series: Vec<SeriesRow>,
    deliveries: Vec<Delivery>,
}

impl PlanExecutor {
    pub fn new(plan: CompiledPlan, strains: Strains, fluorescence: FluorescenceModel, seed: u64, plate: &PlateState) -> Self {
        let mut ex = Self {
            plan,
            strains,
            fluorescence,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pc: 0,
            checks_done: 0,
            bio_t: plate.clock_min(),
            min_vol: BTreeMap::new(),
            dried: BTreeSet::new(),
            series: Vec::new(),
            deliveries: Vec::new(),
        };
        ex.track_volumes(plate);
        ex
    }

    pub fn plan(&self) -> &CompiledPlan {
        &self.plan
    }

    /// Index of the next action to execute.
    pub fn pc(&self) -> usize {
        self.pc
    }

    pub fn is_done(&self) -> bool {
        self.pc >= self.plan.actions.len()
    }

    /// Scheduled time of the next action.
    pub fn next_time(&self) -> Option<f64> {
        self.plan.actions.get(self.pc).map(|a| a.t_min)
    }

    pub fn strains(&self) -> &Strains {
        &self.strains
    }

    pub fn fluorescence(&self) -> &FluorescenceModel {
        &self.fluorescence
    }

    pub fn series(&self) -> &[SeriesRow] {
        &self.series
    }

    fn pad_name(&self, pos: GridPos) -> String {
        self.plan
            .pads
            .iter()
            .find(|(_, p)| **p == pos)
            .map(|(n, _)| n.clone())
            .unwrap_or_else(|| pos.to_string())
    }

    fn step_cultures(&mut self, plate: &mut PlateState, dt: f64) -> Result<(), RunError> {
        for pad in plate.pads_mut() {
            let Some(strain) = self.strains.get(&pad.strain) else {
                if pad.culture.total() > 0.0 {
                    return Err(BioassayError::UnknownStrain(pad.strain.clone()).into());
                }
                continue;
            };
            let concs = pad.concentrations();
            let history = std::mem::take(&mut pad.culture.history);
            pad.culture = step_culture(&pad.culture, strain, &concs, dt)?;
            pad.culture.history = history;
        }
        Ok(())
    }

    fn track_volumes(&mut self, plate: &PlateState) {
        for pad in plate.pads() {
            let name = self.pad_name(pad.pos());
            if pad.dried {
                self.dried.insert(name.clone());
            }
            let v = self.min_vol.entry(name).or_insert(f64::INFINITY);
            *v = v.min(pad.volume_ul);
        }
    }

    /// Bring cultures level with the stage clock, then advance both to `t`
    /// with evaporation. Times at or before the clock only catch up the cultures.
    pub fn advance_to(&mut self, plate: &mut PlateState, t: f64) -> Result<Vec<StageEvent>, RunError> {
        let lag = plate.clock_min() - self.bio_t;
        if lag > 0.0 {
            self.step_cultures(plate, lag)?;
        }
        let mut events = Vec::new();
        let dt = t - plate.clock_min();
        if dt > CLOCK_SLACK_MIN {
            for h in advance_chunks(dt) {
                self.step_cultures(plate, h)?;
                events.extend(plate.evaporate(h).expect("non-negative chunk"));
                self.track_volumes(plate);
            }
        }
        self.bio_t = plate.clock_min();
        Ok(events)
    }

    fn verify(&self, plate: &PlateState, c: &PlannedCheck) -> Result<(), RunError> {
        let fail = |detail: String| {
            Err(RunError::CheckFailed {
                statement: c.statement,
                line: c.line,
                detail,
            })
        };
        match &c.check {
            Check::At { droplet, anchor } => match plate.droplet(*droplet) {
                Some(d) if d.anchor == *anchor => Ok(()),
                Some(d) => fail(format!("{droplet} at {} instead of {anchor}", d.anchor)),
                None => fail(format!("{droplet} missing")),
            },
            Check::Covers { droplet, pos } => match plate.droplet(*droplet) {
                Some(d) if d.covers(*pos) => Ok(()),
                _ => fail(format!("{droplet} does not cover {pos}")),
            },
            Check::Concentration {
                droplet,
                drug,
                target,
                tol,
            } => match plate.droplet(*droplet) {
                Some(d) if within(d.concentration(drug), *target, *tol) => Ok(()),
                Some(d) => fail(format!(
                    "{droplet} holds {drug} at {} instead of {target}",
                    d.concentration(drug)
                )),
                None => fail(format!("{droplet} missing")),
            },
            Check::Absent { droplet } => match plate.droplet(*droplet) {
                None => Ok(()),
                Some(_) => fail(format!("{droplet} still on the plate")),
            },
        }
    }

    /// Verify every check due once `done` actions have run.
    fn verify_due(&mut self, plate: &PlateState, done: usize) -> Result<(), RunError> {
        while let Some(c) = self.plan.checks.get(self.checks_done).filter(|c| c.after_actions <= done) {
            self.verify(plate, c)?;
            self.checks_done += 1;
        }
        Ok(())
    }

    /// Execute the next action. Returns `None` once the plan is exhausted.
    /// On error the executor and plate may be partially advanced; callers
    /// needing atomicity work on clones.
    pub fn step(&mut self, plate: &mut PlateState) -> Result<Option<StepReport>, RunError> {
        self.verify_due(plate, self.pc)?;
        let Some(a) = self.plan.actions.get(self.pc).cloned() else {
            return Ok(None);
        };
        let index = self.pc;
        let mut events = self.advance_to(plate, a.t_min)?;
        let started = plate.clock_min();
        let mut readings = Vec::new();
        let stage = |source| RunError::Stage {
            index,
            line: a.line,
            source,
        };
        match &a.action {
            Action::Dispense {
                volume_ul,
                contents,
                at,
                id,
            } => {
                let got = plate.dispense(*volume_ul, contents.clone(), *at).map_err(stage)?;
                if got != *id {
                    return Err(RunError::Diverged {
                        index,
                        expected: *id,
                        got,
                    });
                }
                events.push(StageEvent::Dispensed { id: got, at: *at });
            }
            Action::Tilt(cmd) => {
                events.extend(plate.apply_tilt(*cmd).map_err(stage)?);
            }
            Action::Deliver { droplet, pad, at } => {
                let d = plate.droplet(*droplet).ok_or(StageError::NoSuchDroplet(*droplet)).map_err(stage)?;
                let record = Delivery {
                    t_min: plate.clock_min(),
                    pad: pad.clone(),
                    volume_ul: d.volume_ul,
                    drug_mass: d.contents.solutes.keys().map(|k| (k.clone(), d.mass(k))).collect(),
                };
                events.push(plate.deliver_to_pad(*droplet, *at).map_err(stage)?);
                self.deliveries.push(record);
                self.track_volumes(plate);
            }
            Action::Image { pads } => {
                for name in pads {
                    let pos = *self.plan.pads.get(name).ok_or_else(|| RunError::UnknownPad(name.clone()))?;
                    let pad = plate.pad_at(pos).ok_or_else(|| RunError::UnknownPad(name.clone()))?;
                    let intensity = match self.strains.get(&pad.strain) {
                        Some(s) => self.fluorescence.read(&pad.culture, s, &mut self.rng),
                        None => self.fluorescence.baseline,
                    };
                    readings.push(SeriesRow {
                        pad_id: name.clone(),
                        t_min: plate.clock_min(),
                        intensity,
                        n_normal: pad.culture.n_normal,
                        n_persister: pad.culture.n_persister,
                    });
                }
                self.series.extend(readings.iter().cloned());
            }
            Action::Noop => {}
        }
        self.pc += 1;
        self.verify_due(plate, self.pc)?;
        Ok(Some(StepReport {
            index,
            line: a.line,
            t_min: started,
            scheduled_min: a.t_min,
            action: a.action,
            events,
            readings,
        }))
    }

    /// Execute every action scheduled at or before `t`, then advance to `t`.
    pub fn run_until(&mut self, plate: &mut PlateState, t: f64) -> Result<(Vec<StepReport>, Vec<StageEvent>), RunError> {
        let mut reports = Vec::new();
        while self.next_time().is_some_and(|n| n <= t + CLOCK_SLACK_MIN) {
            reports.extend(self.step(plate)?);
        }
        let events = self.advance_to(plate, t)?;
        Ok((reports, events))
    }

    /// Run the remaining actions and the tail of the plan duration.
    pub fn finish(mut self, mut plate: PlateState) -> Result<RunOutput, RunError> {
        while self.step(&mut plate)?.is_some() {}
        self.advance_to(&mut plate, self.plan.duration_min)?;
        let pad_strains = plate
            .pads()
            .iter()
            .map(|p| (self.pad_name(p.pos()), p.strain.clone()))
            .collect();
        Ok(RunOutput {
            series: self.series,
            pad_strains,
            deliveries: self.deliveries,
            min_pad_volume_ul: self.min_vol,
            dried_pads: self.dried,
            plate,
        })
    }
}

/// Replay `plan` on a copy of `plate`, integrating every pad culture between
/// actions and reading fluorescence at each image action. Readout noise is
/// drawn from a generator seeded with `seed`.
pub fn run_plan(
    plan: &CompiledPlan,
    plate: &PlateState,
    strains: &Strains,
    fluorescence: &FluorescenceModel,
    seed: u64,
) -> Result<RunOutput, RunError> {
    PlanExecutor::new(plan.clone(), strains.clone(), *fluorescence, seed, plate).finish(plate.clone())
}
