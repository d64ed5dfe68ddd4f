use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::config::StageConfig;
use super::layout::{Layout, PadSpec};
use super::types::{
    Anchor, AnchorKind, Contents, Direction, Droplet, DropletId, Footprint, GridPos, StageEvent,
    TiltCommand,
};
use super::StageError;
use crate::bioassay::PadCulture;

/// A stationary agarose pad holding one culture. Drug enters only by
/// absorbing delivered droplets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GelPad {
    pub x: i32,
    pub y: i32,
    pub strain: String,
    #[serde(rename = "volume_uL")]
    pub volume_ul: f64,
    #[serde(default)]
    pub drug_mass: BTreeMap<String, f64>,
    #[serde(rename = "media_uL")]
    pub media_ul: f64,
    #[serde(default)]
    pub culture: PadCulture,
    /// Set while the pad volume is below the dry floor.
    #[serde(default)]
    pub dried: bool,
}

impl GelPad {
    pub fn pos(&self) -> GridPos {
        GridPos::new(self.x, self.y)
    }

    pub fn concentration(&self, drug: &str) -> f64 {
        match self.drug_mass.get(drug) {
            Some(m) if self.volume_ul > 0.0 => m / self.volume_ul,
            _ => 0.0,
        }
    }

    pub fn concentrations(&self) -> BTreeMap<String, f64> {
        self.drug_mass
            .keys()
            .map(|d| (d.clone(), self.concentration(d)))
            .collect()
    }
}

/// Serialized form shared by layout files and full snapshots. Missing pad
/// volumes fall back to the configured initial pad volume.
#[derive(Serialize, Deserialize)]
struct PlateSnapshot {
    cols: i32,
    rows: i32,
    anchors: Vec<Anchor>,
    #[serde(default)]
    pads: Vec<PadRecord>,
    #[serde(default)]
    droplets: Vec<Droplet>,
    #[serde(default)]
    clock_min: f64,
    #[serde(rename = "temperature_C", default, skip_serializing_if = "Option::is_none")]
    temperature_c: Option<f64>,
    #[serde(default)]
    next_id: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    residue: BTreeMap<String, f64>,
    #[serde(default)]
    config: StageConfig,
}

#[derive(Serialize, Deserialize)]
struct PadRecord {
    x: i32,
    y: i32,
    strain: String,
    #[serde(rename = "volume_uL", default, skip_serializing_if = "Option::is_none")]
    volume_ul: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    drug_mass: BTreeMap<String, f64>,
    #[serde(rename = "media_uL", default, skip_serializing_if = "Option::is_none")]
    media_ul: Option<f64>,
    #[serde(default)]
    culture: PadCulture,
    #[serde(default)]
    dried: bool,
}

/// Full simulator state of one plate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlateSnapshot", into = "PlateSnapshot")]
pub struct PlateState {
    cols: i32,
    rows: i32,
    anchors: Vec<Anchor>,
    pads: Vec<GelPad>,
    droplets: Vec<Droplet>,
    clock_min: f64,
    temperature_c: f64,
    next_id: u64,
    residue: BTreeMap<String, f64>,
    config: StageConfig,
    kinds: Vec<Option<AnchorKind>>,
}

impl TryFrom<PlateSnapshot> for PlateState {
    type Error = StageError;

    fn try_from(s: PlateSnapshot) -> Result<Self, StageError> {
        let layout = Layout {
            cols: s.cols,
            rows: s.rows,
            anchors: s.anchors,
            pads: s
                .pads
                .iter()
                .map(|p| PadSpec {
                    x: p.x,
                    y: p.y,
                    strain: p.strain.clone(),
                })
                .collect(),
        };
        let mut plate = PlateState::from_layout(&layout, s.config)?;
        for (pad, rec) in plate.pads.iter_mut().zip(s.pads) {
            if let Some(v) = rec.volume_ul {
                pad.volume_ul = v;
            }
            if let Some(m) = rec.media_ul {
                pad.media_ul = m;
            }
            pad.drug_mass = rec.drug_mass;
            pad.culture = rec.culture;
            pad.dried = rec.dried;
        }
        if let Some(t) = s.temperature_c {
            plate.temperature_c = t;
        }
        plate.clock_min = s.clock_min;
        plate.residue = s.residue;
        let mut droplets = s.droplets;
        droplets.sort_by_key(|d| d.id);
        let max_id = droplets.iter().map(|d| d.id.0 + 1).max().unwrap_or(0);
        plate.next_id = s.next_id.max(max_id);
        plate.droplets = droplets;
        plate
            .check_invariants()
            .map_err(StageError::InvalidLayout)?;
        Ok(plate)
    }
}

impl From<PlateState> for PlateSnapshot {
    fn from(p: PlateState) -> Self {
        PlateSnapshot {
            cols: p.cols,
            rows: p.rows,
            anchors: p.anchors,
            pads: p
                .pads
                .into_iter()
                .map(|g| PadRecord {
                    x: g.x,
                    y: g.y,
                    strain: g.strain,
                    volume_ul: Some(g.volume_ul),
                    drug_mass: g.drug_mass,
                    media_ul: Some(g.media_ul),
                    culture: g.culture,
                    dried: g.dried,
                })
                .collect(),
            droplets: p.droplets,
            clock_min: p.clock_min,
            temperature_c: Some(p.temperature_c),
            next_id: p.next_id,
            residue: p.residue,
            config: p.config,
        }
    }
}

impl PlateState {
    pub fn from_layout(layout: &Layout, config: StageConfig) -> Result<Self, StageError> {
        config.validate().map_err(StageError::InvalidLayout)?;
        if layout.cols <= 0 || layout.rows <= 0 {
            return Err(StageError::InvalidLayout(format!(
                "grid must be non-empty, got {}x{}",
                layout.cols, layout.rows
            )));
        }
        let mut plate = PlateState {
            cols: layout.cols,
            rows: layout.rows,
            anchors: Vec::with_capacity(layout.anchors.len()),
            pads: Vec::new(),
            droplets: Vec::new(),
            clock_min: 0.0,
            temperature_c: config.temperature_c,
            next_id: 0,
            residue: BTreeMap::new(),
            kinds: vec![None; (layout.cols * layout.rows) as usize],
            config,
        };
        for a in &layout.anchors {
            let idx = plate
                .index(a.pos())
                .ok_or_else(|| StageError::InvalidLayout(format!("anchor {} outside grid", a.pos())))?;
            if plate.kinds[idx].is_some() {
                return Err(StageError::InvalidLayout(format!("duplicate anchor at {}", a.pos())));
            }
            plate.kinds[idx] = Some(a.kind);
            plate.anchors.push(*a);
        }
        for spec in &layout.pads {
            let pos = spec.pos();
            match plate.kind_at(pos) {
                Some(AnchorKind::PadSite) => {}
                Some(k) => {
                    return Err(StageError::InvalidLayout(format!(
                        "pad at {pos} sits on a {k:?} anchor"
                    )))
                }
                None => return Err(StageError::NoSuchAnchor(pos)),
            }
            if plate.pads.iter().any(|p| p.pos() == pos) {
                return Err(StageError::InvalidLayout(format!("duplicate pad at {pos}")));
            }
            plate.pads.push(GelPad {
                x: pos.x,
                y: pos.y,
                strain: spec.strain.clone(),
                volume_ul: plate.config.pad_initial_ul,
                drug_mass: BTreeMap::new(),
                media_ul: plate.config.pad_initial_ul,
                culture: PadCulture::default(),
                dried: plate.config.pad_initial_ul < plate.config.v_dry_ul,
            });
        }
        Ok(plate)
    }

    pub fn from_json(text: &str) -> Result<Self, StageError> {
        serde_json::from_str(text).map_err(|e| StageError::InvalidLayout(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plate serializes")
    }

    pub fn layout(&self) -> Layout {
        Layout {
            cols: self.cols,
            rows: self.rows,
            anchors: self.anchors.clone(),
            pads: self
                .pads
                .iter()
                .map(|p| PadSpec {
                    x: p.x,
                    y: p.y,
                    strain: p.strain.clone(),
                })
                .collect(),
        }
    }

    pub fn cols(&self) -> i32 {
        self.cols
    }

    pub fn rows(&self) -> i32 {
        self.rows
    }

    pub fn config(&self) -> &StageConfig {
        &self.config
    }

    pub fn clock_min(&self) -> f64 {
        self.clock_min
    }

    pub fn temperature_c(&self) -> f64 {
        self.temperature_c
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    /// Droplets in ascending id order.
    pub fn droplets(&self) -> &[Droplet] {
        &self.droplets
    }

    pub fn pads(&self) -> &[GelPad] {
        &self.pads
    }

    pub fn pads_mut(&mut self) -> &mut [GelPad] {
        &mut self.pads
    }

    /// Solute mass left behind by droplets that dried out.
    pub fn residue(&self) -> &BTreeMap<String, f64> {
        &self.residue
    }

    fn index(&self, pos: GridPos) -> Option<usize> {
        (pos.x >= 0 && pos.y >= 0 && pos.x < self.cols && pos.y < self.rows)
            .then(|| (pos.y * self.cols + pos.x) as usize)
    }

    pub fn kind_at(&self, pos: GridPos) -> Option<AnchorKind> {
        self.index(pos).and_then(|i| self.kinds[i])
    }

    pub fn has_anchor(&self, pos: GridPos) -> bool {
        self.kind_at(pos).is_some()
    }

    fn block_exists(&self, anchor: GridPos, footprint: Footprint) -> bool {
        footprint.cells(anchor).all(|c| self.has_anchor(c))
    }

    pub fn droplet(&self, id: DropletId) -> Option<&Droplet> {
        self.droplets
            .binary_search_by_key(&id, |d| d.id)
            .ok()
            .map(|i| &self.droplets[i])
    }

    /// The droplet whose footprint covers `pos`, if any.
    pub fn droplet_at(&self, pos: GridPos) -> Option<&Droplet> {
        self.droplets.iter().find(|d| d.covers(pos))
    }

    pub fn pad_at(&self, pos: GridPos) -> Option<&GelPad> {
        self.pads.iter().find(|p| p.pos() == pos)
    }

    pub fn pad_at_mut(&mut self, pos: GridPos) -> Option<&mut GelPad> {
        self.pads.iter_mut().find(|p| p.pos() == pos)
    }

    pub fn is_free(&self, pos: GridPos) -> bool {
        self.has_anchor(pos) && self.droplet_at(pos).is_none()
    }

    pub fn advance_clock(&mut self, dt_min: f64) {
        if dt_min > 0.0 {
            self.clock_min += dt_min;
        }
    }

    pub fn total_volume(&self) -> f64 {
        self.droplets.iter().map(|d| d.volume_ul).sum::<f64>()
            + self.pads.iter().map(|p| p.volume_ul).sum::<f64>()
    }

    /// Mass of `drug` across droplets, pads and dried residue.
    pub fn total_mass(&self, drug: &str) -> f64 {
        self.droplets.iter().map(|d| d.mass(drug)).sum::<f64>()
            + self
                .pads
                .iter()
                .map(|p| p.drug_mass.get(drug).copied().unwrap_or(0.0))
                .sum::<f64>()
            + self.residue.get(drug).copied().unwrap_or(0.0)
    }

    pub fn drugs(&self) -> BTreeSet<String> {
        self.droplets
            .iter()
            .flat_map(|d| d.contents.solutes.keys())
            .chain(self.pads.iter().flat_map(|p| p.drug_mass.keys()))
            .chain(self.residue.keys())
            .cloned()
            .collect()
    }

    fn footprint_for(&self, volume_ul: f64) -> Footprint {
        if self.config.is_large(volume_ul) {
            Footprint::Quad
        } else {
            Footprint::Single
        }
    }

    /// Place a fresh droplet. Large droplets take the 2x2 block whose lowest corner is `at`.
    pub fn dispense(
        &mut self,
        volume_ul: f64,
        contents: Contents,
        at: GridPos,
    ) -> Result<DropletId, StageError> {
        if !(volume_ul.is_finite() && volume_ul > 0.0) {
            return Err(StageError::NonPositiveVolume(volume_ul));
        }
        contents.validate()?;
        let footprint = self.footprint_for(volume_ul);
        for c in footprint.cells(at) {
            if !self.has_anchor(c) {
                return Err(StageError::NoSuchAnchor(c));
            }
            if self.droplet_at(c).is_some() {
                return Err(StageError::OccupiedAnchor(c));
            }
        }
        let id = DropletId(self.next_id);
        self.next_id += 1;
        self.droplets.push(Droplet {
            id,
            volume_ul,
            contents,
            anchor: at,
            footprint,
        });
        self.clock_min += self.config.t_dispense_min;
        Ok(id)
    }

    /// Where a droplet ends up after one hop tilt, computed from the current state only.
    fn destination(&self, d: &Droplet, dir: Direction, magnitude: f64) -> GridPos {
        let released = d.cells().all(|c| match self.kind_at(c) {
            Some(kind) => self.config.hops(kind, dir, d.volume_ul, magnitude),
            None => false,
        });
        let to = d.anchor.step(dir);
        if released && self.block_exists(to, d.footprint) {
            to
        } else {
            d.anchor
        }
    }

    pub fn validate_tilt(&self, cmd: &TiltCommand) -> Result<(), StageError> {
        let m = cmd.magnitude();
        if !(m.is_finite() && m > 0.0 && m <= self.config.theta_max_deg) {
            return Err(StageError::InvalidAngle(cmd.angle_deg));
        }
        Ok(())
    }

    /// One tilt-and-return agitation. Every droplet decides whether it hops
    /// from the pre-tilt state; landings that overlap merge in ascending id order.
    pub fn apply_tilt(&mut self, cmd: TiltCommand) -> Result<Vec<StageEvent>, StageError> {
        self.validate_tilt(&cmd)?;
        let dir = cmd.direction();
        let mag = cmd.magnitude();
        let dests: Vec<GridPos> = self
            .droplets
            .iter()
            .map(|d| self.destination(d, dir, mag))
            .collect();
        let mut events = Vec::new();
        for (d, &to) in self.droplets.iter_mut().zip(&dests) {
            if to != d.anchor {
                events.push(StageEvent::Moved {
                    id: d.id,
                    from: d.anchor,
                    to,
                });
                d.anchor = to;
            }
        }
        self.resolve_collisions(&mut events);
        self.clock_min += self.config.t_hop_min;
        Ok(events)
    }

    /// Predicted events of a tilt, leaving the plate untouched.
    pub fn preview_tilt(&self, cmd: TiltCommand) -> Result<Vec<StageEvent>, StageError> {
        self.clone().apply_tilt(cmd)
    }

    fn resolve_collisions(&mut self, events: &mut Vec<StageEvent>) {
        let n = self.droplets.len();
        let mut owner: Vec<Option<usize>> = vec![None; self.kinds.len()];
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for (i, d) in self.droplets.iter().enumerate() {
            for c in d.cells() {
                let idx = self.index(c).expect("droplet on grid");
                match owner[idx] {
                    Some(j) => {
                        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                        parent[a.max(b)] = a.min(b);
                    }
                    None => owner[idx] = Some(i),
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<DropletId>> = BTreeMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(self.droplets[i].id);
        }
        for ids in groups.into_values().filter(|g| g.len() > 1) {
            if ids.iter().all(|id| self.droplet(*id).is_some()) {
                events.push(self.merge_group(ids));
            }
        }
        // A droplet that crossed the large-volume threshold by merging may
        // already be handled above; singles never grow without merging.
    }

    /// Combine `ids` into one droplet carrying the lowest id. The merged
    /// droplet keeps the block of the lowest-id large droplet if any, grows
    /// to a 2x2 block when it crosses the large-volume threshold, and absorbs
    /// any droplet its new footprint overlaps.
    fn merge_group(&mut self, mut ids: Vec<DropletId>) -> StageEvent {
        ids.sort();
        loop {
            let members: Vec<&Droplet> = ids.iter().map(|id| self.droplet(*id).expect("member")).collect();
            let volume: f64 = members.iter().map(|d| d.volume_ul).sum();
            let (mut anchor, mut footprint) = members
                .iter()
                .find(|d| d.footprint == Footprint::Quad)
                .map(|d| (d.anchor, Footprint::Quad))
                .unwrap_or((members[0].anchor, Footprint::Single));
            if footprint == Footprint::Single && self.config.is_large(volume) {
                if let Some(block) = self.grow_block(anchor) {
                    anchor = block;
                    footprint = Footprint::Quad;
                }
            }
            let extra: Vec<DropletId> = self
                .droplets
                .iter()
                .filter(|d| !ids.contains(&d.id))
                .filter(|d| d.cells().any(|c| footprint.cells(anchor).any(|f| f == c)))
                .map(|d| d.id)
                .collect();
            if extra.is_empty() {
                let merged = self.combine(&ids, anchor, footprint);
                return StageEvent::Merged {
                    into: merged.id,
                    absorbed: ids[1..].to_vec(),
                    at: merged.anchor,
                    volume_ul: merged.volume_ul,
                };
            }
            ids.extend(extra);
            ids.sort();
        }
    }

    fn grow_block(&self, at: GridPos) -> Option<GridPos> {
        [at, at.offset(-1, 0), at.offset(0, -1), at.offset(-1, -1)]
            .into_iter()
            .find(|&b| self.block_exists(b, Footprint::Quad))
    }

    fn combine(&mut self, ids: &[DropletId], anchor: GridPos, footprint: Footprint) -> Droplet {
        let mut parts: Vec<Droplet> = Vec::with_capacity(ids.len());
        self.droplets.retain(|d| {
            if ids.contains(&d.id) {
                parts.push(d.clone());
                false
            } else {
                true
            }
        });
        parts.sort_by_key(|d| d.id);
        let merged = mix(&parts, anchor, footprint);
        let pos = self
            .droplets
            .binary_search_by_key(&merged.id, |d| d.id)
            .unwrap_err();
        self.droplets.insert(pos, merged.clone());
        merged
    }

    /// Explicitly merge two droplets whose footprints overlap.
    pub fn merge(&mut self, a: DropletId, b: DropletId) -> Result<DropletId, StageError> {
        let da = self.droplet(a).ok_or(StageError::NoSuchDroplet(a))?;
        let db = self.droplet(b).ok_or(StageError::NoSuchDroplet(b))?;
        if a == b || !da.cells().any(|c| db.covers(c)) {
            return Err(StageError::NotColocated(a, b));
        }
        match self.merge_group(vec![a, b]) {
            StageEvent::Merged { into, .. } => Ok(into),
            _ => unreachable!("merge_group yields a merge event"),
        }
    }

    /// Let the pad at `pad` absorb droplet `id`, which must cover the pad site.
    pub fn deliver_to_pad(&mut self, id: DropletId, pad: GridPos) -> Result<StageEvent, StageError> {
        let d = self.droplet(id).ok_or(StageError::NoSuchDroplet(id))?;
        if self.pad_at(pad).is_none() {
            return Err(StageError::NoSuchPad(pad));
        }
        if !d.covers(pad) {
            return Err(StageError::NotAtPadSite { droplet: id, pad });
        }
        let d = d.clone();
        self.droplets.retain(|x| x.id != id);
        let v_dry = self.config.v_dry_ul;
        let g = self.pad_at_mut(pad).expect("pad checked");
        g.volume_ul += d.volume_ul;
        g.media_ul += d.volume_ul * d.contents.media_fraction;
        for (drug, c) in &d.contents.solutes {
            *g.drug_mass.entry(drug.clone()).or_insert(0.0) += d.volume_ul * c;
        }
        if let Some(density) = d.contents.cells.get(&g.strain) {
            g.culture.n_normal += density * d.volume_ul / g.volume_ul;
        }
        g.dried = g.volume_ul < v_dry;
        Ok(StageEvent::Delivered { id, pad })
    }

    /// Linear evaporation over `dt_min`. Solute mass is kept, so concentrations
    /// rise; droplets at or below the dry floor vanish and leave their mass as residue.
    pub fn evaporate(&mut self, dt_min: f64) -> Result<Vec<StageEvent>, StageError> {
        if !(dt_min >= 0.0) {
            return Err(StageError::NegativeDt(dt_min));
        }
        if dt_min == 0.0 {
            return Ok(Vec::new());
        }
        let loss = self.config.evap_droplet_ul_per_min * dt_min;
        let v_dry = self.config.v_dry_ul;
        let v_large = self.config.v_large_ul;
        let mut events = Vec::new();
        let mut kept = Vec::with_capacity(self.droplets.len());
        for mut d in std::mem::take(&mut self.droplets) {
            let v_new = d.volume_ul - loss;
            if v_new <= v_dry {
                for (drug, c) in &d.contents.solutes {
                    *self.residue.entry(drug.clone()).or_insert(0.0) += d.volume_ul * c;
                }
                events.push(StageEvent::Dried {
                    id: d.id,
                    at: d.anchor,
                });
                continue;
            }
            let scale = d.volume_ul / v_new;
            for c in d.contents.solutes.values_mut() {
                *c *= scale;
            }
            for n in d.contents.cells.values_mut() {
                *n *= scale;
            }
            d.volume_ul = v_new;
            if d.footprint == Footprint::Quad && v_new < v_large {
                d.footprint = Footprint::Single;
            }
            kept.push(d);
        }
        self.droplets = kept;
        let pad_loss = self.config.evap_pad_ul_per_min * dt_min;
        for g in &mut self.pads {
            g.volume_ul = (g.volume_ul - pad_loss).max(0.0);
            g.media_ul = (g.media_ul - pad_loss).max(0.0);
            g.dried = g.volume_ul < v_dry;
        }
        self.clock_min += dt_min;
        Ok(events)
    }

    /// Settlement and footprint invariants; returns a description of the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut owner: BTreeMap<GridPos, DropletId> = BTreeMap::new();
        let mut prev: Option<DropletId> = None;
        for d in &self.droplets {
            if prev.is_some_and(|p| p >= d.id) {
                return Err(format!("droplet ids not strictly ascending at {}", d.id));
            }
            prev = Some(d.id);
            if !(d.volume_ul.is_finite() && d.volume_ul > 0.0) {
                return Err(format!("droplet {} has volume {}", d.id, d.volume_ul));
            }
            if d.contents.validate().is_err() {
                return Err(format!("droplet {} has invalid contents", d.id));
            }
            let large = self.config.is_large(d.volume_ul);
            let quad = d.footprint == Footprint::Quad;
            if quad && !large {
                return Err(format!("droplet {} is quad below the large-volume threshold", d.id));
            }
            if large && !quad && self.grow_block(d.anchor).is_some() {
                return Err(format!("droplet {} is large but single", d.id));
            }
            for c in d.cells() {
                if !self.has_anchor(c) {
                    return Err(format!("droplet {} covers {} without an anchor", d.id, c));
                }
                if let Some(other) = owner.insert(c, d.id) {
                    return Err(format!("droplets {} and {} share anchor {}", other, d.id, c));
                }
            }
        }
        for g in &self.pads {
            if g.volume_ul < 0.0 || g.media_ul < 0.0 {
                return Err(format!("pad at {} has negative volume", g.pos()));
            }
        }
        Ok(())
    }
}

/// Volume-weighted mixture of `parts`; the result takes the lowest id.
fn mix(parts: &[Droplet], anchor: GridPos, footprint: Footprint) -> Droplet {
    let volume: f64 = parts.iter().map(|d| d.volume_ul).sum();
    let mut solute_mass: BTreeMap<String, f64> = BTreeMap::new();
    let mut cell_count: BTreeMap<String, f64> = BTreeMap::new();
    let mut media = 0.0;
    for d in parts {
        for (k, c) in &d.contents.solutes {
            *solute_mass.entry(k.clone()).or_insert(0.0) += d.volume_ul * c;
        }
        for (k, n) in &d.contents.cells {
            *cell_count.entry(k.clone()).or_insert(0.0) += d.volume_ul * n;
        }
        media += d.volume_ul * d.contents.media_fraction;
    }
    Droplet {
        id: parts.iter().map(|d| d.id).min().expect("non-empty merge"),
        volume_ul: volume,
        contents: Contents {
            solutes: solute_mass.into_iter().map(|(k, m)| (k, m / volume)).collect(),
            cells: cell_count.into_iter().map(|(k, m)| (k, m / volume)).collect(),
            media_fraction: (media / volume).clamp(0.0, 1.0),
        },
        anchor,
        footprint,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stage::Axis;

    fn row(n: i32) -> PlateState {
        PlateState::from_layout(&Layout::grid(n, 1), StageConfig::default()).unwrap()
    }

    fn water() -> Contents {
        Contents::default()
    }

    #[test]
    fn dispense_creates_droplet_and_advances_clock() {
        let mut p = row(4);
        let id = p.dispense(10.0, water(), GridPos::new(0, 0)).unwrap();
        assert_eq!(p.droplets().len(), 1);
        assert_eq!(p.droplet(id).unwrap().volume_ul, 10.0);
        assert!((p.clock_min() - 0.1).abs() < 1e-12);
        assert_eq!(
            p.dispense(5.0, water(), GridPos::new(0, 0)),
            Err(StageError::OccupiedAnchor(GridPos::new(0, 0)))
        );
        assert_eq!(
            p.dispense(5.0, water(), GridPos::new(9, 0)),
            Err(StageError::NoSuchAnchor(GridPos::new(9, 0)))
        );
        assert_eq!(
            p.dispense(0.0, water(), GridPos::new(1, 0)),
            Err(StageError::NonPositiveVolume(0.0))
        );
    }

    #[test]
    fn three_dispenses_add_up() {
        let mut p = row(4);
        for x in 0..3 {
            p.dispense(5.0, water(), GridPos::new(x, 0)).unwrap();
        }
        assert_eq!(p.droplets().len(), 3);
        assert_eq!(p.total_volume(), 15.0);
    }

    #[test]
    fn hop_at_hold_angle_but_not_below() {
        let mut p = row(3);
        let id = p.dispense(10.0, water(), GridPos::new(0, 0)).unwrap();
        assert!(p.apply_tilt(TiltCommand::new(Axis::X, 3.0)).unwrap().is_empty());
        let ev = p.apply_tilt(TiltCommand::new(Axis::X, 8.0)).unwrap();
        assert_eq!(
            ev,
            vec![StageEvent::Moved {
                id,
                from: GridPos::new(0, 0),
                to: GridPos::new(1, 0)
            }]
        );
    }

    #[test]
    fn rimmed_edge_keeps_droplet() {
        let mut p = row(2);
        p.dispense(10.0, water(), GridPos::new(1, 0)).unwrap();
        assert!(p.apply_tilt(TiltCommand::new(Axis::X, 10.0)).unwrap().is_empty());
        assert_eq!(p.droplets()[0].anchor, GridPos::new(1, 0));
    }

    #[test]
    fn invalid_angles_rejected_without_change() {
        let mut p = row(2);
        p.dispense(10.0, water(), GridPos::new(0, 0)).unwrap();
        let before = p.clone();
        for a in [0.0, 15.5, -20.0, f64::NAN] {
            assert!(matches!(
                p.apply_tilt(TiltCommand::new(Axis::Y, a)),
                Err(StageError::InvalidAngle(_))
            ));
        }
        assert_eq!(p, before);
    }

    #[test]
    fn moving_droplet_merges_into_stationary_one() {
        let mut p = row(3);
        let a = p.dispense(15.0, water(), GridPos::new(0, 0)).unwrap();
        let b = p
            .dispense(5.0, Contents::default().with_solute("dye", 80.0), GridPos::new(1, 0))
            .unwrap();
        // 7 deg releases the 15 uL droplet (theta_eff ~ 6.99) but not the 5 uL one (~10.08).
        let ev = p.apply_tilt(TiltCommand::new(Axis::X, 7.0)).unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!(p.droplets().len(), 1);
        let m = &p.droplets()[0];
        assert_eq!(m.id, a.min(b));
        assert_eq!(m.volume_ul, 20.0);
        assert!((m.concentration("dye") - 20.0).abs() < 1e-12);
        assert_eq!(m.anchor, GridPos::new(1, 0));
    }

    #[test]
    fn large_droplet_moves_at_small_angle() {
        let mut p = PlateState::from_layout(&Layout::grid(6, 4), StageConfig::default()).unwrap();
        let big = p.dispense(80.0, water(), GridPos::new(0, 0)).unwrap();
        let small = p.dispense(10.0, water(), GridPos::new(5, 3)).unwrap();
        assert_eq!(p.droplet(big).unwrap().footprint, Footprint::Quad);
        let ev = p.apply_tilt(TiltCommand::new(Axis::X, 5.0)).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(p.droplet(big).unwrap().anchor, GridPos::new(1, 0));
        assert_eq!(p.droplet(small).unwrap().anchor, GridPos::new(5, 3));
    }

    #[test]
    fn merge_volume_weighted() {
        let mut p = row(2);
        let a = p
            .dispense(10.0, Contents::default().with_solute("amp", 100.0), GridPos::new(0, 0))
            .unwrap();
        let b = p.dispense(10.0, water(), GridPos::new(1, 0)).unwrap();
        assert_eq!(p.merge(a, b), Err(StageError::NotColocated(a, b)));
        p.apply_tilt(TiltCommand::new(Axis::X, 8.0)).unwrap();
        let m = &p.droplets()[0];
        assert_eq!(m.volume_ul, 20.0);
        assert_eq!(m.concentration("amp"), 50.0);
    }

    #[test]
    fn three_way_collision_merges_once_in_id_order() {
        let mut p = PlateState::from_layout(&Layout::grid(4, 3), StageConfig::default()).unwrap();
        let big = p.dispense(40.0, water(), GridPos::new(0, 0)).unwrap();
        let s1 = p.dispense(10.0, water(), GridPos::new(2, 0)).unwrap();
        let s2 = p.dispense(10.0, water(), GridPos::new(2, 1)).unwrap();
        // The 40 uL block releases at ~5.04 deg, the 10 uL droplets hold until 8.
        let ev = p.apply_tilt(TiltCommand::new(Axis::X, 6.0)).unwrap();
        assert_eq!(
            ev.last().unwrap(),
            &StageEvent::Merged {
                into: big,
                absorbed: vec![s1, s2],
                at: GridPos::new(1, 0),
                volume_ul: 60.0
            }
        );
        assert_eq!(p.droplets().len(), 1);
        p.check_invariants().unwrap();
    }

    #[test]
    fn crossing_the_large_threshold_grows_a_block() {
        let mut p = PlateState::from_layout(&Layout::grid(4, 4), StageConfig::default()).unwrap();
        let a = p.dispense(25.0, water(), GridPos::new(0, 1)).unwrap();
        p.dispense(20.0, water(), GridPos::new(1, 1)).unwrap();
        let bystander = p.dispense(3.0, water(), GridPos::new(1, 2)).unwrap();
        // 20 uL releases at ~6.35 deg, the 3 uL bystander holds until ~11.95.
        p.apply_tilt(TiltCommand::new(Axis::X, -6.5)).unwrap();
        p.check_invariants().unwrap();
        let m = p.droplet(a).unwrap();
        assert_eq!(m.footprint, Footprint::Quad);
        assert_eq!(m.anchor, GridPos::new(0, 1));
        assert!(p.droplet(bystander).is_none(), "block absorbed the bystander");
        assert_eq!(m.volume_ul, 48.0);
    }

    #[test]
    fn deliver_dilutes_pad() {
        let mut layout = Layout::grid(2, 1);
        layout.add_pad(GridPos::new(1, 0), "ecoli");
        let cfg = StageConfig {
            pad_initial_ul: 50.0,
            ..StageConfig::default()
        };
        let mut p = PlateState::from_layout(&layout, cfg).unwrap();
        let d = p
            .dispense(10.0, Contents::default().with_solute("amp", 50.0), GridPos::new(0, 0))
            .unwrap();
        assert!(matches!(
            p.deliver_to_pad(d, GridPos::new(1, 0)),
            Err(StageError::NotAtPadSite { .. })
        ));
        p.apply_tilt(TiltCommand::new(Axis::X, 8.0)).unwrap();
        p.deliver_to_pad(d, GridPos::new(1, 0)).unwrap();
        let pad = p.pad_at(GridPos::new(1, 0)).unwrap();
        assert_eq!(pad.volume_ul, 60.0);
        assert!((pad.concentration("amp") - 500.0 / 60.0).abs() < 1e-12);
        assert!(p.droplets().is_empty());

        let before = pad.concentration("amp");
        let m = p.dispense(5.0, Contents::media(), GridPos::new(0, 0)).unwrap();
        p.apply_tilt(TiltCommand::new(Axis::X, 11.0)).unwrap();
        p.deliver_to_pad(m, GridPos::new(1, 0)).unwrap();
        assert!(p.pad_at(GridPos::new(1, 0)).unwrap().concentration("amp") < before);
    }

    #[test]
    fn evaporation_concentrates_and_dries() {
        let mut p = row(3);
        let d = p
            .dispense(10.0, Contents::default().with_solute("amp", 50.0), GridPos::new(0, 0))
            .unwrap();
        let tiny = p.dispense(0.6, water(), GridPos::new(2, 0)).unwrap();
        let before = p.clone();
        assert!(p.evaporate(0.0).unwrap().is_empty());
        assert_eq!(p, before);
        p.evaporate(2.0).unwrap();
        assert!(p.droplet(tiny).is_none());
        p.evaporate(18.0).unwrap();
        let x = p.droplet(d).unwrap();
        assert!((x.volume_ul - 9.0).abs() < 1e-12);
        assert!((x.concentration("amp") - 500.0 / 9.0).abs() < 1e-9);
        assert!((p.total_mass("amp") - 500.0).abs() < 1e-9);
        assert_eq!(p.evaporate(-1.0), Err(StageError::NegativeDt(-1.0)));
    }

    #[test]
    fn tiny_droplet_dry_event() {
        let mut p = row(1);
        let id = p.dispense(0.6, water(), GridPos::new(0, 0)).unwrap();
        let ev = p.evaporate(2.0).unwrap();
        assert_eq!(
            ev,
            vec![StageEvent::Dried {
                id,
                at: GridPos::new(0, 0)
            }]
        );
    }

    #[test]
    fn snapshot_round_trip() {
        let mut layout = Layout::grid(4, 3);
        layout.add_pad(GridPos::new(3, 2), "ecoli");
        let mut p = PlateState::from_layout(&layout, StageConfig::default()).unwrap();
        p.dispense(12.0, Contents::media().with_solute("amp", 3.0), GridPos::new(0, 0))
            .unwrap();
        p.dispense(50.0, water(), GridPos::new(1, 1)).unwrap();
        let json = p.to_json();
        let q = PlateState::from_json(&json).unwrap();
        assert_eq!(p, q);
        assert_eq!(json, q.to_json());
    }

    #[test]
    fn layout_file_loads_as_plate() {
        let p = PlateState::from_json(
            r#"{"cols":2,"rows":1,"anchors":[{"x":0,"y":0,"kind":"+"},{"x":1,"y":0,"kind":"pad_site"}],"pads":[{"x":1,"y":0,"strain":"ecoli"}]}"#,
        )
        .unwrap();
        assert_eq!(p.pads()[0].volume_ul, 30.0);
        assert_eq!(p.clock_min(), 0.0);
        assert!(p.droplets().is_empty());
    }
}
