use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use thiserror::Error;

use crate::stage::{Direction, DropletId, GridPos, PlateState, StageEvent, TiltCommand};

/// Expanded configurations per route before giving up.
pub const ROUTE_BUDGET: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RouteError {
    #[error("no route found within {budget} expanded configurations")]
    NoRoute { budget: usize },
    #[error("target {0} is occupied by a droplet that is not parked")]
    TargetOccupied(GridPos),
    #[error("no droplet {0}")]
    NoSuchDroplet(DropletId),
    #[error("no anchor at {0}")]
    NoSuchAnchor(GridPos),
}

/// Smallest two-decimal angle that releases `id` toward `dir`, if within the stage limit.
pub fn release_angle(plate: &PlateState, id: DropletId, dir: Direction) -> Option<f64> {
    let d = plate.droplet(id)?;
    let cfg = plate.config();
    let theta = d
        .cells()
        .map(|c| {
            plate
                .kind_at(c)
                .map_or(f64::INFINITY, |k| cfg.theta_eff(k, dir, d.volume_ul))
        })
        .fold(0.0, f64::max);
    let mut angle = (theta * 100.0 - 1e-6).ceil() / 100.0;
    if angle < theta - crate::stage::HOP_TOLERANCE_DEG {
        angle += 0.01;
    }
    (angle <= cfg.theta_max_deg + 1e-12).then_some(angle.min(cfg.theta_max_deg))
}

type Key = Vec<(u64, i32, i32)>;

fn key(plate: &PlateState) -> Key {
    plate
        .droplets()
        .iter()
        .map(|d| (d.id.0, d.anchor.x, d.anchor.y))
        .collect()
}

struct Goal {
    mover: DropletId,
    target: GridPos,
    partner: Option<DropletId>,
    partner_cells: Vec<GridPos>,
    origins: Vec<(DropletId, GridPos)>,
    /// Whether a merge with the partner must cover `target`.
    land: bool,
}

impl Goal {
    fn heuristic(&self, plate: &PlateState) -> u32 {
        let d = plate.droplet(self.mover).expect("mover present until goal");
        let mover = if self.partner.is_some() {
            let offsets: Vec<GridPos> = d.cells().collect();
            offsets
                .iter()
                .flat_map(|c| self.partner_cells.iter().map(move |p| c.manhattan(*p)))
                .min()
                .unwrap_or(0)
        } else {
            d.anchor.manhattan(self.target)
        };
        self.origins
            .iter()
            .filter_map(|(id, o)| plate.droplet(*id).map(|x| x.anchor.manhattan(*o)))
            .fold(mover, u32::max)
    }

    fn parked_home(&self, plate: &PlateState) -> bool {
        self.origins
            .iter()
            .all(|(id, o)| plate.droplet(*id).is_some_and(|x| x.anchor == *o))
    }
}

enum Outcome {
    Continue,
    Reached,
    Reject,
}

fn judge(goal: &Goal, before: &PlateState, after: &PlateState, events: &[StageEvent]) -> Outcome {
    let merges: Vec<&StageEvent> = events
        .iter()
        .filter(|e| matches!(e, StageEvent::Merged { .. }))
        .collect();
    let mover_moved = before.droplet(goal.mover).map(|d| d.anchor)
        != after.droplet(goal.mover).map(|d| d.anchor);
    match (merges.as_slice(), goal.partner) {
        ([], _) if !mover_moved => Outcome::Reject,
        ([], None) => {
            let at = after.droplet(goal.mover).map(|d| d.anchor);
            if at == Some(goal.target) && goal.parked_home(after) {
                Outcome::Reached
            } else {
                Outcome::Continue
            }
        }
        ([], Some(_)) => Outcome::Continue,
        ([StageEvent::Merged { into, absorbed, .. }], Some(partner)) => {
            let mut members: Vec<DropletId> = absorbed.clone();
            members.push(*into);
            members.sort();
            let mut want = vec![goal.mover, partner];
            want.sort();
            let landed = !goal.land || after.droplet(*into).is_some_and(|d| d.covers(goal.target));
            if members == want && landed && goal.parked_home(after) {
                Outcome::Reached
            } else {
                Outcome::Reject
            }
        }
        _ => Outcome::Reject,
    }
}

/// Tilt sequence that brings `id` to `target` without unintended merges and
/// with every parked droplet back where it started. When `target` is covered
/// by a parked droplet the route ends by merging into it.
pub fn plan_route(
    plate: &PlateState,
    id: DropletId,
    target: GridPos,
    parked: &BTreeSet<DropletId>,
) -> Result<Vec<TiltCommand>, RouteError> {
    plan_route_with_budget(plate, id, target, parked, ROUTE_BUDGET)
}

pub fn plan_route_with_budget(
    plate: &PlateState,
    id: DropletId,
    target: GridPos,
    parked: &BTreeSet<DropletId>,
    budget: usize,
) -> Result<Vec<TiltCommand>, RouteError> {
    search(plate, id, target, parked, budget, true)
}

/// Tilt sequence that merges `id` with the parked droplet covering `target`,
/// wherever the merge happens, with every other parked droplet back home.
pub fn plan_merge(
    plate: &PlateState,
    id: DropletId,
    target: GridPos,
    parked: &BTreeSet<DropletId>,
) -> Result<Vec<TiltCommand>, RouteError> {
    search(plate, id, target, parked, ROUTE_BUDGET, false)
}

fn search(
    plate: &PlateState,
    id: DropletId,
    target: GridPos,
    parked: &BTreeSet<DropletId>,
    budget: usize,
    land: bool,
) -> Result<Vec<TiltCommand>, RouteError> {
    let mover = plate.droplet(id).ok_or(RouteError::NoSuchDroplet(id))?;
    if !plate.has_anchor(target) {
        return Err(RouteError::NoSuchAnchor(target));
    }
    if mover.anchor == target {
        return Ok(Vec::new());
    }
    let partner = match plate.droplet_at(target) {
        Some(other) if other.id == id => None,
        Some(other) if parked.contains(&other.id) => Some(other.id),
        Some(_) => return Err(RouteError::TargetOccupied(target)),
        None => None,
    };
    let goal = Goal {
        mover: id,
        target,
        partner,
        partner_cells: partner
            .and_then(|p| plate.droplet(p))
            .map(|d| d.cells().collect())
            .unwrap_or_default(),
        origins: plate
            .droplets()
            .iter()
            .filter(|d| parked.contains(&d.id) && d.id != id && Some(d.id) != partner)
            .map(|d| (d.id, d.anchor))
            .collect(),
        land,
    };

    struct Node {
        plate: PlateState,
        parent: usize,
        cmd: Option<TiltCommand>,
        g: u32,
        done: bool,
    }
    let mut nodes = vec![Node {
        plate: plate.clone(),
        parent: usize::MAX,
        cmd: None,
        g: 0,
        done: false,
    }];
    let mut best_g: HashMap<Key, u32> = HashMap::new();
    best_g.insert(key(plate), 0);
    let mut open = BinaryHeap::new();
    let h0 = goal.heuristic(plate);
    open.push(Reverse((h0, h0, 0usize)));
    let mut expanded = 0;
    while let Some(Reverse((_, _, idx))) = open.pop() {
        if nodes[idx].done {
            let mut cmds = Vec::new();
            let mut i = idx;
            while let Some(c) = nodes[i].cmd {
                cmds.push(c);
                i = nodes[i].parent;
            }
            cmds.reverse();
            return Ok(cmds);
        }
        if expanded >= budget {
            break;
        }
        expanded += 1;
        let g = nodes[idx].g + 1;
        for dir in Direction::ALL {
            let Some(angle) = release_angle(&nodes[idx].plate, id, dir) else {
                continue;
            };
            let cmd = TiltCommand::toward(dir, angle);
            let mut next = nodes[idx].plate.clone();
            let Ok(events) = next.apply_tilt(cmd) else {
                continue;
            };
            let (done, h) = match judge(&goal, &nodes[idx].plate, &next, &events) {
                Outcome::Reject => continue,
                Outcome::Reached => (true, 0),
                Outcome::Continue => {
                    let k = key(&next);
                    if best_g.get(&k).is_some_and(|&old| old <= g) {
                        continue;
                    }
                    best_g.insert(k, g);
                    (false, goal.heuristic(&next))
                }
            };
            let n = nodes.len();
            nodes.push(Node {
                plate: next,
                parent: idx,
                cmd: Some(cmd),
                g,
                done,
            });
            open.push(Reverse((g + h, h, n)));
        }
    }
    Err(RouteError::NoRoute { budget })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stage::{AnchorKind, Contents, Layout, StageConfig};

    fn plate(cols: i32, rows: i32) -> PlateState {
        PlateState::from_layout(&Layout::grid(cols, rows), StageConfig::default()).unwrap()
    }

    #[test]
    fn straight_line() {
        let mut p = plate(5, 1);
        let id = p.dispense(10.0, Contents::default(), GridPos::new(0, 0)).unwrap();
        let r = plan_route(&p, id, GridPos::new(3, 0), &BTreeSet::new()).unwrap();
        assert_eq!(r, vec![TiltCommand::toward(Direction::PosX, 8.0); 3]);
    }

    #[test]
    fn equal_droplets_merge_only_at_the_wall() {
        // Both droplets release at the same angle, so they can only meet at a wall.
        let mut p = plate(3, 1);
        let partner = p.dispense(5.0, Contents::default(), GridPos::new(1, 0)).unwrap();
        let id = p.dispense(5.0, Contents::default(), GridPos::new(2, 0)).unwrap();
        let parked = BTreeSet::from([partner]);
        assert!(plan_route(&p, id, GridPos::new(1, 0), &parked).is_err());
        let tilts = plan_merge(&p, id, GridPos::new(1, 0), &parked).unwrap();
        for t in tilts {
            p.apply_tilt(t).unwrap();
        }
        assert_eq!(p.droplets().len(), 1);
        assert!(!p.droplets()[0].covers(GridPos::new(1, 0)));
    }

    #[test]
    fn already_there() {
        let mut p = plate(3, 3);
        let id = p.dispense(10.0, Contents::default(), GridPos::new(1, 1)).unwrap();
        assert!(plan_route(&p, id, GridPos::new(1, 1), &BTreeSet::new()).unwrap().is_empty());
    }

    #[test]
    fn target_occupied_by_free_droplet() {
        let mut p = plate(3, 1);
        let id = p.dispense(10.0, Contents::default(), GridPos::new(0, 0)).unwrap();
        p.dispense(10.0, Contents::default(), GridPos::new(2, 0)).unwrap();
        assert_eq!(
            plan_route(&p, id, GridPos::new(2, 0), &BTreeSet::new()),
            Err(RouteError::TargetOccupied(GridPos::new(2, 0)))
        );
    }

    #[test]
    fn merges_into_parked_partner() {
        let mut p = plate(4, 1);
        let a = p.dispense(10.0, Contents::default(), GridPos::new(0, 0)).unwrap();
        let b = p.dispense(3.0, Contents::default(), GridPos::new(3, 0)).unwrap();
        let r = plan_route(&p, a, GridPos::new(3, 0), &[b].into()).unwrap();
        assert_eq!(r.len(), 3);
        for c in r {
            p.apply_tilt(c).unwrap();
        }
        assert_eq!(p.droplets().len(), 1);
        assert_eq!(p.droplets()[0].volume_ul, 13.0);
    }

    #[test]
    fn gate_limits_angle_and_spares_parked_droplets() {
        let mut layout = Layout::grid(5, 2);
        layout.set_kind(GridPos::new(0, 0), AnchorKind::GateRight);
        let mut p = PlateState::from_layout(&layout, StageConfig::default()).unwrap();
        let a = p.dispense(10.0, Contents::default(), GridPos::new(0, 0)).unwrap();
        let parked = p.dispense(10.0, Contents::default(), GridPos::new(2, 1)).unwrap();
        let r = plan_route(&p, a, GridPos::new(1, 0), &[parked].into()).unwrap();
        assert_eq!(r, vec![TiltCommand::toward(Direction::PosX, 3.0)]);
    }

    #[test]
    fn no_route_when_too_small_to_move() {
        let mut p = plate(3, 1);
        let id = p.dispense(1.0, Contents::default(), GridPos::new(0, 0)).unwrap();
        assert!(matches!(
            plan_route(&p, id, GridPos::new(2, 0), &BTreeSet::new()),
            Err(RouteError::NoRoute { .. })
        ));
    }
}
