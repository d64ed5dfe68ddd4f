//! Route a droplet past a parked one. Every tilt shakes both, so the
//! planner picks angles that release the 10 uL mover but not the smaller
//! 4 uL droplet, whose release angle is higher.

use std::collections::BTreeSet;

use droplab::protocol::plan_route;
use droplab::stage::{Contents, GridPos, Layout, PlateState, StageConfig};

fn main() {
    let mut plate = PlateState::from_layout(&Layout::grid(6, 4), StageConfig::default()).unwrap();
    let mover = plate.dispense(10.0, Contents::media(), GridPos::new(0, 0)).unwrap();
    let parked = plate.dispense(4.0, Contents::media(), GridPos::new(2, 0)).unwrap();
    let target = GridPos::new(5, 3);
    let route = plan_route(&plate, mover, target, &BTreeSet::from([parked])).unwrap();
    println!("{} tilts from (0,0) to {target}:", route.len());
    for cmd in &route {
        let events = plate.apply_tilt(*cmd).unwrap();
        println!("  {:+5.1} deg on {}: {events:?}", cmd.angle_deg, cmd.axis);
    }
    println!("mover at {}", plate.droplet(mover).unwrap().anchor);
    println!("parked at {}", plate.droplet(parked).unwrap().anchor);
}
