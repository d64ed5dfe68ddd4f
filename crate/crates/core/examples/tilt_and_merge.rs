//! Two droplets on a row of `+` anchors: tilt right until they meet, then
//! show the merged droplet.

use droplab::stage::{Axis, Contents, GridPos, Layout, PlateState, StageConfig, TiltCommand};

fn main() {
    let mut plate = PlateState::from_layout(&Layout::grid(6, 1), StageConfig::default()).unwrap();
    let a = plate
        .dispense(10.0, Contents::media().with_solute("amp", 20.0), GridPos::new(0, 0))
        .unwrap();
    let b = plate.dispense(10.0, Contents::media(), GridPos::new(3, 0)).unwrap();
    println!("{}", plate.layout().render());
    println!("dispensed {a} at (0,0) and {b} at (3,0)");

    // Left tilts park b against the wall while a catches up.
    for i in 0..4 {
        let events = plate.apply_tilt(TiltCommand::new(Axis::X, -8.0)).unwrap();
        println!("tilt -X #{i}: {events:?}");
    }
    for d in plate.droplets() {
        println!(
            "{} at {} holds {:.2} uL, amp {:.2} ug/mL",
            d.id,
            d.anchor,
            d.volume_ul,
            d.concentration("amp")
        );
    }
    println!("clock {:.2} min, total volume {:.2} uL", plate.clock_min(), plate.total_volume());
}
