//! Parse and compile a short dosing protocol, then print the plan.

use droplab::protocol::{compile, parse_script, Action};
use droplab::stage::{GridPos, Layout, PlateState, StageConfig};

const SOURCE: &str = "\
DURATION 120min
DRUGS amp
PAD p AT (7,3)
DILUENT media:1
IMAGE PADS p EVERY 30min
DISPENSE 2uL amp:400 media:1 AT (1,1) AS dose
DILUTE dose amp TO 100 TOL 1%
DELIVER dose TO p
";

fn main() {
    let mut layout = Layout::grid(9, 5);
    layout.add_pad(GridPos::new(7, 3), "wt");
    let plate = PlateState::from_layout(&layout, StageConfig::default()).unwrap();
    let script = match parse_script(SOURCE) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(2);
        }
    };
    let plan = compile(&script, &plate).unwrap();
    println!("{} actions, {} checks, {} min", plan.actions.len(), plan.checks.len(), plan.duration_min);
    for a in &plan.actions {
        let what = match &a.action {
            Action::Tilt(cmd) => format!("tilt {} {:+.1}", cmd.axis, cmd.angle_deg),
            Action::Dispense { volume_ul, at, id, .. } => format!("dispense {volume_ul} uL at {at} as {id}"),
            Action::Deliver { droplet, pad, .. } => format!("deliver {droplet} to {pad}"),
            Action::Image { pads } => format!("image {}", pads.join(",")),
            Action::Noop => "end".into(),
        };
        println!("{:>8.2} min  line {:>2}  {what}", a.t_min, a.line);
    }
}
