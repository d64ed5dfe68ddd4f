//! Three strains against four antibiotics on one plate: dose, image every
//! 20 min for 8 h, then classify each strain/drug pair.

use droplab::bioassay::{ClassifierConfig, FluorescenceModel};
use droplab::protocol::{compile, parse_script};
use droplab::runner::{inoculate, run_plan, summarize};
use droplab::scenarios::{drug_panel, AssayOptions, PANEL_NOISE_SIGMA};

fn main() {
    let started = std::time::Instant::now();
    let mut assay = drug_panel(&AssayOptions::default());
    let script = parse_script(&assay.protocol).expect("generated protocol parses");
    let plan = compile(&script, &assay.plate).expect("protocol compiles");
    inoculate(&mut assay.plate, &assay.strains).expect("strains known");
    let fluorescence = FluorescenceModel {
        noise_sigma: PANEL_NOISE_SIGMA,
        ..Default::default()
    };
    let out = run_plan(&plan, &assay.plate, &assay.strains, &fluorescence, 7).expect("replay");
    let summary = summarize(&out, &ClassifierConfig::default(), PANEL_NOISE_SIGMA).expect("classify");

    println!("{:<10} {:<6} {:<12} {:>10} {:>10}", "pad", "drug", "class", "vs ctrl %", "detect h");
    for s in summary.iter().filter(|s| !s.drugs.is_empty()) {
        let class = s.classification.map(|c| format!("{:?}", c.resilience)).unwrap_or_default();
        let detect = s.detection_min.map(|t| format!("{:.2}", t / 60.0)).unwrap_or("-".into());
        println!(
            "{:<10} {:<6} {:<12} {:>10.2} {:>10}",
            s.pad,
            s.drugs.join("+"),
            class,
            s.survival_vs_control_pct.unwrap_or(f64::NAN),
            detect
        );
    }
    let min_vol = out.min_pad_volume_ul.values().copied().fold(f64::INFINITY, f64::min);
    println!(
        "{} actions, lowest pad volume {min_vol:.2} uL, {:.2?} wall clock",
        plan.actions.len(),
        started.elapsed()
    );
}
