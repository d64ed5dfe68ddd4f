//! Run the ampicillin ladder on the stage and classify every dose.

use droplab::bioassay::{ClassifierConfig, FluorescenceModel};
use droplab::protocol::{compile, parse_script};
use droplab::runner::{inoculate, run_plan, summarize};
use droplab::scenarios::{ampicillin_ladder, AssayOptions};

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut assay = ampicillin_ladder(seed, &AssayOptions::default());
    let plan = compile(&parse_script(&assay.protocol).unwrap(), &assay.plate).unwrap();
    inoculate(&mut assay.plate, &assay.strains).unwrap();
    let out = run_plan(&plan, &assay.plate, &assay.strains, &FluorescenceModel::default(), seed).unwrap();
    let summary = summarize(&out, &ClassifierConfig::default(), 0.0).unwrap();
    println!("inoculum {:.1} cells/uL", assay.strains["wt"].inoculum);
    for (pad, s) in assay.pads.iter().zip(&summary) {
        let class = s.classification.map(|c| format!("{:?}", c.resilience)).unwrap_or_else(|| "control".into());
        let end = out.rows_for(&s.pad).last().unwrap();
        println!(
            "{:>6} {:>5.1} ug/mL  {:<12} final density {:>12.2}",
            s.pad,
            pad.conc,
            class,
            end.n_normal + end.n_persister
        );
    }
}
