//! Survival versus time at a fixed dose for susceptible, tolerant,
//! resistant and persister-forming strains.

use std::collections::BTreeMap;

use droplab::bioassay::{step_culture, survival_percent, PadCulture, Strain};
use droplab::scenarios::{resistant, susceptible, tolerant};

fn main() {
    let base = |id: &str| Strain::new(id, 1.0, 1e6, 1e-3);
    let strains = [
        base("susceptible").with_drug("amp", susceptible()),
        base("tolerant").with_drug("amp", tolerant()),
        base("resistant").with_drug("amp", resistant()),
        base("persister")
            .with_drug("amp", susceptible())
            .with_persisters(0.01, 0.005, 0.05, 0.02),
    ];
    let dose = BTreeMap::from([("amp".to_string(), 32.0)]);
    let none = BTreeMap::new();
    print!("{:>6}", "t h");
    for s in &strains {
        print!(" {:>12}", s.id);
    }
    println!();
    let mut treated: Vec<PadCulture> = strains.iter().map(|s| PadCulture::inoculate(s, 1e3)).collect();
    let mut control = treated.clone();
    for hour in 0..=8 {
        print!("{hour:>6}");
        for (t, c) in treated.iter().zip(&control) {
            print!(" {:>11.4}%", survival_percent(t, c));
        }
        println!();
        for (i, s) in strains.iter().enumerate() {
            treated[i] = step_culture(&treated[i], s, &dose, 60.0).unwrap();
            control[i] = step_culture(&control[i], s, &none, 60.0).unwrap();
        }
    }
}
