//! Fewest-step serial dilution plans for a few targets.

use droplab::protocol::{plan_dilution, DEFAULT_MAX_DILUTION_STEPS};

fn main() {
    let stock = 1000.0;
    println!("{:>8} {:>12} {:>10} {:>10}  ratios", "target", "achieved", "factor", "diluent");
    for target in [500.0, 250.0, 100.0, 62.5, 10.0, 3.0, 0.5] {
        match plan_dilution(stock, target, 2.0, DEFAULT_MAX_DILUTION_STEPS, 0.02) {
            Ok(p) => println!(
                "{target:>8} {:>12.4} {:>10} {:>10.1}  {:?}",
                p.achieved, p.factor, p.diluent_ul, p.ratios
            ),
            Err(e) => println!("{target:>8} {e}"),
        }
    }
}
