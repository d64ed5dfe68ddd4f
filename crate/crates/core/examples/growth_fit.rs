//! Scan six synthetic plates, fit every colony and flag the late grower.

use droplab::imaging::{synthetic_batch, write_colony_csv, BatchSpec, GrowthFitConfig};

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let batch = synthetic_batch(&BatchSpec::default(), seed);
    let records = batch.process(&GrowthFitConfig::default()).unwrap();
    for r in records.iter().filter(|r| r.flagged) {
        eprintln!("flagged plate {} colony {} lag {:.3} h", r.plate, r.colony, r.lag);
    }
    eprintln!("constructed outlier: plate {} colony {}", batch.outlier.0, batch.outlier.1);
    write_colony_csv(&records, std::io::stdout().lock()).unwrap();
}
