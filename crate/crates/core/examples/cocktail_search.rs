//! Search for the cheapest killing cocktail and compare against exhaustive
//! evaluation of the whole 5x5x5 lattice.

use droplab::optimizer::{brute_force_oracle, run_search, EvalMode};
use droplab::scenarios::{cocktail_scenario, cocktail_search_config};

fn main() {
    let mode = match std::env::args().nth(1).as_deref() {
        Some("bypass") => EvalMode::Bypass,
        _ => EvalMode::Pipeline,
    };
    let scenario = cocktail_scenario(mode);
    let t = std::time::Instant::now();
    let oracle = brute_force_oracle(&scenario.space, &scenario, 0.25, 0).expect("oracle");
    println!(
        "oracle: {:?} fitness {:.4} survival {:.4}% ({} evaluations, {:.2?})",
        oracle.best.genome,
        oracle.best.fitness,
        oracle.best.survival_pct,
        oracle.records.len(),
        t.elapsed()
    );
    let mut sorted = oracle.records.clone();
    sorted.sort_by(|a, b| a.fitness.total_cmp(&b.fitness));
    for r in sorted.iter().take(5) {
        println!("  {:?} {:.4}", r.genome, r.fitness);
    }
    for seed in 0..10 {
        let r = run_search(&cocktail_search_config(seed), &scenario.space, &scenario).expect("search");
        let gap = (r.best.fitness - oracle.best.fitness) / oracle.best.fitness;
        println!(
            "seed {seed}: best {:?} fitness {:.4} gap {:+.2}% after {} evaluations",
            r.best.genome,
            r.best.fitness,
            100.0 * gap,
            r.evaluations
        );
    }
}
