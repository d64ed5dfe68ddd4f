use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::io::Write;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CocktailSpace, FitnessRecord, Objective, OptimizerError};

/// Differential-evolution settings. `F` and `CR` keep their usual names in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub population: usize,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "CR")]
    pub cr: f64,
    pub max_generations: usize,
    /// Stop once the best survival is below this and has not improved for
    /// `stall_generations` generations.
    pub stop_survival_pct: f64,
    pub stall_generations: usize,
    /// Weight of the drug burden in the fitness.
    pub lambda: f64,
    pub seed: u64,
    /// Cap on distinct genomes evaluated.
    pub max_evaluations: Option<usize>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            population: 12,
            f: 0.7,
            cr: 0.9,
            max_generations: 25,
            stop_survival_pct: 5.0,
            stall_generations: 5,
            lambda: 0.25,
            seed: 0,
            max_evaluations: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.population < 4 {
            return Err(OptimizerError::PopulationTooSmall(self.population));
        }
        let bad = |m: &str| Err(OptimizerError::InvalidConfig(m.into()));
        if !(self.f >= 0.0 && self.f < 2.0) {
            return bad("F must lie in [0, 2)");
        }
        if !(0.0..=1.0).contains(&self.cr) {
            return bad("CR must lie in [0, 1]");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be non-negative");
        }
        Ok(())
    }
}

/// Lower fitness wins; ties go to the smaller burden, then the
/// lexicographically smaller genome.
fn rank(a: &FitnessRecord, b: &FitnessRecord) -> Ordering {
    a.fitness
        .total_cmp(&b.fitness)
        .then(a.burden.total_cmp(&b.burden))
        .then_with(|| {
            a.genome
                .iter()
                .zip(&b.genome)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

fn best_of(records: &[FitnessRecord]) -> &FitnessRecord {
    records.iter().min_by(|a, b| rank(a, b)).expect("non-empty population")
}

/// Scores genomes through an objective, evaluating each distinct genome once
/// and refusing new genomes after the budget is spent.
pub struct Evaluator<'a, O: Objective + ?Sized> {
    objective: &'a O,
    space: &'a CocktailSpace,
    lambda: f64,
    seed: u64,
    budget: Option<usize>,
    cache: HashMap<Vec<u64>, FitnessRecord>,
}

impl<'a, O: Objective + ?Sized> Evaluator<'a, O> {
    pub fn new(objective: &'a O, space: &'a CocktailSpace, lambda: f64, seed: u64, budget: Option<usize>) -> Self {
        Self {
            objective,
            space,
            lambda,
            seed,
            budget,
            cache: HashMap::new(),
        }
    }

    /// Distinct genomes evaluated so far.
    pub fn evaluations(&self) -> usize {
        self.cache.len()
    }

    /// `None` once the budget is exhausted and `genome` is new.
    pub fn eval(&mut self, genome: &[f64]) -> Result<Option<FitnessRecord>, OptimizerError> {
        let key: Vec<u64> = genome.iter().map(|v| v.to_bits()).collect();
        if let Some(r) = self.cache.get(&key) {
            return Ok(Some(r.clone()));
        }
        if self.budget.is_some_and(|b| self.cache.len() >= b) {
            return Ok(None);
        }
        let survival = self.objective.survival(genome, self.seed)?;
        let r = FitnessRecord::score(genome.to_vec(), survival, self.space, self.lambda, self.seed);
        self.cache.insert(key, r.clone());
        Ok(Some(r))
    }
}

fn init_population<R: Rng>(space: &CocktailSpace, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let d = space.dims();
    match space.levels {
        Some(l) => {
            let total = (l as f64).powi(d as i32);
            let mut seen = HashSet::new();
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let idx: Vec<usize> = (0..d).map(|_| rng.random_range(0..l)).collect();
                // Distinct lattice points while the lattice has room for them.
                if (seen.len() as f64) < total && !seen.insert(idx.clone()) {
                    continue;
                }
                out.push(idx.iter().enumerate().map(|(k, &i)| space.level_value(k, i)).collect());
            }
            out
        }
        None => (0..n)
            .map(|_| space.cmax.iter().map(|&m| rng.random_range(0.0..=m)).collect())
            .collect(),
    }
}

/// One rand/1/bin generation: build every trial vector, score them, then let
/// each trial replace its parent when it is no worse. Returns the next
/// population and whether the evaluation budget ran out.
pub fn evolve<R: Rng, O: Objective + ?Sized>(
    population: &[FitnessRecord],
    cfg: &SearchConfig,
    space: &CocktailSpace,
    rng: &mut R,
    eval: &mut Evaluator<'_, O>,
) -> Result<(Vec<FitnessRecord>, bool), OptimizerError> {
    let n = population.len();
    if n < 4 {
        return Err(OptimizerError::PopulationTooSmall(n));
    }
    let d = space.dims();
    let mut trials = Vec::with_capacity(n);
    for i in 0..n {
        let picks = sample(rng, n - 1, 3);
        let r: Vec<usize> = picks.iter().map(|j| if j >= i { j + 1 } else { j }).collect();
        let (a, b, c) = (&population[r[0]].genome, &population[r[1]].genome, &population[r[2]].genome);
        let forced = rng.random_range(0..d);
        let mut trial = population[i].genome.clone();
        for j in 0..d {
            if j == forced || rng.random::<f64>() < cfg.cr {
                trial[j] = a[j] + cfg.f * (b[j] - c[j]);
            }
        }
        space.project(&mut trial);
        trials.push(trial);
    }
    let mut next = population.to_vec();
    let mut exhausted = false;
    for (i, trial) in trials.iter().enumerate() {
        match eval.eval(trial)? {
            Some(rec) if rec.fitness <= next[i].fitness => next[i] = rec,
            Some(_) => {}
            None => exhausted = true,
        }
    }
    Ok((next, exhausted))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub best_survival_pct: f64,
    /// Distinct genomes evaluated up to and including this generation.
    pub evaluations: usize,
    pub best_genome: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: FitnessRecord,
    pub history: Vec<GenerationRecord>,
    pub evaluations: usize,
    pub population: Vec<FitnessRecord>,
}

fn record(generation: usize, pop: &[FitnessRecord], evaluations: usize) -> GenerationRecord {
    let best = best_of(pop);
    GenerationRecord {
        generation,
        best_fitness: best.fitness,
        mean_fitness: pop.iter().map(|r| r.fitness).sum::<f64>() / pop.len() as f64,
        best_survival_pct: best.survival_pct,
        evaluations,
        best_genome: best.genome.clone(),
    }
}

/// Evolve from a random initial population until the generation cap, the
/// evaluation budget or the stop rule ends the search.
pub fn run_search<O: Objective + ?Sized>(
    cfg: &SearchConfig,
    space: &CocktailSpace,
    objective: &O,
) -> Result<SearchResult, OptimizerError> {
    cfg.validate()?;
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut eval = Evaluator::new(objective, space, cfg.lambda, cfg.seed, cfg.max_evaluations);
    let mut pop = Vec::with_capacity(cfg.population);
    for g in init_population(space, cfg.population, &mut rng) {
        match eval.eval(&g)? {
            Some(r) => pop.push(r),
            None => break,
        }
    }
    if pop.len() < 4 {
        return Err(OptimizerError::InvalidConfig(format!(
            "evaluation budget {:?} cannot seed a population",
            cfg.max_evaluations
        )));
    }
    let mut history = vec![record(0, &pop, eval.evaluations())];
    let mut stalled = 0;
    for generation in 1..=cfg.max_generations {
        let before = best_of(&pop).fitness;
        let (next, exhausted) = evolve(&pop, cfg, space, &mut rng, &mut eval)?;
        pop = next;
        history.push(record(generation, &pop, eval.evaluations()));
        let best = best_of(&pop);
        stalled = if best.fitness < before { 0 } else { stalled + 1 };
        if exhausted || (best.survival_pct < cfg.stop_survival_pct && stalled >= cfg.stall_generations) {
            break;
        }
    }
    Ok(SearchResult {
        best: best_of(&pop).clone(),
        history,
        evaluations: eval.evaluations(),
        population: pop,
    })
}

/// CSV columns: generation, best_fitness, mean_fitness, best_survival_pct,
/// evaluations, then one `best_<drug>` column per drug.
pub fn write_history_csv<W: Write>(
    history: &[GenerationRecord],
    drugs: &[String],
    out: W,
) -> Result<(), OptimizerError> {
    let io = |e: csv::Error| OptimizerError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["generation", "best_fitness", "mean_fitness", "best_survival_pct", "evaluations"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(drugs.iter().map(|d| format!("best_{d}")));
    w.write_record(&header).map_err(io)?;
    for h in history {
        let mut row = vec![
            h.generation.to_string(),
            h.best_fitness.to_string(),
            h.mean_fitness.to_string(),
            h.best_survival_pct.to_string(),
            h.evaluations.to_string(),
        ];
        row.extend(h.best_genome.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| OptimizerError::Io(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub best: FitnessRecord,
    pub records: Vec<FitnessRecord>,
}

/// Largest lattice the exhaustive search accepts.
pub const ORACLE_LIMIT: f64 = 1e6;

/// Evaluate every lattice genome and return the exact minimizer.
pub fn brute_force_oracle<O: Objective + ?Sized>(
    space: &CocktailSpace,
    objective: &O,
    lambda: f64,
    seed: u64,
) -> Result<OracleResult, OptimizerError> {
    space.validate()?;
    let l = space
        .levels
        .ok_or_else(|| OptimizerError::InvalidConfig("exhaustive search needs quantized levels".into()))?;
    let d = space.dims();
    let points = (l as f64).powi(d as i32);
    if points > ORACLE_LIMIT {
        return Err(OptimizerError::GridTooLarge { points });
    }
    let mut idx = vec![0usize; d];
    let mut records = Vec::with_capacity(points as usize);
    loop {
        let genome: Vec<f64> = idx.iter().enumerate().map(|(k, &i)| space.level_value(k, i)).collect();
        let survival = objective.survival(&genome, seed)?;
        records.push(FitnessRecord::score(genome, survival, space, lambda, seed));
        let Some(k) = idx.iter().rposition(|&i| i + 1 < l) else {
            break;
        };
        idx[k] += 1;
        idx[k + 1..].iter_mut().for_each(|i| *i = 0);
    }
    Ok(OracleResult {
        best: best_of(&records).clone(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Sphere;

    impl Objective for Sphere {
        fn survival(&self, genome: &[f64], _seed: u64) -> Result<f64, OptimizerError> {
            Ok(genome.iter().map(|c| c * c).sum())
        }
    }

    fn space(levels: Option<usize>) -> CocktailSpace {
        CocktailSpace {
            drugs: vec!["a".into(), "b".into(), "c".into()],
            cmax: vec![1.0; 3],
            levels,
        }
    }

    #[test]
    fn degenerate_operators_keep_population() {
        let s = space(None);
        let cfg = SearchConfig {
            f: 0.0,
            cr: 0.0,
            lambda: 0.0,
            ..Default::default()
        };
        let mut ev = Evaluator::new(&Sphere, &s, 0.0, 0, None);
        let pop: Vec<FitnessRecord> = (0..6).map(|_| ev.eval(&[0.3, 0.2, 0.1]).unwrap().unwrap()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (next, _) = evolve(&pop, &cfg, &s, &mut rng, &mut ev).unwrap();
        assert_eq!(next, pop);
    }

    #[test]
    fn sphere_surrogate_converges() {
        let cfg = SearchConfig {
            seed: 7,
            lambda: 0.0,
            stop_survival_pct: 0.0,
            ..Default::default()
        };
        let r = run_search(&cfg, &space(None), &Sphere).unwrap();
        assert_eq!(r.history.len(), 26);
        for w in r.history.windows(2) {
            assert!(w[1].best_fitness <= w[0].best_fitness);
        }
        assert!(r.best.fitness <= r.history[0].best_fitness / 10.0);
        assert!(r.evaluations <= cfg.population * (cfg.max_generations + 1));
    }

    #[test]
    fn stop_rule_counts_stalled_generations() {
        struct Dead;
        impl Objective for Dead {
            fn survival(&self, _: &[f64], _: u64) -> Result<f64, OptimizerError> {
                Ok(0.0)
            }
        }
        let cfg = SearchConfig {
            stall_generations: 3,
            lambda: 0.0,
            ..Default::default()
        };
        let r = run_search(&cfg, &space(Some(5)), &Dead).unwrap();
        assert_eq!(r.history.len(), 4);
    }

    #[test]
    fn quantized_genomes_stay_on_grid() {
        let s = space(Some(5));
        let cfg = SearchConfig {
            seed: 11,
            ..Default::default()
        };
        let r = run_search(&cfg, &s, &Sphere).unwrap();
        for rec in &r.population {
            for &v in &rec.genome {
                assert!([0.0, 0.25, 0.5, 0.75, 1.0].contains(&v), "{v}");
            }
        }
    }

    #[test]
    fn oracle_edge_cases() {
        let s = CocktailSpace {
            levels: Some(1),
            ..space(None)
        };
        let o = brute_force_oracle(&s, &Sphere, 0.25, 0).unwrap();
        assert_eq!(o.best.genome, vec![0.0; 3]);
        assert_eq!(o.records.len(), 1);
        let big = CocktailSpace {
            drugs: (0..7).map(|i| i.to_string()).collect(),
            cmax: vec![1.0; 7],
            levels: Some(10),
        };
        assert!(matches!(
            brute_force_oracle(&big, &Sphere, 0.25, 0),
            Err(OptimizerError::GridTooLarge { .. })
        ));
    }

    #[test]
    fn population_too_small() {
        let cfg = SearchConfig {
            population: 3,
            ..Default::default()
        };
        assert_eq!(
            run_search(&cfg, &space(None), &Sphere).unwrap_err(),
            OptimizerError::PopulationTooSmall(3)
        );
    }
}
