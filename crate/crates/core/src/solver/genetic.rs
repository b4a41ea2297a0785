//! Fixed-length subset GA.
//!
//! A chromosome holds `k` gene slots, each a site index in `0..n`. Repair
//! replaces a repeated gene with the next unused index scanning upward
//! (wrapping), so every decoded individual is a feasible `k`-subset.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TOURNAMENT_SIZE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaParams {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub elitism: usize,
    pub seed: u64,
}

impl Default for GaParams {
    fn default() -> Self {
        Self {
            population_size: 60,
            generations: 200,
            crossover_rate: 0.8,
            mutation_rate: 0.1,
            elitism: 2,
            seed: 0,
        }
    }
}

impl GaParams {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population_size == 0 {
            return Err(Error::InvalidParameter(
                "population_size must be positive".into(),
            ));
        }
        if self.elitism >= self.population_size {
            return Err(Error::InvalidParameter(
                "elitism must be smaller than population_size".into(),
            ));
        }
        for (name, rate) in [
            ("crossover_rate", self.crossover_rate),
            ("mutation_rate", self.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Snapshot passed to progress observers after each generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub generation: usize,
    pub best: f64,
}

/// Cancellation flag and progress hook for a run.
#[derive(Default, Clone, Copy)]
pub struct Control<'a> {
    pub cancel: Option<&'a AtomicBool>,
    pub progress: Option<&'a (dyn Fn(Progress) + Sync)>,
}

impl Control<'_> {
    fn cancelled(&self) -> bool {
        self.cancel.is_some_and(|c| c.load(AtomicOrdering::Relaxed))
    }

    fn report(&self, generation: usize, best: f64) {
        if let Some(f) = self.progress {
            f(Progress { generation, best });
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaOutcome {
    /// Sorted site indices of the best individual ever evaluated.
    pub best: Vec<usize>,
    pub best_fitness: f64,
    /// Best-so-far fitness after the initial population and after each generation.
    pub history: Vec<f64>,
    /// Distinct subsets evaluated.
    pub evaluations: usize,
    pub interrupted: bool,
}

/// Makes `genes` duplicate-free in place. Requires `genes.len() <= n`.
pub fn repair(genes: &mut [usize], n: usize) {
    debug_assert!(genes.len() <= n);
    let mut used = vec![false; n];
    for g in genes.iter_mut() {
        let mut candidate = *g % n;
        while used[candidate] {
            candidate = (candidate + 1) % n;
        }
        used[candidate] = true;
        *g = candidate;
    }
}

fn canonical(genes: &[usize]) -> Vec<usize> {
    let mut set = genes.to_vec();
    set.sort_unstable();
    set
}

fn fitness_key(f: f64) -> f64 {
    if f.is_nan() {
        f64::NEG_INFINITY
    } else {
        f
    }
}

/// Maximizes `fitness` over `k`-subsets of `0..n`. Deterministic given `params.seed`.
pub fn evolve<F, E>(
    n: usize,
    k: usize,
    params: &GaParams,
    fitness: F,
    control: Control<'_>,
) -> std::result::Result<GaOutcome, E>
where
    F: Fn(&[usize]) -> std::result::Result<f64, E> + Sync,
    E: Send + From<Error>,
{
    params.validate()?;
    if k > n {
        return Err(Error::BudgetViolation(format!("k = {k} exceeds n = {n}")).into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut cache: HashMap<Vec<usize>, f64> = HashMap::new();

    if k == 0 {
        let f = fitness_key(fitness(&[])?);
        return Ok(GaOutcome {
            best: vec![],
            best_fitness: f,
            history: vec![f],
            evaluations: 1,
            interrupted: false,
        });
    }

    let mut population: Vec<Vec<usize>> = (0..params.population_size)
        .map(|_| {
            let mut genes: Vec<usize> = (0..k).map(|_| rng.random_range(0..n)).collect();
            repair(&mut genes, n);
            genes
        })
        .collect();

    let mut scores = evaluate_population(&population, &fitness, &mut cache)?;
    let (mut best, mut best_fitness) = best_of(&population, &scores);
    let mut history = vec![best_fitness];
    control.report(0, best_fitness);
    let mut interrupted = false;

    for generation in 1..=params.generations {
        if control.cancelled() {
            interrupted = true;
            break;
        }
        let mut ranked: Vec<usize> = (0..population.len()).collect();
        ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

        let mut next: Vec<Vec<usize>> = ranked
            .iter()
            .take(params.elitism)
            .map(|&i| population[i].clone())
            .collect();
        while next.len() < params.population_size {
            let p1 = tournament(&scores, &mut rng);
            let p2 = tournament(&scores, &mut rng);
            let mut child = if rng.random::<f64>() < params.crossover_rate {
                population[p1]
                    .iter()
                    .zip(&population[p2])
                    .map(|(&a, &b)| if rng.random::<bool>() { a } else { b })
                    .collect()
            } else {
                population[p1].clone()
            };
            for gene in child.iter_mut() {
                if rng.random::<f64>() < params.mutation_rate {
                    *gene = rng.random_range(0..n);
                }
            }
            repair(&mut child, n);
            next.push(child);
        }

        population = next;
        scores = evaluate_population(&population, &fitness, &mut cache)?;
        let (gen_best, gen_fitness) = best_of(&population, &scores);
        if gen_fitness > best_fitness {
            best = gen_best;
            best_fitness = gen_fitness;
        }
        history.push(best_fitness);
        control.report(generation, best_fitness);
    }

    Ok(GaOutcome {
        best,
        best_fitness,
        history,
        evaluations: cache.len(),
        interrupted,
    })
}

fn tournament(scores: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let mut winner = rng.random_range(0..scores.len());
    for _ in 1..TOURNAMENT_SIZE {
        let challenger = rng.random_range(0..scores.len());
        if scores[challenger] > scores[winner] {
            winner = challenger;
        }
    }
    winner
}

fn best_of(population: &[Vec<usize>], scores: &[f64]) -> (Vec<usize>, f64) {
    let mut best = 0;
    for i in 1..population.len() {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    (canonical(&population[best]), scores[best])
}

fn evaluate_population<F, E>(
    population: &[Vec<usize>],
    fitness: &F,
    cache: &mut HashMap<Vec<usize>, f64>,
) -> std::result::Result<Vec<f64>, E>
where
    F: Fn(&[usize]) -> std::result::Result<f64, E> + Sync,
    E: Send,
{
    let keys: Vec<Vec<usize>> = population.iter().map(|g| canonical(g)).collect();
    let mut pending: Vec<&Vec<usize>> = keys
        .iter()
        .filter(|key| !cache.contains_key(*key))
        .collect();
    pending.sort_unstable();
    pending.dedup();
    let fresh: Vec<std::result::Result<f64, E>> =
        pending.par_iter().map(|key| fitness(key)).collect();
    for (key, value) in pending.into_iter().zip(fresh) {
        cache.insert(key.clone(), fitness_key(value?));
    }
    Ok(keys.iter().map(|key| cache[key]).collect())
}
