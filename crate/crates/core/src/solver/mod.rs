//! Search over allocations: the genetic algorithm used in production and an
//! exhaustive enumerator used as an oracle on small instances.

pub mod genetic;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::domain::{Allocation, ScoreTriple};
use crate::error::{Error, Result};
use crate::gp_design::LocalDesigns;
use crate::objective::{combined_of, evaluate, is_feasible, ProblemInstance};

pub use genetic::{Control, GaParams, Progress};

/// Largest subset count the exhaustive oracle accepts.
pub const EXHAUSTIVE_LIMIT: u128 = 1_000_000;

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Genetic,
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: SolveMethod,
    pub best: Allocation,
    pub best_scores: ScoreTriple,
    #[serde(with = "crate::serde_float")]
    pub combined: f64,
    #[serde(with = "crate::serde_float::vec")]
    pub history: Vec<f64>,
    pub evaluations: usize,
    pub interrupted: bool,
}

fn subset_count(instance: &ProblemInstance) -> u128 {
    instance
        .budget_mode
        .cardinalities(instance.budget)
        .map(|c| binomial(instance.num_sites(), c))
        .fold(0u128, u128::saturating_add)
}

fn finish(
    instance: &ProblemInstance,
    locals: Option<&LocalDesigns>,
    method: SolveMethod,
    best: Vec<usize>,
    history: Vec<f64>,
    evaluations: usize,
    interrupted: bool,
) -> Result<SolveReport> {
    let best = Allocation::new(best, instance.budget, instance.num_sites())?;
    let eval = evaluate(instance, &best, locals)?;
    Ok(SolveReport {
        method,
        best,
        best_scores: eval.scores,
        combined: eval.combined,
        history,
        evaluations,
        interrupted,
    })
}

/// Enumerates every feasible allocation. Ties go to the lexicographically
/// smallest index set.
pub fn exhaustive_solve(instance: &ProblemInstance) -> Result<SolveReport> {
    let locals = instance.local_designs()?;
    exhaustive_solve_with(instance, locals.as_ref())
}

pub fn exhaustive_solve_with(
    instance: &ProblemInstance,
    locals: Option<&LocalDesigns>,
) -> Result<SolveReport> {
    let count = subset_count(instance);
    if count > EXHAUSTIVE_LIMIT {
        return Err(Error::TooLarge {
            n: instance.num_sites(),
            k: instance.budget,
            count,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let n = instance.num_sites();
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut evaluations = 0;
    for c in instance.budget_mode.cardinalities(instance.budget) {
        for combo in (0..n).combinations(c) {
            let value = combined_of(instance, &combo, locals)?;
            evaluations += 1;
            let better = match &best {
                None => true,
                Some((set, v)) => value > *v || (value == *v && combo < *set),
            };
            if better {
                best = Some((combo, value));
            }
        }
    }
    let (set, value) =
        best.ok_or_else(|| Error::BudgetViolation("no feasible allocation".into()))?;
    finish(
        instance,
        locals,
        SolveMethod::Exhaustive,
        set,
        vec![value],
        evaluations,
        false,
    )
}

pub fn ga_solve(instance: &ProblemInstance, params: &GaParams) -> Result<SolveReport> {
    let locals = instance.local_designs()?;
    ga_solve_with(instance, params, locals.as_ref(), Control::default())
}

/// GA over `k`-slot chromosomes; under `BudgetMode::AtMost` one run per
/// cardinality, each seeded from `params.seed + c`.
pub fn ga_solve_with(
    instance: &ProblemInstance,
    params: &GaParams,
    locals: Option<&LocalDesigns>,
    control: Control<'_>,
) -> Result<SolveReport> {
    params.validate()?;
    let n = instance.num_sites();
    let cardinalities: Vec<usize> = instance
        .budget_mode
        .cardinalities(instance.budget)
        .collect();
    let single = cardinalities.len() == 1;

    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut history: Vec<f64> = Vec::new();
    let mut evaluations = 0;
    let mut interrupted = false;
    for c in cardinalities {
        let run_params = GaParams {
            seed: if single {
                params.seed
            } else {
                params.seed.wrapping_add(c as u64)
            },
            ..*params
        };
        let out = genetic::evolve(
            n,
            c,
            &run_params,
            |set: &[usize]| combined_of(instance, set, locals),
            control,
        )?;
        evaluations += out.evaluations;
        interrupted |= out.interrupted;
        merge_history(&mut history, &out.history);
        if best.as_ref().is_none_or(|(_, v)| out.best_fitness > *v) {
            best = Some((out.best, out.best_fitness));
        }
        if interrupted {
            break;
        }
    }
    let (set, _) = best.ok_or_else(|| Error::BudgetViolation("no feasible allocation".into()))?;
    finish(
        instance,
        locals,
        SolveMethod::Genetic,
        set,
        history,
        evaluations,
        interrupted,
    )
}

/// Pointwise best-so-far across runs, extending shorter traces by their last value.
fn merge_history(acc: &mut Vec<f64>, run: &[f64]) {
    let len = acc.len().max(run.len());
    let pad = |v: &[f64], i: usize| v.get(i).or(v.last()).copied().unwrap_or(f64::NEG_INFINITY);
    *acc = (0..len).map(|i| pad(acc, i).max(pad(run, i))).collect();
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeRow {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<ScoreTriple>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "crate::serde_float::option"
    )]
    pub combined: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<SchemeRow>,
}

/// Scores each named allocation. Infeasible rows are flagged, not fatal.
pub fn compare_schemes(
    instance: &ProblemInstance,
    schemes: &[(String, Vec<usize>)],
    locals: Option<&LocalDesigns>,
) -> ScoreTable {
    let rows = schemes
        .iter()
        .map(|(name, selected)| {
            let result = if is_feasible(instance, selected) {
                Allocation::new(selected.clone(), instance.budget, instance.num_sites())
                    .and_then(|a| evaluate(instance, &a, locals))
            } else {
                Err(Error::BudgetViolation(format!(
                    "infeasible allocation of {} sites (budget {})",
                    selected.len(),
                    instance.budget
                )))
            };
            match result {
                Ok(e) => SchemeRow {
                    name: name.clone(),
                    scores: Some(e.scores),
                    combined: Some(e.combined),
                    error: None,
                },
                Err(e) => SchemeRow {
                    name: name.clone(),
                    scores: None,
                    combined: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    ScoreTable { rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Area, CandidateSite, Point, Region, StratumAxis, Weights};
    use crate::objective::{BudgetMode, InstanceSettings};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(seed: u64, n: usize, k: usize, weights: Weights) -> ProblemInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let areas = (0..20)
            .map(|j| {
                let a = rng.random_range(100..2000u64);
                let b = rng.random_range(0..2000u64);
                Area::new(
                    format!("a{j:02}"),
                    Point::new(rng.random_range(0.0..30.0), rng.random_range(0.0..30.0)),
                    a + b,
                )
                .with_strata([("A", a), ("B", b)])
            })
            .collect();
        let region = Region::new(areas, vec![StratumAxis::new("g", ["A", "B"])]);
        let sites = (0..n)
            .map(|i| {
                CandidateSite::new(
                    format!("s{i}"),
                    Point::new(rng.random_range(0.0..30.0), rng.random_range(0.0..30.0)),
                    rng.random_range(200..800),
                    1,
                )
            })
            .collect();
        let settings = InstanceSettings {
            weights,
            budget: k,
            target_fraction: 0.1,
            ..Default::default()
        };
        ProblemInstance::new(region, sites, settings).unwrap()
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(8, 3), 56);
        assert_eq!(binomial(12, 3), 220);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(3, 4), 0);
        assert_eq!(binomial(1000, 500), u128::MAX);
    }

    #[test]
    fn single_feasible_point() {
        let inst = random_instance(1, 4, 4, Weights::default());
        let ex = exhaustive_solve(&inst).unwrap();
        assert_eq!(ex.best.selected(), &[0, 1, 2, 3]);
        let ga = ga_solve(&inst, &GaParams::with_seed(9)).unwrap();
        assert_eq!(ga.best, ex.best);
        assert_eq!(ga.history[0], ga.combined);
    }

    #[test]
    fn single_site_coverage_argmax() {
        let inst = random_instance(4, 5, 1, Weights::new(1.0, 0.0, 0.0));
        let rows: Vec<usize> = (0..5)
            .map(|i| inst.stack.row(i).iter().filter(|&&c| c).count())
            .collect();
        let max = *rows.iter().max().unwrap();
        let expected = rows.iter().position(|&c| c == max).unwrap();
        let ex = exhaustive_solve(&inst).unwrap();
        assert_eq!(ex.best.selected(), &[expected]);
        assert_eq!(ex.best_scores.coverage, max);
    }

    #[test]
    fn exhaustive_dominates_every_subset() {
        let inst = random_instance(7, 12, 3, Weights::default());
        let ex = exhaustive_solve(&inst).unwrap();
        assert_eq!(ex.evaluations, 220);
        for combo in (0..12).combinations(3) {
            assert!(combined_of(&inst, &combo, None).unwrap() <= ex.combined);
        }
    }

    #[test]
    fn oracle_guard() {
        let inst = random_instance(2, 40, 10, Weights::default());
        assert!(matches!(
            exhaustive_solve(&inst),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn ga_matches_oracle_and_is_deterministic() {
        let mut hits = 0;
        for seed in 0..20 {
            let inst = random_instance(100 + seed, 10, 3, Weights::default());
            let ex = exhaustive_solve(&inst).unwrap();
            let params = GaParams::with_seed(seed);
            let ga = ga_solve(&inst, &params).unwrap();
            assert!(ga.combined <= ex.combined + 1e-12);
            assert!(ga.history.windows(2).all(|w| w[0] <= w[1]));
            if (ga.combined - ex.combined).abs() <= 1e-12 {
                hits += 1;
            }
            if seed < 3 {
                assert_eq!(ga, ga_solve(&inst, &params).unwrap());
            }
        }
        assert!(hits >= 19, "GA matched the oracle on {hits}/20 seeds");
    }

    #[test]
    fn site_order_does_not_change_optimum_value() {
        let inst = random_instance(31, 9, 3, Weights::default());
        let ex = exhaustive_solve(&inst).unwrap();
        let mut sites = inst.sites.clone();
        sites.reverse();
        let settings = InstanceSettings {
            weights: inst.weights,
            budget: inst.budget,
            target_fraction: inst.target_fraction,
            ..Default::default()
        };
        let flipped = ProblemInstance::new(inst.region.clone(), sites, settings).unwrap();
        assert_eq!(exhaustive_solve(&flipped).unwrap().combined, ex.combined);
    }

    #[test]
    fn at_most_mode_searches_smaller_sets() {
        let mut inst = random_instance(8, 6, 2, Weights::new(0.0, 0.0, 1.0));
        inst.budget_mode = BudgetMode::AtMost;
        let ex = exhaustive_solve(&inst).unwrap();
        // equity alone is minimized by covering nothing
        assert!(ex.best.is_empty());
        assert_eq!(ex.evaluations, 1 + 6 + 15);
        let ga = ga_solve(&inst, &GaParams::with_seed(1)).unwrap();
        assert_eq!(ga.combined, ex.combined);
    }

    #[test]
    fn compare_flags_infeasible_rows() {
        let inst = random_instance(3, 6, 2, Weights::default());
        let table = compare_schemes(
            &inst,
            &[
                ("current".into(), vec![0, 1]),
                ("same".into(), vec![0, 1]),
                ("bad".into(), vec![0, 0]),
            ],
            None,
        );
        assert_eq!(table.rows[0].scores, table.rows[1].scores);
        assert_eq!(table.rows[0].combined, table.rows[1].combined);
        assert!(table.rows[2].error.is_some() && table.rows[2].scores.is_none());
        assert!(compare_schemes(&inst, &[], None).rows.is_empty());
    }

    #[test]
    fn history_merge() {
        let mut acc = vec![];
        merge_history(&mut acc, &[1.0]);
        merge_history(&mut acc, &[0.0, 0.5, 2.0]);
        assert_eq!(acc, vec![1.0, 1.0, 2.0]);
    }
}
