//! Weighted scalarization `lambda1 f1 - lambda2 f2 - lambda3 f3` and feasibility.

use serde::{Deserialize, Serialize};

use crate::coverage::{coverage_score, covered_by_indices, CoverageStack};
use crate::domain::{
    validate_region, validate_region_for_equity, Allocation, CandidateSite, Region, ScoreTriple,
    Weights,
};
use crate::equity::{equity_score, EquityBreakdown};
use crate::error::{Error, Result};
use crate::gp_design::{minimax_design, DesignResult, DesignSearch, LocalDesigns, ThetaGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// Exactly `k` sites.
    #[default]
    Exact,
    /// Up to `k` sites.
    AtMost,
}

impl BudgetMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "exact" => Some(Self::Exact),
            "at_most" | "atmost" => Some(Self::AtMost),
            _ => None,
        }
    }

    /// Cardinalities a feasible allocation may take.
    pub fn cardinalities(self, k: usize) -> std::ops::RangeInclusive<usize> {
        match self {
            Self::Exact => k..=k,
            Self::AtMost => 0..=k,
        }
    }
}

/// Everything besides the data needed to set up a problem.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSettings {
    pub weights: Weights,
    pub budget: usize,
    pub budget_mode: BudgetMode,
    pub target_fraction: f64,
    pub grid: Option<ThetaGrid>,
    pub design_search: DesignSearch,
}

impl Default for InstanceSettings {
    fn default() -> Self {
        Self {
            weights: Weights::default(),
            budget: 1,
            budget_mode: BudgetMode::Exact,
            target_fraction: 0.1,
            grid: None,
            design_search: DesignSearch::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub region: Region,
    pub sites: Vec<CandidateSite>,
    pub stack: CoverageStack,
    pub grid: Option<ThetaGrid>,
    pub weights: Weights,
    pub budget: usize,
    pub budget_mode: BudgetMode,
    pub target_fraction: f64,
    pub design_search: DesignSearch,
}

impl ProblemInstance {
    pub fn new(
        region: Region,
        sites: Vec<CandidateSite>,
        settings: InstanceSettings,
    ) -> Result<Self> {
        let report = if settings.weights.lambda3 > 0.0 {
            validate_region_for_equity(&region)
        } else {
            validate_region(&region)
        };
        if !report.is_valid() {
            return Err(Error::InvalidRegion(report.to_string()));
        }
        if region.total_population() == 0 {
            return Err(Error::ZeroPopulation);
        }
        settings.weights.validate()?;
        settings.weights.warn_out_of_range();
        if settings.weights.lambda2 > 0.0 && settings.grid.is_none() {
            return Err(Error::GridRequired);
        }
        if settings.budget > sites.len() {
            return Err(Error::BudgetViolation(format!(
                "k = {} exceeds the {} candidate sites",
                settings.budget,
                sites.len()
            )));
        }
        let stack = CoverageStack::build(&region, &sites, settings.target_fraction)?;
        Ok(Self {
            region,
            sites,
            stack,
            grid: settings.grid,
            weights: settings.weights,
            budget: settings.budget,
            budget_mode: settings.budget_mode,
            target_fraction: settings.target_fraction,
            design_search: settings.design_search,
        })
    }

    pub fn num_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn needs_design(&self) -> bool {
        self.weights.lambda2 > 0.0
    }

    /// Local optimal designs for the grid, or `None` when `f2` carries no weight.
    pub fn local_designs(&self) -> Result<Option<LocalDesigns>> {
        if !self.needs_design() {
            return Ok(None);
        }
        let grid = self.grid.as_ref().ok_or(Error::GridRequired)?;
        LocalDesigns::compute(&self.sites, self.budget, grid, &self.design_search).map(Some)
    }
}

/// `true` iff `selected` names distinct valid sites and meets the budget.
pub fn is_feasible(instance: &ProblemInstance, selected: &[usize]) -> bool {
    let n = instance.num_sites();
    let mut sorted = selected.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    sorted.len() == selected.len()
        && sorted.iter().all(|&i| i < n)
        && instance
            .budget_mode
            .cardinalities(instance.budget)
            .contains(&sorted.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub scores: ScoreTriple,
    #[serde(with = "crate::serde_float")]
    pub combined: f64,
    pub equity: EquityBreakdown,
    pub covered: Vec<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignResult>,
}

pub fn combine(weights: &Weights, scores: &ScoreTriple) -> f64 {
    let mut combined = weights.lambda1 * scores.coverage as f64 - weights.lambda3 * scores.equity;
    if weights.lambda2 > 0.0 {
        combined -= weights.lambda2 * scores.d_optimality.unwrap_or(f64::INFINITY);
    }
    combined
}

/// Scores `allocation`. `locals` is required when `lambda2 > 0`.
pub fn evaluate(
    instance: &ProblemInstance,
    allocation: &Allocation,
    locals: Option<&LocalDesigns>,
) -> Result<Evaluation> {
    if !is_feasible(instance, allocation.selected()) {
        return Err(Error::BudgetViolation(format!(
            "{} sites selected, budget is {} ({:?})",
            allocation.len(),
            instance.budget,
            instance.budget_mode
        )));
    }
    let covered = covered_by_indices(&instance.stack, allocation.selected())?;
    debug_assert!((0..covered.len()).all(|j| {
        let supply = allocation
            .selected()
            .iter()
            .filter(|&&i| instance.stack.row(i)[j])
            .count();
        supply >= usize::from(covered[j])
    }));

    let equity = equity_score(&instance.region, &covered)?;
    let design = if instance.needs_design() {
        let grid = instance.grid.as_ref().ok_or(Error::GridRequired)?;
        let locals = locals.ok_or(Error::GridRequired)?;
        Some(minimax_design(&instance.sites, allocation, grid, locals)?)
    } else {
        None
    };
    let scores = ScoreTriple {
        coverage: coverage_score(&covered),
        d_optimality: design.as_ref().map(|d| d.regret),
        equity: equity.total,
    };
    Ok(Evaluation {
        combined: combine(&instance.weights, &scores),
        scores,
        equity,
        covered,
        design,
    })
}

/// Combined objective of a sorted, duplicate-free index set.
pub(crate) fn combined_of(
    instance: &ProblemInstance,
    selected: &[usize],
    locals: Option<&LocalDesigns>,
) -> Result<f64> {
    let allocation = Allocation::from_sorted_unchecked(selected.to_vec(), instance.budget);
    evaluate(instance, &allocation, locals).map(|e| e.combined)
}
