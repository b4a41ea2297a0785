//! Score, optimize and compare runs over a loaded dataset. The CLI and the
//! HTTP service both go through these functions, so identical inputs give
//! identical reports.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig, Settings};
use crate::domain::{Allocation, CandidateSite, Region, ScoreTriple};
use crate::equity::EquityBreakdown;
use crate::error::Error;
use crate::gp_design::{DesignResult, DesignSearch, LocalDesigns};
use crate::ingest::{self, IngestError, Ownership, OwnershipFilter, SynthParams};
use crate::objective::{evaluate, is_feasible, Evaluation, InstanceSettings, ProblemInstance};
use crate::solver::{
    binomial, exhaustive_solve_with, ga_solve_with, Control, SolveMethod, EXHAUSTIVE_LIMIT,
};

/// Version of the report layout.
pub const SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("unknown site id {0:?}")]
    UnknownSite(String),
    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),
    #[error("invalid problem: {0}")]
    Setup(Error),
    #[error("solve failed: {0}")]
    Solve(Error),
}

impl RunError {
    /// Process exit status: 2 for input and configuration problems, 3 when solving fails.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Solve(_) => 3,
            _ => 2,
        }
    }
}

/// A region with its full candidate-site list, before ownership filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub region: Region,
    pub sites: Vec<CandidateSite>,
    pub ownership: Vec<Ownership>,
}

impl Dataset {
    pub fn load(areas: &Path, strata: Option<&Path>, sites: &Path) -> Result<Self, IngestError> {
        let region = ingest::load_region(areas, strata)?;
        let projection = region
            .projection
            .ok_or_else(|| IngestError::Invalid("region has no projection".into()))?;
        let load = ingest::load_sites(sites, OwnershipFilter::All, &projection)?;
        Ok(Self {
            ownership: load.records.iter().map(|r| r.ownership).collect(),
            region,
            sites: load.sites,
        })
    }

    /// Synthetic sites are labelled public, as `synth` writes them.
    pub fn synth(params: &SynthParams) -> Result<Self, Error> {
        let (region, sites) = ingest::synth_region(params)?;
        Ok(Self {
            ownership: vec![Ownership::Public; sites.len()],
            region,
            sites,
        })
    }

    /// Input files named in `cfg`, or a synthetic county when `synth-m` is set.
    pub fn from_config(cfg: &RunConfig) -> Result<Self, RunError> {
        if let Some(m) = cfg.synth_m {
            if cfg.areas.is_some() || cfg.sites.is_some() {
                return Err(
                    ConfigError("synth-m cannot be combined with --areas/--sites".into()).into(),
                );
            }
            let base = SynthParams::default();
            let params = SynthParams {
                m,
                n_sites: cfg.synth_sites.unwrap_or(base.n_sites.min(m)),
                segregation: cfg.synth_segregation.unwrap_or(base.segregation),
                seed: cfg.synth_seed.unwrap_or(base.seed),
                ..base
            };
            return Self::synth(&params).map_err(|e| ConfigError(e.to_string()).into());
        }
        let (Some(areas), Some(sites)) = (&cfg.areas, &cfg.sites) else {
            return Err(ConfigError("--areas and --sites are required (or synth-m)".into()).into());
        };
        Ok(Self::load(areas, cfg.strata.as_deref(), sites)?)
    }

    pub fn filtered_sites(&self, filter: OwnershipFilter) -> Vec<CandidateSite> {
        self.sites
            .iter()
            .zip(&self.ownership)
            .filter(|(_, &o)| filter.admits(o))
            .map(|(s, _)| s.clone())
            .collect()
    }

    pub fn site_types(&self) -> Vec<u32> {
        let mut types: Vec<u32> = self.sites.iter().map(|s| s.site_type).collect();
        types.sort_unstable();
        types.dedup();
        types
    }
}

/// Problem instance plus the data needed to translate indices to ids.
struct Prepared {
    instance: ProblemInstance,
    locals: Option<LocalDesigns>,
}

impl Prepared {
    fn new(data: &Dataset, settings: &Settings, k: usize) -> Result<Self, RunError> {
        let sites = data.filtered_sites(settings.ownership);
        if sites.is_empty() {
            return Err(ConfigError(format!(
                "no candidate sites pass the ownership filter {:?}",
                settings.ownership
            ))
            .into());
        }
        let grid = settings
            .grid
            .as_ref()
            .map(|g| g.resolve(&data.region, settings.kernel))
            .transpose()?;
        let instance = ProblemInstance::new(
            data.region.clone(),
            sites,
            InstanceSettings {
                weights: settings.weights,
                budget: k,
                budget_mode: settings.budget_mode,
                target_fraction: settings.target_fraction,
                grid,
                design_search: DesignSearch {
                    ga: settings.ga,
                    ..DesignSearch::default()
                },
            },
        )
        .map_err(RunError::Setup)?;
        let locals = instance.local_designs().map_err(RunError::Solve)?;
        Ok(Self { instance, locals })
    }

    fn indices(&self, ids: &[String]) -> Result<Vec<usize>, RunError> {
        let lookup: HashMap<&str, usize> = self
            .instance
            .sites
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect();
        let mut seen = vec![false; lookup.len()];
        ids.iter()
            .map(|id| {
                let i = *lookup
                    .get(id.as_str())
                    .ok_or_else(|| RunError::UnknownSite(id.clone()))?;
                if std::mem::replace(&mut seen[i], true) {
                    return Err(RunError::InvalidAllocation(format!(
                        "site {id:?} listed twice"
                    )));
                }
                Ok(i)
            })
            .collect()
    }

    fn ids(&self, allocation: &Allocation) -> Vec<String> {
        allocation
            .selected()
            .iter()
            .map(|&i| self.instance.sites[i].id.clone())
            .collect()
    }

    fn covered_areas(&self, eval: &Evaluation) -> Vec<String> {
        self.instance
            .region
            .areas
            .iter()
            .zip(&eval.covered)
            .filter(|(_, &c)| c)
            .map(|(a, _)| a.id.clone())
            .collect()
    }

    fn evaluate_ids(&self, ids: &[String]) -> Result<(Allocation, Evaluation), RunError> {
        let idx = self.indices(ids)?;
        if !is_feasible(&self.instance, &idx) {
            return Err(RunError::InvalidAllocation(format!(
                "{} sites selected, budget is {} ({:?})",
                idx.len(),
                self.instance.budget,
                self.instance.budget_mode
            )));
        }
        let allocation = Allocation::new(idx, self.instance.budget, self.instance.num_sites())
            .map_err(|e| RunError::InvalidAllocation(e.to_string()))?;
        let eval =
            evaluate(&self.instance, &allocation, self.locals.as_ref()).map_err(RunError::Solve)?;
        Ok((allocation, eval))
    }
}

fn echo(settings: &Settings, k: usize) -> Settings {
    Settings {
        k: Some(k),
        ..settings.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub schema: u32,
    pub command: String,
    pub config: Settings,
    pub selected: Vec<String>,
    pub scores: ScoreTriple,
    #[serde(with = "crate::serde_float")]
    pub combined: f64,
    pub equity: EquityBreakdown,
    pub covered_areas: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignResult>,
}

/// Scores the allocation naming `site_ids`. Without a configured `k`, the
/// budget is the allocation's own size.
pub fn score(
    data: &Dataset,
    settings: &Settings,
    site_ids: &[String],
) -> Result<ScoreReport, RunError> {
    let k = settings.k.unwrap_or(site_ids.len());
    let prep = Prepared::new(data, settings, k)?;
    let (allocation, eval) = prep.evaluate_ids(site_ids)?;
    Ok(ScoreReport {
        schema: SCHEMA,
        command: "score".into(),
        config: echo(settings, k),
        selected: prep.ids(&allocation),
        covered_areas: prep.covered_areas(&eval),
        scores: eval.scores,
        combined: eval.combined,
        equity: eval.equity,
        design: eval.design,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub schema: u32,
    pub command: String,
    pub config: Settings,
    pub method: SolveMethod,
    pub selected: Vec<String>,
    pub scores: ScoreTriple,
    #[serde(with = "crate::serde_float")]
    pub combined: f64,
    pub equity: EquityBreakdown,
    pub covered_areas: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignResult>,
    /// Best combined value after each generation.
    #[serde(with = "crate::serde_float::vec")]
    pub history: Vec<f64>,
    pub evaluations: usize,
    pub interrupted: bool,
}

fn require_k(settings: &Settings) -> Result<usize, RunError> {
    settings
        .k
        .ok_or_else(|| ConfigError("--k is required".into()).into())
}

fn optimize_prepared(
    prep: &Prepared,
    settings: &Settings,
    control: Control<'_>,
) -> Result<OptimizeReport, RunError> {
    let inst = &prep.instance;
    let subsets = inst
        .budget_mode
        .cardinalities(inst.budget)
        .map(|c| binomial(inst.num_sites(), c))
        .fold(0u128, u128::saturating_add);
    let report = if settings.exact && subsets <= EXHAUSTIVE_LIMIT {
        exhaustive_solve_with(inst, prep.locals.as_ref())
    } else {
        if settings.exact {
            log::warn!(
                "{subsets} subsets exceed the enumeration limit; using the genetic algorithm"
            );
        }
        ga_solve_with(inst, &settings.ga, prep.locals.as_ref(), control)
    }
    .map_err(RunError::Solve)?;
    let eval = evaluate(inst, &report.best, prep.locals.as_ref()).map_err(RunError::Solve)?;
    Ok(OptimizeReport {
        schema: SCHEMA,
        command: "optimize".into(),
        config: echo(settings, inst.budget),
        method: report.method,
        selected: prep.ids(&report.best),
        covered_areas: prep.covered_areas(&eval),
        scores: eval.scores,
        combined: eval.combined,
        equity: eval.equity,
        design: eval.design,
        history: report.history,
        evaluations: report.evaluations,
        interrupted: report.interrupted,
    })
}

/// Runs the optimizer; `--exact` enumerates when the subset count allows.
pub fn optimize(
    data: &Dataset,
    settings: &Settings,
    control: Control<'_>,
) -> Result<OptimizeReport, RunError> {
    let prep = Prepared::new(data, settings, require_k(settings)?)?;
    optimize_prepared(&prep, settings, control)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub name: String,
    pub selected: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<ScoreTriple>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "crate::serde_float::option"
    )]
    pub combined: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub schema: u32,
    pub command: String,
    pub config: Settings,
    pub rows: Vec<CompareRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposed: Option<OptimizeReport>,
}

/// Scores each named allocation; a failing row is flagged and the rest are
/// still scored. With `proposed`, the optimizer's result is appended as a
/// row named "proposed". Without a configured `k` the first allocation's
/// size is the budget.
pub fn compare(
    data: &Dataset,
    settings: &Settings,
    schemes: &[(String, Vec<String>)],
    proposed: bool,
    control: Control<'_>,
) -> Result<CompareReport, RunError> {
    if schemes.is_empty() && !proposed {
        return Err(ConfigError("compare needs at least one allocation".into()).into());
    }
    let k = match (settings.k, schemes.first()) {
        (Some(k), _) => k,
        (None, Some((_, ids))) => ids.len(),
        (None, None) => require_k(settings)?,
    };
    let prep = Prepared::new(data, settings, k)?;
    let mut rows: Vec<CompareRow> = schemes
        .iter()
        .map(|(name, ids)| match prep.evaluate_ids(ids) {
            Ok((allocation, eval)) => CompareRow {
                name: name.clone(),
                selected: prep.ids(&allocation),
                scores: Some(eval.scores),
                combined: Some(eval.combined),
                error: None,
            },
            Err(e) => CompareRow {
                name: name.clone(),
                selected: ids.clone(),
                scores: None,
                combined: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let proposed = if proposed {
        let report = optimize_prepared(&prep, settings, control)?;
        rows.push(CompareRow {
            name: "proposed".into(),
            selected: report.selected.clone(),
            scores: Some(report.scores),
            combined: Some(report.combined),
            error: None,
        });
        Some(report)
    } else {
        None
    };
    Ok(CompareReport {
        schema: SCHEMA,
        command: "compare".into(),
        config: echo(settings, k),
        rows,
        proposed,
    })
}

fn json_number(v: f64) -> String {
    match serde_json::Number::from_f64(v) {
        Some(n) => n.to_string(),
        None if v.is_nan() => "nan".into(),
        None if v > 0.0 => "inf".into(),
        None => "-inf".into(),
    }
}

/// Fixed-width text rendering of a comparison. Numbers print exactly as in the JSON.
pub fn render_table(report: &CompareReport) -> String {
    let name_w = report
        .rows
        .iter()
        .map(|r| r.name.len())
        .max()
        .unwrap_or(0)
        .max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<name_w$}  {:>5}  {:>8}  {:>22}  {:>22}  {:>22}",
        "scheme", "sites", "coverage", "d_optimality", "equity", "combined"
    );
    for row in &report.rows {
        match (&row.scores, row.combined, &row.error) {
            (Some(s), Some(c), _) => {
                let d = s.d_optimality.map_or("-".to_string(), json_number);
                let _ = writeln!(
                    out,
                    "{:<name_w$}  {:>5}  {:>8}  {:>22}  {:>22}  {:>22}",
                    row.name,
                    row.selected.len(),
                    s.coverage,
                    d,
                    json_number(s.equity),
                    json_number(c)
                );
            }
            (_, _, err) => {
                let _ = writeln!(
                    out,
                    "{:<name_w$}  {}",
                    row.name,
                    err.as_deref().unwrap_or("not scored")
                );
            }
        }
    }
    out
}

/// Site ids from an allocation file: one per line, `#` comments and blank lines ignored.
pub fn parse_allocation(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::GridSpec;

    fn data() -> Dataset {
        Dataset::synth(&SynthParams {
            m: 12,
            n_sites: 6,
            segregation: 0.8,
            seed: 3,
            ..Default::default()
        })
        .unwrap()
    }

    fn ids(d: &Dataset, idx: &[usize]) -> Vec<String> {
        idx.iter().map(|&i| d.sites[i].id.clone()).collect()
    }

    #[test]
    fn score_defaults_budget_to_allocation_size() {
        let d = data();
        let r = score(&d, &Settings::default(), &ids(&d, &[0, 3])).unwrap();
        assert_eq!(r.config.k, Some(2));
        assert_eq!(r.schema, SCHEMA);
        assert_eq!(r.covered_areas.len(), r.scores.coverage);
    }

    #[test]
    fn unknown_and_duplicate_sites() {
        let d = data();
        let s = Settings::default();
        let err = score(&d, &s, &["nope".to_string()]).unwrap_err();
        assert!(matches!(err, RunError::UnknownSite(_)));
        assert_eq!(err.exit_code(), 2);
        let dup = ids(&d, &[1, 1]);
        assert!(matches!(
            score(&d, &s, &dup).unwrap_err(),
            RunError::InvalidAllocation(_)
        ));
    }

    #[test]
    fn empty_allocation_at_most_zero() {
        let d = data();
        let s = Settings {
            k: Some(0),
            budget_mode: crate::objective::BudgetMode::AtMost,
            ..Settings::default()
        };
        let r = score(&d, &s, &[]).unwrap();
        assert_eq!(r.scores.coverage, 0);
        assert_eq!(r.scores.equity, 0.0);
        assert_eq!(r.combined, 0.0);
    }

    #[test]
    fn exact_optimize_matches_enumeration_and_is_deterministic() {
        let d = data();
        let s = Settings {
            k: Some(2),
            exact: true,
            ..Settings::default()
        };
        let a = optimize(&d, &s, Control::default()).unwrap();
        assert_eq!(a.method, SolveMethod::Exhaustive);
        let g = optimize(
            &d,
            &Settings {
                exact: false,
                ..s.clone()
            },
            Control::default(),
        )
        .unwrap();
        assert_eq!(g.combined, a.combined);
        let g2 = optimize(&d, &Settings { exact: false, ..s }, Control::default()).unwrap();
        assert_eq!(
            serde_json::to_string(&g).unwrap(),
            serde_json::to_string(&g2).unwrap()
        );
    }

    #[test]
    fn compare_flags_bad_rows_and_appends_proposed() {
        let d = data();
        let s = Settings {
            k: Some(2),
            ..Settings::default()
        };
        let schemes = vec![
            ("current".to_string(), ids(&d, &[0, 1])),
            ("short".to_string(), ids(&d, &[0])),
            ("bogus".to_string(), vec!["x".into(), "y".into()]),
        ];
        let r = compare(&d, &s, &schemes, true, Control::default()).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert!(r.rows[0].scores.is_some());
        assert!(r.rows[1].error.is_some());
        assert!(r.rows[2].error.as_deref().unwrap().contains("unknown site"));
        assert_eq!(r.rows[3].name, "proposed");
        assert!(r.rows[3].combined.unwrap() >= r.rows[0].combined.unwrap());
        let table = render_table(&r);
        assert_eq!(table.lines().count(), 5);
        assert!(table.contains(&serde_json::to_string(&r.rows[0].combined.unwrap()).unwrap()));
    }

    #[test]
    fn design_term_with_default_grid() {
        let d = data();
        let s = Settings {
            weights: crate::domain::Weights::new(1e-2, 1.0, 1.0),
            grid: Some(GridSpec::Default),
            ..Settings::default()
        };
        let r = score(&d, &s, &ids(&d, &[0, 2, 5])).unwrap();
        let regret = r.scores.d_optimality.unwrap();
        assert!(regret >= 0.0 && regret.is_finite(), "{regret}");
        assert_eq!(r.design.unwrap().v0_by_theta.len(), 8);
    }

    #[test]
    fn allocation_file_parsing() {
        assert_eq!(
            parse_allocation("# header\ns1\n\n  s2  # trailing\r\ns3\n"),
            ["s1", "s2", "s3"]
        );
    }
}
