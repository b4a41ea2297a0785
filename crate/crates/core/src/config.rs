//! Run configuration: one flat set of keys shared by the TOML config file,
//! the command-line flags and the HTTP request bodies.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{ArgAction, Args};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Region, Weights};
use crate::gp_design::{KernelFamily, KernelSpec, Theta, ThetaGrid};
use crate::ingest::OwnershipFilter;
use crate::objective::BudgetMode;
use crate::solver::GaParams;

#[derive(Debug, Error, PartialEq)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn config_err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Decision-maker importance of a criterion, mapped to a weight magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Importance {
    Less,
    Somewhat,
    Important,
    Very,
}

impl Importance {
    pub const ALL: [Importance; 4] = [Self::Less, Self::Somewhat, Self::Important, Self::Very];

    pub fn coverage_weight(self) -> f64 {
        match self {
            Self::Less => 1e-6,
            Self::Somewhat => 1e-4,
            Self::Important => 1e-2,
            Self::Very => 1.0,
        }
    }

    pub fn equity_weight(self) -> f64 {
        match self {
            Self::Less => 1e-4,
            Self::Somewhat => 1e-2,
            Self::Important => 1.0,
            Self::Very => 1e2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Less => "Less Important",
            Self::Somewhat => "Somewhat Important",
            Self::Important => "Important",
            Self::Very => "Very Important",
        }
    }
}

impl fmt::Display for Importance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Importance {
    type Err = ConfigError;

    /// Accepts the full labels ("Very Important") and their first word, in any case.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['_', '-'], " ");
        let words: Vec<&str> = norm.split_whitespace().collect();
        let head = match words.as_slice() {
            [w] => *w,
            [w, "important"] => *w,
            _ => "",
        };
        match head {
            "less" => Ok(Self::Less),
            "somewhat" => Ok(Self::Somewhat),
            "important" => Ok(Self::Important),
            "very" => Ok(Self::Very),
            _ => Err(config_err(format!(
                "unknown importance level {s:?} (expected less, somewhat, important or very)"
            ))),
        }
    }
}

/// Where the minimax parameter grid comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpec {
    /// The 8-point product sized to the region's extent.
    Default,
    Points(Vec<Theta>),
}

impl GridSpec {
    /// `"default"`, or a CSV file with header `sigma2,phi,tau2`.
    pub fn parse(value: &str) -> Result<Self, ConfigError> {
        if value.trim().eq_ignore_ascii_case("default") {
            return Ok(Self::Default);
        }
        read_grid_file(Path::new(value)).map(Self::Points)
    }

    pub fn resolve(&self, region: &Region, family: KernelFamily) -> Result<ThetaGrid, ConfigError> {
        match self {
            Self::Default => Ok(ThetaGrid::default_for(region, family)),
            Self::Points(points) => {
                ThetaGrid::new(points.iter().map(|t| KernelSpec::new(family, *t)).collect())
                    .map_err(|e| config_err(e.to_string()))
            }
        }
    }
}

fn read_grid_file(path: &Path) -> Result<Vec<Theta>, ConfigError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| config_err(format!("{}: missing column {name}", path.display())))
    };
    let (cs, cp, ct) = (col("sigma2")?, col("phi")?, col("tau2")?);
    let mut points = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| {
            rec.get(i)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|e| config_err(format!("{}:{line}: {e}", path.display())))
        };
        points.push(Theta::new(num(cs)?, num(cp)?, num(ct)?));
    }
    if points.is_empty() {
        return Err(config_err(format!(
            "{}: grid file has no rows",
            path.display()
        )));
    }
    Ok(points)
}

/// Unresolved run configuration. Every field is optional so that file,
/// flag and request layers can be merged; flags override the file.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunConfig {
    /// Areas CSV: area_id,lon,lat,population
    #[arg(long)]
    pub areas: Option<PathBuf>,
    /// Strata CSV: area_id,axis,level,count[,combo]
    #[arg(long)]
    pub strata: Option<PathBuf>,
    /// Sites CSV: site_id,lon,lat,capacity,site_type,ownership
    #[arg(long)]
    pub sites: Option<PathBuf>,
    /// public, private, unknown or all
    #[arg(long)]
    pub ownership: Option<String>,

    /// Use a synthetic county of this many areas instead of input files
    #[arg(long)]
    pub synth_m: Option<usize>,
    #[arg(long)]
    pub synth_sites: Option<usize>,
    #[arg(long)]
    pub synth_segregation: Option<f64>,
    #[arg(long)]
    pub synth_seed: Option<u64>,

    /// Number of sites to open
    #[arg(long)]
    pub k: Option<usize>,
    /// exact or at-most
    #[arg(long)]
    pub budget_mode: Option<String>,
    #[arg(long)]
    pub target_fraction: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub lambda3: Option<f64>,
    /// less, somewhat, important or very
    #[arg(long)]
    pub coverage_importance: Option<String>,
    /// less, somewhat, important or very
    #[arg(long)]
    pub equity_importance: Option<String>,
    /// exponential, squared-exponential or white-noise
    #[arg(long)]
    pub kernel: Option<String>,
    /// "default" or a CSV of sigma2,phi,tau2 rows
    #[arg(long)]
    pub grid_file: Option<String>,

    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub population_size: Option<usize>,
    #[arg(long)]
    pub generations: Option<usize>,
    #[arg(long)]
    pub crossover_rate: Option<f64>,
    #[arg(long)]
    pub mutation_rate: Option<f64>,
    #[arg(long)]
    pub elitism: Option<usize>,
    /// Solve by enumeration when the instance is small enough
    #[arg(long, action = ArgAction::SetTrue)]
    pub exact: bool,

    /// Worker threads for fitness evaluation
    #[arg(long)]
    pub threads: Option<usize>,
    /// Report path; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($field:ident),*) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )*
    };
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| config_err(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| config_err(format!("{}: {}", path.display(), e.0)))
    }

    /// `self` with every field set in `top` replaced.
    pub fn overlay(mut self, top: &RunConfig) -> Self {
        overlay!(self, top; areas, strata, sites, ownership, synth_m, synth_sites, synth_segregation, synth_seed,
            k, budget_mode, target_fraction, lambda1, lambda2, lambda3, coverage_importance, equity_importance,
            kernel, grid_file, seed, population_size, generations, crossover_rate, mutation_rate, elitism,
            threads, out);
        self.exact |= top.exact;
        self
    }

    pub fn resolve(&self) -> Result<Settings, ConfigError> {
        let coverage_importance = self
            .coverage_importance
            .as_deref()
            .map(str::parse::<Importance>)
            .transpose()?;
        let equity_importance = self
            .equity_importance
            .as_deref()
            .map(str::parse::<Importance>)
            .transpose()?;
        let defaults = Weights::default();
        let lambda1 = pick_weight(
            "lambda1",
            self.lambda1,
            coverage_importance.map(Importance::coverage_weight),
            defaults.lambda1,
        )?;
        let lambda3 = pick_weight(
            "lambda3",
            self.lambda3,
            equity_importance.map(Importance::equity_weight),
            defaults.lambda3,
        )?;
        let weights = Weights::new(lambda1, self.lambda2.unwrap_or(defaults.lambda2), lambda3);
        weights.validate().map_err(|e| config_err(e.to_string()))?;

        let budget_mode = match &self.budget_mode {
            None => BudgetMode::Exact,
            Some(s) => BudgetMode::parse(s)
                .ok_or_else(|| config_err(format!("unknown budget mode {s:?}")))?,
        };
        let ownership = match &self.ownership {
            None => OwnershipFilter::All,
            Some(s) => OwnershipFilter::parse(s)
                .ok_or_else(|| config_err(format!("unknown ownership filter {s:?}")))?,
        };
        let kernel = match &self.kernel {
            None => KernelFamily::default(),
            Some(s) => {
                KernelFamily::parse(s).ok_or_else(|| config_err(format!("unknown kernel {s:?}")))?
            }
        };
        let target_fraction = self.target_fraction.unwrap_or(0.1);
        if !(target_fraction > 0.0 && target_fraction <= 1.0) {
            return Err(config_err(format!(
                "target-fraction must lie in (0, 1], got {target_fraction}"
            )));
        }
        let grid = self.grid_file.as_deref().map(GridSpec::parse).transpose()?;
        if weights.lambda2 > 0.0 && grid.is_none() {
            return Err(config_err(
                "grid required: lambda2 > 0 needs --grid-file (a CSV path or \"default\")",
            ));
        }

        let base = GaParams::default();
        let ga = GaParams {
            population_size: self.population_size.unwrap_or(base.population_size),
            generations: self.generations.unwrap_or(base.generations),
            crossover_rate: self.crossover_rate.unwrap_or(base.crossover_rate),
            mutation_rate: self.mutation_rate.unwrap_or(base.mutation_rate),
            elitism: self.elitism.unwrap_or(base.elitism),
            seed: self.seed.unwrap_or(base.seed),
        };
        ga.validate().map_err(|e| config_err(e.to_string()))?;
        if self.threads == Some(0) {
            return Err(config_err("threads must be positive"));
        }

        Ok(Settings {
            weights,
            coverage_importance,
            equity_importance,
            k: self.k,
            budget_mode,
            target_fraction,
            ownership,
            kernel,
            grid,
            ga,
            exact: self.exact,
        })
    }
}

fn pick_weight(
    name: &str,
    raw: Option<f64>,
    level: Option<f64>,
    default: f64,
) -> Result<f64, ConfigError> {
    match (raw, level) {
        (Some(_), Some(_)) => Err(config_err(format!(
            "{name} is set both directly and by an importance level"
        ))),
        (Some(w), None) | (None, Some(w)) => Ok(w),
        (None, None) => Ok(default),
    }
}

/// Resolved, validated settings; echoed verbatim in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub weights: Weights,
    pub coverage_importance: Option<Importance>,
    pub equity_importance: Option<Importance>,
    pub k: Option<usize>,
    pub budget_mode: BudgetMode,
    pub target_fraction: f64,
    pub ownership: OwnershipFilter,
    pub kernel: KernelFamily,
    pub grid: Option<GridSpec>,
    pub ga: GaParams,
    pub exact: bool,
}

impl Default for Settings {
    fn default() -> Self {
        RunConfig::default().resolve().expect("defaults are valid")
    }
}
