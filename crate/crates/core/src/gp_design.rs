//! D-optimal design criteria for a stationary Gaussian process.
//!
//! Designs are scored by `V0 = -log det F`, where `F` is the Fisher
//! information of the covariance parameters evaluated at the selected site
//! locations. Because no single parameter value is known in advance, a design
//! is ranked by its worst-case regret over a grid of parameter values,
//! relative to the best design for each grid point.

use itertools::Itertools;
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Allocation, CandidateSite, Point, Region};
use crate::error::{Error, Result};
use crate::solver::binomial;
use crate::solver::genetic::{self, Control, GaParams};

/// Covariance matrices with a larger eigenvalue ratio are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Eigenvalues of `F` below this fraction of the largest mark it singular.
const FISHER_RANK_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    Exponential,
    SquaredExponential,
    /// Pure nugget, `Sigma = tau2 * I`; its only parameter is `tau2`.
    WhiteNoise,
}

impl KernelFamily {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "exponential" | "exp" => Some(Self::Exponential),
            "squared_exponential" | "gaussian" | "se" => Some(Self::SquaredExponential),
            "white_noise" | "nugget" => Some(Self::WhiteNoise),
            _ => None,
        }
    }

    /// Correlation at scaled distance `h / phi`.
    fn rho(self, scaled: f64) -> f64 {
        match self {
            Self::Exponential => (-scaled).exp(),
            Self::SquaredExponential => (-scaled * scaled).exp(),
            Self::WhiteNoise => {
                if scaled == 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// d rho(h / phi) / d phi.
    fn drho_dphi(self, h: f64, phi: f64) -> f64 {
        match self {
            Self::Exponential => h / (phi * phi) * (-h / phi).exp(),
            Self::SquaredExponential => {
                let s = h / phi;
                2.0 * h * h / (phi * phi * phi) * (-s * s).exp()
            }
            Self::WhiteNoise => 0.0,
        }
    }
}

/// Covariance parameters: marginal variance, range (km) and nugget variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub sigma2: f64,
    pub phi: f64,
    pub tau2: f64,
}

impl Theta {
    pub fn new(sigma2: f64, phi: f64, tau2: f64) -> Self {
        Self { sigma2, phi, tau2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub theta: Theta,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, theta: Theta) -> Self {
        Self { family, theta }
    }

    pub fn white_noise(tau2: f64) -> Self {
        Self::new(KernelFamily::WhiteNoise, Theta::new(0.0, 1.0, tau2))
    }

    pub fn num_params(&self) -> usize {
        match self.family {
            KernelFamily::WhiteNoise => 1,
            _ => 3,
        }
    }

    /// Free parameters in Jacobian order: `(sigma2, phi, tau2)`, or `(tau2)` for white noise.
    pub fn params(&self) -> Vec<f64> {
        match self.family {
            KernelFamily::WhiteNoise => vec![self.theta.tau2],
            _ => vec![self.theta.sigma2, self.theta.phi, self.theta.tau2],
        }
    }

    pub fn with_params(&self, params: &[f64]) -> Self {
        let theta = match self.family {
            KernelFamily::WhiteNoise => Theta {
                tau2: params[0],
                ..self.theta
            },
            _ => Theta::new(params[0], params[1], params[2]),
        };
        Self { theta, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        let Theta { sigma2, phi, tau2 } = self.theta;
        if !(sigma2.is_finite() && phi.is_finite() && tau2.is_finite()) {
            return Err(Error::InvalidTheta("parameters must be finite".into()));
        }
        match self.family {
            KernelFamily::WhiteNoise if tau2 <= 0.0 => Err(Error::InvalidTheta(format!(
                "tau2 = {tau2} must be positive"
            ))),
            KernelFamily::WhiteNoise => Ok(()),
            _ if sigma2 <= 0.0 => Err(Error::InvalidTheta(format!(
                "sigma2 = {sigma2} must be positive"
            ))),
            _ if phi <= 0.0 => Err(Error::InvalidTheta(format!("phi = {phi} must be positive"))),
            _ if tau2 < 0.0 => Err(Error::InvalidTheta(format!(
                "tau2 = {tau2} must be nonnegative"
            ))),
            _ => Ok(()),
        }
    }
}

/// Finite set of parameter values the minimax criterion ranges over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaGrid {
    pub points: Vec<KernelSpec>,
}

impl ThetaGrid {
    pub fn new(points: Vec<KernelSpec>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter(
                "theta grid must contain at least one point".into(),
            ));
        }
        for p in &points {
            p.validate()?;
        }
        Ok(Self { points })
    }

    pub fn single(spec: KernelSpec) -> Result<Self> {
        Self::new(vec![spec])
    }

    /// The 8-point product `{0.5, 2} x {0.25 L, L} x {0.1, 1}` over
    /// `(sigma2, phi, tau2)`, with `L` the bounding-box diagonal of the
    /// region (1 km when the region is a single point).
    pub fn default_for(region: &Region, family: KernelFamily) -> Self {
        let l = match region.bbox_diagonal() {
            d if d > 0.0 && d.is_finite() => d,
            _ => 1.0,
        };
        let mut points = Vec::with_capacity(8);
        for sigma2 in [0.5, 2.0] {
            for phi in [0.25 * l, l] {
                for tau2 in [0.1, 1.0] {
                    points.push(KernelSpec::new(family, Theta::new(sigma2, phi, tau2)));
                }
            }
        }
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn check_locations(locations: &[Point], spec: &KernelSpec) -> Result<()> {
    spec.validate()?;
    if locations.is_empty() {
        return Err(Error::Dimension("at least one location is required".into()));
    }
    if spec.theta.tau2 == 0.0 {
        for (p, q) in locations.iter().tuple_combinations() {
            if p.distance(q) == 0.0 {
                return Err(Error::SingularCovariance);
            }
        }
    }
    Ok(())
}

/// `Sigma_pq = sigma2 * rho(|p - q| / phi) + tau2 * [p == q]`.
pub fn kernel_covariance(locations: &[Point], spec: &KernelSpec) -> Result<DMatrix<f64>> {
    check_locations(locations, spec)?;
    let n = locations.len();
    let Theta { sigma2, phi, tau2 } = spec.theta;
    Ok(DMatrix::from_fn(n, n, |p, q| {
        if p == q {
            return match spec.family {
                KernelFamily::WhiteNoise => tau2,
                _ => sigma2 + tau2,
            };
        }
        match spec.family {
            KernelFamily::WhiteNoise => 0.0,
            family => sigma2 * family.rho(locations[p].distance(&locations[q]) / phi),
        }
    }))
}

/// Analytic `d Sigma / d theta_j`, one matrix per free parameter.
pub fn covariance_jacobian(locations: &[Point], spec: &KernelSpec) -> Result<Vec<DMatrix<f64>>> {
    check_locations(locations, spec)?;
    let n = locations.len();
    let identity = DMatrix::identity(n, n);
    if spec.family == KernelFamily::WhiteNoise {
        return Ok(vec![identity]);
    }
    let Theta { sigma2, phi, .. } = spec.theta;
    let dist = DMatrix::from_fn(n, n, |p, q| locations[p].distance(&locations[q]));
    let d_sigma2 = dist.map(|h| spec.family.rho(h / phi));
    let d_phi = dist.map(|h| sigma2 * spec.family.drho_dphi(h, phi));
    Ok(vec![d_sigma2, d_phi, identity])
}

/// `F_jk = 1/2 tr(Sigma^-1 Sigma_j Sigma^-1 Sigma_k)`.
pub fn fisher_information(
    sigma: &DMatrix<f64>,
    jacobians: &[DMatrix<f64>],
) -> Result<DMatrix<f64>> {
    let n = sigma.nrows();
    if sigma.ncols() != n {
        return Err(Error::Dimension("covariance must be square".into()));
    }
    if jacobians.iter().any(|j| j.shape() != (n, n)) {
        return Err(Error::Dimension(
            "jacobian shape differs from covariance".into(),
        ));
    }
    let eig = SymmetricEigen::new(sigma.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 || hi / lo > MAX_CONDITION {
        return Err(Error::IllConditioned(if lo > 0.0 {
            hi / lo
        } else {
            f64::INFINITY
        }));
    }
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or(Error::IllConditioned(hi / lo))?;
    let solved: Vec<DMatrix<f64>> = jacobians.iter().map(|j| chol.solve(j)).collect();

    let p = jacobians.len();
    let mut f = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in a..p {
            // tr(W_a W_b) = sum_{r,c} W_a[r,c] W_b[c,r]
            let tr = solved[a].component_mul(&solved[b].transpose()).sum();
            f[(a, b)] = 0.5 * tr;
            f[(b, a)] = 0.5 * tr;
        }
    }
    Ok(f)
}

/// `log det` of a symmetric positive-definite matrix; `None` when it is
/// singular or indefinite.
pub fn log_det_spd(m: &DMatrix<f64>) -> Option<f64> {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let hi = eig.max();
    if !(hi > 0.0) || eig.min() <= FISHER_RANK_RTOL * hi {
        return None;
    }
    match m.clone().cholesky() {
        Some(chol) => Some(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>()),
        None => Some(eig.iter().map(|v| v.ln()).sum()),
    }
}

/// `V0` for designs at explicit locations. Unidentifiable designs give `+inf`.
pub fn v0_at(locations: &[Point], spec: &KernelSpec) -> Result<f64> {
    let sigma = match kernel_covariance(locations, spec) {
        Ok(s) => s,
        Err(Error::SingularCovariance) => return Ok(sentinel("coincident locations")),
        Err(e) => return Err(e),
    };
    let jac = covariance_jacobian(locations, spec)?;
    let fisher = match fisher_information(&sigma, &jac) {
        Ok(f) => f,
        Err(Error::IllConditioned(_)) => return Ok(sentinel("ill-conditioned covariance")),
        Err(e) => return Err(e),
    };
    Ok(match log_det_spd(&fisher) {
        Some(ld) => -ld,
        None => sentinel("singular Fisher information"),
    })
}

fn sentinel(reason: &str) -> f64 {
    log::debug!("design unidentifiable ({reason}); V0 = +inf");
    f64::INFINITY
}

/// `V0(Z, theta) = -log det F(Z, theta)` with design points at the selected sites.
pub fn v0(sites: &[CandidateSite], selected: &[usize], spec: &KernelSpec) -> Result<f64> {
    if selected.is_empty() {
        spec.validate()?;
        return Ok(sentinel("empty design"));
    }
    let mut locations = Vec::with_capacity(selected.len());
    for &i in selected {
        let site = sites.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            n: sites.len(),
        })?;
        locations.push(site.location);
    }
    v0_at(&locations, spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// Enumerate when `C(n, k)` is within the limit, otherwise run the GA.
    #[default]
    Auto,
    Exhaustive,
    Genetic,
}

/// How local optimal designs are searched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignSearch {
    pub mode: SearchMode,
    pub exhaustive_limit: u128,
    pub ga: GaParams,
}

impl Default for DesignSearch {
    fn default() -> Self {
        Self {
            mode: SearchMode::Auto,
            exhaustive_limit: 100_000,
            ga: GaParams::default(),
        }
    }
}

/// `S(theta)` and its criterion value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalDesign {
    pub spec: KernelSpec,
    pub allocation: Allocation,
    #[serde(with = "crate::serde_float")]
    pub v0: f64,
}

/// Design minimizing `V0` at a fixed parameter value.
pub fn local_optimal_design(
    sites: &[CandidateSite],
    k: usize,
    spec: &KernelSpec,
    search: &DesignSearch,
) -> Result<LocalDesign> {
    spec.validate()?;
    let n = sites.len();
    if k > n {
        return Err(Error::BudgetViolation(format!("k = {k} exceeds n = {n}")));
    }
    let exhaustive = match search.mode {
        SearchMode::Exhaustive => true,
        SearchMode::Genetic => false,
        SearchMode::Auto => binomial(n, k) <= search.exhaustive_limit,
    };
    let (selected, value) = if exhaustive {
        let mut best: Option<(Vec<usize>, f64)> = None;
        for combo in (0..n).combinations(k) {
            let v = v0(sites, &combo, spec)?;
            if best.as_ref().is_none_or(|(_, b)| v < *b) {
                best = Some((combo, v));
            }
        }
        best.unwrap_or_default()
    } else {
        let out = genetic::evolve(
            n,
            k,
            &search.ga,
            |set: &[usize]| v0(sites, set, spec).map(|v| -v),
            Control::default(),
        )?;
        (out.best, -out.best_fitness)
    };
    if !value.is_finite() {
        return Err(Error::NoIdentifiableDesign);
    }
    Ok(LocalDesign {
        spec: *spec,
        allocation: Allocation::from_sorted_unchecked(selected, k),
        v0: value,
    })
}

/// Local optimal designs for every grid point, computed once and reused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalDesigns {
    pub k: usize,
    pub entries: Vec<LocalDesign>,
}

impl LocalDesigns {
    pub fn compute(
        sites: &[CandidateSite],
        k: usize,
        grid: &ThetaGrid,
        search: &DesignSearch,
    ) -> Result<Self> {
        let entries = grid
            .points
            .par_iter()
            .map(|spec| local_optimal_design(sites, k, spec, search))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { k, entries })
    }

    fn check(&self, grid: &ThetaGrid) -> Result<()> {
        if self.entries.len() != grid.len()
            || self
                .entries
                .iter()
                .zip(&grid.points)
                .any(|(e, p)| e.spec != *p)
        {
            return Err(Error::Dimension(
                "local designs were computed for a different grid".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub allocation: Allocation,
    #[serde(with = "crate::serde_float::vec")]
    pub v0_by_theta: Vec<f64>,
    #[serde(with = "crate::serde_float")]
    pub regret: f64,
}

/// Per-grid-point `V0` and the worst-case regret of `allocation`.
pub fn minimax_design(
    sites: &[CandidateSite],
    allocation: &Allocation,
    grid: &ThetaGrid,
    locals: &LocalDesigns,
) -> Result<DesignResult> {
    locals.check(grid)?;
    let v0_by_theta = grid
        .points
        .iter()
        .map(|spec| v0(sites, allocation.selected(), spec))
        .collect::<Result<Vec<_>>>()?;
    let regret = v0_by_theta
        .iter()
        .zip(&locals.entries)
        .map(|(v, local)| v - local.v0)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(DesignResult {
        allocation: allocation.clone(),
        v0_by_theta,
        regret,
    })
}

/// `f2 = max_theta (V0(Z, theta) - V0(S(theta), theta))`.
pub fn minimax_score(
    sites: &[CandidateSite],
    allocation: &Allocation,
    grid: &ThetaGrid,
    locals: &LocalDesigns,
) -> Result<f64> {
    minimax_design(sites, allocation, grid, locals).map(|d| d.regret)
}
