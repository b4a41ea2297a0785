use thiserror::Error;

/// Errors raised by the allocation engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("no areas")]
    NoAreas,
    #[error("no candidate sites")]
    NoSites,
    #[error("invalid fraction: {0} (must lie in (0, 1])")]
    InvalidFraction(f64),
    #[error("all sites of one coverage matrix must share a site type")]
    MixedSiteTypes,
    #[error("site index {index} out of range (n = {n})")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("invalid kernel parameters: {0}")]
    InvalidTheta(String),
    #[error("singular covariance: coincident locations without nugget")]
    SingularCovariance,
    #[error("ill-conditioned covariance (condition estimate {0:e})")]
    IllConditioned(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("no identifiable design")]
    NoIdentifiableDesign,
    #[error("zero total population")]
    ZeroPopulation,
    #[error("budget violation: {0}")]
    BudgetViolation(String),
    #[error("grid required: lambda2 > 0 needs a theta grid")]
    GridRequired,
    #[error("stratum data required for equity scoring")]
    StrataRequired,
    #[error("instance too large for oracle: C({n},{k}) = {count} exceeds {limit}")]
    TooLarge {
        n: usize,
        k: usize,
        count: u128,
        limit: u128,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid region: {0}")]
    InvalidRegion(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
