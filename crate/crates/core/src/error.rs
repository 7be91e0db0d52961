use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("point {0} lies outside the fiber domain [0, 1]")]
    Domain(f64),
    #[error("point {0} lies in a gap between branch domains")]
    OutsideRepeller(f64),
    #[error("inverse branch singularity at {0}")]
    BranchSingularity(String),
    #[error("family is not uniformly expanding (symbol {symbol} has floor {floor})")]
    NotUniformlyExpanding { symbol: u32, floor: f64 },
    #[error("unsupported representation: {0}")]
    Unsupported(String),
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    #[error("bracket [{t_lo}, {t_hi}] does not separate the sign of the pressure")]
    NoZero { t_lo: f64, t_hi: f64 },
    #[error("base potential is not normalized: expected pressure {value} (stderr {stderr})")]
    NotNormalized { value: f64, stderr: f64 },
    #[error("temperature curve is not convex: violation {violation} at q = {q}")]
    NotConvex { q: f64, violation: f64 },
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("system is not expanding in the mean: integral of log gamma = {0}")]
    NotMeanExpanding(f64),
    #[error("expanding set has zero measure at window depth {0}")]
    DepthInsufficient(usize),
    #[error("path too short: no return to the expanding set within {0} symbols")]
    PathTooShort(usize),
    #[error("convergence failure: {0}")]
    Convergence(String),
}

impl Error {
    /// Stable machine-readable code used by the experiment runner.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::NonFinite { .. } => "non_finite",
            Error::Domain(_) => "domain",
            Error::OutsideRepeller(_) => "outside_repeller",
            Error::BranchSingularity(_) => "branch_singularity",
            Error::NotUniformlyExpanding { .. } => "not_uniformly_expanding",
            Error::Unsupported(_) => "unsupported",
            Error::Resource(_) => "resource",
            Error::NoZero { .. } => "no_zero",
            Error::NotNormalized { .. } => "not_normalized",
            Error::NotConvex { .. } => "not_convex",
            Error::Hypothesis(_) => "hypothesis",
            Error::NotMeanExpanding(_) => "not_mean_expanding",
            Error::DepthInsufficient(_) => "depth_insufficient",
            Error::PathTooShort(_) => "path_too_short",
            Error::Convergence(_) => "convergence",
        }
    }
}
