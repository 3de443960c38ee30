use num_complex::Complex64;
use thiserror::Error;

/// Which side of the no-arbitrage band a price fell outside of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Feller condition violated: 2κθ = {two_kappa_theta} < σ² = {sigma_squared}")]
    FellerViolation {
        two_kappa_theta: f64,
        sigma_squared: f64,
    },

    #[error("near-singular {term} at k = {k}")]
    NearSingular { term: &'static str, k: Complex64 },

    #[error("log ζ evaluated on the negative real axis at τ = {tau}, k = {k}")]
    BranchCrossing { tau: f64, k: Complex64 },

    #[error("contour violation: k_i = {k_i} is outside the payoff's strip of convergence")]
    ContourViolation { k_i: f64 },

    #[error("{context}: quadrature did not converge (estimate {estimate}, error bound {error_bound})")]
    NonConvergence {
        context: &'static str,
        estimate: f64,
        error_bound: f64,
    },

    #[error("Poisson source is not centred: <source> = {mean}")]
    NotCentered { mean: f64 },

    #[error("Brownian correlation matrix is not positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("simulation state became non-finite on path {path} at step {step}")]
    StepExplosion { path: usize, step: usize },

    #[error("variance truncated on {fraction:.2e} of steps (threshold {threshold:.2e}); reduce dt")]
    TruncationExceeded { fraction: f64, threshold: f64 },

    #[error("price {price} outside the no-arbitrage band [{lower}, {upper}] ({bound:?} bound)")]
    OutOfBand {
        bound: Bound,
        price: f64,
        lower: f64,
        upper: f64,
    },

    #[error("non-finite objective: {0}")]
    NonFinite(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("no quotes left after filtering")]
    EmptyAfterFilter,

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::EmptyAfterFilter | Error::Io(_) => 2,
            Error::NonConvergence { .. } => 4,
            Error::InvalidParameter(_) | Error::FellerViolation { .. } | Error::NotPositiveDefinite(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
