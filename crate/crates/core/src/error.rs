use thiserror::Error;

/// Errors raised by measure construction, the solvers and the simulation engines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("empty measure")]
    EmptyMeasure,
    #[error("length mismatch: {atoms} atoms but {weights} weights")]
    LengthMismatch { atoms: usize, weights: usize },
    #[error("negative weight {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },
    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("weights have zero total mass")]
    ZeroMass,
    #[error("nonpositive support: atom {atom} is not > 0")]
    NonPositiveSupport { atom: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("convex order violated: max potential excess {max_violation:.3e}")]
    ConvexOrderViolated { max_violation: f64 },
    #[error("means differ: {0} vs {1}")]
    UnequalMeans(f64, f64),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("non-finite integrand value at x = {0}")]
    DivergentQuadrature(f64),
    #[error("target {target} outside the open image ({lo}, {hi})")]
    OutsideImage { target: f64, lo: f64, hi: f64 },
    #[error(
        "no convergence after {iterations} iterations \
         (nu0 residual {residual_nu0:.3e}, nu1 residual {residual_nu1:.3e}, last step {last_step:.3e})"
    )]
    NotConverged {
        iterations: usize,
        residual_nu0: f64,
        residual_nu1: f64,
        last_step: f64,
    },
    #[error("internal consistency failure: {0}")]
    Consistency(String),
}

pub type Result<T> = std::result::Result<T, Error>;
