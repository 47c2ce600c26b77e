use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("grid step must be positive, got {0}")]
    NonPositiveStep(f64),

    #[error("{name} = {value} is not an integer multiple of delta = {delta}")]
    NotCommensurate {
        name: &'static str,
        value: f64,
        delta: f64,
    },

    #[error("initial density has zero mass on the grid")]
    ZeroMass,

    #[error("rate evaluated outside the domain: s = {s}, a = {a}, X = {x}")]
    DomainViolation { s: f64, a: f64, x: f64 },

    #[error("activity fixed point did not converge after {iterations} iterations (X = {last_x}, residual = {residual:e})")]
    NoConvergence {
        last_x: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("no steady state: transfer-operator iterate mass fell to {mass:e} after {iteration} iterations")]
    NoSteadyState { mass: f64, iteration: usize },

    #[error("no sign change of Phi(X) - X on [0, p_inf]; samples {samples:?}")]
    NoEquilibrium { samples: Vec<(f64, f64)> },

    #[error("invalid rate bounds: p0 = {p0}, p_inf = {p_inf}, sigma = {sigma}")]
    InvalidBounds { p0: f64, p_inf: f64, sigma: f64 },

    #[error("grid too coarse: minorization region {{2 sigma > a > s + sigma}} contains no whole cell")]
    GridTooCoarse,

    #[error("need at least 3 usable samples for the fit, got {0}")]
    InsufficientData(usize),

    #[error("rate depends on the second elapsed time; no 1D reduction")]
    NotReducible,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
