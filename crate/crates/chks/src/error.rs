use thiserror::Error;

/// Crate-wide error type.
///
/// Numerical guarantees (positivity, phase confinement, solver convergence)
/// are contracts here, not best-effort behaviour: when one fails the step is
/// aborted and the failure is reported with enough context to reproduce it.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Argument outside the domain of a singular potential.
    #[error("potential argument {value} outside the open domain (|r| < 1)")]
    DomainViolation { value: f64 },

    /// A nutrient value that must be nonnegative fell below -1e-14.
    #[error("negative nutrient value {value} in {context}")]
    NegativeSigma { value: f64, context: &'static str },

    /// The truncation inverse was asked for a value at or above its asymptote.
    #[error("truncated variable {value} reached the asymptote {limit}")]
    RangeViolation { value: f64, limit: f64 },

    /// Grid shapes disagree (field built on one grid, used with another).
    #[error("grid mismatch: {context}")]
    GridMismatch { context: &'static str },

    /// Grid constructor arguments violate the minimum-resolution contract.
    #[error("invalid grid: {context}")]
    InvalidGrid { context: String },

    /// An iterative linear solve did not reach its tolerance.
    #[error("linear solve stalled after {iterations} iterations (relative residual {residual:.3e})")]
    LinearSolveFailure { iterations: usize, residual: f64 },

    /// Newton iteration failed to reduce the residual.
    #[error("Newton iteration diverged after {iterations} iterations; residual history {history:?}")]
    NewtonDivergence { iterations: usize, history: Vec<f64> },

    /// The nutrient minimum-principle guarantee was violated.
    #[error("nutrient positivity lost: min sigma = {min:.6e} at step {step}")]
    PositivityLoss { min: f64, step: usize },

    /// The advective CFL restriction could not be met by repeated dt halving.
    #[error("time step {dt:.3e} still violates the advective stability bound {limit:.3e} after {halvings} halvings")]
    CflExhausted { dt: f64, limit: f64, halvings: usize },

    /// Mean-field envelope requested for a configuration where it is undefined.
    #[error("mean envelope undefined: {context}")]
    UndefinedEnvelope { context: &'static str },

    /// Subvolume edges do not lie on cell boundaries.
    #[error("subvolume edge {coord} = {value} is not aligned with a cell boundary")]
    MisalignedSubvolume { coord: &'static str, value: f64 },

    /// Configuration file could not be parsed.
    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    /// Configuration was parsed but rejected by validation.
    #[error("invalid configuration:\n{report}")]
    ConfigRejected { report: String },

    /// Filesystem failure while writing outputs.
    #[error("output error: {0}")]
    Output(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Output(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
