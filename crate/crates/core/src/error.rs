use thiserror::Error;

/// Errors raised by the grid, potential, solver, duality and monitor layers.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field mismatch: {0}")]
    FieldMismatch(String),

    #[error("non-finite value {value} at node {node}")]
    NonFinite { node: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("potential is not strictly convex: node {node} has minimal Hessian eigenvalue {min_eigenvalue:.6e}")]
    NotConvex { node: usize, min_eigenvalue: f64 },

    #[error("right-hand side has mean {mean:.6e}, expected zero")]
    MeanNotZero { mean: f64 },

    #[error("Krylov solve stagnated after {iterations} iterations at relative residual {relative_residual:.3e}")]
    LinearSolveFailure {
        iterations: usize,
        relative_residual: f64,
    },

    #[error("line search found no step decreasing the functional (last value {last:.6e}, start {start:.6e})")]
    LineSearchFailure { start: f64, last: f64 },

    #[error("Newton iteration did not reach tolerance in {iterations} iterations (residual {residual:.3e})")]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error("at continuation parameter t = {t}: {source}")]
    AtStep {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("continuation step fell below {min_step:.3e} after reaching t = {last_t}")]
    StepFloorReached {
        last_t: f64,
        min_step: f64,
        #[source]
        cause: Option<Box<Error>>,
    },

    #[error("gradient map inversion failed at node {node} (residual {residual:.3e})")]
    GradientInversionFailure { node: usize, residual: f64 },

    #[error("unsupported base form: {0}")]
    UnsupportedBase(String),

    #[error("monitor violation: {}", failed.join(", "))]
    MonitorViolation { failed: Vec<String> },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
