use thiserror::Error;

/// Errors raised by the particle-mesh solver.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum VpmError {
    #[error("node index {index} out of range for grid with {len} nodes")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("fixed-point iteration did not converge after {iterations} sweeps (relative change {residual:.3e})")]
    FixedPointDiverged { iterations: usize, residual: f64 },

    #[error("momentum update for particle {particle} is near-singular (det = {det:.3e})")]
    SingularParticleUpdate { particle: usize, det: f64 },

    #[error("particle momenta do not reproduce the requested grid momentum (relative residual {residual:.3e})")]
    Initialization { residual: f64 },

    #[error("particle {particle} has zero density weight")]
    ZeroWeight { particle: usize },

    #[error("measurement failed: {0}")]
    Measurement(String),
}

pub type Result<T> = std::result::Result<T, VpmError>;
