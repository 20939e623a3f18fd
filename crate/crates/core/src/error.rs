use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error(
        "Fock truncation too small: tail mass {tail_mass:.3e} exceeds {tail_tol:.1e} at dim {dim}; \
         need dim >= {required_dim}"
    )]
    TruncationTooSmall {
        dim: usize,
        required_dim: usize,
        tail_mass: f64,
        tail_tol: f64,
    },

    #[error("resource limit: {0}")]
    Resource(String),

    #[error("degenerate ground set: operator has a single spectral cluster at {level}")]
    DegenerateGroundSet { level: f64 },

    #[error("integrator step underflow at t = {time}: step {step:.3e} below 1e-12 (stiff problem?)")]
    Stiffness { time: f64, step: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
