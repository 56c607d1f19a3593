use thiserror::Error;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("singular matrix (condition estimate {cond:.3e})")]
    Singular { cond: f64 },

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot((usize, usize)),

    #[error("integration failed at step {step}: singular Cayley system (condition estimate {cond:.3e})")]
    Integration { step: usize, cond: f64 },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("point left the domain after wrapping: {0:?}")]
    OutOfDomain(Vec<f64>),

    #[error("not a rotation: {0}")]
    NotRotation(String),

    #[error("checkpoint version mismatch: file has {found}, expected {expected}")]
    Version { found: u32, expected: u32 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("dataset has {len} samples, requested sample {index}")]
    Exhausted { index: u64, len: usize },

    #[error("kernel is not symmetric: max |A[x,y] - A[y,x]| = {max:.3e}")]
    Asymmetric { max: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. } | Error::Integration { .. } | Error::NonFiniteGradient(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
