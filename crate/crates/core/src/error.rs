use thiserror::Error;

/// Errors produced by the linear algebra kernels, optimizers and harnesses.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("SVD did not converge within {sweeps} Jacobi sweeps")]
    SvdNoConverge { sweeps: usize },

    #[error("input matrix is zero")]
    ZeroInput,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("non-finite iterate detected at step {0}")]
    DivergenceDetected(usize),

    #[error("degenerate spectrum: singular gap {0:e} is below the probe threshold")]
    DegenerateSpectrum(f64),

    #[error("lemma preconditions were not enabled for this run")]
    PreconditionUnchecked,

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(expected: (usize, usize), got: (usize, usize)) -> Self {
        Error::Shape { expected, got }
    }
}
