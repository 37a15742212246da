use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid needs at least 8 nodes per side, got {0}")]
    InvalidGrid(usize),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("basis index must be a positive integer, got {0}")]
    InvalidBasisIndex(i64),

    #[error("basis index {0} listed more than once")]
    DuplicateBasisIndex(u32),

    #[error("control vector has {found} entries, basis has {expected}")]
    ControlLength { expected: usize, found: usize },

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("linear solve did not converge after {iterations} iterations (relative residual {residual:.3e}); reduce tau*|v|/h")]
    SolverNonConvergence { iterations: usize, residual: f64 },

    #[error("explicit adjoint step violates CFL bound: tau*max|v|/h = {0:.3} > 1")]
    CflViolation(f64),

    #[error("initial state is already uniform (mix-norm of θ₀ − mean is {0:.3e})")]
    DegenerateInitialState(f64),

    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit status: 2 for invalid input, 4 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidGrid(_)
            | Error::ShapeMismatch { .. }
            | Error::InvalidBasisIndex(_)
            | Error::DuplicateBasisIndex(_)
            | Error::ControlLength { .. }
            | Error::Domain(_)
            | Error::DegenerateInitialState(_)
            | Error::Config(_)
            | Error::Parse { .. } => 2,
            Error::NonFinite(_)
            | Error::SolverNonConvergence { .. }
            | Error::CflViolation(_)
            | Error::Io(_) => 4,
        }
    }

    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
