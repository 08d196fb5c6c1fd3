use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid mesh sizes, patch parameters or experiment settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// Data violating the model assumptions (e.g. a nonpositive coefficient).
    #[error("model error: {0}")]
    Model(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("matrix is not positive definite (pivot {pivot:.3e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    /// A corrector solve failed; carries the coarse element and the kind of corrector.
    #[error("corrector for coarse element {elem} ({what}) failed: {source}")]
    Corrector {
        elem: usize,
        what: String,
        #[source]
        source: Box<Error>,
    },

    #[error("missing corrector for coarse element {elem}, local vertex {vertex}")]
    MissingCorrector { elem: usize, vertex: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("corrector cache: {0}")]
    Cache(String),
}

impl Error {
    /// Exit code used by the command line runner: 1 for configuration
    /// problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Model(_) | Error::Dimension(_) => 1,
            Error::Io(_) | Error::Cache(_) => 1,
            _ => 2,
        }
    }
}
