use std::io;

/// Errors raised anywhere in the flow stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty request: {0}")]
    EmptyRequest(&'static str),

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("solver exceeded {max_steps} steps (stopped at t = {t})")]
    Divergence { max_steps: usize, t: f64 },

    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("singular planar layer {layer}: |1 + u.psi| = {value:e}")]
    SingularLayer { layer: usize, value: f64 },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}; model restored to last good state")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code used by the command-line tool: 1 for usage and
    /// configuration problems, 2 for numeric and integrity failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_)
            | Error::EmptyRequest(_)
            | Error::Config(_)
            | Error::Parse { .. }
            | Error::Io(_) => 1,
            Error::NonFinite { .. }
            | Error::Numeric(_)
            | Error::Divergence { .. }
            | Error::StepUnderflow { .. }
            | Error::SingularLayer { .. }
            | Error::UndefinedMetric(_)
            | Error::NonFiniteLoss { .. }
            | Error::Integrity(_) => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Returns an error naming the first non-finite entry of `xs`.
pub(crate) fn check_finite(what: &'static str, xs: &[f64]) -> Result<()> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}
