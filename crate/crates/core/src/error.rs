//! Error type shared by every module in the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed JSON in a model file.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// Structurally valid JSON that does not match the model schema.
    #[error("schema error: {0}")]
    Schema(String),

    #[error("syntax error at position {position}: {message}")]
    ExprSyntax { position: usize, message: String },

    #[error("unknown identifier `{name}` at position {position}")]
    UnknownIdentifier { name: String, position: usize },

    #[error("unknown function `{name}` at position {position}")]
    UnknownFunction { name: String, position: usize },

    /// An operation that needs linear-row mechanisms saw an expression mechanism.
    #[error("model is not purely linear")]
    NonLinearModel,

    /// No sound global derivative bound exists for the mechanism set.
    #[error("contraction bound unavailable: {0}")]
    Uncertifiable(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("iteration diverged after {iterations} iterations (last step {last_step:e})")]
    Diverged { iterations: usize, last_step: f64 },

    #[error("no convergence within {max_iterations} iterations (last step {last_step:e})")]
    MaxIterExceeded {
        max_iterations: usize,
        last_step: f64,
    },

    #[error("kappa = {kappa} is not a contraction constant (need 0 <= kappa < 1)")]
    KappaNotContractive { kappa: f64 },

    #[error("singular linear system (pivot {pivot:e} below threshold)")]
    SingularSystem { pivot: f64 },

    /// Noise abduction is not unique when a noise coefficient vanishes.
    #[error("noise coefficient of coordinate {coordinate} is zero; abduction is not unique")]
    DegenerateNoise { coordinate: usize },

    #[error("invalid tail bound spec: {0}")]
    InvalidSpec(String),

    #[error("invalid intervention: {0}")]
    InvalidIntervention(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// A loaded model violated structural invariants; the message lists them.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// Failure while processing one row of a sampling run.
    #[error("row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps an error with the index of the sample row it occurred in.
    pub fn at_row(self, row: usize) -> Error {
        Error::Row {
            row,
            source: Box::new(self),
        }
    }
}
