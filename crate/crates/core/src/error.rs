use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("schema error: column `{column}` not found in header")]
    Schema { column: String },

    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("validation error for individual `{individual}` at time {time}: {message}")]
    Record {
        individual: String,
        time: u32,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("model spec error: {0}")]
    Spec(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no available decision points to fit")]
    EmptyData,

    #[error("singular design; near-dependent columns: {}", columns.join(", "))]
    SingularDesign { columns: Vec<String> },

    #[error("small-sample correction failed: leverage of individual `{individual}` is numerically one")]
    Correction { individual: String },

    #[error("fit did not converge after {iterations} iterations (last iterate {last:?})")]
    Convergence { iterations: usize, last: Vec<f64> },

    #[error("effect not identifiable: cell {cell} lacks treated or untreated available records")]
    Unidentifiable { cell: String },

    #[error("study failed: {failures} of {reps} replications could not be fitted")]
    Study { failures: usize, reps: usize },
}

impl Error {
    pub(crate) fn spec(msg: impl Into<String>) -> Self {
        Error::Spec(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
