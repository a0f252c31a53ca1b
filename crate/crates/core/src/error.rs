use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine.
///
/// Every variant names the offending input (a file, a JSON path element,
/// a row id) so that callers can report it without extra context.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid schema at `{at}`: {message}")]
    Schema { at: String, message: String },

    #[error("invalid embedding data in {path}: {message}")]
    Store { path: PathBuf, message: String },

    #[error("row `{id}` has zero norm and cannot be normalized")]
    ZeroNorm { id: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("text embedding for manifest id `{id}` is missing")]
    MissingText { id: String },

    #[error("anchor for class {class_id}, combination {combo_index} is degenerate (mean norm below 1e-12)")]
    DegenerateAnchor { class_id: usize, combo_index: usize },

    #[error("anchor count {count} exceeds the configured budget of {budget}")]
    AnchorBudget { count: usize, budget: usize },

    #[error("non-finite score at class {class_id}, combination {combo_index}")]
    NonFinite { class_id: usize, combo_index: usize },

    #[error("temperature must be positive, got {0}")]
    Temperature(f64),

    #[error("oracle overflow: exp({0}) is not representable; rescale the scores")]
    OracleOverflow(f64),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("row `{id}`: {message}")]
    Metadata { id: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(at: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            at: at.into(),
            message: message.into(),
        }
    }
}
