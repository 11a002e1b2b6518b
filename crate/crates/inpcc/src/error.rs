use thiserror::Error;

/// Crate-wide error type.
///
/// Variants map onto the CLI exit codes: `Format`, `Parameter`, `Config`,
/// `DegenerateInput` and `Dimension` are caller mistakes (exit 1), while
/// `Contract` and `NonFinite` signal an internal invariant violation (exit 2).
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {op} got {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value in {context}{}", batch_note(.batch_ids))]
    NonFinite {
        context: String,
        batch_ids: Vec<String>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn batch_note(ids: &[String]) -> String {
    if ids.is_empty() {
        String::new()
    } else {
        format!(" (batch ids: {})", ids.join(", "))
    }
}

impl Error {
    /// Exit code the CLI should use for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Contract { .. } | Error::NonFinite { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
