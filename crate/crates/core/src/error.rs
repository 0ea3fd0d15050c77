//! Crate-wide error type. Variants are grouped by how callers react:
//! `Config` means the caller supplied an inconsistent setting, `Parse` and
//! `Validation` point at a specific offending file or record, `Numeric`
//! signals a non-finite value inside a training loop.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed line in a data or checkpoint file.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Structurally valid input that breaks a cross-reference or invariant.
    #[error("{0}")]
    Validation(String),

    /// Dimension or shape mismatch at a module boundary.
    #[error("{0}")]
    Shape(String),

    /// Inconsistent or out-of-range configuration value.
    #[error("{0}")]
    Config(String),

    /// Non-finite loss or gradient encountered while training.
    #[error("{0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Formats a capped offender list for validation messages, e.g. `a, b, c (+4 more)`.
pub(crate) fn offender_list<S: AsRef<str>>(items: &[S], cap: usize) -> String {
    let shown: Vec<&str> = items.iter().take(cap).map(|s| s.as_ref()).collect();
    if items.len() > cap {
        format!("{} (+{} more)", shown.join(", "), items.len() - cap)
    } else {
        shown.join(", ")
    }
}
