use std::fmt;

use blastoseg::Error;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_NON_FINITE: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_CHECKPOINT: i32 = 65;

/// A failure with its exit code and a short machine-readable kind.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            kind: "usage",
            message: message.into(),
        }
    }

    /// `error code=<n> kind=<kind>: <message>` on one line.
    pub fn line(&self) -> String {
        let msg = self.message.replace(['\n', '\r'], " ");
        format!("error code={} kind={}: {}", self.code, self.kind, msg)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::NonFinite { .. } => (EXIT_NON_FINITE, "non_finite"),
            Error::ArchitectureMismatch { .. } => (EXIT_CHECKPOINT, "architecture_mismatch"),
            Error::Checkpoint(_) => (EXIT_CHECKPOINT, "checkpoint"),
            Error::Config(_) => (EXIT_USAGE, "config"),
            Error::Dimension { .. } => (EXIT_FAILURE, "dimension"),
            Error::Validation(_) => (EXIT_FAILURE, "validation"),
            Error::Io(_) | Error::Image(_) => (EXIT_FAILURE, "io"),
            _ => (EXIT_FAILURE, "internal"),
        };
        Failure {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}
