use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row}: field `{field}`: {message}")]
    Parse {
        row: usize,
        field: &'static str,
        message: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid reactor state: {0}")]
    InvalidState(String),

    #[error("reactivity change of {delta:.4} $ exceeds the {limit} $ validity window")]
    ReactivityWindow { delta: f64, limit: f64 },

    #[error("power ratio is singular or non-positive (rho_i = {rho_i:.4} $, rho_f = {rho_f:.4} $)")]
    Singular { rho_i: f64, rho_f: f64 },

    #[error("power {0} W exceeds full power")]
    OverPower(f64),

    #[error("power {0} W is outside the classifiable range")]
    PowerRange(f64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("input `{branch}` expects width {expected}, got {got}")]
    Shape {
        branch: String,
        expected: usize,
        got: usize,
    },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("unknown {kind} `{value}` (valid: {valid})")]
    Unknown {
        kind: &'static str,
        value: String,
        valid: String,
    },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("unsupported model file: {0}")]
    Version(String),

    #[error("corrupt model file: {0}")]
    Corrupt(String),

    #[error("cannot compose stages: {0}")]
    Composition(String),

    #[error("sampler stalled: {accepted} accepted out of {attempts} attempts")]
    Progress { accepted: usize, attempts: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
