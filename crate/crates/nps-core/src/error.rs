use thiserror::Error;

/// Errors raised by the tensor/autodiff layer and everything built on it.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Incompatible operand shapes; names both shapes.
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    Dim { op: &'static str, left: String, right: String },

    /// Input outside the numeric domain of an operation (log of a
    /// non-positive value, exp overflow, NaN logits, ...).
    #[error("numeric domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    /// A parameter value outside its legal range (e.g. dropout p).
    #[error("invalid parameter for {op}: {detail}")]
    Param { op: &'static str, detail: String },

    /// API misuse: non-scalar backward root, missing gradient, null-rule
    /// application, and similar contract violations.
    #[error("usage error in {op}: {detail}")]
    Usage { op: &'static str, detail: String },

    /// Model/engine configuration inconsistent with the data it is applied to.
    #[error("configuration error: {0}")]
    Config(String),

    /// File I/O, always carrying the offending path.
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },

    /// Malformed file contents (checkpoints, datasets, CSV artifacts).
    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    /// Training diverged; carries diagnostics for the abort message.
    #[error("training aborted: NaN loss at epoch {epoch}, batch {batch} (lr={lr}); last selection logits: {last_logits:?}")]
    NanLoss { epoch: usize, batch: usize, lr: f64, last_logits: Vec<f64> },
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io { path: path.into(), source }
    }
}
