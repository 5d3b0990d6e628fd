use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. IDX parsing failures are kept as distinct variants
/// so callers can tell a malformed header from a truncated payload.
#[derive(Debug, Error)]
pub enum Error {
    #[error("bad IDX magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    IdxMagic {
        path: String,
        expected: u32,
        found: u32,
    },
    #[error("truncated IDX payload in {path}: need {need} bytes, have {have}")]
    IdxTruncated {
        path: String,
        need: usize,
        have: usize,
    },
    #[error("IDX image/label count mismatch: {images} images vs {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("inner solver diverged (NaN/Inf after pass {pass}); learning rate likely too large")]
    ProxDiverged { pass: usize },
    #[error("run aborted: non-finite value at round {round}")]
    NonFinite { round: usize },
    #[error("hyperparameters violate the descent conditions: {0}; set allow_infeasible to proceed")]
    Infeasible(String),
    #[error("empty-client re-draw budget exhausted after {attempts} attempts")]
    RedrawBudget { attempts: usize },
    #[error("operation requires a classification model")]
    NotClassifier,
    #[error("empty evaluation set for client {client}")]
    EmptyEvalSet { client: usize },
    #[error("invalid initial state: {0}")]
    BadInit(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
