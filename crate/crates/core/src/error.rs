use thiserror::Error;

use crate::registry::LifecycleStage;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("unauthorized")]
    Unauthorized,
    #[error("illegal stage transition {from} -> {to}")]
    InvalidTransition {
        from: LifecycleStage,
        to: LifecycleStage,
    },
    #[error("invalid transition: {0}")]
    InvalidState(String),
    #[error("gate failed: {0}")]
    GateFailed(String),
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error("index is stale, rebuild required")]
    RebuildRequired,
    #[error("not ready: {0}")]
    NotReady(String),
    #[error("unavailable: {0}")]
    Unavailable(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("storage error: {0}")]
    Storage(String),
}

impl Error {
    /// Stable machine-readable code, used on the wire and by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::NotFound(_) => "not-found",
            Error::Conflict(_) => "conflict",
            Error::Forbidden(_) => "forbidden",
            Error::Unauthorized => "unauthorized",
            Error::InvalidTransition { .. } | Error::InvalidState(_) => "invalid-transition",
            Error::GateFailed(_) => "gate-failed",
            Error::Integrity(_) => "integrity-error",
            Error::RebuildRequired => "rebuild-required",
            Error::NotReady(_) => "not-ready",
            Error::Unavailable(_) => "unavailable",
            Error::Io(_) => "io-error",
            Error::Storage(_) => "storage-error",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn not_found(what: impl std::fmt::Display) -> Self {
        Error::NotFound(what.to_string())
    }
}

macro_rules! storage_from {
    ($($t:ty),*) => {
        $(impl From<$t> for Error {
            fn from(e: $t) -> Self {
                Error::Storage(e.to_string())
            }
        })*
    };
}

storage_from!(
    redb::Error,
    redb::DatabaseError,
    redb::TransactionError,
    redb::TableError,
    redb::StorageError,
    redb::CommitError,
    serde_json::Error
);
