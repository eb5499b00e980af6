use std::fmt;
use std::path::PathBuf;

use crate::crypto::CryptoError;
use crate::schema::PendingRowId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Why a row key could not be obtained from a key resolver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyUnavailable {
    /// The synchronizer answered: no key exists (revoked, expired, never granted).
    Denied,
    /// The synchronizer could not be reached.
    Unreachable,
}

impl fmt::Display for KeyUnavailable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyUnavailable::Denied => f.write_str("denied"),
            KeyUnavailable::Unreachable => f.write_str("unreachable"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at column {column}: {message}")]
    Parse { column: usize, message: String },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("table {0} already exists")]
    DuplicateTable(String),

    #[error("unknown table {0}")]
    UnknownTable(String),

    #[error("type mismatch: {0}")]
    TypeMismatch(String),

    #[error("duplicate primary key {key} in table {table}")]
    DuplicateKey { table: String, key: i64 },

    #[error("pending row {0} is already present in the catalog")]
    DuplicatePendingRow(PendingRowId),

    #[error("key for pending row {id} unavailable: {reason}")]
    KeyUnavailable {
        id: PendingRowId,
        reason: KeyUnavailable,
    },

    #[error("encrypted record {id} is corrupt: {reason}")]
    Corrupt { id: PendingRowId, reason: String },

    #[error(transparent)]
    Crypto(#[from] CryptoError),

    #[error("{}:{line}: {source}", file.display())]
    Replay {
        file: PathBuf,
        line: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("catalog properties: {0}")]
    Properties(String),
}

impl Error {
    pub(crate) fn parse(column: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            column,
            message: message.into(),
        }
    }
}
