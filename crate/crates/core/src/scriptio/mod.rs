//! Statement-line layer shared by `.script` and `.log` files.
//!
//! Every line is one of three shapes, told apart by its first byte:
//!
//! ```text
//! CREATE TABLE students(id INTEGER PRIMARY KEY,name TEXT);
//! INSERT INTO students(id,name) VALUES(12,'Alice');
//! $27@<uppercase hex of nonce ‖ ciphertext ‖ tag>
//! ```
//!
//! An encrypted record's payload is the full canonical `INSERT` text of the
//! row, so decrypting it feeds straight back into [`parse_insert`].

mod ddl;
mod encrypted;
mod insert;
mod lexer;
mod resolver;

pub use ddl::{parse_ddl, serialize_ddl};
pub use encrypted::{decode_encrypted_line, encode_encrypted_line, encrypted_line_id};
pub use insert::{parse_insert, serialize_insert, ParsedInsert};
pub use resolver::{KeyResolution, KeyResolver, MemoryKeyResolver, NoKeys};

use crate::crypto::{self, CipherEnvelope, CryptoError};
use crate::error::{Error, Result};
use crate::schema::{PendingRowId, Row, RowProvenance, TableSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineKind {
    Ddl,
    ClearInsert,
    Encrypted,
}

impl LineKind {
    pub fn classify(line: &str) -> Result<Self> {
        match line.as_bytes().first() {
            Some(b'$') => Ok(LineKind::Encrypted),
            Some(b'C') => Ok(LineKind::Ddl),
            Some(b'I') => Ok(LineKind::ClearInsert),
            _ => Err(Error::parse(1, "unrecognized statement line")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StatementLine {
    Ddl(String),
    ClearInsert(String),
    EncryptedRecord {
        id: PendingRowId,
        ciphertext: Vec<u8>,
    },
}

impl StatementLine {
    pub fn to_line(&self) -> String {
        match self {
            StatementLine::Ddl(t) | StatementLine::ClearInsert(t) => t.clone(),
            StatementLine::EncryptedRecord { id, ciphertext } => {
                encode_encrypted_line(*id, ciphertext)
            }
        }
    }

    pub fn kind(&self) -> LineKind {
        match self {
            StatementLine::Ddl(_) => LineKind::Ddl,
            StatementLine::ClearInsert(_) => LineKind::ClearInsert,
            StatementLine::EncryptedRecord { .. } => LineKind::Encrypted,
        }
    }
}

/// Produces the persisted form of a row: clear for owned rows, an encrypted
/// record under the resolver's key for received ones.
pub fn write_row_line(
    schema: &TableSchema,
    row: &Row,
    resolver: &dyn KeyResolver,
) -> Result<StatementLine> {
    let text = serialize_insert(schema, &row.values)?;
    match row.provenance {
        RowProvenance::Owned => Ok(StatementLine::ClearInsert(text)),
        RowProvenance::Received(id) => {
            let key = resolver
                .resolve(id)
                .into_key()
                .map_err(|reason| Error::KeyUnavailable { id, reason })?;
            let envelope = crypto::encrypt_row(text.as_bytes(), &key)?;
            Ok(StatementLine::EncryptedRecord {
                id,
                ciphertext: envelope.to_bytes(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoggedStatement {
    Ddl(TableSchema),
    Row {
        insert: ParsedInsert,
        provenance: RowProvenance,
    },
    /// Key unreachable: keep the line verbatim for a later attempt.
    Deferred(String),
    /// Key denied: the line is dropped for good.
    Revoked(PendingRowId),
}

/// Decrypts an encrypted record payload and parses the inner `INSERT`.
pub fn open_encrypted_record(
    id: PendingRowId,
    ciphertext: &[u8],
    key: &crypto::RowKey,
) -> Result<ParsedInsert> {
    let corrupt = |reason: String| Error::Corrupt { id, reason };
    let envelope = CipherEnvelope::from_bytes(ciphertext).map_err(|e| corrupt(e.to_string()))?;
    let plaintext = crypto::decrypt_row(&envelope, key).map_err(|e| match e {
        CryptoError::Authentication => corrupt("authentication failed".into()),
        other => corrupt(other.to_string()),
    })?;
    let text = String::from_utf8(plaintext).map_err(|_| corrupt("payload is not UTF-8".into()))?;
    if LineKind::classify(&text).ok() != Some(LineKind::ClearInsert) {
        return Err(corrupt("payload is not an INSERT statement".into()));
    }
    parse_insert(&text)
}

/// Reads one statement line. Clear lines parse directly; encrypted lines go
/// through the resolver and are decrypted exactly once.
pub fn read_logged_statement(line: &str, resolver: &dyn KeyResolver) -> Result<LoggedStatement> {
    match LineKind::classify(line)? {
        LineKind::Ddl => Ok(LoggedStatement::Ddl(parse_ddl(line)?)),
        LineKind::ClearInsert => Ok(LoggedStatement::Row {
            insert: parse_insert(line)?,
            provenance: RowProvenance::Owned,
        }),
        LineKind::Encrypted => {
            let (id, ciphertext) = decode_encrypted_line(line)?;
            match resolver.resolve(id) {
                KeyResolution::Key(key) => Ok(LoggedStatement::Row {
                    insert: open_encrypted_record(id, &ciphertext, &key)?,
                    provenance: RowProvenance::Received(id),
                }),
                KeyResolution::Unreachable => Ok(LoggedStatement::Deferred(line.to_owned())),
                KeyResolution::Denied => Ok(LoggedStatement::Revoked(id)),
            }
        }
    }
}
