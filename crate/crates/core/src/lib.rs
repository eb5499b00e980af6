//! Miniature in-memory row store whose statement files mix clear-text rows
//! owned by the local user with `$id@HEX` rows received from others and
//! encrypted under per-row keys.
//!
//! - [`rowstore`]: catalogs, tables, `.script`/`.log` durability
//! - [`scriptio`]: statement grammar, encrypted-line codec, key resolution
//! - [`crypto`]: row keys, AES-256-GCM row envelopes, X25519 key wrapping

pub mod crypto;
mod error;
pub mod rowstore;
mod schema;
pub mod scriptio;

pub use error::{Error, KeyUnavailable, Result};
pub use rowstore::Catalog;
pub use schema::{
    is_identifier, Column, ColumnType, PendingRowId, Row, RowProvenance, TableSchema, Value,
};
