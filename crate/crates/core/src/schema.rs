//! Relational value and schema types shared by the statement layer and the
//! row store.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnType {
    Integer,
    Text,
    Boolean,
}

impl ColumnType {
    pub fn keyword(self) -> &'static str {
        match self {
            ColumnType::Integer => "INTEGER",
            ColumnType::Text => "TEXT",
            ColumnType::Boolean => "BOOLEAN",
        }
    }

    pub fn from_keyword(word: &str) -> Option<Self> {
        match word {
            "INTEGER" => Some(ColumnType::Integer),
            "TEXT" => Some(ColumnType::Text),
            "BOOLEAN" => Some(ColumnType::Boolean),
            _ => None,
        }
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Value {
    Integer(i64),
    Text(String),
    Boolean(bool),
}

impl Value {
    pub fn column_type(&self) -> ColumnType {
        match self {
            Value::Integer(_) => ColumnType::Integer,
            Value::Text(_) => ColumnType::Text,
            Value::Boolean(_) => ColumnType::Boolean,
        }
    }

    pub fn as_integer(&self) -> Option<i64> {
        match self {
            Value::Integer(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(v) => Some(v),
            _ => None,
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Integer(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_owned())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Boolean(v)
    }
}

/// Synchronizer-assigned id of a pending row; appears in `$id@` headers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PendingRowId(pub u64);

impl fmt::Display for PendingRowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowProvenance {
    /// Created locally; stored in clear.
    Owned,
    /// Delivered by the synchronizer; stored encrypted under the key of this
    /// pending row.
    Received(PendingRowId),
}

impl RowProvenance {
    pub fn pending_id(&self) -> Option<PendingRowId> {
        match self {
            RowProvenance::Owned => None,
            RowProvenance::Received(id) => Some(*id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub values: Vec<Value>,
    pub provenance: RowProvenance,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub ty: ColumnType,
}

pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableSchema {
    name: String,
    columns: Vec<Column>,
    primary_key: usize,
}

impl TableSchema {
    /// Validates identifiers, column uniqueness, and that `primary_key`
    /// names an INTEGER column.
    pub fn new(
        name: impl Into<String>,
        columns: impl IntoIterator<Item = (impl Into<String>, ColumnType)>,
        primary_key: &str,
    ) -> Result<Self> {
        let name = name.into();
        if !is_identifier(&name) {
            return Err(Error::Schema(format!("invalid table name {name:?}")));
        }
        let columns: Vec<Column> = columns
            .into_iter()
            .map(|(n, ty)| Column { name: n.into(), ty })
            .collect();
        if columns.is_empty() {
            return Err(Error::Schema(format!("table {name} has no columns")));
        }
        for (i, c) in columns.iter().enumerate() {
            if !is_identifier(&c.name) {
                return Err(Error::Schema(format!("invalid column name {:?}", c.name)));
            }
            if columns[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Schema(format!("duplicate column {}", c.name)));
            }
        }
        let pk = columns
            .iter()
            .position(|c| c.name == primary_key)
            .ok_or_else(|| {
                Error::Schema(format!(
                    "primary key {primary_key:?} is not a column of {name}"
                ))
            })?;
        if columns[pk].ty != ColumnType::Integer {
            return Err(Error::Schema(format!(
                "primary key {primary_key} must be INTEGER"
            )));
        }
        Ok(Self {
            name,
            columns,
            primary_key: pk,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn primary_key_index(&self) -> usize {
        self.primary_key
    }

    pub fn primary_key(&self) -> &str {
        &self.columns[self.primary_key].name
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Checks arity and per-column types. TEXT values may not contain line
    /// breaks since every statement occupies exactly one file line.
    pub fn check_values(&self, values: &[Value]) -> Result<()> {
        if values.len() != self.columns.len() {
            return Err(Error::TypeMismatch(format!(
                "table {} has {} columns, got {} values",
                self.name,
                self.columns.len(),
                values.len()
            )));
        }
        for (col, v) in self.columns.iter().zip(values) {
            if v.column_type() != col.ty {
                return Err(Error::TypeMismatch(format!(
                    "column {}.{} is {}, got {}",
                    self.name,
                    col.name,
                    col.ty,
                    v.column_type()
                )));
            }
            if let Value::Text(s) = v {
                if s.contains(['\n', '\r']) {
                    return Err(Error::TypeMismatch(format!(
                        "column {}.{}: TEXT values may not contain line breaks",
                        self.name, col.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Primary-key value of a row that already passed [`check_values`].
    ///
    /// [`check_values`]: TableSchema::check_values
    pub fn key_of(&self, values: &[Value]) -> i64 {
        values[self.primary_key]
            .as_integer()
            .expect("checked rows carry an INTEGER primary key")
    }
}
