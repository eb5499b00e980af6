use crate::error::{Error, Result};
use crate::schema::{TableSchema, Value};

use super::lexer::{write_literal, Cursor};

/// A clear `INSERT` statement as read from a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedInsert {
    pub table: String,
    pub columns: Vec<String>,
    pub values: Vec<Value>,
}

/// Canonical text of one row:
/// `INSERT INTO <table>(<c1>,<c2>) VALUES(<v1>,<v2>);`
pub fn serialize_insert(schema: &TableSchema, values: &[Value]) -> Result<String> {
    schema.check_values(values)?;
    let mut out = String::with_capacity(32 + 16 * values.len());
    out.push_str("INSERT INTO ");
    out.push_str(schema.name());
    out.push('(');
    for (i, c) in schema.columns().iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&c.name);
    }
    out.push_str(") VALUES(");
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_literal(&mut out, v);
    }
    out.push_str(");");
    Ok(out)
}

pub fn parse_insert(text: &str) -> Result<ParsedInsert> {
    let mut cur = Cursor::new(text);
    cur.keyword("INSERT")?;
    cur.keyword("INTO")?;
    let table = cur.identifier()?.to_owned();
    cur.punct(b'(')?;
    let mut columns = vec![cur.identifier()?.to_owned()];
    while cur.try_punct(b',') {
        columns.push(cur.identifier()?.to_owned());
    }
    cur.punct(b')')?;
    cur.keyword("VALUES")?;
    cur.punct(b'(')?;
    let values_col = cur.column();
    let mut values = vec![cur.literal()?];
    while cur.try_punct(b',') {
        values.push(cur.literal()?);
    }
    cur.punct(b')')?;
    cur.punct(b';')?;
    cur.finish()?;
    if values.len() != columns.len() {
        return Err(Error::parse(
            values_col,
            format!("{} columns but {} values", columns.len(), values.len()),
        ));
    }
    Ok(ParsedInsert {
        table,
        columns,
        values,
    })
}

impl ParsedInsert {
    /// Reorders the values into schema column order and type-checks them.
    pub fn into_row_values(self, schema: &TableSchema) -> Result<Vec<Value>> {
        if self.table != schema.name() {
            return Err(Error::UnknownTable(self.table));
        }
        if self.columns.len() != schema.columns().len() {
            return Err(Error::TypeMismatch(format!(
                "insert into {} names {} columns, table has {}",
                self.table,
                self.columns.len(),
                schema.columns().len()
            )));
        }
        let mut slots: Vec<Option<Value>> = vec![None; schema.columns().len()];
        for (name, value) in self.columns.into_iter().zip(self.values) {
            let idx = schema.column_index(&name).ok_or_else(|| {
                Error::TypeMismatch(format!("no column {name} in table {}", schema.name()))
            })?;
            if slots[idx].replace(value).is_some() {
                return Err(Error::TypeMismatch(format!("column {name} given twice")));
            }
        }
        let values: Vec<Value> = slots
            .into_iter()
            .map(|v| v.expect("all slots filled"))
            .collect();
        schema.check_values(&values)?;
        Ok(values)
    }
}
