use crate::error::{Error, Result};
use crate::schema::{ColumnType, TableSchema};

use super::lexer::Cursor;

/// `CREATE TABLE <name>(<col> <TYPE>[ PRIMARY KEY],...);`
pub fn serialize_ddl(schema: &TableSchema) -> String {
    let mut out = String::from("CREATE TABLE ");
    out.push_str(schema.name());
    out.push('(');
    for (i, c) in schema.columns().iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&c.name);
        out.push(' ');
        out.push_str(c.ty.keyword());
        if i == schema.primary_key_index() {
            out.push_str(" PRIMARY KEY");
        }
    }
    out.push_str(");");
    out
}

pub fn parse_ddl(text: &str) -> Result<TableSchema> {
    let mut cur = Cursor::new(text);
    cur.keyword("CREATE")?;
    cur.keyword("TABLE")?;
    let name = cur.identifier()?.to_owned();
    cur.punct(b'(')?;
    let mut columns = Vec::new();
    let mut pk: Option<String> = None;
    loop {
        let col = cur.identifier()?.to_owned();
        let ty_col = cur.column();
        let ty_word = cur.identifier()?;
        let ty = ColumnType::from_keyword(ty_word)
            .ok_or_else(|| Error::parse(ty_col, format!("unknown column type {ty_word}")))?;
        if cur.try_keyword("PRIMARY") {
            let col_at = cur.column();
            cur.keyword("KEY")?;
            if pk.replace(col.clone()).is_some() {
                return Err(Error::parse(col_at, "more than one PRIMARY KEY"));
            }
        }
        columns.push((col, ty));
        if !cur.try_punct(b',') {
            break;
        }
    }
    cur.punct(b')')?;
    cur.punct(b';')?;
    cur.finish()?;
    let pk = pk.ok_or_else(|| Error::Schema(format!("table {name} has no PRIMARY KEY")))?;
    TableSchema::new(name, columns, &pk)
}
