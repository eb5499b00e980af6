//! In-memory tables with statement-file durability.
//!
//! A catalog named `db` in directory `d` owns three files:
//!
//! - `d/db.properties`: `version=1` and `name=db`
//! - `d/db.script`: consolidated state written at checkpoint (DDL, then
//!   rows, then deferred encrypted lines)
//! - `d/db.log`: statements appended since the last checkpoint
//!
//! Opening replays `.script` then `.log`. All rows live in memory; received
//! rows are decrypted once on open and re-encrypted once per checkpoint.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::{IndexMap, IndexSet};

use crate::error::{Error, Result};
use crate::schema::{PendingRowId, Row, RowProvenance, TableSchema, Value};
use crate::scriptio::{
    encrypted_line_id, read_logged_statement, serialize_ddl, serialize_insert, write_row_line,
    KeyResolver, LineKind, LoggedStatement,
};

const PROPERTIES_VERSION: &str = "1";

#[derive(Debug, Clone)]
struct StoredRow {
    values: Vec<Value>,
    provenance: RowProvenance,
    /// Last persisted `$id@HEX` line of a received row; re-emitted at
    /// checkpoint if the key cannot be obtained.
    sealed: Option<String>,
}

impl StoredRow {
    fn to_row(&self) -> Row {
        Row {
            values: self.values.clone(),
            provenance: self.provenance,
        }
    }
}

#[derive(Debug)]
struct Table {
    schema: TableSchema,
    rows: BTreeMap<i64, StoredRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Script,
    Log,
}

pub struct Catalog {
    dir: PathBuf,
    name: String,
    tables: IndexMap<String, Table>,
    received: HashMap<PendingRowId, (String, i64)>,
    deferred: IndexSet<String>,
    revoked_on_open: Vec<PendingRowId>,
    log: BufWriter<File>,
    resolver: Arc<dyn KeyResolver>,
    dirty: bool,
}

impl std::fmt::Debug for Catalog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Catalog")
            .field("dir", &self.dir)
            .field("name", &self.name)
            .field("tables", &self.tables.keys().collect::<Vec<_>>())
            .field("deferred", &self.deferred.len())
            .finish_non_exhaustive()
    }
}

fn valid_catalog_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

impl Catalog {
    /// Opens (or creates) catalog `name` in `dir`, replaying `.script` then
    /// `.log`. Encrypted lines are resolved through `resolver`.
    pub fn open(dir: impl AsRef<Path>, name: &str, resolver: Arc<dyn KeyResolver>) -> Result<Self> {
        if !valid_catalog_name(name) {
            return Err(Error::Properties(format!("invalid catalog name {name:?}")));
        }
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let props = file_path(&dir, name, "properties");
        if props.exists() {
            check_properties(&fs::read_to_string(&props)?, name)?;
        } else {
            fs::write(
                &props,
                format!("version={PROPERTIES_VERSION}\nname={name}\n"),
            )?;
        }
        // leftover from a checkpoint interrupted before its rename
        let tmp = file_path(&dir, name, "script.new");
        if tmp.exists() {
            fs::remove_file(&tmp)?;
        }

        let log_path = file_path(&dir, name, "log");
        let mut catalog = Catalog {
            log: BufWriter::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&log_path)?,
            ),
            dir,
            name: name.to_owned(),
            tables: IndexMap::new(),
            received: HashMap::new(),
            deferred: IndexSet::new(),
            revoked_on_open: Vec::new(),
            resolver,
            dirty: false,
        };
        let script_path = catalog.script_path();
        if script_path.exists() {
            let text = fs::read_to_string(&script_path)?;
            catalog.replay(&script_path, &text, Phase::Script)?;
        }
        let log_text = read_log_discarding_torn_tail(&log_path)?;
        catalog.replay(&log_path, &log_text, Phase::Log)?;
        Ok(catalog)
    }

    /// Name of the single catalog in `dir`, if its `.properties` exists.
    pub fn discover(dir: impl AsRef<Path>) -> Result<Option<String>> {
        let mut found = None;
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "properties") {
                if found.is_some() {
                    return Err(Error::Properties(
                        "more than one catalog in directory".into(),
                    ));
                }
                found = path.file_stem().map(|s| s.to_string_lossy().into_owned());
            }
        }
        Ok(found)
    }

    fn replay(&mut self, file: &Path, text: &str, phase: Phase) -> Result<()> {
        for (idx, line) in text.lines().enumerate() {
            self.replay_line(line, phase)
                .map_err(|source| Error::Replay {
                    file: file.to_path_buf(),
                    line: idx + 1,
                    source: Box::new(source),
                })?;
        }
        Ok(())
    }

    fn replay_line(&mut self, line: &str, phase: Phase) -> Result<()> {
        if LineKind::classify(line)? == LineKind::Encrypted {
            let id = encrypted_line_id(line)?;
            // already materialized: a log that outlived its checkpoint
            if self.received.contains_key(&id) {
                return Ok(());
            }
        }
        match read_logged_statement(line, &*self.resolver)? {
            LoggedStatement::Ddl(schema) => match self.tables.get(schema.name()) {
                Some(t) if t.schema == schema => Ok(()),
                Some(_) => Err(Error::DuplicateTable(schema.name().to_owned())),
                None => {
                    self.tables.insert(
                        schema.name().to_owned(),
                        Table {
                            schema,
                            rows: BTreeMap::new(),
                        },
                    );
                    Ok(())
                }
            },
            LoggedStatement::Row { insert, provenance } => {
                let table = self
                    .tables
                    .get_mut(&insert.table)
                    .ok_or_else(|| Error::UnknownTable(insert.table.clone()))?;
                let values = insert.into_row_values(&table.schema)?;
                let key = table.schema.key_of(&values);
                if let Some(existing) = table.rows.get(&key) {
                    if phase == Phase::Log
                        && existing.values == values
                        && existing.provenance == provenance
                    {
                        return Ok(());
                    }
                    return Err(Error::DuplicateKey {
                        table: table.schema.name().to_owned(),
                        key,
                    });
                }
                let sealed = match provenance {
                    RowProvenance::Owned => None,
                    RowProvenance::Received(id) => {
                        self.received
                            .insert(id, (table.schema.name().to_owned(), key));
                        Some(line.to_owned())
                    }
                };
                table.rows.insert(
                    key,
                    StoredRow {
                        values,
                        provenance,
                        sealed,
                    },
                );
                Ok(())
            }
            LoggedStatement::Deferred(line) => {
                self.deferred.insert(line);
                Ok(())
            }
            LoggedStatement::Revoked(id) => {
                self.revoked_on_open.push(id);
                // a revoked row only leaves the files at the next checkpoint
                self.dirty = true;
                Ok(())
            }
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn script_path(&self) -> PathBuf {
        file_path(&self.dir, &self.name, "script")
    }

    pub fn log_path(&self) -> PathBuf {
        file_path(&self.dir, &self.name, "log")
    }

    pub fn properties_path(&self) -> PathBuf {
        file_path(&self.dir, &self.name, "properties")
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    pub fn resolver(&self) -> &Arc<dyn KeyResolver> {
        &self.resolver
    }

    /// Encrypted lines kept verbatim because their key was unreachable.
    pub fn deferred_lines(&self) -> impl Iterator<Item = &str> {
        self.deferred.iter().map(String::as_str)
    }

    /// Pending-row ids whose lines were dropped on open because the key was
    /// denied.
    pub fn revoked_on_open(&self) -> &[PendingRowId] {
        &self.revoked_on_open
    }

    pub fn table_names(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    pub fn schema(&self, table: &str) -> Result<&TableSchema> {
        self.table(table).map(|t| &t.schema)
    }

    pub fn row_count(&self, table: &str) -> Result<usize> {
        self.table(table).map(|t| t.rows.len())
    }

    pub fn total_rows(&self) -> usize {
        self.tables.values().map(|t| t.rows.len()).sum()
    }

    /// Where a received row lives, by its pending-row id.
    pub fn locate_received(&self, id: PendingRowId) -> Option<(&str, i64)> {
        self.received.get(&id).map(|(t, k)| (t.as_str(), *k))
    }

    fn table(&self, name: &str) -> Result<&Table> {
        self.tables
            .get(name)
            .ok_or_else(|| Error::UnknownTable(name.to_owned()))
    }

    fn append_log(&mut self, line: &str) -> Result<()> {
        self.log.write_all(line.as_bytes())?;
        self.log.write_all(b"\n")?;
        self.log.flush()?;
        Ok(())
    }

    pub fn create_table(&mut self, schema: TableSchema) -> Result<()> {
        if self.tables.contains_key(schema.name()) {
            return Err(Error::DuplicateTable(schema.name().to_owned()));
        }
        self.append_log(&serialize_ddl(&schema))?;
        self.tables.insert(
            schema.name().to_owned(),
            Table {
                schema,
                rows: BTreeMap::new(),
            },
        );
        self.dirty = true;
        Ok(())
    }

    /// Adds a row and appends its statement to `.log`. Received rows are
    /// written encrypted, so their key must be obtainable right now.
    pub fn insert_row(
        &mut self,
        table: &str,
        values: Vec<Value>,
        provenance: RowProvenance,
    ) -> Result<()> {
        let t = self.table(table)?;
        t.schema.check_values(&values)?;
        let key = t.schema.key_of(&values);
        if t.rows.contains_key(&key) {
            return Err(Error::DuplicateKey {
                table: table.to_owned(),
                key,
            });
        }
        if let RowProvenance::Received(id) = provenance {
            if self.received.contains_key(&id) {
                return Err(Error::DuplicatePendingRow(id));
            }
        }
        let row = Row { values, provenance };
        let line = write_row_line(&t.schema, &row, &*self.resolver)?.to_line();
        self.append_log(&line)?;

        let sealed = match provenance {
            RowProvenance::Owned => None,
            RowProvenance::Received(id) => {
                self.received.insert(id, (table.to_owned(), key));
                Some(line)
            }
        };
        self.tables
            .get_mut(table)
            .expect("table checked above")
            .rows
            .insert(
                key,
                StoredRow {
                    values: row.values,
                    provenance,
                    sealed,
                },
            );
        self.dirty = true;
        Ok(())
    }

    pub fn get(&self, table: &str, key: i64) -> Result<Option<Row>> {
        Ok(self.table(table)?.rows.get(&key).map(StoredRow::to_row))
    }

    /// All rows of `table` in primary-key order. Purely in memory.
    pub fn scan(&self, table: &str) -> Result<Vec<Row>> {
        self.scan_filtered(table, |_| true)
    }

    pub fn scan_filtered(
        &self,
        table: &str,
        predicate: impl Fn(&[Value]) -> bool,
    ) -> Result<Vec<Row>> {
        Ok(self
            .table(table)?
            .rows
            .values()
            .filter(|r| predicate(&r.values))
            .map(StoredRow::to_row)
            .collect())
    }

    /// Rewrites `.script` from memory through a temporary file, then
    /// truncates `.log`.
    pub fn checkpoint(&mut self) -> Result<()> {
        let tmp = self.write_script_tmp()?;
        fs::rename(&tmp, self.script_path())?;
        if let Ok(d) = File::open(&self.dir) {
            let _ = d.sync_all();
        }
        self.log.flush()?;
        let log = OpenOptions::new()
            .write(true)
            .truncate(true)
            .create(true)
            .open(self.log_path())?;
        self.log = BufWriter::new(log);
        self.dirty = false;
        Ok(())
    }

    /// Runs a checkpoint up to, but not including, the rename of the new
    /// `.script`, as a process killed at that point would.
    #[doc(hidden)]
    pub fn checkpoint_interrupted_before_rename(&mut self) -> Result<PathBuf> {
        self.write_script_tmp()
    }

    fn write_script_tmp(&mut self) -> Result<PathBuf> {
        let tmp = file_path(&self.dir, &self.name, "script.new");
        let mut out = BufWriter::new(File::create(&tmp)?);
        let resolver = Arc::clone(&self.resolver);

        for table in self.tables.values() {
            writeln!(out, "{}", serialize_ddl(&table.schema))?;
        }
        for table in self.tables.values_mut() {
            for stored in table.rows.values_mut() {
                match stored.provenance {
                    RowProvenance::Owned => {
                        writeln!(out, "{}", serialize_insert(&table.schema, &stored.values)?)?;
                    }
                    RowProvenance::Received(_) => {
                        let row = stored.to_row();
                        let line = match write_row_line(&table.schema, &row, &*resolver) {
                            Ok(line) => line.to_line(),
                            Err(Error::KeyUnavailable { .. }) => stored
                                .sealed
                                .clone()
                                .expect("received rows always carry their persisted line"),
                            Err(e) => return Err(e),
                        };
                        writeln!(out, "{line}")?;
                        stored.sealed = Some(line);
                    }
                }
            }
        }
        for line in &self.deferred {
            writeln!(out, "{line}")?;
        }
        let file = out.into_inner().map_err(|e| e.into_error())?;
        file.sync_all()?;
        Ok(tmp)
    }

    /// Flushes the log and releases the catalog without a checkpoint.
    pub fn close(mut self) -> Result<()> {
        self.log.flush()?;
        Ok(())
    }
}

fn file_path(dir: &Path, name: &str, ext: &str) -> PathBuf {
    dir.join(format!("{name}.{ext}"))
}

fn check_properties(text: &str, name: &str) -> Result<()> {
    let mut version = None;
    let mut stored_name = None;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Properties(format!("malformed line {line:?}")))?;
        match k {
            "version" => version = Some(v),
            "name" => stored_name = Some(v),
            _ => {}
        }
    }
    if version != Some(PROPERTIES_VERSION) {
        return Err(Error::Properties(format!(
            "unsupported version {version:?}"
        )));
    }
    if stored_name != Some(name) {
        return Err(Error::Properties(format!(
            "catalog name mismatch: file says {stored_name:?}, opened as {name:?}"
        )));
    }
    Ok(())
}

/// Reads `.log`; a final line without its newline is a torn append and is
/// cut off so later appends start on a fresh line.
fn read_log_discarding_torn_tail(path: &Path) -> Result<String> {
    let mut bytes = fs::read(path)?;
    if !bytes.is_empty() && bytes.last() != Some(&b'\n') {
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        bytes.truncate(keep);
        OpenOptions::new()
            .write(true)
            .open(path)?
            .set_len(keep as u64)?;
    }
    String::from_utf8(bytes)
        .map_err(|e| Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))
}
