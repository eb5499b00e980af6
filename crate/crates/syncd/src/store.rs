//! The synchronizer's three tables and their journal.
//!
//! Every mutation is validated against the in-memory tables, appended to
//! `syncd.journal` as one JSON line, and only then applied. On start the
//! journal is replayed; when it grows well past the live record count it is
//! rewritten as a snapshot through a temporary file.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::wire::{self, b64};

const JOURNAL: &str = "syncd.journal";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Forbidden(String),
    #[error("no decrypting key available")]
    Denied,
    #[error("journal: {0}")]
    Io(#[from] std::io::Error),
    #[error("journal line {line}: {message}")]
    CorruptJournal { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    #[serde(with = "b64")]
    pub salt: Vec<u8>,
    #[serde(with = "b64")]
    pub digest: Vec<u8>,
    pub iterations: u32,
    #[serde(with = "b64")]
    pub public_key: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingRowRecord {
    pub row_id: u64,
    pub submission_date: DateTime<Utc>,
    pub sender: String,
    pub receiver: String,
    #[serde(with = "b64")]
    pub encrypted_row: Vec<u8>,
    pub delivered: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRecord {
    pub id_row: u64,
    pub sender: String,
    pub receiver: String,
    pub expiry_date: Option<DateTime<Utc>>,
    #[serde(with = "b64")]
    pub wrapped_key: Vec<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Event {
    Meta { next_row_id: u64 },
    User(UserRecord),
    Row(PendingRowRecord),
    Ack { row_id: u64 },
    Requeue { row_id: u64 },
    Key(KeyRecord),
    KeyDeleted { id_row: u64, receiver: String },
}

#[derive(Debug, Default)]
struct Tables {
    users: BTreeMap<String, UserRecord>,
    rows: BTreeMap<u64, PendingRowRecord>,
    keys: HashMap<(u64, String), KeyRecord>,
    next_row_id: u64,
}

impl Tables {
    fn apply(&mut self, event: Event) {
        match event {
            Event::Meta { next_row_id } => self.next_row_id = self.next_row_id.max(next_row_id),
            Event::User(u) => {
                self.users.insert(u.user_id.clone(), u);
            }
            Event::Row(r) => {
                self.next_row_id = self.next_row_id.max(r.row_id + 1);
                self.rows.insert(r.row_id, r);
            }
            Event::Ack { row_id } => {
                if let Some(r) = self.rows.get_mut(&row_id) {
                    r.delivered = true;
                }
            }
            Event::Requeue { row_id } => {
                if let Some(r) = self.rows.get_mut(&row_id) {
                    r.delivered = false;
                }
            }
            Event::Key(k) => {
                self.keys.insert((k.id_row, k.receiver.clone()), k);
            }
            Event::KeyDeleted { id_row, receiver } => {
                self.keys.remove(&(id_row, receiver));
            }
        }
    }

    fn live_records(&self) -> usize {
        self.users.len() + self.rows.len() + self.keys.len()
    }
}

pub struct Store {
    dir: PathBuf,
    tables: Tables,
    journal: BufWriter<File>,
    journal_events: usize,
    compact_min_events: usize,
}

fn journal_path(dir: &Path) -> PathBuf {
    dir.join(JOURNAL)
}

impl Store {
    pub fn open(dir: impl AsRef<Path>, compact_min_events: usize) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let path = journal_path(&dir);
        let mut tables = Tables::default();
        let mut events = 0;
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            let mut lines = reader.lines().enumerate().peekable();
            while let Some((idx, line)) = lines.next() {
                let line = line?;
                let is_last = lines.peek().is_none();
                match serde_json::from_str::<Event>(&line) {
                    Ok(ev) => {
                        tables.apply(ev);
                        events += 1;
                    }
                    // a torn final append is dropped; anything else is fatal
                    Err(_) if is_last => {
                        tracing::warn!(line = idx + 1, "discarding torn journal tail");
                    }
                    Err(e) => {
                        return Err(StoreError::CorruptJournal {
                            line: idx + 1,
                            message: e.to_string(),
                        })
                    }
                }
            }
        }
        let mut store = Store {
            journal: BufWriter::new(OpenOptions::new().create(true).append(true).open(&path)?),
            dir,
            tables,
            journal_events: events,
            compact_min_events,
        };
        // rewrite once so a torn tail never sits in front of new appends
        store.compact()?;
        Ok(store)
    }

    pub fn data_dir(&self) -> &Path {
        &self.dir
    }

    fn record(&mut self, event: Event) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(&event).expect("events serialize");
        line.push(b'\n');
        self.journal.write_all(&line)?;
        self.journal.flush()?;
        self.journal_events += 1;
        self.tables.apply(event);
        if self.journal_events > self.compact_min_events.max(2 * self.tables.live_records()) {
            self.compact()?;
        }
        Ok(())
    }

    /// Rewrites the journal as a minimal snapshot of the live tables.
    pub fn compact(&mut self) -> Result<(), StoreError> {
        let path = journal_path(&self.dir);
        let tmp = path.with_extension("journal.new");
        let mut out = BufWriter::new(File::create(&tmp)?);
        let mut n = 0;
        let mut put = |ev: &Event, out: &mut BufWriter<File>| -> std::io::Result<()> {
            serde_json::to_writer(&mut *out, ev).expect("events serialize");
            out.write_all(b"\n")?;
            n += 1;
            Ok(())
        };
        put(
            &Event::Meta {
                next_row_id: self.tables.next_row_id,
            },
            &mut out,
        )?;
        for u in self.tables.users.values() {
            put(&Event::User(u.clone()), &mut out)?;
        }
        for r in self.tables.rows.values() {
            put(&Event::Row(r.clone()), &mut out)?;
        }
        let mut keys: Vec<&KeyRecord> = self.tables.keys.values().collect();
        keys.sort_by(|a, b| (a.id_row, &a.receiver).cmp(&(b.id_row, &b.receiver)));
        for k in keys {
            put(&Event::Key(k.clone()), &mut out)?;
        }
        let file = out.into_inner().map_err(|e| e.into_error())?;
        file.sync_all()?;
        drop(file);
        fs::rename(&tmp, &path)?;
        self.journal = BufWriter::new(OpenOptions::new().append(true).open(&path)?);
        self.journal_events = n;
        Ok(())
    }

    pub fn user(&self, user_id: &str) -> Option<&UserRecord> {
        self.tables.users.get(user_id)
    }

    pub fn register_user(&mut self, record: UserRecord) -> Result<(), StoreError> {
        if self.tables.users.contains_key(&record.user_id) {
            return Err(StoreError::Conflict(format!(
                "user {} already registered",
                record.user_id
            )));
        }
        self.record(Event::User(record))
    }

    pub fn public_key(&self, user_id: &str) -> Result<&[u8], StoreError> {
        self.tables
            .users
            .get(user_id)
            .map(|u| u.public_key.as_slice())
            .ok_or_else(|| StoreError::NotFound(format!("unknown user {user_id}")))
    }

    pub fn all_users(&self) -> Vec<wire::UserEntry> {
        self.tables
            .users
            .values()
            .map(|u| wire::UserEntry {
                user_id: u.user_id.clone(),
                public_key: u.public_key.clone(),
            })
            .collect()
    }

    pub fn send_row(
        &mut self,
        sender: &str,
        receiver: &str,
        encrypted_row: Vec<u8>,
        now: DateTime<Utc>,
    ) -> Result<(u64, DateTime<Utc>), StoreError> {
        if encrypted_row.is_empty() {
            return Err(StoreError::BadRequest(
                "encrypted_row must not be empty".into(),
            ));
        }
        if sender == receiver {
            return Err(StoreError::BadRequest(
                "sender and receiver must differ".into(),
            ));
        }
        if !self.tables.users.contains_key(receiver) {
            return Err(StoreError::NotFound(format!("unknown receiver {receiver}")));
        }
        let row_id = self.tables.next_row_id;
        self.record(Event::Row(PendingRowRecord {
            row_id,
            submission_date: now,
            sender: sender.to_owned(),
            receiver: receiver.to_owned(),
            encrypted_row,
            delivered: false,
        }))?;
        Ok((row_id, now))
    }

    pub fn pending_for(&self, receiver: &str) -> Vec<wire::PendingRow> {
        self.tables
            .rows
            .values()
            .filter(|r| r.receiver == receiver && !r.delivered)
            .map(|r| wire::PendingRow {
                row_id: r.row_id,
                submission_date: r.submission_date,
                sender: r.sender.clone(),
                receiver: r.receiver.clone(),
                encrypted_row: r.encrypted_row.clone(),
            })
            .collect()
    }

    pub fn pending_row(&self, row_id: u64) -> Option<&PendingRowRecord> {
        self.tables.rows.get(&row_id)
    }

    /// Marks rows addressed to `receiver` as delivered. All ids are checked
    /// before any is applied.
    pub fn acknowledge(&mut self, receiver: &str, row_ids: &[u64]) -> Result<usize, StoreError> {
        for id in row_ids {
            match self.tables.rows.get(id) {
                Some(r) if r.receiver == receiver => {}
                _ => {
                    return Err(StoreError::NotFound(format!(
                        "no pending row {id} for {receiver}"
                    )))
                }
            }
        }
        let mut n = 0;
        for &row_id in row_ids {
            if !self.tables.rows[&row_id].delivered {
                self.record(Event::Ack { row_id })?;
                n += 1;
            }
        }
        Ok(n)
    }

    pub fn resend_row(
        &mut self,
        sender: &str,
        row_id: u64,
        receiver: &str,
    ) -> Result<u64, StoreError> {
        let row = self
            .tables
            .rows
            .get(&row_id)
            .ok_or_else(|| StoreError::NotFound(format!("unknown row {row_id}")))?;
        if row.sender != sender {
            return Err(StoreError::Forbidden(format!(
                "row {row_id} was not sent by {sender}"
            )));
        }
        if row.receiver != receiver {
            return Err(StoreError::BadRequest(format!(
                "row {row_id} is addressed to another receiver"
            )));
        }
        if row.delivered {
            self.record(Event::Requeue { row_id })?;
        }
        Ok(row_id)
    }

    pub fn deposit_key(
        &mut self,
        sender: &str,
        key: wire::DepositKeyRequest,
    ) -> Result<(), StoreError> {
        let row = self
            .tables
            .rows
            .get(&key.id_row)
            .ok_or_else(|| StoreError::NotFound(format!("unknown row {}", key.id_row)))?;
        if row.sender != sender {
            return Err(StoreError::Forbidden(format!(
                "row {} was not sent by {sender}",
                key.id_row
            )));
        }
        if row.receiver != key.receiver {
            return Err(StoreError::BadRequest(format!(
                "row {} is not addressed to {}",
                key.id_row, key.receiver
            )));
        }
        if key.wrapped_key.is_empty() {
            return Err(StoreError::BadRequest(
                "wrapped_key must not be empty".into(),
            ));
        }
        self.record(Event::Key(KeyRecord {
            id_row: key.id_row,
            sender: sender.to_owned(),
            receiver: key.receiver,
            expiry_date: key.expiry_date,
            wrapped_key: key.wrapped_key,
        }))
    }

    /// Key for `(id_row, receiver)`; expired keys answer `Denied` but stay
    /// stored.
    pub fn decrypting_key(
        &self,
        receiver: &str,
        id_row: u64,
        now: DateTime<Utc>,
    ) -> Result<wire::DecryptingKey, StoreError> {
        match self.tables.keys.get(&(id_row, receiver.to_owned())) {
            Some(k) if k.expiry_date.is_none_or(|exp| exp > now) => Ok(wire::DecryptingKey {
                id_row: k.id_row,
                sender: k.sender.clone(),
                receiver: k.receiver.clone(),
                expiry_date: k.expiry_date,
                wrapped_key: k.wrapped_key.clone(),
            }),
            _ => Err(StoreError::Denied),
        }
    }

    pub fn delete_key(
        &mut self,
        sender: &str,
        id_row: u64,
        receiver: &str,
    ) -> Result<(), StoreError> {
        let key = self
            .tables
            .keys
            .get(&(id_row, receiver.to_owned()))
            .ok_or_else(|| {
                StoreError::NotFound(format!("no key for row {id_row} and {receiver}"))
            })?;
        if key.sender != sender {
            return Err(StoreError::Forbidden(format!(
                "only the sender may delete the key of row {id_row}"
            )));
        }
        self.record(Event::KeyDeleted {
            id_row,
            receiver: receiver.to_owned(),
        })
    }

    pub fn next_row_id(&self) -> u64 {
        self.tables.next_row_id
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user(id: &str) -> UserRecord {
        UserRecord {
            user_id: id.into(),
            salt: vec![1; 16],
            digest: vec![2; 32],
            iterations: 1,
            public_key: vec![id.len() as u8; 32],
        }
    }

    fn store(dir: &Path) -> Store {
        Store::open(dir, 16).unwrap()
    }

    #[test]
    fn row_ids_survive_restart_and_compaction() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = store(dir.path());
        s.register_user(user("u1")).unwrap();
        s.register_user(user("u22")).unwrap();
        let mut last = 0;
        for i in 0..40 {
            let (id, _) = s
                .send_row("u1", "u22", vec![i as u8 + 1], Utc::now())
                .unwrap();
            assert!(i == 0 || id > last);
            last = id;
        }
        drop(s);
        let mut s = store(dir.path());
        let (id, _) = s.send_row("u1", "u22", vec![9], Utc::now()).unwrap();
        assert!(id > last);
        assert_eq!(s.pending_for("u22").len(), 41);
    }

    #[test]
    fn ack_requeue_and_key_lifecycle() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = store(dir.path());
        s.register_user(user("a")).unwrap();
        s.register_user(user("bb")).unwrap();
        let (id, _) = s.send_row("a", "bb", vec![7], Utc::now()).unwrap();
        s.deposit_key(
            "a",
            wire::DepositKeyRequest {
                id_row: id,
                receiver: "bb".into(),
                wrapped_key: vec![1, 2],
                expiry_date: None,
            },
        )
        .unwrap();
        assert_eq!(s.acknowledge("bb", &[id]).unwrap(), 1);
        assert!(s.pending_for("bb").is_empty());
        assert!(matches!(
            s.acknowledge("a", &[id]),
            Err(StoreError::NotFound(_))
        ));
        s.resend_row("a", id, "bb").unwrap();
        assert_eq!(s.pending_for("bb").len(), 1);
        assert!(s.decrypting_key("bb", id, Utc::now()).is_ok());
        s.delete_key("a", id, "bb").unwrap();
        assert!(matches!(
            s.decrypting_key("bb", id, Utc::now()),
            Err(StoreError::Denied)
        ));
        // the pending row is untouched by key deletion
        assert!(s.pending_row(id).is_some());
        drop(s);
        let s = store(dir.path());
        assert!(matches!(
            s.decrypting_key("bb", id, Utc::now()),
            Err(StoreError::Denied)
        ));
        assert_eq!(s.pending_for("bb").len(), 1);
    }

    #[test]
    fn torn_journal_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = store(dir.path());
        s.register_user(user("a")).unwrap();
        drop(s);
        let mut f = OpenOptions::new()
            .append(true)
            .open(journal_path(dir.path()))
            .unwrap();
        f.write_all(b"{\"op\":\"user\",\"user_id\":").unwrap();
        drop(f);
        let s = store(dir.path());
        assert!(s.user("a").is_some());
    }
}
