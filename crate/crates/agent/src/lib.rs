//! Trusted client agent binding a local catalog to a synchronizer account.
//!
//! Owned rows stay in clear in the local catalog. Sharing a row encrypts its
//! INSERT statement under a fresh row key, mails the ciphertext through the
//! synchronizer and deposits the row key wrapped for the receiver. Receiving
//! decrypts pending rows into the local catalog as `Received` rows, which the
//! catalog persists only in encrypted form. Row keys are kept in an
//! encrypted local cache so catalogs reopen without the synchronizer.

pub mod cache;
pub mod client;
mod resolver;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use cloakdb_core::crypto::{
    self, encrypt_row, generate_row_key, generate_user_keypair, wrap_key, CipherEnvelope,
    CryptoError, UserPublicKey,
};
use cloakdb_core::scriptio::{parse_insert, serialize_insert, KeyResolution, KeyResolver};
use cloakdb_core::{Catalog, PendingRowId, RowProvenance, TableSchema, Value};
use cloakdb_syncd::wire::{b64, PendingRow};
use serde::{Deserialize, Serialize};

pub use cache::{CacheError, KeyCache};
pub use client::{SyncClient, SyncError};
pub use resolver::AgentResolver;

/// Default PBKDF2-HMAC-SHA256 iteration count for the cache master key.
pub const DEFAULT_CACHE_ITERATIONS: u32 = 100_000;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Catalog(#[from] cloakdb_core::Error),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error("crypto: {0}")]
    Crypto(#[from] CryptoError),
    #[error("row {key} of table {table} does not exist")]
    UnknownRow { table: String, key: i64 },
    #[error("row {key} of table {table} was received, only its owner may share it")]
    NotOwned { table: String, key: i64 },
    #[error("cannot share with oneself")]
    SelfShare,
    #[error("sharing stopped after {completed} of {requested} deliveries: {source}")]
    ShareInterrupted {
        completed: usize,
        requested: usize,
        row_ids: Vec<u64>,
        source: Box<AgentError>,
    },
    #[error("outbox I/O: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = AgentError> = std::result::Result<T, E>;

#[derive(Debug, Clone)]
pub struct AgentConfig {
    /// Base URL of the synchronizer, e.g. `http://127.0.0.1:7878`.
    pub sync_url: String,
    pub user_id: String,
    pub password: String,
    pub cache_path: PathBuf,
    pub catalog_dir: PathBuf,
    pub catalog_name: String,
    pub cache_iterations: u32,
    pub timeout: Duration,
}

impl AgentConfig {
    pub fn new(
        sync_url: impl Into<String>,
        user_id: impl Into<String>,
        password: impl Into<String>,
        cache_path: impl Into<PathBuf>,
        catalog_dir: impl Into<PathBuf>,
    ) -> Self {
        AgentConfig {
            sync_url: sync_url.into(),
            user_id: user_id.into(),
            password: password.into(),
            cache_path: cache_path.into(),
            catalog_dir: catalog_dir.into(),
            catalog_name: "db".into(),
            cache_iterations: DEFAULT_CACHE_ITERATIONS,
            timeout: Duration::from_secs(30),
        }
    }

    fn validate(&self) -> Result<()> {
        let empty = [
            ("sync_url", self.sync_url.is_empty()),
            ("user_id", self.user_id.is_empty()),
            ("password", self.password.is_empty()),
            ("cache_path", self.cache_path.as_os_str().is_empty()),
            ("catalog_dir", self.catalog_dir.as_os_str().is_empty()),
            ("catalog_name", self.catalog_name.is_empty()),
        ];
        if let Some((field, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(AgentError::Config(format!("{field} must not be empty")));
        }
        if self.cache_iterations == 0 {
            return Err(AgentError::Config(
                "cache_iterations must be positive".into(),
            ));
        }
        for ext in ["properties", "script", "log", "script.new"] {
            let catalog_file = self
                .catalog_dir
                .join(format!("{}.{ext}", self.catalog_name));
            if catalog_file == self.cache_path {
                return Err(AgentError::Config(
                    "cache_path collides with a catalog file".into(),
                ));
            }
        }
        Ok(())
    }

    fn outbox_path(&self) -> PathBuf {
        self.cache_path.with_extension("outbox.json")
    }
}

/// A delivery whose row reached the synchronizer but whose key deposit did
/// not complete.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnfinishedShare {
    pub row_id: u64,
    pub receiver: String,
    #[serde(with = "b64")]
    pub wrapped_key: Vec<u8>,
    pub expiry_date: Option<DateTime<Utc>>,
}

/// Outcome of one `receive_pending` pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReceiveReport {
    /// Rows decrypted and inserted as `Received`.
    pub inserted: usize,
    /// Rows already present locally from an earlier pass.
    pub already_present: usize,
    /// Rows whose key the synchronizer denied.
    pub denied: usize,
    /// Rows acknowledged but not inserted because they failed to open,
    /// parse or fit the local schema.
    pub quarantined: Vec<u64>,
}

pub struct Agent {
    config: AgentConfig,
    client: Arc<SyncClient>,
    resolver: Arc<AgentResolver>,
    catalog: Option<Catalog>,
    public_keys: HashMap<String, UserPublicKey>,
    outbox: Vec<UnfinishedShare>,
}

impl std::fmt::Debug for Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Agent")
            .field("user_id", &self.config.user_id)
            .field("catalog", &self.catalog)
            .finish_non_exhaustive()
    }
}

impl Agent {
    /// Registers a new user with a fresh key pair, creates its key cache and
    /// opens (or creates) its catalog.
    pub fn register(config: AgentConfig) -> Result<Self> {
        config.validate()?;
        let client = Arc::new(Self::client_for(&config));
        let pair = generate_user_keypair()?;
        client.register(&pair.public.to_bytes())?;
        let cache = KeyCache::create(
            &config.cache_path,
            &config.user_id,
            &config.password,
            config.cache_iterations,
            pair.secret,
        )?;
        Self::assemble(config, client, cache)
    }

    /// Opens an existing agent from its key cache. Needs no network; the
    /// synchronizer is contacted only for keys missing from the cache.
    pub fn open(config: AgentConfig) -> Result<Self> {
        config.validate()?;
        let client = Arc::new(Self::client_for(&config));
        let cache = KeyCache::load(&config.cache_path, &config.user_id, &config.password)?;
        Self::assemble(config, client, cache)
    }

    fn client_for(config: &AgentConfig) -> SyncClient {
        SyncClient::new(
            &config.sync_url,
            &config.user_id,
            &config.password,
            config.timeout,
        )
    }

    fn assemble(config: AgentConfig, client: Arc<SyncClient>, cache: KeyCache) -> Result<Self> {
        let resolver = Arc::new(AgentResolver::new(cache, Arc::clone(&client)));
        let outbox = match fs::read(config.outbox_path()) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| AgentError::Config(format!("unreadable outbox: {e}")))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let mut agent = Agent {
            config,
            client,
            resolver,
            catalog: None,
            public_keys: HashMap::new(),
            outbox,
        };
        agent.open_catalog()?;
        Ok(agent)
    }

    fn open_catalog(&mut self) -> Result<()> {
        let resolver: Arc<dyn KeyResolver> = self.resolver.clone();
        let catalog = Catalog::open(
            &self.config.catalog_dir,
            &self.config.catalog_name,
            resolver,
        )?;
        for id in catalog.revoked_on_open() {
            tracing::info!(row = id.0, "received row dropped, key denied");
        }
        self.catalog = Some(catalog);
        self.resolver.cache().flush()?;
        Ok(())
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn user_id(&self) -> &str {
        &self.config.user_id
    }

    pub fn client(&self) -> &SyncClient {
        &self.client
    }

    pub fn resolver(&self) -> &AgentResolver {
        &self.resolver
    }

    pub fn public_key(&self) -> UserPublicKey {
        self.resolver.cache().secret().public_key()
    }

    pub fn catalog(&self) -> &Catalog {
        self.catalog
            .as_ref()
            .expect("catalog is open outside reopen")
    }

    pub fn catalog_mut(&mut self) -> &mut Catalog {
        self.catalog
            .as_mut()
            .expect("catalog is open outside reopen")
    }

    pub fn create_table(&mut self, schema: TableSchema) -> Result<()> {
        Ok(self.catalog_mut().create_table(schema)?)
    }

    pub fn insert_owned(&mut self, table: &str, values: Vec<Value>) -> Result<()> {
        Ok(self
            .catalog_mut()
            .insert_row(table, values, RowProvenance::Owned)?)
    }

    pub fn checkpoint(&mut self) -> Result<()> {
        self.catalog_mut().checkpoint()?;
        self.resolver.cache().flush()?;
        Ok(())
    }

    /// Closes and reopens the catalog from its files.
    pub fn reopen(&mut self) -> Result<&Catalog> {
        if let Some(c) = self.catalog.take() {
            c.close()?;
        }
        self.open_catalog()?;
        Ok(self.catalog())
    }

    pub fn resolve_key(&self, id: PendingRowId) -> KeyResolution {
        let r = self.resolver.resolve(id);
        if let Err(e) = self.resolver.cache().flush() {
            tracing::warn!(error = %e, "key cache flush failed");
        }
        r
    }

    fn receiver_key(&mut self, user_id: &str) -> Result<UserPublicKey> {
        if let Some(k) = self.public_keys.get(user_id) {
            return Ok(*k);
        }
        let bytes = self.client.public_key(user_id)?;
        let key = UserPublicKey::from_bytes(&bytes)?;
        self.public_keys.insert(user_id.to_owned(), key);
        Ok(key)
    }

    pub fn share_rows(
        &mut self,
        table: &str,
        keys: &[i64],
        receivers: &[&str],
    ) -> Result<Vec<u64>> {
        self.share_rows_until(table, keys, receivers, None)
    }

    /// Shares each selected owned row with each receiver. Every delivery
    /// uses its own row key. Returns the assigned row ids, row-major.
    pub fn share_rows_until(
        &mut self,
        table: &str,
        keys: &[i64],
        receivers: &[&str],
        expiry: Option<DateTime<Utc>>,
    ) -> Result<Vec<u64>> {
        if keys.is_empty() || receivers.is_empty() {
            return Ok(Vec::new());
        }
        if receivers.contains(&self.user_id()) {
            return Err(AgentError::SelfShare);
        }
        let schema = self.catalog().schema(table)?.clone();
        let mut statements = Vec::with_capacity(keys.len());
        for &key in keys {
            let row = self
                .catalog()
                .get(table, key)?
                .ok_or_else(|| AgentError::UnknownRow {
                    table: table.to_owned(),
                    key,
                })?;
            if row.provenance != RowProvenance::Owned {
                return Err(AgentError::NotOwned {
                    table: table.to_owned(),
                    key,
                });
            }
            statements.push(serialize_insert(&schema, &row.values)?);
        }
        let mut public_keys = Vec::with_capacity(receivers.len());
        for r in receivers {
            public_keys.push(self.receiver_key(r)?);
        }

        let requested = statements.len() * receivers.len();
        let mut row_ids = Vec::with_capacity(requested);
        for text in &statements {
            for (receiver, pk) in receivers.iter().zip(&public_keys) {
                if let Err(e) = self.deliver(text, receiver, pk, expiry, &mut row_ids) {
                    return Err(AgentError::ShareInterrupted {
                        completed: row_ids.len(),
                        requested,
                        row_ids,
                        source: Box::new(e),
                    });
                }
            }
        }
        Ok(row_ids)
    }

    fn deliver(
        &mut self,
        text: &str,
        receiver: &str,
        pk: &UserPublicKey,
        expiry: Option<DateTime<Utc>>,
        row_ids: &mut Vec<u64>,
    ) -> Result<()> {
        let key = generate_row_key()?;
        let envelope = encrypt_row(text.as_bytes(), &key)?;
        let wrapped = wrap_key(&key, pk)?;
        let row_id = self.client.send_row(receiver, envelope.to_bytes())?.row_id;
        if let Err(e) = self
            .client
            .deposit_key(row_id, receiver, wrapped.clone(), expiry)
        {
            self.outbox.push(UnfinishedShare {
                row_id,
                receiver: receiver.to_owned(),
                wrapped_key: wrapped,
                expiry_date: expiry,
            });
            self.save_outbox()?;
            return Err(e.into());
        }
        row_ids.push(row_id);
        Ok(())
    }

    fn save_outbox(&self) -> Result<()> {
        let path = self.config.outbox_path();
        if self.outbox.is_empty() {
            match fs::remove_file(&path) {
                Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(e.into()),
                _ => return Ok(()),
            }
        }
        let tmp = path.with_extension("tmp");
        fs::write(
            &tmp,
            serde_json::to_vec(&self.outbox).expect("outbox serializes"),
        )?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    pub fn unfinished_shares(&self) -> &[UnfinishedShare] {
        &self.outbox
    }

    /// Completes interrupted deliveries: deposits the key again, then
    /// re-queues the row in case the receiver already skipped it as denied.
    /// Returns the row ids completed by this call.
    pub fn retry_unfinished(&mut self) -> Result<Vec<u64>> {
        let mut done = Vec::new();
        let mut first_error = None;
        let mut remaining = Vec::new();
        for share in std::mem::take(&mut self.outbox) {
            let attempt = self
                .client
                .deposit_key(
                    share.row_id,
                    &share.receiver,
                    share.wrapped_key.clone(),
                    share.expiry_date,
                )
                .and_then(|_| self.client.resend_row(share.row_id, &share.receiver));
            match attempt {
                Ok(_) => done.push(share.row_id),
                Err(e) => {
                    first_error.get_or_insert(e);
                    remaining.push(share);
                }
            }
        }
        self.outbox = remaining;
        self.save_outbox()?;
        match first_error {
            Some(e) => Err(e.into()),
            None => Ok(done),
        }
    }

    /// Fetches every pending row addressed to this user into the catalog.
    ///
    /// Rows are acknowledged once handled: inserted, found already present,
    /// denied, or quarantined. If the synchronizer becomes unreachable while
    /// fetching keys, rows handled so far are acknowledged and the rest stay
    /// pending.
    pub fn receive_pending(&mut self) -> Result<ReceiveReport> {
        let pending = self.client.pending_rows()?;
        let mut report = ReceiveReport::default();
        let mut handled = Vec::with_capacity(pending.len());
        let mut interrupted = None;
        for row in &pending {
            match self.receive_one(row, &mut report) {
                Ok(()) => handled.push(row.row_id),
                Err(e) => {
                    interrupted = Some(e);
                    break;
                }
            }
        }
        // keys must be durable before the rows they open are acknowledged
        self.resolver.cache().flush()?;
        self.client.acknowledge(&handled)?;
        match interrupted {
            Some(e) => Err(e),
            None => Ok(report),
        }
    }

    fn receive_one(&mut self, row: &PendingRow, report: &mut ReceiveReport) -> Result<()> {
        let id = PendingRowId(row.row_id);
        if self.catalog().locate_received(id).is_some() {
            report.already_present += 1;
            return Ok(());
        }
        let key = match self.resolver.fetch(id)? {
            KeyResolution::Key(k) => k,
            KeyResolution::Denied => {
                report.denied += 1;
                return Ok(());
            }
            KeyResolution::Unreachable => {
                tracing::warn!(row = row.row_id, "quarantined: key does not unwrap");
                report.quarantined.push(row.row_id);
                return Ok(());
            }
        };
        match self.materialize(row, &key) {
            Ok(()) => report.inserted += 1,
            Err(reason) => {
                tracing::warn!(row = row.row_id, sender = %row.sender, %reason, "quarantined");
                self.resolver.cache().remove(id);
                report.quarantined.push(row.row_id);
            }
        }
        Ok(())
    }

    fn materialize(
        &mut self,
        row: &PendingRow,
        key: &crypto::RowKey,
    ) -> std::result::Result<(), String> {
        let envelope = CipherEnvelope::from_bytes(&row.encrypted_row).map_err(|e| e.to_string())?;
        let plain = crypto::decrypt_row(&envelope, key).map_err(|e| e.to_string())?;
        let text = String::from_utf8(plain).map_err(|_| "payload is not UTF-8".to_owned())?;
        let parsed = parse_insert(&text).map_err(|e| e.to_string())?;
        let table = parsed.table.clone();
        let catalog = self.catalog_mut();
        let schema = catalog.schema(&table).map_err(|e| e.to_string())?;
        let values = parsed.into_row_values(schema).map_err(|e| e.to_string())?;
        catalog
            .insert_row(
                &table,
                values,
                RowProvenance::Received(PendingRowId(row.row_id)),
            )
            .map_err(|e| e.to_string())
    }

    /// Deletes the receiver's key for each row. Every id is attempted; the
    /// result lists each id with its outcome.
    pub fn revoke_access(
        &self,
        row_ids: &[u64],
        receiver: &str,
    ) -> Vec<(u64, Result<(), SyncError>)> {
        row_ids
            .iter()
            .map(|&id| (id, self.client.delete_key(id, receiver)))
            .collect()
    }

    /// Drops one cached row key.
    pub fn evict(&self, id: PendingRowId) -> Result<bool> {
        let mut cache = self.resolver.cache();
        let removed = cache.remove(id);
        cache.flush()?;
        Ok(removed)
    }

    /// Re-checks every cached key with the synchronizer and evicts those it
    /// now denies. Returns the evicted ids.
    pub fn revalidate_cache(&self) -> Result<Vec<PendingRowId>> {
        let ids = self.resolver.cache().ids();
        let mut evicted = Vec::new();
        for id in ids {
            if let KeyResolution::Denied = self.resolver.fetch(id)? {
                evicted.push(id);
            }
        }
        self.resolver.cache().flush()?;
        Ok(evicted)
    }

    /// Paths of the catalog's persistent files.
    pub fn catalog_files(&self) -> Vec<PathBuf> {
        let c = self.catalog();
        vec![c.properties_path(), c.script_path(), c.log_path()]
    }

    pub fn cache_path(&self) -> &Path {
        &self.config.cache_path
    }
}

impl Drop for Agent {
    fn drop(&mut self) {
        if let Err(e) = self.resolver.cache().flush() {
            tracing::warn!(error = %e, "key cache flush on drop failed");
        }
    }
}
