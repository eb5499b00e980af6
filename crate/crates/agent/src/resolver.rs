//! Key resolution for received rows: cache first, then the synchronizer.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use cloakdb_core::crypto::unwrap_key;
use cloakdb_core::scriptio::{KeyResolution, KeyResolver};
use cloakdb_core::PendingRowId;

use crate::cache::KeyCache;
use crate::client::{SyncClient, SyncError};

pub struct AgentResolver {
    cache: Mutex<KeyCache>,
    client: Arc<SyncClient>,
    fetches: AtomicU64,
}

impl AgentResolver {
    pub fn new(cache: KeyCache, client: Arc<SyncClient>) -> Self {
        AgentResolver {
            cache: Mutex::new(cache),
            client,
            fetches: AtomicU64::new(0),
        }
    }

    pub fn cache(&self) -> MutexGuard<'_, KeyCache> {
        self.cache.lock().expect("key cache poisoned")
    }

    /// Number of key fetches sent to the synchronizer.
    pub fn fetches(&self) -> u64 {
        self.fetches.load(Ordering::Relaxed)
    }

    /// Asks the synchronizer for the key of `id`, bypassing the cache.
    /// A denial evicts any cached copy. A wrapped key that fails to unwrap
    /// reports `Unreachable` so the row is retained rather than dropped.
    pub fn fetch(&self, id: PendingRowId) -> Result<KeyResolution, SyncError> {
        self.fetches.fetch_add(1, Ordering::Relaxed);
        match self.client.decrypting_key(id.0)? {
            None => {
                self.cache().remove(id);
                Ok(KeyResolution::Denied)
            }
            Some(dk) => {
                let mut cache = self.cache();
                match unwrap_key(&dk.wrapped_key, cache.secret()) {
                    Ok(key) => {
                        cache.insert(id, key.clone());
                        Ok(KeyResolution::Key(key))
                    }
                    Err(e) => {
                        tracing::warn!(row = id.0, error = %e, "served key does not unwrap");
                        Ok(KeyResolution::Unreachable)
                    }
                }
            }
        }
    }
}

impl KeyResolver for AgentResolver {
    fn resolve(&self, id: PendingRowId) -> KeyResolution {
        if let Some(key) = self.cache().get(id) {
            return KeyResolution::Key(key);
        }
        match self.fetch(id) {
            Ok(r) => r,
            Err(e) => {
                tracing::debug!(row = id.0, error = %e, "key fetch failed");
                KeyResolution::Unreachable
            }
        }
    }
}
