use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::RwLock;

use crate::crypto::RowKey;
use crate::error::KeyUnavailable;
use crate::schema::PendingRowId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeyResolution {
    Key(RowKey),
    /// The synchronizer answered and holds no key for this row.
    Denied,
    /// No answer could be obtained.
    Unreachable,
}

impl KeyResolution {
    pub fn into_key(self) -> Result<RowKey, KeyUnavailable> {
        match self {
            KeyResolution::Key(k) => Ok(k),
            KeyResolution::Denied => Err(KeyUnavailable::Denied),
            KeyResolution::Unreachable => Err(KeyUnavailable::Unreachable),
        }
    }
}

/// Source of row keys for encrypted lines. Implementations may block on the
/// network.
pub trait KeyResolver: Send + Sync {
    fn resolve(&self, id: PendingRowId) -> KeyResolution;
}

/// Resolver for catalogs that only hold owned rows: every lookup is
/// `Unreachable`, so stray encrypted lines are kept rather than dropped.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoKeys;

impl KeyResolver for NoKeys {
    fn resolve(&self, _id: PendingRowId) -> KeyResolution {
        KeyResolution::Unreachable
    }
}

/// In-memory resolver with a switchable "online" flag and a lookup counter.
/// Missing ids answer `Denied` while online.
#[derive(Debug, Default)]
pub struct MemoryKeyResolver {
    keys: RwLock<HashMap<PendingRowId, RowKey>>,
    offline: AtomicBool,
    lookups: AtomicU64,
}

impl MemoryKeyResolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, id: PendingRowId, key: RowKey) {
        self.keys.write().expect("resolver lock").insert(id, key);
    }

    pub fn remove(&self, id: PendingRowId) -> Option<RowKey> {
        self.keys.write().expect("resolver lock").remove(&id)
    }

    pub fn set_online(&self, online: bool) {
        self.offline.store(!online, Ordering::SeqCst);
    }

    pub fn lookups(&self) -> u64 {
        self.lookups.load(Ordering::SeqCst)
    }
}

impl KeyResolver for MemoryKeyResolver {
    fn resolve(&self, id: PendingRowId) -> KeyResolution {
        self.lookups.fetch_add(1, Ordering::SeqCst);
        if self.offline.load(Ordering::SeqCst) {
            return KeyResolution::Unreachable;
        }
        match self.keys.read().expect("resolver lock").get(&id) {
            Some(k) => KeyResolution::Key(k.clone()),
            None => KeyResolution::Denied,
        }
    }
}

impl<R: KeyResolver + ?Sized> KeyResolver for std::sync::Arc<R> {
    fn resolve(&self, id: PendingRowId) -> KeyResolution {
        (**self).resolve(id)
    }
}
