//! The agent's key cache: the user's secret key plus every row key it has
//! unwrapped, sealed at rest under a key derived from the user's password.
//!
//! File layout: `CKC1 ‖ salt[16] ‖ iterations: u32 LE ‖ sealed`, where
//! `sealed` is an AES-256-GCM blob whose associated data is the header
//! followed by the user id. The sealed plaintext is
//! `secret[32] ‖ count: u64 LE ‖ (id: u64 LE ‖ key[32]) * count`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use cloakdb_core::crypto::{self, CryptoError, RowKey, UserSecretKey, ROW_KEY_LEN};
use cloakdb_core::PendingRowId;
use pbkdf2::pbkdf2_hmac;
use rand::rngs::OsRng;
use rand::RngCore;
use sha2::Sha256;
use zeroize::Zeroizing;

const MAGIC: &[u8; 4] = b"CKC1";
const SALT_LEN: usize = 16;
const HEADER_LEN: usize = MAGIC.len() + SALT_LEN + 4;
const ENTRY_LEN: usize = 8 + ROW_KEY_LEN;

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("key cache {0} does not exist")]
    Missing(PathBuf),
    #[error("key cache is malformed: {0}")]
    Malformed(&'static str),
    #[error("key cache cannot be opened with these credentials")]
    WrongCredentials,
    #[error("key cache I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("key cache crypto: {0}")]
    Crypto(#[from] CryptoError),
}

pub struct KeyCache {
    path: PathBuf,
    aad_suffix: Vec<u8>,
    salt: [u8; SALT_LEN],
    iterations: u32,
    master: RowKey,
    secret: UserSecretKey,
    keys: BTreeMap<PendingRowId, RowKey>,
    dirty: bool,
}

impl std::fmt::Debug for KeyCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyCache")
            .field("path", &self.path)
            .field("entries", &self.keys.len())
            .finish_non_exhaustive()
    }
}

fn derive_master(password: &str, salt: &[u8], iterations: u32) -> RowKey {
    let mut out = Zeroizing::new([0u8; ROW_KEY_LEN]);
    pbkdf2_hmac::<Sha256>(password.as_bytes(), salt, iterations, &mut *out);
    RowKey::from_bytes(*out)
}

impl KeyCache {
    /// Creates a new cache holding `secret` and writes it to `path`.
    pub fn create(
        path: impl Into<PathBuf>,
        user_id: &str,
        password: &str,
        iterations: u32,
        secret: UserSecretKey,
    ) -> Result<Self, CacheError> {
        let mut salt = [0u8; SALT_LEN];
        OsRng.fill_bytes(&mut salt);
        let mut cache = KeyCache {
            path: path.into(),
            aad_suffix: user_id.as_bytes().to_vec(),
            salt,
            iterations,
            master: derive_master(password, &salt, iterations),
            secret,
            keys: BTreeMap::new(),
            dirty: true,
        };
        cache.flush()?;
        Ok(cache)
    }

    pub fn load(
        path: impl Into<PathBuf>,
        user_id: &str,
        password: &str,
    ) -> Result<Self, CacheError> {
        let path = path.into();
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(CacheError::Missing(path))
            }
            Err(e) => return Err(e.into()),
        };
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(CacheError::Malformed("bad header"));
        }
        let salt: [u8; SALT_LEN] = bytes[4..4 + SALT_LEN].try_into().expect("sized slice");
        let iterations = u32::from_le_bytes(
            bytes[4 + SALT_LEN..HEADER_LEN]
                .try_into()
                .expect("sized slice"),
        );
        if iterations == 0 {
            return Err(CacheError::Malformed("zero iterations"));
        }
        let master = derive_master(password, &salt, iterations);
        let mut aad = bytes[..HEADER_LEN].to_vec();
        aad.extend_from_slice(user_id.as_bytes());
        let plain = Zeroizing::new(
            crypto::open_blob(&bytes[HEADER_LEN..], &master, &aad)
                .map_err(|_| CacheError::WrongCredentials)?,
        );
        if plain.len() < 40 {
            return Err(CacheError::Malformed("short body"));
        }
        let secret = UserSecretKey::from_bytes(&plain[..32])?;
        let count = u64::from_le_bytes(plain[32..40].try_into().expect("sized slice")) as usize;
        let body = &plain[40..];
        if body.len()
            != count
                .checked_mul(ENTRY_LEN)
                .ok_or(CacheError::Malformed("count"))?
        {
            return Err(CacheError::Malformed("entry count mismatch"));
        }
        let keys = body
            .chunks_exact(ENTRY_LEN)
            .map(|c| {
                let id = u64::from_le_bytes(c[..8].try_into().expect("sized slice"));
                Ok((PendingRowId(id), RowKey::from_slice(&c[8..])?))
            })
            .collect::<Result<BTreeMap<_, _>, CryptoError>>()?;
        Ok(KeyCache {
            path,
            aad_suffix: user_id.as_bytes().to_vec(),
            salt,
            iterations,
            master,
            secret,
            keys,
            dirty: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn secret(&self) -> &UserSecretKey {
        &self.secret
    }

    pub fn get(&self, id: PendingRowId) -> Option<RowKey> {
        self.keys.get(&id).cloned()
    }

    pub fn contains(&self, id: PendingRowId) -> bool {
        self.keys.contains_key(&id)
    }

    pub fn insert(&mut self, id: PendingRowId, key: RowKey) {
        if self.keys.get(&id) != Some(&key) {
            self.keys.insert(id, key);
            self.dirty = true;
        }
    }

    pub fn remove(&mut self, id: PendingRowId) -> bool {
        let removed = self.keys.remove(&id).is_some();
        self.dirty |= removed;
        removed
    }

    pub fn ids(&self) -> Vec<PendingRowId> {
        self.keys.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    /// Writes the cache through a temporary file if it changed.
    pub fn flush(&mut self) -> Result<(), CacheError> {
        if !self.dirty {
            return Ok(());
        }
        let mut header = Vec::with_capacity(HEADER_LEN);
        header.extend_from_slice(MAGIC);
        header.extend_from_slice(&self.salt);
        header.extend_from_slice(&self.iterations.to_le_bytes());
        let mut plain = Zeroizing::new(Vec::with_capacity(40 + self.keys.len() * ENTRY_LEN));
        plain.extend_from_slice(&self.secret.to_bytes());
        plain.extend_from_slice(&(self.keys.len() as u64).to_le_bytes());
        for (id, key) in &self.keys {
            plain.extend_from_slice(&id.0.to_le_bytes());
            plain.extend_from_slice(key.as_bytes());
        }
        let mut aad = header.clone();
        aad.extend_from_slice(&self.aad_suffix);
        let sealed = crypto::seal_blob(&plain, &self.master, &aad)?;

        if let Some(parent) = self.path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = self.path.with_extension("tmp");
        let mut f = File::create(&tmp)?;
        f.write_all(&header)?;
        f.write_all(&sealed)?;
        f.sync_all()?;
        drop(f);
        fs::rename(&tmp, &self.path)?;
        self.dirty = false;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cloakdb_core::crypto::{generate_row_key, generate_user_keypair};

    #[test]
    fn round_trip_and_wrong_password() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("keys.cache");
        let pair = generate_user_keypair().unwrap();
        let mut c = KeyCache::create(&path, "alice", "pw", 10, pair.secret.clone()).unwrap();
        let k = generate_row_key().unwrap();
        c.insert(PendingRowId(7), k.clone());
        c.flush().unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(!bytes
            .windows(8)
            .any(|w| k.as_bytes().windows(8).any(|x| x == w)));

        let back = KeyCache::load(&path, "alice", "pw").unwrap();
        assert_eq!(back.get(PendingRowId(7)), Some(k));
        assert_eq!(back.secret().public_key(), pair.public);
        assert!(matches!(
            KeyCache::load(&path, "alice", "nope"),
            Err(CacheError::WrongCredentials)
        ));
        assert!(matches!(
            KeyCache::load(&path, "bob", "pw"),
            Err(CacheError::WrongCredentials)
        ));
        assert!(matches!(
            KeyCache::load(dir.path().join("none"), "alice", "pw"),
            Err(CacheError::Missing(_))
        ));
    }

    #[test]
    fn tampered_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("keys.cache");
        let pair = generate_user_keypair().unwrap();
        KeyCache::create(&path, "a", "pw", 10, pair.secret).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&path, &bytes).unwrap();
        assert!(KeyCache::load(&path, "a", "pw").is_err());
    }

    #[test]
    fn removal_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c");
        let pair = generate_user_keypair().unwrap();
        let mut c = KeyCache::create(&path, "a", "pw", 10, pair.secret).unwrap();
        c.insert(PendingRowId(1), generate_row_key().unwrap());
        c.insert(PendingRowId(2), generate_row_key().unwrap());
        assert!(c.remove(PendingRowId(1)));
        assert!(!c.remove(PendingRowId(1)));
        c.flush().unwrap();
        let back = KeyCache::load(&path, "a", "pw").unwrap();
        assert_eq!(back.ids(), vec![PendingRowId(2)]);
    }
}
