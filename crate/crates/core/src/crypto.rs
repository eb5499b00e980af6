//! Row keys, authenticated row encryption, and public-key wrapping of row keys.
//!
//! Rows are sealed with AES-256-GCM under a per-row [`RowKey`] and a fresh
//! 96-bit random nonce. The serialized [`CipherEnvelope`] is
//! `nonce ‖ ciphertext ‖ tag`, which is what ends up hex-encoded in
//! `$id@HEX` statement lines and in the synchronizer mailbox.
//!
//! Row keys are handed to receivers wrapped under their X25519 public key:
//! an ephemeral Diffie-Hellman exchange feeds HKDF-SHA256, and the derived
//! key-encryption key seals the row key with AES-256-GCM.

use std::fmt;

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use hkdf::Hkdf;
use rand::rngs::OsRng;
use rand::RngCore;
use sha2::Sha256;
use x25519_dalek::{PublicKey, StaticSecret};
use zeroize::{Zeroize, ZeroizeOnDrop};

pub const ROW_KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
pub const PUBLIC_KEY_LEN: usize = 32;

const WRAP_VERSION: u8 = 1;
const WRAP_INFO: &[u8] = b"cloakdb row-key wrap v1";
/// version ‖ ephemeral public key ‖ nonce ‖ sealed row key ‖ tag
pub const WRAPPED_KEY_LEN: usize = 1 + PUBLIC_KEY_LEN + NONCE_LEN + ROW_KEY_LEN + TAG_LEN;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("entropy source failure: {0}")]
    Entropy(String),
    #[error("plaintext must not be empty")]
    EmptyPlaintext,
    #[error("malformed {0}")]
    Malformed(&'static str),
    #[error("authentication failed")]
    Authentication,
    #[error("invalid public key")]
    InvalidPublicKey,
}

fn fill_random(buf: &mut [u8]) -> Result<(), CryptoError> {
    OsRng
        .try_fill_bytes(buf)
        .map_err(|e| CryptoError::Entropy(e.to_string()))
}

/// Symmetric key protecting exactly one shared row version.
#[derive(Clone, PartialEq, Eq, Zeroize, ZeroizeOnDrop)]
pub struct RowKey([u8; ROW_KEY_LEN]);

impl RowKey {
    pub fn from_bytes(bytes: [u8; ROW_KEY_LEN]) -> Self {
        Self(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; ROW_KEY_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::Malformed("row key"))?;
        Ok(Self(arr))
    }

    pub fn as_bytes(&self) -> &[u8; ROW_KEY_LEN] {
        &self.0
    }
}

impl fmt::Debug for RowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("RowKey(..)")
    }
}

/// Authenticated ciphertext of one row: `nonce ‖ ciphertext ‖ tag`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherEnvelope {
    nonce: [u8; NONCE_LEN],
    sealed: Vec<u8>,
}

impl CipherEnvelope {
    pub fn nonce(&self) -> &[u8; NONCE_LEN] {
        &self.nonce
    }

    /// Ciphertext followed by the 16-byte tag.
    pub fn sealed(&self) -> &[u8] {
        &self.sealed
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(NONCE_LEN + self.sealed.len());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.sealed);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < NONCE_LEN + TAG_LEN {
            return Err(CryptoError::Malformed("cipher envelope"));
        }
        let (nonce, sealed) = bytes.split_at(NONCE_LEN);
        Ok(Self {
            nonce: nonce.try_into().expect("split at NONCE_LEN"),
            sealed: sealed.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        NONCE_LEN + self.sealed.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn generate_row_key() -> Result<RowKey, CryptoError> {
    let mut bytes = [0u8; ROW_KEY_LEN];
    fill_random(&mut bytes)?;
    Ok(RowKey(bytes))
}

fn seal_raw(
    key: &[u8; ROW_KEY_LEN],
    nonce: [u8; NONCE_LEN],
    plaintext: &[u8],
    aad: &[u8],
) -> CipherEnvelope {
    let cipher = Aes256Gcm::new(key.into());
    let sealed = cipher
        .encrypt(
            Nonce::from_slice(&nonce),
            Payload {
                msg: plaintext,
                aad,
            },
        )
        .expect("AES-GCM encryption of in-memory buffers cannot fail");
    CipherEnvelope { nonce, sealed }
}

fn open_raw(
    key: &[u8; ROW_KEY_LEN],
    envelope: &CipherEnvelope,
    aad: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    let cipher = Aes256Gcm::new(key.into());
    cipher
        .decrypt(
            Nonce::from_slice(&envelope.nonce),
            Payload {
                msg: &envelope.sealed,
                aad,
            },
        )
        .map_err(|_| CryptoError::Authentication)
}

/// Encrypts one serialized row under `key` with a fresh random nonce.
pub fn encrypt_row(plaintext: &[u8], key: &RowKey) -> Result<CipherEnvelope, CryptoError> {
    if plaintext.is_empty() {
        return Err(CryptoError::EmptyPlaintext);
    }
    let mut nonce = [0u8; NONCE_LEN];
    fill_random(&mut nonce)?;
    stats::record_encrypt();
    Ok(seal_raw(&key.0, nonce, plaintext, &[]))
}

/// Deterministic variant of [`encrypt_row`] with a caller-chosen nonce and
/// associated data. Only meant for known-answer tests; reusing a nonce under
/// one key breaks GCM.
pub fn encrypt_with_nonce(
    plaintext: &[u8],
    key: &RowKey,
    nonce: [u8; NONCE_LEN],
    aad: &[u8],
) -> CipherEnvelope {
    seal_raw(&key.0, nonce, plaintext, aad)
}

pub fn decrypt_row(envelope: &CipherEnvelope, key: &RowKey) -> Result<Vec<u8>, CryptoError> {
    stats::record_decrypt();
    open_raw(&key.0, envelope, &[])
}

/// Seals an arbitrary blob (for local at-rest protection) without touching
/// the row counters.
pub fn seal_blob(plaintext: &[u8], key: &RowKey, aad: &[u8]) -> Result<Vec<u8>, CryptoError> {
    let mut nonce = [0u8; NONCE_LEN];
    fill_random(&mut nonce)?;
    Ok(seal_raw(&key.0, nonce, plaintext, aad).to_bytes())
}

pub fn open_blob(sealed: &[u8], key: &RowKey, aad: &[u8]) -> Result<Vec<u8>, CryptoError> {
    let envelope = CipherEnvelope::from_bytes(sealed)?;
    open_raw(&key.0, &envelope, aad)
}

/// Serialized X25519 public key of a registered user.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct UserPublicKey([u8; PUBLIC_KEY_LEN]);

impl UserPublicKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; PUBLIC_KEY_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::InvalidPublicKey)?;
        Ok(Self(arr))
    }

    pub fn to_bytes(&self) -> [u8; PUBLIC_KEY_LEN] {
        self.0
    }
}

impl fmt::Debug for UserPublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "UserPublicKey({})", hex::encode(&self.0[..8]))
    }
}

/// X25519 secret key; carries its public half so unwrapping needs no
/// base-point multiplication.
#[derive(Clone, Zeroize, ZeroizeOnDrop)]
pub struct UserSecretKey {
    secret: [u8; 32],
    public: [u8; PUBLIC_KEY_LEN],
}

impl UserSecretKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let secret: [u8; 32] = bytes
            .try_into()
            .map_err(|_| CryptoError::Malformed("secret key"))?;
        let public = PublicKey::from(&StaticSecret::from(secret)).to_bytes();
        Ok(Self { secret, public })
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.secret
    }

    pub fn public_key(&self) -> UserPublicKey {
        UserPublicKey(self.public)
    }
}

impl fmt::Debug for UserSecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("UserSecretKey(..)")
    }
}

#[derive(Debug, Clone)]
pub struct UserKeyPair {
    pub public: UserPublicKey,
    pub secret: UserSecretKey,
}

pub fn generate_user_keypair() -> Result<UserKeyPair, CryptoError> {
    let mut bytes = [0u8; 32];
    fill_random(&mut bytes)?;
    let secret = UserSecretKey::from_bytes(&bytes)?;
    bytes.zeroize();
    Ok(UserKeyPair {
        public: secret.public_key(),
        secret,
    })
}

fn derive_kek(
    shared: &[u8; 32],
    ephemeral: &[u8; PUBLIC_KEY_LEN],
    receiver: &[u8; PUBLIC_KEY_LEN],
) -> [u8; ROW_KEY_LEN] {
    let mut salt = [0u8; 2 * PUBLIC_KEY_LEN];
    salt[..PUBLIC_KEY_LEN].copy_from_slice(ephemeral);
    salt[PUBLIC_KEY_LEN..].copy_from_slice(receiver);
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut kek = [0u8; ROW_KEY_LEN];
    hk.expand(WRAP_INFO, &mut kek)
        .expect("32 bytes is a valid HKDF-SHA256 output length");
    kek
}

/// Wraps `key` so only the holder of the secret matching `receiver` can
/// recover it. Output is randomized.
pub fn wrap_key(key: &RowKey, receiver: &UserPublicKey) -> Result<Vec<u8>, CryptoError> {
    let mut eph_bytes = [0u8; 32];
    fill_random(&mut eph_bytes)?;
    let ephemeral = StaticSecret::from(eph_bytes);
    eph_bytes.zeroize();
    let eph_public = PublicKey::from(&ephemeral).to_bytes();

    let shared = ephemeral.diffie_hellman(&PublicKey::from(receiver.0));
    if !shared.was_contributory() {
        return Err(CryptoError::InvalidPublicKey);
    }
    let mut kek = derive_kek(shared.as_bytes(), &eph_public, &receiver.0);

    let mut nonce = [0u8; NONCE_LEN];
    fill_random(&mut nonce)?;
    let mut aad = [0u8; 1 + PUBLIC_KEY_LEN];
    aad[0] = WRAP_VERSION;
    aad[1..].copy_from_slice(&eph_public);
    let envelope = seal_raw(&kek, nonce, &key.0, &aad);
    kek.zeroize();

    let mut out = Vec::with_capacity(WRAPPED_KEY_LEN);
    out.extend_from_slice(&aad);
    out.extend_from_slice(&envelope.to_bytes());
    debug_assert_eq!(out.len(), WRAPPED_KEY_LEN);
    Ok(out)
}

pub fn unwrap_key(wrapped: &[u8], secret: &UserSecretKey) -> Result<RowKey, CryptoError> {
    if wrapped.len() != WRAPPED_KEY_LEN {
        return Err(CryptoError::Malformed("wrapped key"));
    }
    if wrapped[0] != WRAP_VERSION {
        return Err(CryptoError::Malformed("wrapped key version"));
    }
    let (aad, rest) = wrapped.split_at(1 + PUBLIC_KEY_LEN);
    let eph_public: [u8; PUBLIC_KEY_LEN] = aad[1..].try_into().expect("fixed length");

    let static_secret = StaticSecret::from(secret.secret);
    let shared = static_secret.diffie_hellman(&PublicKey::from(eph_public));
    if !shared.was_contributory() {
        return Err(CryptoError::Authentication);
    }
    let mut kek = derive_kek(shared.as_bytes(), &eph_public, &secret.public);
    let envelope = CipherEnvelope::from_bytes(rest)?;
    let opened = open_raw(&kek, &envelope, aad);
    kek.zeroize();
    let mut opened = opened?;
    let key = RowKey::from_slice(&opened);
    opened.zeroize();
    key
}

/// Per-thread counters of row encryptions and decryptions.
///
/// Catalog operations run on the caller's thread, so a test can reset the
/// counters, run an open or checkpoint, and read back exactly how many row
/// ciphers that operation performed.
pub mod stats {
    use std::cell::Cell;

    thread_local! {
        static ENCRYPTS: Cell<u64> = const { Cell::new(0) };
        static DECRYPTS: Cell<u64> = const { Cell::new(0) };
    }

    #[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
    pub struct CryptoCounts {
        pub encrypts: u64,
        pub decrypts: u64,
    }

    pub(super) fn record_encrypt() {
        ENCRYPTS.with(|c| c.set(c.get() + 1));
    }

    pub(super) fn record_decrypt() {
        DECRYPTS.with(|c| c.set(c.get() + 1));
    }

    pub fn snapshot() -> CryptoCounts {
        CryptoCounts {
            encrypts: ENCRYPTS.with(Cell::get),
            decrypts: DECRYPTS.with(Cell::get),
        }
    }

    pub fn reset() {
        ENCRYPTS.with(|c| c.set(0));
        DECRYPTS.with(|c| c.set(0));
    }
}
