//! Credential digests and bearer sessions.

use std::collections::HashMap;
use std::sync::Mutex;

use pbkdf2::pbkdf2_hmac;
use rand::rngs::OsRng;
use rand::RngCore;
use sha2::Sha256;
use subtle::ConstantTimeEq;

use crate::store::UserRecord;

pub const SALT_LEN: usize = 16;
pub const DIGEST_LEN: usize = 32;

pub fn digest(password: &str, salt: &[u8], iterations: u32) -> [u8; DIGEST_LEN] {
    let mut out = [0u8; DIGEST_LEN];
    pbkdf2_hmac::<Sha256>(password.as_bytes(), salt, iterations, &mut out);
    out
}

pub fn new_salt() -> [u8; SALT_LEN] {
    let mut salt = [0u8; SALT_LEN];
    OsRng.fill_bytes(&mut salt);
    salt
}

/// Checks `password` against `user`, or against a throwaway digest when the
/// user is unknown so both paths cost the same.
pub fn verify(user: Option<&UserRecord>, password: &str, iterations: u32) -> bool {
    match user {
        Some(u) => {
            let d = digest(password, &u.salt, u.iterations);
            bool::from(d.ct_eq(u.digest.as_slice()))
        }
        None => {
            let _ = digest(password, &[0u8; SALT_LEN], iterations);
            false
        }
    }
}

/// In-memory token table; tokens do not survive a restart.
#[derive(Default)]
pub struct Sessions {
    tokens: Mutex<HashMap<String, String>>,
}

impl Sessions {
    pub fn issue(&self, user_id: &str) -> String {
        let mut raw = [0u8; 32];
        OsRng.fill_bytes(&mut raw);
        let token = hex::encode(raw);
        self.tokens
            .lock()
            .expect("session table poisoned")
            .insert(token.clone(), user_id.to_owned());
        token
    }

    pub fn user_of(&self, token: &str) -> Option<String> {
        self.tokens
            .lock()
            .expect("session table poisoned")
            .get(token)
            .cloned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(password: &str) -> UserRecord {
        let salt = new_salt();
        UserRecord {
            user_id: "u".into(),
            salt: salt.to_vec(),
            digest: digest(password, &salt, 10).to_vec(),
            iterations: 10,
            public_key: vec![0; 32],
        }
    }

    #[test]
    fn verify_accepts_only_the_right_password() {
        let r = record("hunter2");
        assert!(verify(Some(&r), "hunter2", 10));
        assert!(!verify(Some(&r), "hunter3", 10));
        assert!(!verify(None, "hunter2", 10));
    }

    #[test]
    fn salts_make_equal_passwords_differ() {
        assert_ne!(record("pw").digest, record("pw").digest);
    }

    #[test]
    fn tokens_map_back_to_users() {
        let s = Sessions::default();
        let t = s.issue("alice");
        assert_eq!(s.user_of(&t).as_deref(), Some("alice"));
        assert_eq!(s.user_of("nope"), None);
    }
}
