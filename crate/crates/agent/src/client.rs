//! Blocking client for the synchronizer's `/v1` API.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Utc};
use cloakdb_syncd::wire::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

const MAX_RESPONSE_BYTES: u64 = 1 << 30;

#[derive(Debug, thiserror::Error)]
pub enum SyncError {
    /// The synchronizer could not be reached or the exchange broke off.
    #[error("synchronizer unreachable: {0}")]
    Unreachable(String),
    /// The synchronizer answered with an error body.
    #[error("synchronizer rejected request ({status} {code}): {message}")]
    Api {
        status: u16,
        code: String,
        message: String,
    },
    #[error("unexpected synchronizer response: {0}")]
    Protocol(String),
}

impl SyncError {
    pub fn code(&self) -> Option<&str> {
        match self {
            SyncError::Api { code, .. } => Some(code),
            _ => None,
        }
    }

    pub fn is_not_found(&self) -> bool {
        self.code() == Some("not_found")
    }
}

pub struct SyncClient {
    http: ureq::Agent,
    base: String,
    user_id: String,
    password: String,
    token: Mutex<Option<String>>,
    requests: AtomicU64,
}

impl std::fmt::Debug for SyncClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SyncClient")
            .field("base", &self.base)
            .field("user_id", &self.user_id)
            .finish_non_exhaustive()
    }
}

enum Method {
    Get,
    Post,
    Delete,
}

impl SyncClient {
    pub fn new(base_url: &str, user_id: &str, password: &str, timeout: Duration) -> Self {
        let http: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        SyncClient {
            http,
            base: format!("{}/v1", base_url.trim_end_matches('/')),
            user_id: user_id.to_owned(),
            password: password.to_owned(),
            token: Mutex::new(None),
            requests: AtomicU64::new(0),
        }
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    /// Number of HTTP requests issued so far.
    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    fn raw<B: Serialize>(
        &self,
        method: &Method,
        path: &str,
        token: Option<&str>,
        body: Option<&B>,
    ) -> Result<(u16, Vec<u8>), SyncError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let url = format!("{}{}", self.base, path);
        let auth = token.map(|t| format!("Bearer {t}"));
        let result = match method {
            Method::Get => {
                let mut r = self.http.get(&url);
                if let Some(a) = &auth {
                    r = r.header("Authorization", a);
                }
                r.call()
            }
            Method::Delete => {
                let mut r = self.http.delete(&url);
                if let Some(a) = &auth {
                    r = r.header("Authorization", a);
                }
                r.call()
            }
            Method::Post => {
                let mut r = self.http.post(&url);
                if let Some(a) = &auth {
                    r = r.header("Authorization", a);
                }
                match body {
                    Some(b) => r.send_json(b),
                    None => r.send_empty(),
                }
            }
        };
        let resp = result.map_err(|e| SyncError::Unreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        let bytes = resp
            .into_body()
            .with_config()
            .limit(MAX_RESPONSE_BYTES)
            .read_to_vec()
            .map_err(|e| SyncError::Unreachable(e.to_string()))?;
        Ok((status, bytes))
    }

    fn decode_error(status: u16, bytes: &[u8]) -> SyncError {
        match serde_json::from_slice::<ErrorBody>(bytes) {
            Ok(b) => SyncError::Api {
                status,
                code: b.error,
                message: b.message,
            },
            Err(_) => SyncError::Protocol(format!(
                "status {status} with body {:?}",
                String::from_utf8_lossy(bytes)
            )),
        }
    }

    fn parse<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, SyncError> {
        serde_json::from_slice(bytes).map_err(|e| SyncError::Protocol(e.to_string()))
    }

    /// Obtains a fresh session token with the stored credentials.
    pub fn authenticate(&self) -> Result<String, SyncError> {
        let req = AuthRequest {
            user_id: self.user_id.clone(),
            password: self.password.clone(),
        };
        let (status, bytes) = self.raw(&Method::Post, "/auth", None, Some(&req))?;
        if status != 200 {
            return Err(Self::decode_error(status, &bytes));
        }
        let token = Self::parse::<AuthResponse>(&bytes)?.token;
        *self.token.lock().expect("token lock poisoned") = Some(token.clone());
        Ok(token)
    }

    fn token(&self) -> Result<String, SyncError> {
        let cached = self.token.lock().expect("token lock poisoned").clone();
        match cached {
            Some(t) => Ok(t),
            None => self.authenticate(),
        }
    }

    /// Sends an authenticated request, logging in again once if the token
    /// was rejected. Returns the status and body of any 2xx response.
    fn authed<B: Serialize>(
        &self,
        method: Method,
        path: &str,
        body: Option<&B>,
    ) -> Result<(u16, Vec<u8>), SyncError> {
        let token = self.token()?;
        let (mut status, mut bytes) = self.raw(&method, path, Some(&token), body)?;
        if status == 401 {
            let token = self.authenticate()?;
            (status, bytes) = self.raw(&method, path, Some(&token), body)?;
        }
        if (200..300).contains(&status) {
            Ok((status, bytes))
        } else {
            Err(Self::decode_error(status, &bytes))
        }
    }

    pub fn register(&self, public_key: &[u8]) -> Result<UserEntry, SyncError> {
        let req = RegisterRequest {
            user_id: self.user_id.clone(),
            password: self.password.clone(),
            public_key: public_key.to_vec(),
        };
        let (status, bytes) = self.raw(&Method::Post, "/users", None, Some(&req))?;
        if status != 201 {
            return Err(Self::decode_error(status, &bytes));
        }
        Self::parse(&bytes)
    }

    pub fn all_users(&self) -> Result<Vec<UserEntry>, SyncError> {
        let (_, b) = self.authed::<()>(Method::Get, "/users", None)?;
        Self::parse(&b)
    }

    pub fn public_key(&self, user_id: &str) -> Result<Vec<u8>, SyncError> {
        let (_, b) = self.authed::<()>(Method::Get, &format!("/users/{user_id}/pubkey"), None)?;
        Ok(Self::parse::<UserEntry>(&b)?.public_key)
    }

    pub fn send_row(
        &self,
        receiver: &str,
        encrypted_row: Vec<u8>,
    ) -> Result<SendRowResponse, SyncError> {
        let req = SendRowRequest {
            receiver: receiver.to_owned(),
            encrypted_row,
        };
        let (_, b) = self.authed(Method::Post, "/rows", Some(&req))?;
        Self::parse(&b)
    }

    pub fn pending_rows(&self) -> Result<Vec<PendingRow>, SyncError> {
        let (_, b) = self.authed::<()>(Method::Get, "/rows/pending", None)?;
        Self::parse(&b)
    }

    pub fn acknowledge(&self, row_ids: &[u64]) -> Result<usize, SyncError> {
        if row_ids.is_empty() {
            return Ok(0);
        }
        let req = AckRequest {
            row_id: None,
            row_ids: row_ids.to_vec(),
        };
        let (_, b) = self.authed(Method::Post, "/rows/ack", Some(&req))?;
        Ok(Self::parse::<AckResponse>(&b)?.acknowledged)
    }

    pub fn resend_row(&self, row_id: u64, receiver: &str) -> Result<u64, SyncError> {
        let req = ResendRequest {
            receiver: receiver.to_owned(),
        };
        let (_, b) = self.authed(Method::Post, &format!("/rows/{row_id}/resend"), Some(&req))?;
        Ok(Self::parse::<ResendResponse>(&b)?.row_id)
    }

    pub fn deposit_key(
        &self,
        id_row: u64,
        receiver: &str,
        wrapped_key: Vec<u8>,
        expiry_date: Option<DateTime<Utc>>,
    ) -> Result<(), SyncError> {
        let req = DepositKeyRequest {
            id_row,
            receiver: receiver.to_owned(),
            wrapped_key,
            expiry_date,
        };
        self.authed(Method::Post, "/keys", Some(&req))?;
        Ok(())
    }

    /// The wrapped key for `id_row` addressed to this user; `Ok(None)` when
    /// the synchronizer denies it.
    pub fn decrypting_key(&self, id_row: u64) -> Result<Option<DecryptingKey>, SyncError> {
        match self.authed::<()>(Method::Get, &format!("/keys/{id_row}"), None) {
            Ok((_, b)) => Ok(Some(Self::parse(&b)?)),
            Err(e) if e.code() == Some("denied") => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn delete_key(&self, id_row: u64, receiver: &str) -> Result<(), SyncError> {
        self.authed::<()>(Method::Delete, &format!("/keys/{id_row}/{receiver}"), None)?;
        Ok(())
    }
}
