//! JSON bodies of the `/v1` API. Binary fields travel as standard base64.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub user_id: String,
    pub password: String,
    #[serde(with = "b64")]
    pub public_key: Vec<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuthRequest {
    pub user_id: String,
    pub password: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuthResponse {
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserEntry {
    pub user_id: String,
    #[serde(with = "b64")]
    pub public_key: Vec<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SendRowRequest {
    pub receiver: String,
    #[serde(with = "b64")]
    pub encrypted_row: Vec<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SendRowResponse {
    pub row_id: u64,
    pub submission_date: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingRow {
    pub row_id: u64,
    pub submission_date: DateTime<Utc>,
    pub sender: String,
    pub receiver: String,
    #[serde(with = "b64")]
    pub encrypted_row: Vec<u8>,
}

/// Accepts `{"row_id": n}` or `{"row_ids": [..]}`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AckRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub row_ids: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AckResponse {
    pub acknowledged: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResendRequest {
    pub receiver: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResendResponse {
    pub row_id: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DepositKeyRequest {
    pub id_row: u64,
    pub receiver: String,
    #[serde(with = "b64")]
    pub wrapped_key: Vec<u8>,
    #[serde(default)]
    pub expiry_date: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecryptingKey {
    pub id_row: u64,
    pub sender: String,
    pub receiver: String,
    #[serde(default)]
    pub expiry_date: Option<DateTime<Utc>>,
    #[serde(with = "b64")]
    pub wrapped_key: Vec<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}
