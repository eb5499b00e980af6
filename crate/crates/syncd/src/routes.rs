//! HTTP handlers for the `/v1` API.

use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::rejection::{JsonRejection, PathRejection};
use axum::extract::{FromRequestParts, Path, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use chrono::Utc;

use crate::auth::{self, Sessions};
use crate::store::{Store, StoreError, UserRecord};
use crate::wire::*;

pub struct AppState {
    pub store: Mutex<Store>,
    pub sessions: Sessions,
    pub password_iterations: u32,
}

impl AppState {
    fn store(&self) -> MutexGuard<'_, Store> {
        self.store.lock().expect("store poisoned")
    }
}

type Shared = Arc<AppState>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn unauthorized() -> Self {
        Self::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "missing or unknown bearer token",
        )
    }

    fn invalid_credentials() -> Self {
        Self::new(
            StatusCode::UNAUTHORIZED,
            "invalid_credentials",
            "invalid user id or password",
        )
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match e {
            StoreError::BadRequest(_) => Self::new(StatusCode::BAD_REQUEST, "bad_request", message),
            StoreError::Conflict(_) => Self::new(StatusCode::CONFLICT, "conflict", message),
            StoreError::NotFound(_) => Self::new(StatusCode::NOT_FOUND, "not_found", message),
            StoreError::Forbidden(_) => Self::new(StatusCode::FORBIDDEN, "forbidden", message),
            StoreError::Denied => Self::new(StatusCode::NOT_FOUND, "denied", message),
            StoreError::Io(_) | StoreError::CorruptJournal { .. } => {
                tracing::error!(error = %message, "storage failure");
                Self::new(
                    StatusCode::INTERNAL_SERVER_ERROR,
                    "internal",
                    "storage failure",
                )
            }
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl From<PathRejection> for ApiError {
    fn from(e: PathRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code.to_owned(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// The authenticated user id, taken from `Authorization: Bearer <token>`.
pub struct Caller(pub String);

impl FromRequestParts<Shared> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &Shared) -> Result<Self, ApiError> {
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or_else(ApiError::unauthorized)?;
        state
            .sessions
            .user_of(token.trim())
            .map(Caller)
            .ok_or_else(ApiError::unauthorized)
    }
}

pub fn router(state: Shared) -> Router {
    let v1 = Router::new()
        .route("/users", post(register).get(all_users))
        .route("/auth", post(authenticate))
        .route("/users/{id}/pubkey", get(public_key))
        .route("/rows", post(send_row))
        .route("/rows/pending", get(pending_rows))
        .route("/rows/ack", post(acknowledge))
        .route("/rows/{id}/resend", post(resend_row))
        .route("/keys", post(deposit_key))
        .route("/keys/{id_row}", get(decrypting_key))
        .route("/keys/{id_row}/{receiver}", delete(delete_key));
    Router::new()
        .nest("/v1", v1)
        .fallback(|| async {
            ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
        })
        .with_state(state)
}

fn valid_user_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.'))
}

async fn register(
    State(state): State<Shared>,
    body: Result<Json<RegisterRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<UserEntry>), ApiError> {
    let Json(req) = body?;
    if !valid_user_id(&req.user_id) {
        return Err(ApiError::bad_request(
            "user_id must be 1-64 characters of [A-Za-z0-9_.-]",
        ));
    }
    if req.password.is_empty() {
        return Err(ApiError::bad_request("password must not be empty"));
    }
    if req.public_key.is_empty() {
        return Err(ApiError::bad_request("public_key must not be empty"));
    }
    if state.store().user(&req.user_id).is_some() {
        return Err(
            StoreError::Conflict(format!("user {} already registered", req.user_id)).into(),
        );
    }
    let iterations = state.password_iterations;
    let password = req.password;
    let (salt, digest) = tokio::task::spawn_blocking(move || {
        let salt = auth::new_salt();
        let digest = auth::digest(&password, &salt, iterations);
        (salt, digest)
    })
    .await
    .expect("digest task panicked");
    let entry = UserEntry {
        user_id: req.user_id.clone(),
        public_key: req.public_key.clone(),
    };
    state.store().register_user(UserRecord {
        user_id: req.user_id,
        salt: salt.to_vec(),
        digest: digest.to_vec(),
        iterations,
        public_key: req.public_key,
    })?;
    Ok((StatusCode::CREATED, Json(entry)))
}

async fn authenticate(
    State(state): State<Shared>,
    body: Result<Json<AuthRequest>, JsonRejection>,
) -> ApiResult<AuthResponse> {
    let Json(req) = body?;
    let user = state.store().user(&req.user_id).cloned();
    let iterations = state.password_iterations;
    let password = req.password;
    let ok =
        tokio::task::spawn_blocking(move || auth::verify(user.as_ref(), &password, iterations))
            .await
            .expect("verify task panicked");
    if !ok {
        return Err(ApiError::invalid_credentials());
    }
    Ok(Json(AuthResponse {
        token: state.sessions.issue(&req.user_id),
    }))
}

async fn all_users(State(state): State<Shared>, _caller: Caller) -> ApiResult<Vec<UserEntry>> {
    Ok(Json(state.store().all_users()))
}

async fn public_key(
    State(state): State<Shared>,
    _caller: Caller,
    path: Result<Path<String>, PathRejection>,
) -> ApiResult<UserEntry> {
    let Path(user_id) = path?;
    let public_key = state.store().public_key(&user_id)?.to_vec();
    Ok(Json(UserEntry {
        user_id,
        public_key,
    }))
}

async fn send_row(
    State(state): State<Shared>,
    Caller(sender): Caller,
    body: Result<Json<SendRowRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<SendRowResponse>), ApiError> {
    let Json(req) = body?;
    let (row_id, submission_date) =
        state
            .store()
            .send_row(&sender, &req.receiver, req.encrypted_row, Utc::now())?;
    Ok((
        StatusCode::CREATED,
        Json(SendRowResponse {
            row_id,
            submission_date,
        }),
    ))
}

async fn pending_rows(
    State(state): State<Shared>,
    Caller(receiver): Caller,
) -> ApiResult<Vec<PendingRow>> {
    Ok(Json(state.store().pending_for(&receiver)))
}

async fn acknowledge(
    State(state): State<Shared>,
    Caller(receiver): Caller,
    body: Result<Json<AckRequest>, JsonRejection>,
) -> ApiResult<AckResponse> {
    let Json(req) = body?;
    let mut ids = req.row_ids;
    ids.extend(req.row_id);
    if ids.is_empty() {
        return Err(ApiError::bad_request("row_id or row_ids is required"));
    }
    let acknowledged = state.store().acknowledge(&receiver, &ids)?;
    Ok(Json(AckResponse { acknowledged }))
}

async fn resend_row(
    State(state): State<Shared>,
    Caller(sender): Caller,
    path: Result<Path<u64>, PathRejection>,
    body: Result<Json<ResendRequest>, JsonRejection>,
) -> ApiResult<ResendResponse> {
    let Path(row_id) = path?;
    let Json(req) = body?;
    let row_id = state.store().resend_row(&sender, row_id, &req.receiver)?;
    Ok(Json(ResendResponse { row_id }))
}

async fn deposit_key(
    State(state): State<Shared>,
    Caller(sender): Caller,
    body: Result<Json<DepositKeyRequest>, JsonRejection>,
) -> Result<StatusCode, ApiError> {
    let Json(req) = body?;
    state.store().deposit_key(&sender, req)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn decrypting_key(
    State(state): State<Shared>,
    Caller(receiver): Caller,
    path: Result<Path<u64>, PathRejection>,
) -> ApiResult<DecryptingKey> {
    let Path(id_row) = path?;
    Ok(Json(state.store().decrypting_key(
        &receiver,
        id_row,
        Utc::now(),
    )?))
}

async fn delete_key(
    State(state): State<Shared>,
    Caller(sender): Caller,
    path: Result<Path<(u64, String)>, PathRejection>,
) -> Result<StatusCode, ApiError> {
    let Path((id_row, receiver)) = path?;
    state.store().delete_key(&sender, id_row, &receiver)?;
    Ok(StatusCode::NO_CONTENT)
}
