//! The synchronizer: an untrusted mailbox for encrypted rows and wrapped
//! row keys, served over HTTP/JSON.
//!
//! It stores three independent tables (users, pending rows, decrypting keys)
//! and never holds plaintext or unwrapped keys. Deleting a key leaves its
//! pending row in place and vice versa.

mod auth;
mod routes;
pub mod store;
pub mod wire;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use tokio::sync::oneshot;

pub use store::{Store, StoreError};

/// Default PBKDF2-HMAC-SHA256 iteration count for credential digests.
pub const DEFAULT_PASSWORD_ITERATIONS: u32 = 100_000;

#[derive(Debug, Clone)]
pub struct SyncdConfig {
    pub data_dir: PathBuf,
    pub password_iterations: u32,
    /// The journal is compacted once it holds more than this many events
    /// and more than twice the live record count.
    pub compact_min_events: usize,
    /// Defaults to the available parallelism, at most 4.
    pub worker_threads: usize,
}

impl SyncdConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        SyncdConfig {
            data_dir: data_dir.into(),
            password_iterations: DEFAULT_PASSWORD_ITERATIONS,
            compact_min_events: 4096,
            worker_threads: std::thread::available_parallelism().map_or(1, |n| n.get().min(4)),
        }
    }
}

/// Builds the router over a store opened from `config.data_dir`.
pub fn app(config: &SyncdConfig) -> Result<axum::Router, StoreError> {
    let store = Store::open(&config.data_dir, config.compact_min_events)?;
    let state = routes::AppState {
        store: Mutex::new(store),
        sessions: auth::Sessions::default(),
        password_iterations: config.password_iterations,
    };
    Ok(routes::router(Arc::new(state)))
}

/// A server running on its own thread and runtime. Dropping it shuts the
/// server down and waits for the thread.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting requests, drains in-flight ones and joins the thread.
    pub fn shutdown(mut self) -> std::io::Result<()> {
        self.stop()
    }

    fn stop(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().expect("server thread panicked"),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop();
    }
}

/// Starts a server bound to `addr` (port 0 picks a free port).
pub fn spawn(config: SyncdConfig, addr: SocketAddr) -> anyhow::Result<ServerHandle> {
    let app = app(&config)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(config.worker_threads.max(1))
        .enable_all()
        .build()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new()
        .name("syncd".into())
        .spawn(move || {
            runtime.block_on(async move {
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
            })
        })?;
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
