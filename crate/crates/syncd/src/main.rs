use std::net::SocketAddr;
use std::path::PathBuf;

use clap::Parser;
use cloakdb_syncd::SyncdConfig;

/// Run the synchronizer service.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Directory holding the service journal.
    #[arg(long, default_value = "syncd-data")]
    data_dir: PathBuf,
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: SocketAddr,
    /// PBKDF2 iterations for new credential digests.
    #[arg(long, default_value_t = cloakdb_syncd::DEFAULT_PASSWORD_ITERATIONS)]
    password_iterations: u32,
    /// Runtime worker threads; defaults to the available parallelism, at most 4.
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let args = Args::parse();
    let mut config = SyncdConfig::new(args.data_dir);
    config.password_iterations = args.password_iterations;
    if let Some(w) = args.workers {
        config.worker_threads = w;
    }
    let app = cloakdb_syncd::app(&config)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(config.worker_threads.max(1))
        .enable_all()
        .build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.listen).await?;
        tracing::info!(addr = %listener.local_addr()?, "synchronizer listening");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })?;
    Ok(())
}
