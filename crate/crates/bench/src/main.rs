use std::fs::File;
use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use cloakdb_bench::{emit_report, run_sweep, BenchParams, Mode};

const AFTER_HELP: &str = "\
CSV columns: mode, dossiers, clients, shared_pct, dossier_bytes, reps,
create_ms, populate_ms, share_ms, receive_ms, open_ms, total_ms,
overhead_pct (encrypted rows with a matching baseline, else empty),
final_rows, mean_dossier_bytes, open_encrypts, open_decrypts.

Each row is the repetition with the median total delay. Repetitions are
interleaved across all configurations of a sweep.";

/// Time encrypted sharing against the clear baseline.
#[derive(Parser)]
#[command(version, after_help = AFTER_HELP)]
struct Args {
    /// Dossier counts to run; comma-separated for a sweep.
    #[arg(long, value_delimiter = ',', default_value = "1000")]
    dossiers: Vec<usize>,
    /// Clients taking part in sharing.
    #[arg(long, default_value_t = 2)]
    clients: usize,
    /// Percentage of dossiers shared; comma-separated for a sweep.
    #[arg(long, value_delimiter = ',', default_value = "20")]
    shared_pct: Vec<u32>,
    /// Serialized size of one dossier.
    #[arg(long, default_value_t = 200)]
    dossier_bytes: usize,
    /// encrypted, baseline, or both comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "encrypted,baseline")]
    mode: Vec<Mode>,
    /// Synchronizer base URL; omit to start one in-process.
    #[arg(long)]
    sync_addr: Option<String>,
    /// Output CSV file.
    #[arg(long, default_value = "bench.csv")]
    out: PathBuf,
    /// Repetitions per configuration.
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// PBKDF2 iterations for credentials and key caches.
    #[arg(long, default_value_t = cloakdb_agent::DEFAULT_CACHE_ITERATIONS)]
    kdf_iterations: u32,
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();
    let args = Args::parse();
    let mut configs = Vec::new();
    for &n in &args.dossiers {
        for &pct in &args.shared_pct {
            for &mode in &args.mode {
                let mut p = BenchParams::new(n, pct, mode);
                p.clients = args.clients;
                p.dossier_bytes = args.dossier_bytes;
                p.sync_addr = args.sync_addr.clone();
                p.kdf_iterations = args.kdf_iterations;
                configs.push(p);
            }
        }
    }
    let runs = run_sweep(&configs, args.reps)?;
    for t in &runs {
        let p = &t.params;
        eprintln!(
            "{:>9} {:>7} dossiers {:>3}% shared: {:.1} ms",
            p.mode,
            p.dossiers,
            p.shared_pct,
            t.total().as_secs_f64() * 1e3
        );
    }
    let file =
        File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let summary = emit_report(&runs, file)?;
    print!("{summary}");
    Ok(())
}
