//! Phase-timed workloads comparing encrypted sharing with a clear baseline.
//!
//! A run builds one catalog per client, each holding single-row dossiers in
//! one table, and times five phases:
//!
//! 1. `create`: account setup and table creation
//! 2. `populate`: inserting each client's own dossiers
//! 3. `share`: client `c` shares part of its dossiers with client `c + 1`
//! 4. `receive`: every client takes in what was shared with it
//! 5. `open`: checkpoint, then reopen from disk
//!
//! In baseline mode nothing is encrypted and there is no synchronizer; the
//! receive phase inserts the same rows in clear, so both modes end with the
//! same rows in every catalog.

mod report;

use std::fmt;
use std::net::SocketAddr;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use cloakdb_agent::{Agent, AgentConfig};
use cloakdb_core::crypto::stats::{self, CryptoCounts};
use cloakdb_core::scriptio::{serialize_insert, NoKeys};
use cloakdb_core::{Catalog, ColumnType, RowProvenance, TableSchema, Value};
use cloakdb_syncd::{ServerHandle, SyncdConfig};
use rand::distributions::Alphanumeric;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub use report::{emit_report, linear_fit, LinearFit, Summary, CSV_COLUMNS};

pub const TABLE: &str = "dossiers";
/// Primary keys of client `c` start at `c * KEY_STRIDE`.
pub const KEY_STRIDE: i64 = 1_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Encrypted,
    Baseline,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Encrypted => "encrypted",
            Mode::Baseline => "baseline",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "encrypted" => Ok(Mode::Encrypted),
            "baseline" => Ok(Mode::Baseline),
            other => Err(format!(
                "unknown mode {other:?}, expected encrypted or baseline"
            )),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Agent(#[from] cloakdb_agent::AgentError),
    #[error(transparent)]
    Catalog(#[from] cloakdb_core::Error),
    #[error("synchronizer: {0}")]
    Synchronizer(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("report: {0}")]
    Report(String),
    #[error("client {client} received {got} dossiers, expected {expected}")]
    Incomplete {
        client: usize,
        got: usize,
        expected: usize,
    },
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchParams {
    pub dossiers: usize,
    pub clients: usize,
    pub shared_pct: u32,
    pub dossier_bytes: usize,
    pub mode: Mode,
    /// External synchronizer; `None` starts one in-process.
    pub sync_addr: Option<String>,
    /// PBKDF2 iterations for credentials and key caches.
    pub kdf_iterations: u32,
    pub seed: u64,
}

impl BenchParams {
    pub fn new(dossiers: usize, shared_pct: u32, mode: Mode) -> Self {
        BenchParams {
            dossiers,
            clients: 2,
            shared_pct,
            dossier_bytes: 200,
            mode,
            sync_addr: None,
            kdf_iterations: cloakdb_agent::DEFAULT_CACHE_ITERATIONS,
            seed: 0x5eed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dossiers == 0 {
            return Err(BenchError::Params("dossiers must be positive".into()));
        }
        if self.clients < 2 {
            return Err(BenchError::Params(
                "at least two clients are required".into(),
            ));
        }
        if self.shared_pct > 100 {
            return Err(BenchError::Params(
                "shared_pct must be within 0..=100".into(),
            ));
        }
        if self.dossier_bytes == 0 {
            return Err(BenchError::Params("dossier_bytes must be positive".into()));
        }
        if self.kdf_iterations == 0 {
            return Err(BenchError::Params("kdf_iterations must be positive".into()));
        }
        Ok(())
    }

    /// Number of shared dossiers, rounded down.
    pub fn shared(&self) -> usize {
        self.dossiers * self.shared_pct as usize / 100
    }

    /// Own dossiers of client `c`.
    pub fn own_count(&self, c: usize) -> usize {
        self.dossiers / self.clients + usize::from(c < self.dossiers % self.clients)
    }

    /// Dossiers client `c` shares with client `c + 1`.
    pub fn shared_count(&self, c: usize) -> usize {
        let s = self.shared();
        s / self.clients + usize::from(c < s % self.clients)
    }

    fn receiver_of(&self, c: usize) -> usize {
        (c + 1) % self.clients
    }

    fn sender_to(&self, c: usize) -> usize {
        (c + self.clients - 1) % self.clients
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTimings {
    pub params: BenchParams,
    pub create: Duration,
    pub populate: Duration,
    pub share: Duration,
    pub receive: Duration,
    pub open: Duration,
    /// Rows in all catalogs after the run.
    pub final_rows: usize,
    /// Mean serialized size of the generated dossiers.
    pub mean_dossier_bytes: f64,
    /// Row ciphers performed during the open phase, over all clients.
    pub open_crypto: CryptoCounts,
    /// Repetitions this result was chosen from.
    pub reps: usize,
}

impl PhaseTimings {
    pub fn total(&self) -> Duration {
        self.create + self.populate + self.share + self.receive + self.open
    }
}

pub fn schema() -> TableSchema {
    TableSchema::new(
        TABLE,
        [
            ("id", ColumnType::Integer),
            ("owner", ColumnType::Text),
            ("archived", ColumnType::Boolean),
            ("body", ColumnType::Text),
        ],
        "id",
    )
    .expect("static schema is valid")
}

/// A dossier for client `c` whose INSERT line is `bytes` long whenever the
/// fixed part fits.
pub fn dossier(
    schema: &TableSchema,
    c: usize,
    i: usize,
    bytes: usize,
    rng: &mut impl Rng,
) -> Vec<Value> {
    let id = c as i64 * KEY_STRIDE + i as i64;
    let mut values = vec![
        id.into(),
        format!("client{c}").into(),
        i.is_multiple_of(7).into(),
        String::new().into(),
    ];
    let fixed = serialize_insert(schema, &values)
        .expect("generated values fit the schema")
        .len();
    let pad: String = rng
        .sample_iter(&Alphanumeric)
        .take(bytes.saturating_sub(fixed))
        .map(char::from)
        .collect();
    values[3] = pad.into();
    values
}

/// Directory holding client `c`'s files; its catalog is in `catalog/`.
pub fn client_home(dir: &Path, c: usize) -> std::path::PathBuf {
    dir.join(format!("client{c}"))
}

fn user_id(tag: &str, c: usize) -> String {
    format!("{tag}-client{c}")
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, Duration)> {
    let start = Instant::now();
    let v = f()?;
    Ok((v, start.elapsed()))
}

/// Runs the workload once in a fresh temporary directory.
pub fn run_benchmark(params: &BenchParams) -> Result<PhaseTimings> {
    let dir = tempfile::tempdir()?;
    run_benchmark_in(params, dir.path())
}

/// Runs the workload once with all catalogs (and the in-process
/// synchronizer, if any) under `dir`.
pub fn run_benchmark_in(params: &BenchParams, dir: &Path) -> Result<PhaseTimings> {
    params.validate()?;
    let schema = schema();
    let mut rng = StdRng::seed_from_u64(params.seed);
    let data: Vec<Vec<Vec<Value>>> = (0..params.clients)
        .map(|c| {
            (0..params.own_count(c))
                .map(|i| dossier(&schema, c, i, params.dossier_bytes, &mut rng))
                .collect()
        })
        .collect();
    let generated: usize = data.iter().map(Vec::len).sum();
    let mean_dossier_bytes = data
        .iter()
        .flatten()
        .map(|v| serialize_insert(&schema, v).expect("valid").len() as f64)
        .sum::<f64>()
        / generated as f64;

    let mut t = match params.mode {
        Mode::Encrypted => run_encrypted(params, dir, &schema, &data)?,
        Mode::Baseline => run_baseline(params, dir, &schema, &data)?,
    };
    t.mean_dossier_bytes = mean_dossier_bytes;
    Ok(t)
}

fn empty_timings(params: &BenchParams) -> PhaseTimings {
    PhaseTimings {
        params: params.clone(),
        create: Duration::ZERO,
        populate: Duration::ZERO,
        share: Duration::ZERO,
        receive: Duration::ZERO,
        open: Duration::ZERO,
        final_rows: 0,
        mean_dossier_bytes: 0.0,
        open_crypto: CryptoCounts::default(),
        reps: 1,
    }
}

fn run_baseline(
    params: &BenchParams,
    dir: &Path,
    schema: &TableSchema,
    data: &[Vec<Vec<Value>>],
) -> Result<PhaseTimings> {
    let mut t = empty_timings(params);
    let resolver: Arc<dyn cloakdb_core::scriptio::KeyResolver> = Arc::new(NoKeys);
    let catalog_dir = |c: usize| client_home(dir, c).join("catalog");

    let (mut catalogs, d) = timed(|| {
        (0..params.clients)
            .map(|c| {
                let mut cat = Catalog::open(catalog_dir(c), "db", resolver.clone())?;
                cat.create_table(schema.clone())?;
                Ok(cat)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    t.create = d;

    t.populate = timed(|| {
        for (cat, rows) in catalogs.iter_mut().zip(data) {
            for v in rows {
                cat.insert_row(TABLE, v.clone(), RowProvenance::Owned)?;
            }
        }
        Ok(())
    })?
    .1;

    // the clear system's equivalent of receiving: the same rows, in clear
    t.receive = timed(|| {
        for (c, cat) in catalogs.iter_mut().enumerate() {
            let from = params.sender_to(c);
            for v in &data[from][..params.shared_count(from)] {
                cat.insert_row(TABLE, v.clone(), RowProvenance::Owned)?;
            }
        }
        Ok(())
    })?
    .1;

    stats::reset();
    let (catalogs, d) = timed(|| {
        let mut reopened = Vec::with_capacity(catalogs.len());
        for (c, mut cat) in catalogs.drain(..).enumerate() {
            cat.checkpoint()?;
            cat.close()?;
            reopened.push(Catalog::open(catalog_dir(c), "db", resolver.clone())?);
        }
        Ok(reopened)
    })?;
    t.open = d;
    t.open_crypto = stats::snapshot();
    t.final_rows = catalogs.iter().map(Catalog::total_rows).sum();
    Ok(t)
}

enum Synchronizer {
    Local(ServerHandle),
    Remote(String),
}

impl Synchronizer {
    fn url(&self) -> String {
        match self {
            Synchronizer::Local(h) => h.base_url(),
            Synchronizer::Remote(u) => u.clone(),
        }
    }
}

fn run_encrypted(
    params: &BenchParams,
    dir: &Path,
    schema: &TableSchema,
    data: &[Vec<Vec<Value>>],
) -> Result<PhaseTimings> {
    let mut t = empty_timings(params);
    let sync = match &params.sync_addr {
        Some(url) => Synchronizer::Remote(url.clone()),
        None => {
            let mut cfg = SyncdConfig::new(dir.join("syncd"));
            cfg.password_iterations = params.kdf_iterations;
            let handle = cloakdb_syncd::spawn(cfg, SocketAddr::from(([127, 0, 0, 1], 0)))
                .map_err(|e| BenchError::Synchronizer(e.to_string()))?;
            Synchronizer::Local(handle)
        }
    };
    // user ids must not clash with earlier runs against the same service
    let tag = format!("b{:016x}", rand::random::<u64>());
    let url = sync.url();

    let (mut agents, d) = timed(|| {
        (0..params.clients)
            .map(|c| {
                let home = client_home(dir, c);
                let mut cfg = AgentConfig::new(
                    url.clone(),
                    user_id(&tag, c),
                    format!("secret-{tag}-{c}"),
                    home.join("keys.cache"),
                    home.join("catalog"),
                );
                cfg.cache_iterations = params.kdf_iterations;
                let mut agent = Agent::register(cfg)?;
                agent.create_table(schema.clone())?;
                Ok(agent)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    t.create = d;

    t.populate = timed(|| {
        for (agent, rows) in agents.iter_mut().zip(data) {
            for v in rows {
                agent.insert_owned(TABLE, v.clone())?;
            }
        }
        Ok(())
    })?
    .1;

    t.share = timed(|| {
        for (c, agent) in agents.iter_mut().enumerate() {
            let keys: Vec<i64> = data[c][..params.shared_count(c)]
                .iter()
                .map(|v| v[0].as_integer().expect("integer key"))
                .collect();
            let receiver = user_id(&tag, params.receiver_of(c));
            agent.share_rows(TABLE, &keys, &[receiver.as_str()])?;
        }
        Ok(())
    })?
    .1;

    t.receive = timed(|| {
        for (c, agent) in agents.iter_mut().enumerate() {
            let expected = params.shared_count(params.sender_to(c));
            let got = agent.receive_pending()?.inserted;
            if got != expected {
                return Err(BenchError::Incomplete {
                    client: c,
                    got,
                    expected,
                });
            }
        }
        Ok(())
    })?
    .1;

    stats::reset();
    t.open = timed(|| {
        for agent in agents.iter_mut() {
            agent.checkpoint()?;
            agent.reopen()?;
        }
        Ok(())
    })?
    .1;
    t.open_crypto = stats::snapshot();
    t.final_rows = agents.iter().map(|a| a.catalog().total_rows()).sum();
    drop(agents);
    drop(sync);
    Ok(t)
}

/// Runs `reps` repetitions and keeps the one with the median total.
pub fn run_repeated(params: &BenchParams, reps: usize) -> Result<PhaseTimings> {
    Ok(run_sweep(std::slice::from_ref(params), reps)?.remove(0))
}

/// Runs every configuration `reps` times and keeps, per configuration, the
/// repetition with the median total. Repetitions are interleaved round-robin
/// across configurations so drift in machine load is shared among them.
/// Results are in input order.
pub fn run_sweep(configs: &[BenchParams], reps: usize) -> Result<Vec<PhaseTimings>> {
    let reps = reps.max(1);
    for p in configs {
        p.validate()?;
    }
    let mut samples: Vec<Vec<PhaseTimings>> =
        configs.iter().map(|_| Vec::with_capacity(reps)).collect();
    for r in 0..reps {
        for (params, out) in configs.iter().zip(samples.iter_mut()) {
            let mut p = params.clone();
            p.seed = params.seed.wrapping_add(r as u64);
            let mut t = run_benchmark(&p)?;
            t.params.seed = params.seed;
            out.push(t);
        }
    }
    Ok(samples
        .into_iter()
        .map(|mut runs| {
            runs.sort_by_key(PhaseTimings::total);
            let mut median = runs.swap_remove(reps / 2);
            median.reps = reps;
            median
        })
        .collect())
}
