//! CSV report and summary statistics.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::{BenchError, Mode, PhaseTimings, Result};

/// Column order of the CSV report.
pub const CSV_COLUMNS: &[&str] = &[
    "mode",
    "dossiers",
    "clients",
    "shared_pct",
    "dossier_bytes",
    "reps",
    "create_ms",
    "populate_ms",
    "share_ms",
    "receive_ms",
    "open_ms",
    "total_ms",
    "overhead_pct",
    "final_rows",
    "mean_dossier_bytes",
    "open_encrypts",
    "open_decrypts",
];

#[derive(Serialize)]
struct CsvRow {
    mode: String,
    dossiers: usize,
    clients: usize,
    shared_pct: u32,
    dossier_bytes: usize,
    reps: usize,
    create_ms: f64,
    populate_ms: f64,
    share_ms: f64,
    receive_ms: f64,
    open_ms: f64,
    total_ms: f64,
    overhead_pct: Option<f64>,
    final_rows: usize,
    mean_dossier_bytes: f64,
    open_encrypts: u64,
    open_decrypts: u64,
}

fn ms(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `points`; `None` with fewer than two
/// distinct x values.
pub fn linear_fit(points: &[(f64, f64)]) -> Option<LinearFit> {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if points.len() < 2 || sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Identifies runs that are compared against each other.
type Config = (usize, usize, u32, usize);

fn config_of(t: &PhaseTimings) -> Config {
    let p = &t.params;
    (p.dossiers, p.clients, p.shared_pct, p.dossier_bytes)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    /// `(dossiers, shared_pct, overhead %)` per encrypted run with a
    /// matching baseline, in input order.
    pub overheads: Vec<(usize, u32, f64)>,
    /// Total delay against dossier count, per mode, over runs with the
    /// most common sharing configuration of that mode.
    pub fits: BTreeMap<Mode, LinearFit>,
    pub warnings: Vec<String>,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, pct, o) in &self.overheads {
            writeln!(f, "overhead at {n} dossiers, {pct}% shared: {o:.1}%")?;
        }
        for (mode, fit) in &self.fits {
            writeln!(
                f,
                "{mode}: total_ms = {:.6} * dossiers + {:.1} (R^2 = {:.4})",
                fit.slope, fit.intercept, fit.r_squared
            )?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// Writes one CSV row per run and returns the summary. Encrypted runs are
/// matched with the baseline of identical parameters.
pub fn emit_report(runs: &[PhaseTimings], out: impl Write) -> Result<Summary> {
    if runs.is_empty() {
        return Err(BenchError::Report("no runs to report".into()));
    }
    let baselines: BTreeMap<Config, &PhaseTimings> = runs
        .iter()
        .filter(|t| t.params.mode == Mode::Baseline)
        .map(|t| (config_of(t), t))
        .collect();
    let mut summary = Summary::default();
    let mut w = csv::Writer::from_writer(out);
    for t in runs {
        let overhead = match t.params.mode {
            Mode::Baseline => None,
            Mode::Encrypted => match baselines.get(&config_of(t)) {
                Some(b) => {
                    let base = b.total().as_secs_f64();
                    let o = (t.total().as_secs_f64() - base) / base * 100.0;
                    summary
                        .overheads
                        .push((t.params.dossiers, t.params.shared_pct, o));
                    Some(o)
                }
                None => {
                    summary.warnings.push(format!(
                        "no baseline for encrypted run with {} dossiers, {} clients, {}% shared, {} bytes",
                        t.params.dossiers, t.params.clients, t.params.shared_pct, t.params.dossier_bytes
                    ));
                    None
                }
            },
        };
        w.serialize(CsvRow {
            mode: t.params.mode.to_string(),
            dossiers: t.params.dossiers,
            clients: t.params.clients,
            shared_pct: t.params.shared_pct,
            dossier_bytes: t.params.dossier_bytes,
            reps: t.reps,
            create_ms: ms(t.create),
            populate_ms: ms(t.populate),
            share_ms: ms(t.share),
            receive_ms: ms(t.receive),
            open_ms: ms(t.open),
            total_ms: ms(t.total()),
            overhead_pct: overhead,
            final_rows: t.final_rows,
            mean_dossier_bytes: t.mean_dossier_bytes,
            open_encrypts: t.open_crypto.encrypts,
            open_decrypts: t.open_crypto.decrypts,
        })
        .map_err(|e| BenchError::Report(e.to_string()))?;
    }
    w.flush()?;

    for mode in [Mode::Encrypted, Mode::Baseline] {
        let mut groups: BTreeMap<(usize, u32, usize), Vec<(f64, f64)>> = BTreeMap::new();
        for t in runs.iter().filter(|t| t.params.mode == mode) {
            let p = &t.params;
            groups
                .entry((p.clients, p.shared_pct, p.dossier_bytes))
                .or_default()
                .push((p.dossiers as f64, ms(t.total())));
        }
        if let Some(points) = groups.into_values().max_by_key(Vec::len) {
            if let Some(fit) = linear_fit(&points) {
                summary.fits.insert(mode, fit);
            }
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_of_exact_line() {
        let f = linear_fit(&[(1.0, 3.0), (2.0, 5.0), (4.0, 9.0)]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[(1.0, 1.0)]).is_none());
        assert!(linear_fit(&[(1.0, 1.0), (1.0, 2.0)]).is_none());
    }

    #[test]
    fn fit_of_noisy_points() {
        // r^2 must equal 1 - SSE/SST for a least-squares fit
        let pts = [(0.0, 1.0), (2.0, 1.0), (4.0, 3.0), (6.0, 7.0)];
        let f = linear_fit(&pts).unwrap();
        let my = 3.0;
        let sst: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
        let sse: f64 = pts
            .iter()
            .map(|p| (p.1 - (f.slope * p.0 + f.intercept)).powi(2))
            .sum();
        assert!((f.r_squared - (1.0 - sse / sst)).abs() < 1e-12);
    }
}
