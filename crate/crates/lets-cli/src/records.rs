//! Result persistence: one CSV row per replicate, plus grouped summary
//! tables with confidence intervals. Columns are stable so downstream
//! plotting scripts can rely on them; optional columns (alpha, lambda,
//! r_loc, rmse_mode) are empty when the setting is not in play.

use std::fs::{self, File};
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use lets::metrics::{mean_ci95, ConfidenceInterval};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRow {
    pub scheme: String,
    pub m: usize,
    pub l: usize,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub r_loc: Option<f64>,
    pub seed: u64,
    pub rmse_mu: f64,
    pub rmse_mode: Option<f64>,
    pub crps: f64,
}

/// Per-replicate solver diagnostics, kept out of the metric table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub scheme: String,
    pub m: usize,
    pub l: usize,
    pub seed: u64,
    /// Mean effective sample size across cycles, for weight-based schemes.
    pub mean_ess: Option<f64>,
    /// Cycles whose weights collapsed onto a few members.
    pub degenerate_cycles: usize,
    /// Mean transport objective, for plan-based schemes.
    pub mean_objective: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: String,
    pub m: usize,
    pub l: usize,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub r_loc: Option<f64>,
    pub replicates: usize,
    pub rmse_mu: f64,
    pub rmse_mu_lo: f64,
    pub rmse_mu_hi: f64,
    pub rmse_mode: Option<f64>,
    pub rmse_mode_lo: Option<f64>,
    pub rmse_mode_hi: Option<f64>,
    pub crps: f64,
    pub crps_lo: f64,
    pub crps_hi: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
    }
    let file =
        File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_runs(path: &Path, rows: &[RunRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_runs(path: &Path) -> Result<Vec<RunRow>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut r = csv::Reader::from_reader(file);
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec.with_context(|| format!("reading {}", path.display()))?);
    }
    Ok(rows)
}

pub fn write_diagnostics(path: &Path, rows: &[DiagnosticsRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_csv(path, rows)
}

/// Group key: everything that identifies a configuration. Floats are
/// compared by bit pattern, which is exact for values that came from the
/// same config.
fn group_key(row: &RunRow) -> (String, usize, usize, Option<u64>, Option<u64>, Option<u64>) {
    (
        row.scheme.clone(),
        row.m,
        row.l,
        row.alpha.map(f64::to_bits),
        row.lambda.map(f64::to_bits),
        row.r_loc.map(f64::to_bits),
    )
}

/// Collapse replicate rows into one summary row per configuration, in
/// first-appearance order.
pub fn summarize(rows: &[RunRow]) -> Result<Vec<SummaryRow>> {
    let mut order: Vec<(String, usize, usize, Option<u64>, Option<u64>, Option<u64>)> = Vec::new();
    let mut groups: std::collections::HashMap<_, Vec<&RunRow>> = std::collections::HashMap::new();
    for row in rows {
        let key = group_key(row);
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key.clone());
                Vec::new()
            })
            .push(row);
    }
    let mut out = Vec::with_capacity(order.len());
    for key in order {
        let members = &groups[&key];
        let first = members[0];
        let mu: Vec<f64> = members.iter().map(|r| r.rmse_mu).collect();
        let crps: Vec<f64> = members.iter().map(|r| r.crps).collect();
        let modes: Vec<f64> = members.iter().filter_map(|r| r.rmse_mode).collect();
        let mu_ci = mean_ci95(&mu)?;
        let crps_ci = mean_ci95(&crps)?;
        let mode_ci: Option<ConfidenceInterval> =
            if modes.len() == members.len() { Some(mean_ci95(&modes)?) } else { None };
        out.push(SummaryRow {
            scheme: first.scheme.clone(),
            m: first.m,
            l: first.l,
            alpha: first.alpha,
            lambda: first.lambda,
            r_loc: first.r_loc,
            replicates: members.len(),
            rmse_mu: mu_ci.mean,
            rmse_mu_lo: mu_ci.lo,
            rmse_mu_hi: mu_ci.hi,
            rmse_mode: mode_ci.map(|c| c.mean),
            rmse_mode_lo: mode_ci.map(|c| c.lo),
            rmse_mode_hi: mode_ci.map(|c| c.hi),
            crps: crps_ci.mean,
            crps_lo: crps_ci.lo,
            crps_hi: crps_ci.hi,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn row(scheme: &str, m: usize, seed: u64, rmse: f64) -> RunRow {
        RunRow {
            scheme: scheme.into(),
            m,
            l: 6,
            alpha: None,
            lambda: Some(40.0),
            r_loc: None,
            seed,
            rmse_mu: rmse,
            rmse_mode: None,
            crps: rmse / 2.0,
        }
    }

    #[test]
    fn runs_round_trip_through_csv() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("runs.csv");
        let rows = vec![row("etps-pathwise", 25, 1, 1.4), row("etps-pathwise", 25, 2, 1.6)];
        write_runs(&path, &rows).unwrap();
        let back = read_runs(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].scheme, "etps-pathwise");
        assert_eq!(back[0].lambda, Some(40.0));
        assert_eq!(back[0].rmse_mode, None);
        assert_eq!(back[1].rmse_mu, 1.6);
    }

    #[test]
    fn summaries_group_by_configuration() {
        let rows = vec![
            row("esrs", 15, 1, 2.0),
            row("esrs", 15, 2, 2.2),
            row("esrs", 20, 3, 1.8),
            row("nets-optimal", 15, 4, 1.9),
        ];
        let summary = summarize(&rows).unwrap();
        assert_eq!(summary.len(), 3);
        assert_eq!(summary[0].scheme, "esrs");
        assert_eq!(summary[0].m, 15);
        assert_eq!(summary[0].replicates, 2);
        assert!((summary[0].rmse_mu - 2.1).abs() < 1e-12);
        assert!(summary[0].rmse_mu_lo < 2.1 && summary[0].rmse_mu_hi > 2.1);
        assert_eq!(summary[1].m, 20);
        assert_eq!(summary[2].scheme, "nets-optimal");
        assert_eq!(summary[0].rmse_mode, None);
    }
}
