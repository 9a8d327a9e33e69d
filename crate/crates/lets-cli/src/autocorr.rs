//! Building and caching lagged autocorrelation tables for the
//! distance-aware localisation scheme. The table is a property of the
//! model's climatology, so it is estimated once from a long free run at the
//! window-shift cadence and cached next to the experiment's outputs.

use std::fs::{self, File};
use std::io::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;

use lets::localisation::{autocorrelation_table, AutocorrelationTable};
use lets::models::propagate_ensemble;
use lets::rng::SeedTree;

use crate::config::{CadenceName, ExperimentConfig};
use crate::experiment::spun_up_state;

/// Snapshot series for table estimation: a free model run sampled at the
/// same cadence the window shifts at.
pub fn simulation_series(
    cfg: &ExperimentConfig,
    snapshots: usize,
    tree: &SeedTree,
) -> Result<DMatrix<f64>> {
    let spec = cfg.model_spec();
    let mut rng = tree.rng();
    let mut carrier = spun_up_state(cfg, &mut rng)?;
    let steps = match cfg.cadence() {
        CadenceName::Observation => cfg.observation.every,
        CadenceName::Step => 1,
    };
    let n_x = cfg.n_x();
    let mut series = DMatrix::zeros(n_x, snapshots);
    for t in 0..snapshots {
        propagate_ensemble(&mut carrier, &spec, steps, &mut rng)?;
        series.set_column(t, &carrier.current().column(0).clone_owned());
    }
    Ok(series)
}

pub fn build_table(
    cfg: &ExperimentConfig,
    snapshots: usize,
    max_tau: usize,
    tree: &SeedTree,
) -> Result<AutocorrelationTable> {
    let series = simulation_series(cfg, snapshots, tree)?;
    autocorrelation_table(&series, max_tau)
        .map_err(|e| anyhow::anyhow!("estimating autocorrelations: {e}"))
}

/// CSV layout: a comment line with the series length, then one row per
/// (lag, site, other-site) entry.
pub fn save_table(path: &Path, table: &AutocorrelationTable) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)
                .with_context(|| format!("creating table directory {}", dir.display()))?;
        }
    }
    let mut file =
        File::create(path).with_context(|| format!("creating {}", path.display()))?;
    writeln!(file, "# series_len={}", table.series_len)?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["tau", "site", "other", "gamma"])?;
    for (tau, g) in table.matrices().iter().enumerate() {
        for s in 0..g.nrows() {
            for u in 0..g.ncols() {
                w.write_record([
                    tau.to_string(),
                    s.to_string(),
                    u.to_string(),
                    g[(s, u)].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_table(path: &Path) -> Result<AutocorrelationTable> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut series_len = None;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# series_len=") {
            series_len = Some(rest.trim().parse::<usize>().with_context(|| {
                format!("{}: bad series_len comment", path.display())
            })?);
        }
    }
    let Some(series_len) = series_len else {
        bail!("{}: missing the series_len comment line", path.display());
    };
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let mut entries: Vec<(usize, usize, usize, f64)> = Vec::new();
    let mut max_tau = 0usize;
    let mut n_x = 0usize;
    for rec in r.records() {
        let rec = rec.with_context(|| format!("reading {}", path.display()))?;
        let tau: usize = rec[0].parse()?;
        let s: usize = rec[1].parse()?;
        let u: usize = rec[2].parse()?;
        let v: f64 = rec[3].parse()?;
        max_tau = max_tau.max(tau);
        n_x = n_x.max(s + 1).max(u + 1);
        entries.push((tau, s, u, v));
    }
    if entries.is_empty() {
        bail!("{}: no table entries", path.display());
    }
    let mut gamma = vec![DMatrix::from_element(n_x, n_x, f64::NAN); max_tau + 1];
    for (tau, s, u, v) in entries {
        gamma[tau][(s, u)] = v;
    }
    AutocorrelationTable::from_parts(gamma, series_len)
        .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

/// The table for an experiment: loaded from the configured cache when the
/// file exists, otherwise built from a free run seeded by the experiment's
/// table stream and saved back to the cache path when one is given.
pub fn ensure_table(cfg: &ExperimentConfig, tree: &SeedTree) -> Result<AutocorrelationTable> {
    let block = cfg
        .localisation
        .as_ref()
        .context("[localisation]: required for an autocorrelation table")?;
    if let Some(path) = &block.table {
        if path.exists() {
            let table = load_table(path)?;
            if table.n_x() != cfg.n_x() {
                bail!(
                    "[localisation] table: {} covers {} sites but the model has {}",
                    path.display(),
                    table.n_x(),
                    cfg.n_x()
                );
            }
            if table.max_tau() < cfg.smoother.lag {
                bail!(
                    "[localisation] table: {} stops at lag {} but the window needs {}",
                    path.display(),
                    table.max_tau(),
                    cfg.smoother.lag
                );
            }
            return Ok(table);
        }
    }
    let table = build_table(cfg, block.snapshots, cfg.smoother.lag, tree)?;
    if let Some(path) = &block.table {
        save_table(path, &table)?;
    }
    Ok(table)
}
