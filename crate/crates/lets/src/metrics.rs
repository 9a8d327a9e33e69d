//! Scoring assimilation runs against the simulated truth.
//!
//! Three scores per run: RMSE of the ensemble mean, RMSE of the marginal
//! KDE mode (the weighted posterior can be far from Gaussian, so the mode
//! can beat the mean), and the energy-form CRPS of the raw ensemble.
//! Replicate runs are condensed to a mean with a normal-approximation 95%
//! interval.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Time-averaged root-mean-square error: mean over steps of
/// `√(‖x̂ − x‖²/N_x)`.
pub fn rmse(estimates: &[DVector<f64>], truth: &[DVector<f64>]) -> Result<f64> {
    if estimates.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates against {} truth states",
            estimates.len(),
            truth.len()
        )));
    }
    if estimates.is_empty() {
        return Err(Error::InvalidArgument("no time steps to score".into()));
    }
    let mut acc = 0.0;
    for (e, t) in estimates.iter().zip(truth) {
        if e.len() != t.len() {
            return Err(Error::DimensionMismatch(format!(
                "estimate of dim {} against truth of dim {}",
                e.len(),
                t.len()
            )));
        }
        acc += ((e - t).norm_squared() / e.len() as f64).sqrt();
    }
    Ok(acc / estimates.len() as f64)
}

/// Mode of a Gaussian kernel density over the samples: argmax on a
/// 512-point grid spanning the sample range padded by three bandwidths,
/// with the Silverman rule `h = 1.06·σ̂·M^{−1/5}`. A spread-free ensemble
/// returns the common value.
pub fn kde_mode(samples: &[f64]) -> Result<f64> {
    let m = samples.len();
    if m == 0 {
        return Err(Error::InvalidArgument("mode of an empty sample set".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite sample".into()));
    }
    let mean = samples.iter().sum::<f64>() / m as f64;
    let var = if m > 1 {
        samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64
    } else {
        0.0
    };
    if var <= 0.0 {
        return Ok(samples[0]);
    }
    let h = 1.06 * var.sqrt() * (m as f64).powf(-0.2);
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    const GRID: usize = 512;
    let dx = (hi - lo) / (GRID - 1) as f64;
    let inv2h2 = 1.0 / (2.0 * h * h);
    // contributions beyond six bandwidths are ~1e-8 relative; skip them
    let reach = 6.0 * h;
    let mut best_g = lo;
    let mut best_density = f64::NEG_INFINITY;
    for g in 0..GRID {
        let x = lo + g as f64 * dx;
        let mut density = 0.0;
        for &s in samples {
            let d = s - x;
            if d.abs() <= reach {
                density += (-d * d * inv2h2).exp();
            }
        }
        if density > best_density {
            best_density = density;
            best_g = x;
        }
    }
    Ok(best_g)
}

/// Marginal KDE mode of every state component of an ensemble.
pub fn mode_vector(x: &DMatrix<f64>) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(x.nrows());
    let mut row = vec![0.0; x.ncols()];
    for i in 0..x.nrows() {
        for (j, v) in x.row(i).iter().enumerate() {
            row[j] = *v;
        }
        out[i] = kde_mode(&row)?;
    }
    Ok(out)
}

/// Continuous ranked probability score in energy form,
/// `(1/M)Σ|xᵢ − y| − (1/2M²)ΣΣ|xᵢ − xⱼ|`, via the sorted identity for the
/// pairwise sum.
pub fn crps(ensemble: &[f64], y: f64) -> Result<f64> {
    let m = ensemble.len();
    if m == 0 {
        return Err(Error::InvalidArgument("CRPS of an empty ensemble".into()));
    }
    let mf = m as f64;
    let spread_to_y: f64 = ensemble.iter().map(|x| (x - y).abs()).sum::<f64>() / mf;
    let mut sorted = ensemble.to_vec();
    sorted.sort_by(f64::total_cmp);
    // ΣᵢΣⱼ|xᵢ−xⱼ| = 2·Σᵢ (2i − M + 1)·x₍ᵢ₎ over the sorted order
    let pairwise: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * i as f64 - mf + 1.0) * x)
        .sum::<f64>()
        * 2.0;
    Ok(spread_to_y - pairwise / (2.0 * mf * mf))
}

/// CRPS of each state component against the truth, averaged over
/// components.
pub fn ensemble_crps(x: &DMatrix<f64>, truth: &DVector<f64>) -> Result<f64> {
    if x.nrows() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{}-row ensemble against truth of dim {}",
            x.nrows(),
            truth.len()
        )));
    }
    let mut acc = 0.0;
    let mut row = vec![0.0; x.ncols()];
    for i in 0..x.nrows() {
        for (j, v) in x.row(i).iter().enumerate() {
            row[j] = *v;
        }
        acc += crps(&row, truth[i])?;
    }
    Ok(acc / x.nrows() as f64)
}

/// Mean and normal-approximation 95% confidence interval of replicate
/// values; a single replicate yields a zero-width interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn mean_ci95(values: &[f64]) -> Result<ConfidenceInterval> {
    let n = values.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no replicate values".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok(ConfidenceInterval { mean, lo: mean, hi: mean });
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let half = 1.96 * (var / n as f64).sqrt();
    Ok(ConfidenceInterval { mean, lo: mean - half, hi: mean + half })
}

/// One replicate's scores.
#[derive(Clone, Copy, Debug)]
pub struct RunMetrics {
    pub rmse_mu: f64,
    /// Absent when the run skipped the KDE-mode track.
    pub rmse_mode: Option<f64>,
    pub crps: f64,
}

/// Replicate scores condensed per metric.
#[derive(Clone, Copy, Debug)]
pub struct MetricSummary {
    pub rmse_mu: ConfidenceInterval,
    pub rmse_mode: Option<ConfidenceInterval>,
    pub crps: ConfidenceInterval,
    pub replicates: usize,
}

pub fn summarize_runs(runs: &[RunMetrics]) -> Result<MetricSummary> {
    let mu: Vec<f64> = runs.iter().map(|r| r.rmse_mu).collect();
    let modes: Vec<f64> = runs.iter().filter_map(|r| r.rmse_mode).collect();
    let crps_vals: Vec<f64> = runs.iter().map(|r| r.crps).collect();
    Ok(MetricSummary {
        rmse_mu: mean_ci95(&mu)?,
        rmse_mode: if modes.len() == runs.len() { Some(mean_ci95(&modes)?) } else { None },
        crps: mean_ci95(&crps_vals)?,
        replicates: runs.len(),
    })
}
