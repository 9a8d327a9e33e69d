//! Linear observation operator, synthetic-data generation for twin
//! experiments, and importance-weight computation (global, tempered, and
//! localized).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::ensemble::Weights;
use crate::error::{Error, Result};

/// Log-weight span beyond which the weight vector is flagged as degenerate.
pub const DEGENERACY_SPAN: f64 = 700.0;

/// Linear observation model `y = H·x + ν`, `ν ~ N(0, diag(r))`.
#[derive(Clone, Debug)]
pub struct ObsModel {
    /// `N_y × N_x` forward operator.
    pub h: DMatrix<f64>,
    /// Diagonal of the observation-error covariance.
    pub r: DVector<f64>,
    /// State index each observation row reads, for selection operators;
    /// drives the distance computations of spatial localisation.
    pub obs_sites: Vec<usize>,
}

impl ObsModel {
    pub fn new(h: DMatrix<f64>, r: DVector<f64>, obs_sites: Vec<usize>) -> Result<Self> {
        if h.nrows() != r.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} observation rows but {} error variances",
                h.nrows(),
                r.len()
            )));
        }
        if r.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidArgument("observation variances must be ≥ 0".into()));
        }
        Ok(ObsModel { h, r, obs_sites })
    }

    /// Observe the listed state components directly, each with error
    /// variance `r`.
    pub fn select(sites: &[usize], n_x: usize, r: f64) -> Result<Self> {
        let mut h = DMatrix::zeros(sites.len(), n_x);
        for (row, &s) in sites.iter().enumerate() {
            if s >= n_x {
                return Err(Error::InvalidArgument(format!("site {s} out of range for n_x = {n_x}")));
            }
            h[(row, s)] = 1.0;
        }
        Self::new(h, DVector::from_element(sites.len(), r), sites.to_vec())
    }

    pub fn n_y(&self) -> usize {
        self.h.nrows()
    }
}

/// Draw one synthetic observation `y = H·x + ν`. Zero variances are allowed
/// here (and only here): they give exact observations.
pub fn synth_observe<R: Rng>(x_true: &DVector<f64>, model: &ObsModel, rng: &mut R) -> DVector<f64> {
    let mut y = &model.h * x_true;
    for (u, v) in y.iter_mut().enumerate() {
        *v += model.r[u].sqrt() * rng.sample::<f64, _>(StandardNormal);
    }
    y
}

/// Importance weights plus the degeneracy diagnostics of the update.
#[derive(Clone, Debug)]
pub struct ComputedWeights {
    pub weights: Weights,
    /// Spread `max − min` of the unnormalized log-weights.
    pub log_span: f64,
    /// True when the span exceeds [`DEGENERACY_SPAN`]: the normalized
    /// weights then carry essentially a single member.
    pub degenerate: bool,
}

/// Unnormalized Gaussian log-likelihoods with a per-observation precision
/// scaling: `log w_i = −(1/2)·Σ_u scale_u·(H·xⁱ − y)_u² / r_u`.
///
/// Tempering is `scale ≡ α`; R-localisation passes the taper coefficients.
pub fn log_likelihoods(
    x_fc: &DMatrix<f64>,
    y: &DVector<f64>,
    model: &ObsModel,
    scale: &DVector<f64>,
) -> Result<DVector<f64>> {
    if x_fc.nrows() != model.h.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "ensemble state dimension {} vs operator expecting {}",
            x_fc.nrows(),
            model.h.ncols()
        )));
    }
    if y.len() != model.n_y() || scale.len() != model.n_y() {
        return Err(Error::DimensionMismatch("observation/scale length".into()));
    }
    if model.r.iter().zip(scale.iter()).any(|(&r, &s)| s != 0.0 && r <= 0.0) {
        return Err(Error::InvalidArgument(
            "zero observation variance cannot enter a likelihood".into(),
        ));
    }
    let hx = &model.h * x_fc;
    let mut lw = DVector::zeros(x_fc.ncols());
    for i in 0..x_fc.ncols() {
        let mut acc = 0.0;
        for u in 0..model.n_y() {
            if scale[u] != 0.0 {
                let d = hx[(u, i)] - y[u];
                acc += scale[u] * d * d / model.r[u];
            }
        }
        lw[i] = -0.5 * acc;
    }
    Ok(lw)
}

fn weights_from_scaled(
    x_fc: &DMatrix<f64>,
    y: &DVector<f64>,
    model: &ObsModel,
    scale: &DVector<f64>,
) -> Result<ComputedWeights> {
    let lw = log_likelihoods(x_fc, y, model, scale)?;
    let (weights, log_span) = Weights::from_log_weights(&lw);
    Ok(ComputedWeights { weights, log_span, degenerate: log_span > DEGENERACY_SPAN })
}

/// Normalized importance weights with tempering exponent `α ∈ (0, 1]`
/// (the error covariance enters as `R/α`).
pub fn importance_weights(
    x_fc: &DMatrix<f64>,
    y: &DVector<f64>,
    model: &ObsModel,
    temper: f64,
) -> Result<ComputedWeights> {
    if !(temper > 0.0 && temper <= 1.0) {
        return Err(Error::InvalidArgument(format!("tempering exponent must be in (0, 1], got {temper}")));
    }
    weights_from_scaled(x_fc, y, model, &DVector::from_element(model.n_y(), temper))
}

/// Importance weights with the inverse error covariance tapered per
/// observation: `R⁻¹ → C·R⁻¹` with `C = diag(taper)`, entries in `[0, 1]`.
pub fn localized_weights(
    x_fc: &DMatrix<f64>,
    y: &DVector<f64>,
    model: &ObsModel,
    taper: &DVector<f64>,
) -> Result<ComputedWeights> {
    if taper.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
        return Err(Error::InvalidArgument("taper coefficients must lie in [0, 1]".into()));
    }
    weights_from_scaled(x_fc, y, model, taper)
}

/// Localized weights with an additional tempering exponent, for hybrid
/// smoothers running under R-localisation.
pub fn tempered_localized_weights(
    x_fc: &DMatrix<f64>,
    y: &DVector<f64>,
    model: &ObsModel,
    taper: &DVector<f64>,
    temper: f64,
) -> Result<ComputedWeights> {
    if !(temper > 0.0 && temper <= 1.0) {
        return Err(Error::InvalidArgument(format!("tempering exponent must be in (0, 1], got {temper}")));
    }
    if taper.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
        return Err(Error::InvalidArgument("taper coefficients must lie in [0, 1]".into()));
    }
    weights_from_scaled(x_fc, y, model, &(taper * temper))
}

/// `1/Σ wᵢ²`, in `[1, M]`: the usual weight-degeneracy diagnostic.
pub fn effective_sample_size(w: &Weights) -> f64 {
    1.0 / w.as_vector().iter().map(|v| v * v).sum::<f64>()
}
