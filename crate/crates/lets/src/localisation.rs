//! Observation-space localisation in space and time.
//!
//! Each scalar component of the window — site `s` at window time `l` —
//! gets its own analysis, with every observation's precision scaled by a
//! compactly supported taper `ρ(d/r_loc)`. The distance `d` is either the
//! plain grid distance from `s` to the observation site (stationary in
//! time), or is measured from the *effective site* `s*`: the grid point
//! whose value at observation time is maximally correlated with site `s`
//! a lag `τ = k − l` earlier, read off a precomputed autocorrelation
//! table. On an advecting system the effective site tracks the flow, so
//! observations keep their grip on window components they will only
//! influence τ steps later.
//!
//! Per-component updates make smoothing cheap in high dimension: the
//! square-root analysis sees a handful of active observations per site
//! (narrow tapers hit its thin route), and the transport analysis reduces
//! to scalar problems solved by sorting. Components sharing an effective
//! site share their taper, so the per-site transforms and weights are
//! computed once and reused across window times.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::Rng;

use crate::ensemble::{Scheme, Transform, Weights, Window};
use crate::error::{Error, Result};
use crate::observation::{localized_weights, ObsModel};
use crate::smoothers::riccati::{riccati_delta_seeded, MomentTarget};
use crate::smoothers::{esrs_update, nets_transform, Rotation};
use crate::transport::{cost_matrix, solve_1d, solve_exact};

/// Geometry of the state grid: sites are the integer indices `0..extent`,
/// optionally wrapped on a ring.
#[derive(Clone, Copy, Debug)]
pub struct SpatialLayout {
    pub extent: usize,
    pub periodic: bool,
}

impl SpatialLayout {
    /// Open chain of `extent` sites.
    pub fn line(extent: usize) -> Self {
        SpatialLayout { extent, periodic: false }
    }

    /// Ring of `extent` sites with wraparound distances.
    pub fn ring(extent: usize) -> Self {
        SpatialLayout { extent, periodic: true }
    }

    /// Grid distance between sites, `min{|s−u|, |s−u±extent|}` on a ring.
    pub fn distance(&self, s: usize, u: usize) -> f64 {
        debug_assert!(s < self.extent && u < self.extent, "site out of range");
        let direct = s.abs_diff(u);
        if self.periodic { direct.min(self.extent - direct) as f64 } else { direct as f64 }
    }
}

/// Fifth-order piecewise-rational taper: 1 at the origin, identically zero
/// from 2 outward, monotone in between.
pub fn gaspari_cohn(r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::InvalidArgument(format!("taper argument {r} must be ≥ 0")));
    }
    let v = if r < 1.0 {
        1.0 + r * r * (-5.0 / 3.0 + r * (5.0 / 8.0 + r * (0.5 - 0.25 * r)))
    } else if r < 2.0 {
        4.0 - 2.0 / (3.0 * r) + r * (-5.0 + r * (5.0 / 3.0 + r * (5.0 / 8.0 + r * (1.0 / 12.0 * r - 0.5))))
    } else {
        0.0
    };
    // the second piece dips a hair below zero near its root in floating point
    Ok(v.max(0.0))
}

/// Sample autocorrelations of a free model run, one matrix per time lag.
///
/// `gamma(τ)[s, i]` is the correlation between site `s` at some time and
/// site `i` a lag `τ` *later*, so each row of `Γ_τ` scans where the signal
/// now at `s` will show up τ steps from now.
#[derive(Clone, Debug)]
pub struct AutocorrelationTable {
    gamma: Vec<DMatrix<f64>>,
    /// Length of the series the table was estimated from.
    pub series_len: usize,
}

impl AutocorrelationTable {
    /// Largest available lag.
    pub fn max_tau(&self) -> usize {
        self.gamma.len() - 1
    }

    /// Number of state sites.
    pub fn n_x(&self) -> usize {
        self.gamma[0].nrows()
    }

    pub fn gamma(&self, tau: usize) -> Result<&DMatrix<f64>> {
        self.gamma.get(tau).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "lag {tau} beyond the table's maximum {}",
                self.gamma.len() - 1
            ))
        })
    }

    /// All lag matrices, ordered τ = 0, 1, …
    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.gamma
    }

    /// The site maximally correlated (in magnitude) with site `s` a lag
    /// `τ` later; ties go to the smallest index.
    pub fn effective_site(&self, s: usize, tau: usize) -> Result<usize> {
        let g = self.gamma(tau)?;
        if s >= g.nrows() {
            return Err(Error::InvalidArgument(format!("site {s} beyond {} sites", g.nrows())));
        }
        let mut best = 0;
        let mut best_mag = f64::NEG_INFINITY;
        for (i, v) in g.row(s).iter().enumerate() {
            if v.abs() > best_mag {
                best_mag = v.abs();
                best = i;
            }
        }
        Ok(best)
    }

    /// Rebuild a table from stored matrices, re-checking the invariants
    /// (unit diagonal at lag zero, entries within the correlation range).
    pub fn from_parts(gamma: Vec<DMatrix<f64>>, series_len: usize) -> Result<Self> {
        if gamma.is_empty() {
            return Err(Error::InvalidArgument("empty autocorrelation table".into()));
        }
        let n = gamma[0].nrows();
        for (tau, g) in gamma.iter().enumerate() {
            if g.nrows() != n || g.ncols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "lag-{tau} matrix is {}×{}, expected {n}×{n}",
                    g.nrows(),
                    g.ncols()
                )));
            }
            if g.iter().any(|v| !v.is_finite() || v.abs() > 1.0 + 1e-6) {
                return Err(Error::InvalidArgument(format!(
                    "lag-{tau} matrix has entries outside the correlation range"
                )));
            }
        }
        for i in 0..n {
            if (gamma[0][(i, i)] - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidArgument(format!(
                    "lag-0 diagonal at site {i} is {}, not 1",
                    gamma[0][(i, i)]
                )));
            }
        }
        Ok(AutocorrelationTable { gamma, series_len })
    }
}

/// Estimate the table from a free run, columns of `series` being state
/// snapshots at consecutive steps.
pub fn autocorrelation_table(
    series: &DMatrix<f64>,
    max_tau: usize,
) -> Result<AutocorrelationTable> {
    let (n_x, t_len) = series.shape();
    if t_len <= max_tau + 2 {
        return Err(Error::InvalidArgument(format!(
            "series of {t_len} steps cannot support lag {max_tau}"
        )));
    }
    let mut centered = series.clone();
    for mut row in centered.row_iter_mut() {
        let mean = row.sum() / t_len as f64;
        row.add_scalar_mut(-mean);
    }
    // lag-0 scale: V[i] = √Σ₀[i,i]
    let norm = (t_len - 1) as f64;
    let mut v = DVector::zeros(n_x);
    for i in 0..n_x {
        let var = centered.row(i).norm_squared() / norm;
        if var <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "state component {i} has zero variance in the series"
            )));
        }
        v[i] = var.sqrt();
    }
    let mut gamma = Vec::with_capacity(max_tau + 1);
    for tau in 0..=max_tau {
        // Σ_τ[s, i] pairs site s with site i a lag τ later
        let early = centered.columns(0, t_len - tau);
        let late = centered.columns(tau, t_len - tau);
        let mut sigma = early * late.transpose() / norm;
        for s in 0..n_x {
            for i in 0..n_x {
                sigma[(s, i)] /= v[s] * v[i];
            }
        }
        gamma.push(sigma);
    }
    Ok(AutocorrelationTable { gamma, series_len: t_len })
}

/// How distances respond to the time offset within the window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistanceScheme {
    /// The plain grid distance at every window time.
    Stationary,
    /// Distance measured from the effective site of the autocorrelation
    /// table at lag `τ = k − l`.
    Autocorrelation,
}

#[derive(Clone, Copy, Debug)]
pub struct LocalisationConfig {
    /// Localisation radius; the taper vanishes beyond twice this distance.
    pub radius: f64,
    pub scheme: DistanceScheme,
}

impl LocalisationConfig {
    pub fn stationary(radius: f64) -> Self {
        LocalisationConfig { radius, scheme: DistanceScheme::Stationary }
    }

    pub fn autocorrelation(radius: f64) -> Self {
        LocalisationConfig { radius, scheme: DistanceScheme::Autocorrelation }
    }

    fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "localisation radius {} must be positive",
                self.radius
            )));
        }
        Ok(())
    }
}

fn effective_site(
    s: usize,
    tau: usize,
    scheme: DistanceScheme,
    table: Option<&AutocorrelationTable>,
) -> Result<usize> {
    match scheme {
        DistanceScheme::Stationary => Ok(s),
        DistanceScheme::Autocorrelation => table
            .ok_or_else(|| {
                Error::InvalidArgument("autocorrelation distances need a table".into())
            })?
            .effective_site(s, tau),
    }
}

/// Distance from state site `s` at time offset `τ` back from the
/// observation time to observation site `u`.
pub fn localized_distance(
    s: usize,
    u: usize,
    tau: usize,
    layout: &SpatialLayout,
    scheme: DistanceScheme,
    table: Option<&AutocorrelationTable>,
) -> Result<f64> {
    Ok(layout.distance(effective_site(s, tau, scheme, table)?, u))
}

fn site_taper(s_eff: usize, obs: &ObsModel, layout: &SpatialLayout, radius: f64) -> Result<DVector<f64>> {
    let mut c = DVector::zeros(obs.n_y());
    for (row, &u) in obs.obs_sites.iter().enumerate() {
        c[row] = gaspari_cohn(layout.distance(s_eff, u) / radius)?;
    }
    Ok(c)
}

/// Per-observation taper coefficients for the component at site `s`, time
/// offset `τ`: the `u`-th entry is `ρ(d(p_s, q_u)/r_loc)`, the diagonal of
/// the precision-scaling matrix.
pub fn taper_coefficients(
    s: usize,
    tau: usize,
    obs: &ObsModel,
    layout: &SpatialLayout,
    cfg: &LocalisationConfig,
    table: Option<&AutocorrelationTable>,
) -> Result<DVector<f64>> {
    cfg.validate()?;
    site_taper(effective_site(s, tau, cfg.scheme, table)?, obs, layout, cfg.radius)
}

/// Which analysis runs per component.
#[derive(Clone, Copy, Debug)]
pub enum LocalKind {
    /// Square-root update with tapered observation precision.
    Esrs,
    /// Scalar transport plans from tapered importance weights, sorted per
    /// component; `pathwise` instead couples each site's whole time column
    /// with one plan anchored at the observation time.
    Etps { corrected: bool, pathwise: bool },
    /// Moment-matching transform from tapered importance weights.
    Nets { rotation: Rotation },
}

/// One localized analysis: every window component is updated by its own
/// tapered transform, in place.
#[allow(clippy::too_many_arguments)]
pub fn localized_update<R: Rng>(
    kind: LocalKind,
    window: &mut Window,
    y: &DVector<f64>,
    obs: &ObsModel,
    layout: &SpatialLayout,
    cfg: &LocalisationConfig,
    table: Option<&AutocorrelationTable>,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    if window.is_empty() {
        return Err(Error::InvalidArgument("cannot update an empty window".into()));
    }
    if window.n_x() != layout.extent {
        return Err(Error::DimensionMismatch(format!(
            "window has {} sites, layout {}",
            window.n_x(),
            layout.extent
        )));
    }
    let lag = window.lag();
    let n_x = layout.extent;
    let x_newest = window.newest().clone();

    match kind {
        LocalKind::Esrs => {
            let mut transforms: HashMap<usize, Transform> = HashMap::new();
            for tau in 0..=lag {
                let block = lag - tau;
                for s in 0..n_x {
                    let se = effective_site(s, tau, cfg.scheme, table)?;
                    if !transforms.contains_key(&se) {
                        let scale = site_taper(se, obs, layout, cfg.radius)?;
                        let up = esrs_update(&x_newest, y, obs, &scale)?;
                        transforms.insert(se, up.transform);
                    }
                    apply_to_row(window, block, s, &transforms[&se].d);
                }
            }
        }
        LocalKind::Etps { corrected, pathwise } => {
            let mut weights: HashMap<usize, (Weights, Option<MomentTarget>)> = HashMap::new();
            let mut weights_for = |se: usize| -> Result<(Weights, Option<MomentTarget>)> {
                if let Some(hit) = weights.get(&se) {
                    return Ok(hit.clone());
                }
                let scale = site_taper(se, obs, layout, cfg.radius)?;
                let w = localized_weights(&x_newest, y, obs, &scale)?.weights;
                let target = if corrected { Some(MomentTarget::of(&w)?) } else { None };
                weights.insert(se, (w.clone(), target.clone()));
                Ok((w, target))
            };
            if pathwise {
                for s in 0..n_x {
                    let (w, target) = weights_for(effective_site(s, 0, cfg.scheme, table)?)?;
                    let mut column = DMatrix::zeros(lag + 1, window.m());
                    for block in 0..=lag {
                        column.row_mut(block).copy_from(&window.block(block).row(s));
                    }
                    let plan = if lag == 0 {
                        solve_1d(column.row(0).transpose().as_slice(), &w)?
                    } else {
                        solve_exact(&cost_matrix(&column), &w)?
                    };
                    let d = finished_plan(plan, &w, target.as_ref())?;
                    for block in 0..=lag {
                        apply_to_row(window, block, s, &d);
                    }
                }
            } else {
                for tau in 0..=lag {
                    let block = lag - tau;
                    for s in 0..n_x {
                        let (w, target) = weights_for(effective_site(s, tau, cfg.scheme, table)?)?;
                        let row: Vec<f64> = window.block(block).row(s).iter().copied().collect();
                        let plan = solve_1d(&row, &w)?;
                        let d = finished_plan(plan, &w, target.as_ref())?;
                        apply_to_row(window, block, s, &d);
                    }
                }
            }
        }
        LocalKind::Nets { rotation } => {
            let mut weights: HashMap<usize, Weights> = HashMap::new();
            for tau in 0..=lag {
                let block = lag - tau;
                for s in 0..n_x {
                    let se = effective_site(s, tau, cfg.scheme, table)?;
                    if !weights.contains_key(&se) {
                        let scale = site_taper(se, obs, layout, cfg.radius)?;
                        weights.insert(se, localized_weights(&x_newest, y, obs, &scale)?.weights);
                    }
                    let row_matrix = DMatrix::from_rows(&[RowDVector::from_row_slice(
                        window.block(block).row(s).transpose().as_slice(),
                    )]);
                    let t = nets_transform(&row_matrix, &weights[&se], rotation, rng)?;
                    apply_to_row(window, block, s, &t.d);
                }
            }
        }
    }
    Ok(())
}

fn apply_to_row(window: &mut Window, block: usize, s: usize, d: &DMatrix<f64>) {
    let updated = window.block(block).row(s) * d;
    window.block_mut(block).row_mut(s).copy_from(&updated);
}

/// Validate a per-component plan (optionally corrected) into a transform
/// matrix.
fn finished_plan(
    plan: crate::transport::Plan,
    w: &Weights,
    target: Option<&MomentTarget>,
) -> Result<DMatrix<f64>> {
    let tol = (4.0 * plan.marginal_error).max(1e-9);
    let d = match target {
        Some(t) => {
            let (delta, _) = riccati_delta_seeded(&plan.d, w, t)?;
            plan.d + delta
        }
        None => plan.d,
    };
    Ok(Transform::with_first_moment(d, Scheme::Etps, w.as_vector(), tol)?.d)
}
