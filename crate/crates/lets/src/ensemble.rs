//! Ensemble containers, moment computations, and the fixed-lag trajectory
//! window that every smoother in this crate transforms in place.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default tolerance on the column sums of a transform matrix.
pub const COL_SUM_TOL: f64 = 1e-10;

/// Ensemble mean, deviations, and (M−1)-normalized sample covariance.
#[derive(Clone, Debug)]
pub struct Stats {
    pub mean: DVector<f64>,
    /// Deviations `A = X − mean·1ᵀ`; rows sum to zero.
    pub deviations: DMatrix<f64>,
    /// `A·Aᵀ/(M−1)`.
    pub covariance: DMatrix<f64>,
}

/// Mean, deviations and sample covariance of the columns of `x`.
pub fn mean_and_deviations(x: &DMatrix<f64>) -> Result<Stats> {
    let m = x.ncols();
    if m < 2 {
        return Err(Error::InvalidEnsemble(format!("need at least 2 members, got {m}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidEnsemble("non-finite entry".into()));
    }
    let mean = x.column_mean();
    let mut deviations = x.clone();
    for mut col in deviations.column_iter_mut() {
        col -= &mean;
    }
    let covariance = &deviations * deviations.transpose() / (m as f64 - 1.0);
    Ok(Stats { mean, deviations, covariance })
}

/// `X·w`: the importance-weighted ensemble mean.
pub fn weighted_mean(x: &DMatrix<f64>, w: &Weights) -> Result<DVector<f64>> {
    if x.ncols() != w.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} ensemble columns vs {} weights",
            x.ncols(),
            w.len()
        )));
    }
    Ok(x * w.as_vector())
}

/// `Σᵢ wᵢ (xⁱ − m)(xⁱ − m)ᵀ` with `m` the weighted mean.
pub fn weighted_covariance(x: &DMatrix<f64>, w: &Weights) -> Result<DMatrix<f64>> {
    let m = weighted_mean(x, w)?;
    let n = x.nrows();
    let mut cov = DMatrix::zeros(n, n);
    for (j, col) in x.column_iter().enumerate() {
        let d = col - &m;
        cov.syger(w[j], &d, &d, 1.0);
    }
    // syger fills the lower triangle; mirror it.
    cov.fill_upper_triangle_with_lower_triangle();
    Ok(cov)
}

/// `(1/M)·Σᵢ (xⁱ − m)(xⁱ − m)ᵀ` with `m` the plain mean.
pub fn empirical_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = x.column_mean();
    let mut dev = x.clone();
    for mut col in dev.column_iter_mut() {
        col -= &mean;
    }
    &dev * dev.transpose() / x.ncols() as f64
}

/// Symmetric PSD square root via eigendecomposition.
///
/// Eigenvalues in `[−tol·max(1, λ_max), 0)` are clamped to zero — weight
/// matrices like `diag(w) − wwᵀ` are PSD only up to round-off — and anything
/// more negative is rejected.
pub fn psd_sqrt(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if s.nrows() != s.ncols() {
        return Err(Error::DimensionMismatch(format!("{}×{} is not square", s.nrows(), s.ncols())));
    }
    let mut asym: f64 = 0.0;
    for i in 0..s.nrows() {
        for j in (i + 1)..s.ncols() {
            asym = asym.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    let scale = s.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if asym > 1e-10 * (1.0 + scale) {
        return Err(Error::NotPsd(format!("asymmetry {asym:.3e}")));
    }
    // Symmetrize exactly so the eigensolver sees what we checked.
    let sym = (s + s.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let lambda_max = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v));
    let floor = -1e-6 * lambda_max.max(1.0);
    // Eigenvalues in the numerical kernel (≈ ±1e-16·λmax) must map to exactly
    // zero: sqrt would otherwise turn them into ~1e-8 noise along directions
    // the caller relies on being annihilated (e.g. the ones vector).
    let cut = 1e-12 * lambda_max.max(0.0);
    let mut vals = eig.eigenvalues;
    for v in vals.iter_mut() {
        if *v < floor {
            return Err(Error::NotPsd(format!("eigenvalue {v:.3e} below {floor:.3e}")));
        }
        *v = if *v <= cut { 0.0 } else { v.sqrt() };
    }
    let scaled = {
        let mut q = eig.eigenvectors.clone();
        for (j, mut col) in q.column_iter_mut().enumerate() {
            col *= vals[j];
        }
        q
    };
    Ok(scaled * eig.eigenvectors.transpose())
}

/// Normalized importance weights on the probability simplex.
#[derive(Clone, Debug)]
pub struct Weights(DVector<f64>);

impl Weights {
    /// Wrap a weight vector; entries must be nonnegative and sum to 1 within
    /// 1e-12 (the stored vector is renormalized to kill the residual drift).
    pub fn new(w: DVector<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidArgument("empty weight vector".into()));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        let sum = w.sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("weights sum to {sum}, not 1")));
        }
        Ok(Weights(w / sum))
    }

    pub fn uniform(m: usize) -> Self {
        Weights(DVector::from_element(m, 1.0 / m as f64))
    }

    /// Normalize unnormalized log-weights with the log-sum-exp trick.
    /// Also returns the span `max − min` of the finite log-weights, the
    /// weight-degeneracy diagnostic.
    pub fn from_log_weights(lw: &DVector<f64>) -> (Self, f64) {
        let max = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut w = DVector::zeros(lw.len());
        if !max.is_finite() {
            // All log-weights −∞: no information, fall back to uniform.
            return (Self::uniform(lw.len()), 0.0);
        }
        let mut sum = 0.0;
        for (i, &l) in lw.iter().enumerate() {
            let e = (l - max).exp();
            w[i] = e;
            sum += e;
        }
        w /= sum;
        let min = lw.iter().cloned().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
        (Weights(w), max - min)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }
}

impl std::ops::Index<usize> for Weights {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Which construction produced a transform matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Esrs,
    Nets,
    Etps,
    Bootstrap,
    HybridStage,
}

/// An `M × M` ensemble transform with columns summing to one, so that mass is
/// conserved: each analysis member is an affine recombination of forecasts.
#[derive(Clone, Debug)]
pub struct Transform {
    pub d: DMatrix<f64>,
    pub scheme: Scheme,
}

impl Transform {
    pub fn new(d: DMatrix<f64>, scheme: Scheme) -> Result<Self> {
        Self::with_tol(d, scheme, COL_SUM_TOL)
    }

    /// Like [`Transform::new`] with an explicit column-sum tolerance, for
    /// transforms from iterative solvers that only meet their own tolerance.
    pub fn with_tol(d: DMatrix<f64>, scheme: Scheme, tol: f64) -> Result<Self> {
        if d.nrows() != d.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "transform must be square, got {}×{}",
                d.nrows(),
                d.ncols()
            )));
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite transform entry".into()));
        }
        for (j, col) in d.column_iter().enumerate() {
            let s = col.sum();
            if (s - 1.0).abs() > tol {
                return Err(Error::InvalidArgument(format!(
                    "column {j} sums to {s}, deviates from 1 by more than {tol:.1e}"
                )));
            }
        }
        Ok(Transform { d, scheme })
    }

    /// Additionally require the first-moment-matching row constraint
    /// `D·1 = M·w` (within `tol`). Probability weights satisfy it for the
    /// resampling-type schemes; square-root schemes pass their (possibly
    /// signed) mean-update weights.
    pub fn with_first_moment(
        d: DMatrix<f64>,
        scheme: Scheme,
        mean_weights: &DVector<f64>,
        tol: f64,
    ) -> Result<Self> {
        let t = Self::with_tol(d, scheme, tol)?;
        let m = t.d.ncols() as f64;
        for (i, row) in t.d.row_iter().enumerate() {
            let s = row.sum();
            if (s - m * mean_weights[i]).abs() > tol * m {
                return Err(Error::InvalidArgument(format!(
                    "row {i} sums to {s}, expected M·w = {}",
                    m * mean_weights[i]
                )));
            }
        }
        Ok(t)
    }

    pub fn m(&self) -> usize {
        self.d.ncols()
    }

    /// Identity transform (the no-information analysis).
    pub fn identity(m: usize, scheme: Scheme) -> Self {
        Transform { d: DMatrix::identity(m, m), scheme }
    }
}

/// Fixed-lag window of per-time ensemble blocks, oldest first.
///
/// The window holds at most `max_lag + 1` blocks of shape `n_x × M`; during
/// warm-up (fewer shifts than `max_lag`) it is shorter. Flattened, it is the
/// `(L+1)·N_x × M` stacked trajectory ensemble the smoothers transform.
#[derive(Clone, Debug)]
pub struct Window {
    blocks: VecDeque<DMatrix<f64>>,
    max_lag: usize,
    shifts: usize,
}

impl Window {
    pub fn new(max_lag: usize) -> Self {
        Window { blocks: VecDeque::new(), max_lag, shifts: 0 }
    }

    /// Append the newest block; once the window is full the oldest block is
    /// dropped and returned (it is the finalized fixed-lag estimate for its
    /// time).
    pub fn shift(&mut self, new_block: DMatrix<f64>) -> Result<Option<DMatrix<f64>>> {
        if let Some(front) = self.blocks.front() {
            if front.nrows() != new_block.nrows() || front.ncols() != new_block.ncols() {
                return Err(Error::DimensionMismatch(format!(
                    "block {}×{} pushed into window of {}×{} blocks",
                    new_block.nrows(),
                    new_block.ncols(),
                    front.nrows(),
                    front.ncols()
                )));
            }
        }
        self.blocks.push_back(new_block);
        self.shifts += 1;
        Ok(if self.blocks.len() > self.max_lag + 1 { self.blocks.pop_front() } else { None })
    }

    /// Current lag `L = min(k, max_lag)`; zero for a single-block window.
    pub fn lag(&self) -> usize {
        self.blocks.len().saturating_sub(1)
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    /// Number of blocks currently held (`L + 1`).
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Time index of the newest block: blocks are numbered from 0 in shift
    /// order, one time unit per shift.
    pub fn time_index(&self) -> usize {
        self.shifts.saturating_sub(1)
    }

    /// Time index of the oldest block still in the window.
    pub fn oldest_time(&self) -> usize {
        self.time_index() - self.lag()
    }

    pub fn n_x(&self) -> usize {
        self.blocks.front().map_or(0, |b| b.nrows())
    }

    pub fn m(&self) -> usize {
        self.blocks.front().map_or(0, |b| b.ncols())
    }

    /// Block `l` with 0 the oldest.
    pub fn block(&self, l: usize) -> &DMatrix<f64> {
        &self.blocks[l]
    }

    pub fn block_mut(&mut self, l: usize) -> &mut DMatrix<f64> {
        &mut self.blocks[l]
    }

    pub fn newest(&self) -> &DMatrix<f64> {
        self.blocks.back().expect("empty window")
    }

    pub fn blocks(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        self.blocks.iter()
    }

    /// Stack all blocks into the `(L+1)·N_x × M` trajectory matrix.
    pub fn flatten(&self) -> DMatrix<f64> {
        let (n_x, m) = (self.n_x(), self.m());
        let mut out = DMatrix::zeros(self.len() * n_x, m);
        for (l, b) in self.blocks.iter().enumerate() {
            out.view_mut((l * n_x, 0), (n_x, m)).copy_from(b);
        }
        out
    }

    /// Apply one transform window-wide: every block becomes `X_l · D`.
    pub fn apply(&mut self, t: &Transform) -> Result<()> {
        if t.m() != self.m() {
            return Err(Error::DimensionMismatch(format!(
                "transform is {}×{} but ensemble has {} members",
                t.m(),
                t.m(),
                self.m()
            )));
        }
        for b in self.blocks.iter_mut() {
            *b = &*b * &t.d;
        }
        Ok(())
    }

    /// Apply one transform per block (temporally localised analysis).
    pub fn apply_per_time(&mut self, ts: &[Transform]) -> Result<()> {
        if ts.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} transforms for a window of {} blocks",
                ts.len(),
                self.len()
            )));
        }
        for (b, t) in self.blocks.iter_mut().zip(ts) {
            if t.m() != b.ncols() {
                return Err(Error::DimensionMismatch(format!(
                    "transform is {}×{} but ensemble has {} members",
                    t.m(),
                    t.m(),
                    b.ncols()
                )));
            }
            *b = &*b * &t.d;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;
    use rand::Rng;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn moments_of_identical_members_vanish() {
        let x = mat(2, 2, &[0.0, 0.0, 0.0, 0.0]);
        let s = mean_and_deviations(&x).unwrap();
        assert_eq!(s.mean, DVector::zeros(2));
        assert_eq!(s.deviations, DMatrix::zeros(2, 2));
        assert_eq!(s.covariance, DMatrix::zeros(2, 2));
    }

    #[test]
    fn moments_of_scalar_pair() {
        // X = (−1, 1): mean 0, deviations (−1, 1), (M−1)-covariance 2.
        let x = mat(1, 2, &[-1.0, 1.0]);
        let s = mean_and_deviations(&x).unwrap();
        assert_abs_diff_eq!(s.mean[0], 0.0);
        assert_eq!(s.deviations, mat(1, 2, &[-1.0, 1.0]));
        assert_abs_diff_eq!(s.covariance[(0, 0)], 2.0);
        // and the 1/M-normalized empirical covariance is 1
        assert_abs_diff_eq!(empirical_covariance(&x)[(0, 0)], 1.0);
    }

    #[test]
    fn deviations_always_center() {
        let mut rng = crate::rng::SeedTree::new(1).rng();
        let x = DMatrix::from_fn(4, 7, |_, _| rng.random_range(-5.0..5.0));
        let s = mean_and_deviations(&x).unwrap();
        let row_sums = &s.deviations * DVector::from_element(7, 1.0);
        assert!(row_sums.amax() < 1e-10);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let x = mat(1, 2, &[f64::NAN, 1.0]);
        assert!(mean_and_deviations(&x).is_err());
    }

    #[test]
    fn weighted_mean_cases() {
        let x = mat(1, 2, &[-1.0, 1.0]);
        let uniform = Weights::uniform(2);
        assert_abs_diff_eq!(weighted_mean(&x, &uniform).unwrap()[0], 0.0);
        let w = Weights::new(DVector::from_vec(vec![0.25, 0.75])).unwrap();
        assert_abs_diff_eq!(weighted_mean(&x, &w).unwrap()[0], 0.5);
        // degenerate weight picks out one column
        let e1 = Weights::new(DVector::from_vec(vec![0.0, 1.0])).unwrap();
        assert_abs_diff_eq!(weighted_mean(&x, &e1).unwrap()[0], 1.0);
    }

    #[test]
    fn weighted_covariance_cases() {
        let x = mat(1, 2, &[-1.0, 1.0]);
        let uniform = Weights::uniform(2);
        // normalization is Σw = 1, not M−1
        assert_abs_diff_eq!(weighted_covariance(&x, &uniform).unwrap()[(0, 0)], 1.0);
        let e1 = Weights::new(DVector::from_vec(vec![0.0, 1.0])).unwrap();
        assert_abs_diff_eq!(weighted_covariance(&x, &e1).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn covariance_normalizations_agree_under_uniform_weights() {
        // weighted (Σw = 1) vs sample (M−1) covariance differ by (M−1)/M exactly
        let mut rng = crate::rng::SeedTree::new(2).rng();
        let x = DMatrix::from_fn(3, 6, |_, _| rng.random_range(-2.0..2.0));
        let wc = weighted_covariance(&x, &Weights::uniform(6)).unwrap();
        let sc = mean_and_deviations(&x).unwrap().covariance;
        assert_relative_eq!(wc, sc * (5.0 / 6.0), epsilon = 1e-12);
        assert_relative_eq!(wc, empirical_covariance(&x), epsilon = 1e-12);
    }

    #[test]
    fn psd_sqrt_diagonal_and_identity() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert_relative_eq!(psd_sqrt(&i3).unwrap(), i3, epsilon = 1e-12);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        assert_relative_eq!(psd_sqrt(&d).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn psd_sqrt_of_scaled_centering_projection() {
        // (1/M)(I − 11ᵀ/M) has eigenvalues 1/M (multiplicity M−1) and 0, so its
        // square root is the same projection scaled by 1/√M.
        let m = 5;
        let ones = DMatrix::from_element(m, m, 1.0 / m as f64);
        let proj = DMatrix::<f64>::identity(m, m) - &ones;
        let s = &proj / m as f64;
        let root = psd_sqrt(&s).unwrap();
        assert_relative_eq!(root, proj / (m as f64).sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn psd_sqrt_rejects_asymmetric_and_indefinite() {
        let a = mat(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(psd_sqrt(&a), Err(Error::NotPsd(_))));
        let neg = mat(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(matches!(psd_sqrt(&neg), Err(Error::NotPsd(_))));
    }

    #[test]
    fn weights_constructor_validates() {
        assert!(Weights::new(DVector::from_vec(vec![0.5, 0.5])).is_ok());
        assert!(Weights::new(DVector::from_vec(vec![0.6, 0.5])).is_err());
        assert!(Weights::new(DVector::from_vec(vec![1.5, -0.5])).is_err());
    }

    #[test]
    fn log_weights_are_shift_invariant() {
        let lw = DVector::from_vec(vec![-3.0, 0.0, 2.0]);
        let shifted = lw.add_scalar(123.0);
        let (a, span_a) = Weights::from_log_weights(&lw);
        let (b, span_b) = Weights::from_log_weights(&shifted);
        assert_relative_eq!(a.as_vector(), b.as_vector(), epsilon = 1e-14);
        assert_abs_diff_eq!(span_a, span_b);
        assert_abs_diff_eq!(span_a, 5.0);
    }

    #[test]
    fn transform_column_sums_are_checked() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert!(Transform::new(id, Scheme::Esrs).is_ok());
        let bad = DMatrix::from_element(3, 3, 0.5);
        assert!(Transform::new(bad, Scheme::Esrs).is_err());
    }

    #[test]
    fn transform_first_moment_check() {
        // D = w1ᵀ has row sums M·w and column sums 1.
        let w = Weights::new(DVector::from_vec(vec![0.2, 0.3, 0.5])).unwrap();
        let d = w.as_vector() * DMatrix::from_element(1, 3, 1.0);
        assert!(Transform::with_first_moment(d, Scheme::Nets, w.as_vector(), 1e-10).is_ok());
        let id = DMatrix::<f64>::identity(3, 3);
        assert!(Transform::with_first_moment(id, Scheme::Nets, w.as_vector(), 1e-10).is_err());
    }

    #[test]
    fn window_warm_up_and_eviction() {
        let mut win = Window::new(2);
        assert!(win.is_empty());
        for k in 0..5usize {
            let dropped = win.shift(DMatrix::from_element(1, 3, k as f64)).unwrap();
            if k <= 2 {
                assert!(dropped.is_none(), "warm-up should not evict");
                assert_eq!(win.lag(), k);
            } else {
                // full window: eviction returns the block from lag+1 shifts ago
                assert_eq!(dropped.unwrap()[(0, 0)], (k - 3) as f64);
                assert_eq!(win.lag(), 2);
            }
            assert_eq!(win.time_index(), k);
        }
        assert_eq!(win.oldest_time(), 2);
    }

    #[test]
    fn flatten_matches_direct_stack() {
        let mut win = Window::new(3);
        let b0 = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b1 = mat(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        win.shift(b0.clone()).unwrap();
        win.shift(b1.clone()).unwrap();
        let flat = win.flatten();
        assert_eq!(flat.nrows(), 4);
        assert_eq!(flat.view((0, 0), (2, 2)).clone_owned(), b0);
        assert_eq!(flat.view((2, 0), (2, 2)).clone_owned(), b1);
    }

    #[test]
    fn identity_transform_leaves_window_alone() {
        let mut win = Window::new(1);
        win.shift(mat(1, 3, &[1.0, 2.0, 3.0])).unwrap();
        win.shift(mat(1, 3, &[4.0, 5.0, 6.0])).unwrap();
        let before = win.flatten();
        win.apply(&Transform::identity(3, Scheme::Esrs)).unwrap();
        assert_eq!(win.flatten(), before);
    }

    #[test]
    fn rank_one_transform_collapses_to_weighted_mean() {
        let mut win = Window::new(1);
        win.shift(mat(1, 3, &[1.0, 2.0, 3.0])).unwrap();
        win.shift(mat(1, 3, &[4.0, 5.0, 6.0])).unwrap();
        let w = Weights::new(DVector::from_vec(vec![0.2, 0.3, 0.5])).unwrap();
        let d = w.as_vector() * DMatrix::from_element(1, 3, 1.0);
        let wm = weighted_mean(&win.flatten(), &w).unwrap();
        win.apply(&Transform::new(d, Scheme::Nets).unwrap()).unwrap();
        for j in 0..3 {
            assert_relative_eq!(win.flatten().column(j).clone_owned(), wm, epsilon = 1e-12);
        }
    }

    #[test]
    fn permutation_transform_permutes_columns() {
        let mut win = Window::new(0);
        win.shift(mat(1, 3, &[1.0, 2.0, 3.0])).unwrap();
        // cycle 0→1→2→0 (column j of D picks the source member for output j)
        let mut p = DMatrix::zeros(3, 3);
        p[(1, 0)] = 1.0;
        p[(2, 1)] = 1.0;
        p[(0, 2)] = 1.0;
        win.apply(&Transform::new(p, Scheme::Bootstrap).unwrap()).unwrap();
        assert_eq!(win.newest(), &mat(1, 3, &[2.0, 3.0, 1.0]));
    }

    #[test]
    fn per_time_transforms_act_blockwise() {
        let mut win = Window::new(1);
        win.shift(mat(1, 2, &[1.0, 3.0])).unwrap();
        win.shift(mat(1, 2, &[5.0, 7.0])).unwrap();
        let w = Weights::uniform(2);
        let collapse = Transform::new(
            w.as_vector() * DMatrix::from_element(1, 2, 1.0),
            Scheme::Nets,
        )
        .unwrap();
        let keep = Transform::identity(2, Scheme::Nets);
        win.apply_per_time(&[keep, collapse]).unwrap();
        assert_eq!(win.block(0), &mat(1, 2, &[1.0, 3.0]));
        assert_eq!(win.block(1), &mat(1, 2, &[6.0, 6.0]));
        // wrong count is refused
        assert!(win.apply_per_time(&[Transform::identity(2, Scheme::Nets)]).is_err());
    }

    #[test]
    fn per_time_with_equal_transforms_matches_window_wide() {
        let mut a = Window::new(1);
        a.shift(mat(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])).unwrap();
        a.shift(mat(2, 3, &[0.5, 1.5, 2.5, 3.5, 4.5, 5.5])).unwrap();
        let mut b = a.clone();
        let w = Weights::new(DVector::from_vec(vec![0.1, 0.2, 0.7])).unwrap();
        let d = Transform::new(
            w.as_vector() * DMatrix::from_element(1, 3, 1.0),
            Scheme::Nets,
        )
        .unwrap();
        a.apply(&d).unwrap();
        b.apply_per_time(&[d.clone(), d]).unwrap();
        assert_eq!(a.flatten(), b.flatten());
    }

    proptest! {
        #[test]
        fn prop_first_moment_transform_maps_mean_to_weighted_mean(
            seed in 0u64..500,
            m in 3usize..9,
            n_x in 1usize..4,
        ) {
            // any D with rows summing to M·w and columns to 1 sends the plain
            // mean of X·D to the weighted mean X·w
            let mut rng = crate::rng::SeedTree::new(seed).rng();
            let x = DMatrix::from_fn(n_x, m, |_, _| rng.random_range(-3.0..3.0));
            let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let w = Weights::new(DVector::from_vec(raw.iter().map(|v| v / s).collect())).unwrap();
            // D = w1ᵀ + B with B vanishing row and column sums stays in the set
            let g = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
            let ones = DMatrix::from_element(m, m, 1.0 / m as f64);
            let proj = DMatrix::<f64>::identity(m, m) - &ones;
            let b = &proj * g * &proj;
            let d = w.as_vector() * DMatrix::from_element(1, m, 1.0) + b;
            let xd = &x * &d;
            let plain_mean = xd.column_mean();
            let wm = weighted_mean(&x, &w).unwrap();
            prop_assert!((plain_mean - wm).amax() < 1e-10);
        }

        #[test]
        fn prop_psd_sqrt_squares_back(seed in 0u64..500, n in 1usize..12) {
            let mut rng = crate::rng::SeedTree::new(seed).rng();
            let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let s = &g * g.transpose();
            let r = psd_sqrt(&s).unwrap();
            let err = (&r * &r - &s).norm() / (1.0 + s.norm());
            prop_assert!(err < 1e-8, "relative reconstruction error {err}");
        }

        #[test]
        fn prop_weighted_covariance_is_psd(seed in 0u64..200, m in 2usize..8) {
            let mut rng = crate::rng::SeedTree::new(seed).rng();
            let x = DMatrix::from_fn(3, m, |_, _| rng.random_range(-4.0..4.0));
            let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0) + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            let w = Weights::new(DVector::from_vec(raw.iter().map(|v| v / s).collect())).unwrap();
            let cov = weighted_covariance(&x, &w).unwrap();
            // PSD check through the operation under test elsewhere would be
            // circular; use the eigenvalues directly.
            let eig = nalgebra::SymmetricEigen::new(cov);
            prop_assert!(eig.eigenvalues.iter().all(|&v| v > -1e-10));
        }
    }

    #[test]
    fn psd_sqrt_roundtrip_at_50() {
        let mut rng = crate::rng::SeedTree::new(9).rng();
        let g = DMatrix::from_fn(50, 50, |_, _| rng.random_range(-1.0..1.0));
        let s = &g * g.transpose();
        let r = psd_sqrt(&s).unwrap();
        let err = (&r * &r - &s).norm() / s.norm();
        assert!(err < 1e-8, "relative error {err}");
    }
}
