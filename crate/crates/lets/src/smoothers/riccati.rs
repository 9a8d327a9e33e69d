//! Second-moment correction of resampling-type transforms.
//!
//! A transport plan `D` reproduces the weighted mean exactly but its
//! columns' spread understates the weighted covariance. Writing
//! `B = D − w𝟙ᵀ` and `T = M(diag(w) − wwᵀ)`, a correction Δ restores the
//! second moment exactly iff
//!
//! `BΔᵀ + ΔBᵀ + ΔΔᵀ = T − BBᵀ`,  i.e.  `(B+Δ)(B+Δ)ᵀ = T`,
//!
//! an algebraic Riccati equation whose solutions are `B + Δ = T^{1/2}Ω`
//! for any orthogonal Ω. Fixing 𝟙 on both sides of Δ keeps the corrected
//! transform in the admissible class, and among those solutions the
//! Procrustes choice `Ω = argmax tr(Ωᵀ T^{1/2}B)` minimizes `‖Δ‖_F`,
//! selecting the branch that vanishes when `D` already matches the target
//! (and reduces to `Δ = T^{1/2}` at `D = w𝟙ᵀ`, the moment-matching factor).
//! The closed-form solution seeds an explicit-Euler integration of the
//! matrix flow `dZ/ds = T − ZZᵀ`, whose fixed points are exactly the
//! solutions; the flow preserves both kernel constraints and polishes any
//! residual. On its own the flow only converges from seeds inside the
//! basin of the stable branch (the scalar picture `dz/ds = t − z²` runs
//! off to −∞ from any `z₀ < −√t`), which is why the closed form seeds it
//! rather than the raw `Z = B`; a diverging run is reported through the
//! `converged` flag with the best iterate seen, never an error.

use nalgebra::DMatrix;

use super::rotations::procrustes_rotation;
use crate::ensemble::{psd_sqrt, Weights};
use crate::error::{Error, Result};

pub const EULER_STEP: f64 = 0.1;
pub const EULER_MAX_STEPS: usize = 500;
pub const EULER_TOL: f64 = 1e-8;

/// Diagnostics of one correction.
#[derive(Clone, Copy, Debug)]
pub struct RiccatiInfo {
    /// Euler polishing steps actually taken.
    pub steps: usize,
    /// `‖T − ZZᵀ‖_F` of the returned iterate.
    pub residual: f64,
    /// Whether the residual fell under `tol·(1 + ‖T‖_F)`.
    pub converged: bool,
}

/// Second-moment target factor `T = M·(diag(w) − wwᵀ)`.
pub fn target_gram(w: &Weights) -> DMatrix<f64> {
    let m = w.len();
    DMatrix::from_fn(m, m, |i, j| {
        m as f64 * (if i == j { w[i] - w[i] * w[j] } else { -w[i] * w[j] })
    })
}

/// `‖T − ZZᵀ‖_F`, the defect of a candidate solution.
pub fn second_moment_residual(z: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
    (t - z * z.transpose()).norm()
}

/// Explicit Euler steps of `dZ/ds = T − ZZᵀ` until the defect falls under
/// `tol·(1 + ‖T‖_F)` or the step budget runs out. Keeps the lowest-defect
/// iterate seen and returns it with diagnostics, so a run that leaves the
/// basin of attraction still yields the best available candidate.
pub fn euler_flow(
    z0: DMatrix<f64>,
    t: &DMatrix<f64>,
    step: f64,
    max_steps: usize,
    tol: f64,
) -> (DMatrix<f64>, RiccatiInfo) {
    let bound = tol * (1.0 + t.norm());
    let mut z = z0;
    let mut residual = second_moment_residual(&z, t);
    let mut best = z.clone();
    let mut best_residual = residual;
    let mut steps = 0;
    while residual > bound && steps < max_steps {
        if !residual.is_finite() {
            break;
        }
        // one fused update: Z += η(T − ZZᵀ)
        let defect = t - &z * z.transpose();
        z += defect * step;
        residual = second_moment_residual(&z, t);
        steps += 1;
        if residual < best_residual {
            best = z.clone();
            best_residual = residual;
        }
    }
    let converged = best_residual <= bound;
    (best, RiccatiInfo { steps, residual: best_residual, converged })
}

/// Precomputed target `T` and its square root for one weight vector. The
/// per-component localized corrections share weights across many rows, so
/// the eigendecomposition behind the root is worth computing once.
#[derive(Clone, Debug)]
pub struct MomentTarget {
    pub t: DMatrix<f64>,
    pub t_sqrt: DMatrix<f64>,
}

impl MomentTarget {
    pub fn of(w: &Weights) -> Result<Self> {
        let t = target_gram(w);
        let t_sqrt = psd_sqrt(&t)?;
        Ok(MomentTarget { t, t_sqrt })
    }
}

/// Correction Δ such that `D + Δ` matches the weighted covariance exactly,
/// via the closed-form Procrustes branch polished by the Euler flow.
/// `D` must lie in the admissible class for `w` (columns sum to one, rows
/// to `M·wᵢ`). A non-converged flow is reported in the info, not as an
/// error: the best iterate still improves the second moment and the
/// uncorrected transform stays usable either way.
pub fn riccati_delta(d: &DMatrix<f64>, w: &Weights) -> Result<(DMatrix<f64>, RiccatiInfo)> {
    riccati_delta_seeded(d, w, &MomentTarget::of(w)?)
}

/// `riccati_delta` with the target factor supplied by the caller.
pub fn riccati_delta_seeded(
    d: &DMatrix<f64>,
    w: &Weights,
    target: &MomentTarget,
) -> Result<(DMatrix<f64>, RiccatiInfo)> {
    let m = w.len();
    if d.nrows() != m || d.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "{}×{} transform for {m} weights",
            d.nrows(),
            d.ncols()
        )));
    }
    let mut b = d.clone();
    for i in 0..m {
        let wi = w[i];
        for j in 0..m {
            b[(i, j)] -= wi;
        }
    }
    let omega = procrustes_rotation(&(&target.t_sqrt * &b))?;
    let (z, info) =
        euler_flow(&target.t_sqrt * omega, &target.t, EULER_STEP, EULER_MAX_STEPS, EULER_TOL);
    Ok((z - b, info))
}

/// Convenience wrapper: `D + Δ`.
pub fn corrected_transform_matrix(d: &DMatrix<f64>, w: &Weights) -> Result<DMatrix<f64>> {
    let (delta, _) = riccati_delta(d, w)?;
    Ok(d + delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn ones(m: usize) -> DVector<f64> {
        DVector::from_element(m, 1.0)
    }
    use crate::rng::SeedTree;
    use crate::smoothers::nets::nets_delta;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use lets_testkit::gen::{random_first_moment_transform, random_skewed_weights, random_weights};
    use rand::Rng;

    fn residual_of(d: &DMatrix<f64>, delta: &DMatrix<f64>, w: &Weights) -> f64 {
        let m = w.len();
        let mut b = d + delta;
        for i in 0..m {
            for j in 0..m {
                b[(i, j)] -= w[i];
            }
        }
        second_moment_residual(&b, &target_gram(w))
    }

    #[test]
    fn correction_solves_the_equation_on_random_transforms() {
        let mut rng = SeedTree::new(70).rng();
        for trial in 0..20 {
            let m = 3 + trial % 7;
            let w = if trial % 2 == 0 {
                Weights::new(random_weights(&mut rng, m)).unwrap()
            } else {
                Weights::new(random_skewed_weights(&mut rng, m)).unwrap()
            };
            let d = random_first_moment_transform(&mut rng, w.as_vector(), 0.6);
            let (delta, info) = riccati_delta(&d, &w).unwrap();
            assert!(info.converged);
            assert!(residual_of(&d, &delta, &w) <= 1e-8 * (1.0 + target_gram(&w).norm()));
            // the closed form is already a solution; polishing is idle
            assert_eq!(info.steps, 0);
            // both kernel constraints hold: column sums and row sums of
            // D + Δ are unchanged
            let ones_v = ones(m);
            assert_abs_diff_eq!((delta.transpose() * &ones_v).norm(), 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!((&delta * &ones_v).norm(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn no_op_when_the_transform_already_matches() {
        // D = w𝟙ᵀ + Δ_nets has (D − w𝟙ᵀ)(D − w𝟙ᵀ)ᵀ = T by construction,
        // so the minimal-norm correction is zero
        let mut rng = SeedTree::new(71).rng();
        let w = Weights::new(random_skewed_weights(&mut rng, 6)).unwrap();
        let nets = nets_delta(&w).unwrap();
        let mut d = nets.clone();
        for i in 0..6 {
            for j in 0..6 {
                d[(i, j)] += w[i];
            }
        }
        let (delta, _) = riccati_delta(&d, &w).unwrap();
        assert_abs_diff_eq!(delta.norm(), 0.0, epsilon = 1e-7);
    }

    #[test]
    fn collapsed_transform_recovers_the_moment_matching_factor() {
        // at D = w𝟙ᵀ the branch is Δ = T^{1/2} exactly
        let mut rng = SeedTree::new(72).rng();
        let m = 5;
        let w = Weights::new(random_skewed_weights(&mut rng, m)).unwrap();
        let d = DMatrix::from_fn(m, m, |i, _| w[i]);
        let (delta, info) = riccati_delta(&d, &w).unwrap();
        let expected = nets_delta(&w).unwrap();
        assert_relative_eq!(delta, expected, epsilon = 1e-10);
        assert!(info.residual <= 1e-10 * (1.0 + target_gram(&w).norm()));
    }

    #[test]
    fn euler_flow_polishes_a_perturbed_seed() {
        // nudge an exact solution off the manifold along admissible
        // directions; the flow must walk back (steps > 0) without ever
        // breaking the kernel constraints
        let mut rng = SeedTree::new(73).rng();
        let m = 6;
        let w = Weights::new(random_weights(&mut rng, m)).unwrap();
        let t = target_gram(&w);
        let t_sqrt = psd_sqrt(&t).unwrap();
        let noise = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let proj = DMatrix::<f64>::identity(m, m) - DMatrix::from_element(m, m, 1.0 / m as f64);
        let z0 = &t_sqrt + &proj * noise * &proj * 0.05;
        let start = second_moment_residual(&z0, &t);
        let (z, info) = euler_flow(z0.clone(), &t, EULER_STEP, EULER_MAX_STEPS, EULER_TOL);
        assert!(start > EULER_TOL * (1.0 + t.norm()), "perturbation too small to measure");
        assert!(info.converged, "defect {} after {} steps", info.residual, info.steps);
        assert!(info.steps > 0);
        // the flow never leaves the admissible class
        let ones_v = ones(m);
        assert_abs_diff_eq!((z.transpose() * &ones_v).norm(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!((&z * &ones_v).norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn flow_from_outside_the_basin_reports_failure_with_a_finite_iterate() {
        // two members, uniform weights: T is the projection onto (1,−1),
        // and Z₀ = −2T sits past the unstable equilibrium of the scalar
        // restriction dz/ds = 1 − z², so the raw flow runs away
        let w = Weights::uniform(2);
        let t = target_gram(&w);
        let z0 = &t * -2.0;
        let (z, info) = euler_flow(z0, &t, EULER_STEP, EULER_MAX_STEPS, EULER_TOL);
        assert!(!info.converged);
        assert!(info.residual.is_finite());
        assert!(z.iter().all(|v| v.is_finite()));
        // the best iterate is no worse than the seed
        assert!(info.residual <= second_moment_residual(&(&t * -2.0), &t) + 1e-12);
    }

    #[test]
    fn procrustes_branch_has_minimal_norm_among_admissible_solutions() {
        let mut rng = SeedTree::new(74).rng();
        let m = 5;
        let w = Weights::new(random_skewed_weights(&mut rng, m)).unwrap();
        let d = random_first_moment_transform(&mut rng, w.as_vector(), 0.6);
        let (delta, _) = riccati_delta(&d, &w).unwrap();
        let t = target_gram(&w);
        let t_sqrt = psd_sqrt(&t).unwrap();
        let mut b = d.clone();
        for i in 0..m {
            for j in 0..m {
                b[(i, j)] -= w[i];
            }
        }
        // compare against other valid branches T^{1/2}Ω − B
        for k in 0..10 {
            let omega = super::super::rotations::random_rotation(m, &mut SeedTree::new(100 + k).rng());
            let other = &t_sqrt * omega - &b;
            assert!(delta.norm() <= other.norm() + 1e-9);
        }
    }
}
