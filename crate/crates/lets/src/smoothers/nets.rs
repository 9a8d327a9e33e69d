//! Moment-matching ensemble transform.
//!
//! Given importance weights `w`, the transform `D = w𝟙ᵀ + Δ·Ω` with
//! `Δ = √M·(diag(w) − wwᵀ)^{1/2}` reproduces the weighted mean and the
//! weighted covariance of the forecast members exactly, for any orthogonal
//! Ω fixing 𝟙. The rotation is a genuine degree of freedom: drawn at
//! random it scrambles the member-to-member pairing, chosen by the
//! Procrustes criterion it keeps each analysis member as close as possible
//! to its forecast self, which preserves trajectory continuity.

use nalgebra::DMatrix;
use rand::Rng;

use super::rotations::{procrustes_rotation, random_rotation};
use crate::ensemble::{psd_sqrt, Scheme, Transform, Weights};
use crate::error::Result;

/// How the rotational freedom in the moment-matching transform is spent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rotation {
    /// No rotation (`Ω = I`).
    Identity,
    /// Haar-random rotation of the deviation subspace.
    Random,
    /// Procrustes rotation keeping members closest to their forecasts.
    Optimal,
}

/// The deviation factor `Δ = √M·(diag(w) − wwᵀ)^{1/2}`. Symmetric, PSD,
/// and annihilates 𝟙.
pub fn nets_delta(w: &Weights) -> Result<DMatrix<f64>> {
    let m = w.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            t[(i, j)] = if i == j { w[i] - w[i] * w[j] } else { -w[i] * w[j] };
        }
    }
    Ok(psd_sqrt(&t)? * (m as f64).sqrt())
}

/// Moment-matching transform for the given weights. `x_flat` is the
/// (flattened window) forecast ensemble the optimal rotation measures
/// distances in; it is ignored for the other two rotation choices.
pub fn nets_transform<R: Rng>(
    x_flat: &DMatrix<f64>,
    w: &Weights,
    rotation: Rotation,
    rng: &mut R,
) -> Result<Transform> {
    let m = w.len();
    let delta = nets_delta(w)?;
    let rotated = match rotation {
        Rotation::Identity => delta,
        Rotation::Random => delta * random_rotation(m, rng),
        Rotation::Optimal => {
            // maximize tr(Ωᵀ·ΔᵀAᵀA) over admissible rotations, where A are
            // the forecast deviations; Δᵀ(AᵀA) annihilates 𝟙 on both sides
            let mean = x_flat.column_mean();
            let mut a = x_flat.clone();
            for mut col in a.column_iter_mut() {
                col -= &mean;
            }
            let k = &delta * (a.transpose() * &a);
            let omega = procrustes_rotation(&k)?;
            delta * omega
        }
    };
    let mut d = rotated;
    for i in 0..m {
        let wi = w[i];
        for j in 0..m {
            d[(i, j)] += wi;
        }
    }
    // eigenfactor rounding in Δ leaks into the affine constraints when the
    // weight covariance is nearly singular; snap both back exactly
    snap_constraints(&mut d, w);
    Transform::with_first_moment(d, Scheme::Nets, w.as_vector(), 1e-9)
}

/// Orthogonal projection onto the affine set `{D : Dᵀ𝟙 = 𝟙, D𝟙 = Mw}`.
/// With row defects `r = D𝟙 − Mw`, column defects `cᵀ = 𝟙ᵀD − 𝟙ᵀ` and
/// total defect `σ = 𝟙ᵀr = 𝟙ᵀc`, the closest member of the set is
/// `D − (𝟙cᵀ + r𝟙ᵀ)/M + σ𝟙𝟙ᵀ/M²`.
fn snap_constraints(d: &mut DMatrix<f64>, w: &Weights) {
    let m = d.ncols();
    let mf = m as f64;
    let r: Vec<f64> = (0..m).map(|i| d.row(i).sum() - mf * w[i]).collect();
    let c: Vec<f64> = (0..m).map(|j| d.column(j).sum() - 1.0).collect();
    let sigma: f64 = r.iter().sum();
    for i in 0..m {
        for j in 0..m {
            d[(i, j)] -= (c[j] + r[i]) / mf - sigma / (mf * mf);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{empirical_covariance, weighted_covariance, weighted_mean};
    use crate::rng::SeedTree;
    use nalgebra::DVector;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use lets_testkit::gen::{random_ensemble, random_skewed_weights};

    fn check_moments(x: &DMatrix<f64>, w: &Weights, t: &Transform, tol: f64) {
        let post = x * &t.d;
        let target_mean = weighted_mean(x, w).unwrap();
        let got_mean = post.column_mean();
        assert_relative_eq!(got_mean, target_mean, epsilon = tol);
        // the transform is built so the M-normalized posterior spread
        // equals the weighted covariance of the forecast
        let target_cov = weighted_covariance(x, w).unwrap();
        let got_cov = empirical_covariance(&post);
        assert_relative_eq!(got_cov, target_cov, epsilon = tol);
    }

    #[test]
    fn delta_annihilates_ones_and_squares_back() {
        let mut rng = SeedTree::new(60).rng();
        let w = Weights::new(random_skewed_weights(&mut rng, 6)).unwrap();
        let delta = nets_delta(&w).unwrap();
        let ones = DVector::from_element(6, 1.0);
        assert_abs_diff_eq!((&delta * &ones).norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(delta.transpose(), delta, epsilon = 1e-12);
        let t = DMatrix::from_fn(6, 6, |i, j| {
            6.0 * (if i == j { w[i] - w[i] * w[j] } else { -w[i] * w[j] })
        });
        assert_relative_eq!(&delta * &delta, t, epsilon = 1e-10);
    }

    #[test]
    fn all_rotations_match_both_moments() {
        let mut rng = SeedTree::new(61).rng();
        for m in [4usize, 8, 16] {
            let x = random_ensemble(&mut rng, 3, m, -2.0, 2.0);
            let w = Weights::new(random_skewed_weights(&mut rng, m)).unwrap();
            for rot in [Rotation::Identity, Rotation::Random, Rotation::Optimal] {
                let t = nets_transform(&x, &w, rot, &mut rng).unwrap();
                check_moments(&x, &w, &t, 1e-9);
            }
        }
    }

    #[test]
    fn uniform_weights_with_optimal_rotation_leave_members_in_place() {
        // Δ becomes the centering projector; the Procrustes rotation undoes
        // nothing and D reduces to the identity on the deviations
        let mut rng = SeedTree::new(62).rng();
        let m = 5;
        let x = random_ensemble(&mut rng, 2, m, -1.0, 1.0);
        let w = Weights::uniform(m);
        let t = nets_transform(&x, &w, Rotation::Optimal, &mut rng).unwrap();
        let post = x.clone() * &t.d;
        // members keep their forecast positions exactly (up to roundoff)
        assert_relative_eq!(post, x, epsilon = 1e-9);
    }

    #[test]
    fn optimal_rotation_moves_members_least() {
        let mut rng = SeedTree::new(63).rng();
        let m = 12;
        let x = random_ensemble(&mut rng, 4, m, -2.0, 2.0);
        let w = Weights::new(random_skewed_weights(&mut rng, m)).unwrap();
        let t_opt = nets_transform(&x, &w, Rotation::Optimal, &mut rng).unwrap();
        let travel = |t: &Transform| (&x * &t.d - &x).norm_squared();
        let opt_travel = travel(&t_opt);
        for _ in 0..15 {
            let t_rand = nets_transform(&x, &w, Rotation::Random, &mut rng).unwrap();
            assert!(opt_travel <= travel(&t_rand) + 1e-9);
        }
        let t_id = nets_transform(&x, &w, Rotation::Identity, &mut rng).unwrap();
        assert!(opt_travel <= travel(&t_id) + 1e-9);
    }

    #[test]
    fn degenerate_weights_collapse_onto_one_member() {
        let mut rng = SeedTree::new(64).rng();
        let x = random_ensemble(&mut rng, 2, 4, -1.0, 1.0);
        let w = Weights::new(DVector::from_vec(vec![0.0, 1.0, 0.0, 0.0])).unwrap();
        let t = nets_transform(&x, &w, Rotation::Identity, &mut rng).unwrap();
        let post = &x * &t.d;
        for j in 0..4 {
            assert_relative_eq!(post.column(j).clone_owned(), x.column(1).clone_owned(), epsilon = 1e-9);
        }
    }
}
