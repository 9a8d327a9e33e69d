//! Random test-instance generators shared by the unit and acceptance suites.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// A random point on the interior of the probability simplex.
pub fn random_weights<R: Rng>(rng: &mut R, m: usize) -> DVector<f64> {
    // exponential draws normalized to 1 give a flat Dirichlet sample
    let raw: Vec<f64> = (0..m).map(|_| -rng.random_range(1e-12..1.0f64).ln()).collect();
    let sum: f64 = raw.iter().sum();
    DVector::from_vec(raw.into_iter().map(|v| v / sum).collect())
}

/// A random weight vector that is occasionally very uneven, exercising the
/// near-degenerate regime.
pub fn random_skewed_weights<R: Rng>(rng: &mut R, m: usize) -> DVector<f64> {
    let sharp = rng.random_range(1.0..12.0);
    let raw: Vec<f64> = (0..m)
        .map(|_| (-rng.random_range(1e-12..1.0f64).ln()).powf(sharp))
        .collect();
    let sum: f64 = raw.iter().sum();
    DVector::from_vec(raw.into_iter().map(|v| v / sum).collect())
}

/// A random `rows × m` ensemble with entries uniform in `(lo, hi)`.
pub fn random_ensemble<R: Rng>(rng: &mut R, rows: usize, m: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, m, |_, _| rng.random_range(lo..hi))
}

/// A random transform in the first-moment-matching set: `D = w·1ᵀ + B` with
/// `B·1 = 0` and `Bᵀ·1 = 0`, built by projecting a Gaussian matrix onto the
/// complement of `1` from both sides.
pub fn random_first_moment_transform<R: Rng>(
    rng: &mut R,
    w: &DVector<f64>,
    spread: f64,
) -> DMatrix<f64> {
    let m = w.len();
    let g = DMatrix::from_fn(m, m, |_, _| rng.random_range(-spread..spread));
    let proj = DMatrix::<f64>::identity(m, m) - DMatrix::from_element(m, m, 1.0 / m as f64);
    w * DMatrix::from_element(1, m, 1.0) + &proj * g * &proj
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn weights_land_on_the_simplex() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        for m in [2usize, 5, 40] {
            for w in [random_weights(&mut rng, m), random_skewed_weights(&mut rng, m)] {
                assert!((w.sum() - 1.0).abs() < 1e-12);
                assert!(w.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn first_moment_transform_has_the_right_marginals() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(4);
        let w = random_weights(&mut rng, 6);
        let d = random_first_moment_transform(&mut rng, &w, 1.0);
        let ones = DVector::from_element(6, 1.0);
        let col_sums = d.transpose() * &ones;
        let row_sums = &d * &ones;
        assert!((col_sums - &ones).amax() < 1e-12);
        assert!((row_sums - 6.0 * w).amax() < 1e-12);
    }
}
