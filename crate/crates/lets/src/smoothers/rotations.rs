//! Orthogonal transforms that fix the 𝟙 direction.
//!
//! Transform matrices of the form `D = w𝟙ᵀ + Δ·Ω` keep their defining
//! constraints for any orthogonal Ω with `Ω𝟙 = 𝟙`: the rotation only stirs
//! the deviations. Such Ω decompose as a rotation of the subspace `𝟙⊥` plus
//! the rank-one projector onto 𝟙, so everything here works in an `M−1`
//! dimensional coordinate frame of that subspace.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// `M × (M−1)` matrix whose orthonormal columns span the complement of 𝟙:
/// the trailing columns of the Householder reflector sending `e₁` to `𝟙/√M`.
pub fn ones_complement_basis(m: usize) -> DMatrix<f64> {
    assert!(m >= 1);
    if m == 1 {
        return DMatrix::zeros(1, 0);
    }
    let mut v = DVector::from_element(m, 1.0 / (m as f64).sqrt());
    v[0] -= 1.0;
    let h = DMatrix::identity(m, m) - (&v * v.transpose()) * (2.0 / v.norm_squared());
    h.columns(1, m - 1).clone_owned()
}

/// Lift an `(M−1) × (M−1)` orthogonal matrix acting on `𝟙⊥` back to the
/// full space, acting as the identity along 𝟙.
fn lift(basis: &DMatrix<f64>, sub: &DMatrix<f64>) -> DMatrix<f64> {
    let m = basis.nrows();
    basis * sub * basis.transpose() + DMatrix::from_element(m, m, 1.0 / m as f64)
}

/// Haar-random orthogonal Ω with `Ω𝟙 = 𝟙`: a Gaussian matrix is QR-factored
/// and the R diagonal's signs are absorbed into Q, which makes Q uniform
/// over the orthogonal group of the subspace.
pub fn random_rotation<R: Rng>(m: usize, rng: &mut R) -> DMatrix<f64> {
    if m == 1 {
        return DMatrix::identity(1, 1);
    }
    let g = DMatrix::from_fn(m - 1, m - 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for k in 0..m - 1 {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    lift(&ones_complement_basis(m), &q)
}

/// The orthogonal Ω with `Ω𝟙 = 𝟙` maximizing `tr(Ωᵀ·K)`, for a matrix K
/// annihilated by 𝟙 on both sides (`K𝟙 = 0`, `Kᵀ𝟙 = 0`): the classical
/// Procrustes solution `ŨṼᵀ` of the subspace-restricted SVD. An exactly
/// zero K returns the identity, the branch continuous with no rotation at
/// all.
pub fn procrustes_rotation(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = k.nrows();
    if k.ncols() != m {
        return Err(Error::DimensionMismatch("Procrustes objective matrix must be square".into()));
    }
    if m == 1 || k.amax() == 0.0 {
        return Ok(DMatrix::identity(m, m));
    }
    let basis = ones_complement_basis(m);
    let sub = basis.transpose() * k * &basis;
    let svd = sub.svd(true, true);
    let (u, v_t) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    Ok(lift(&basis, &(u * v_t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn assert_admissible(omega: &DMatrix<f64>) {
        let m = omega.nrows();
        let ones = DVector::from_element(m, 1.0);
        assert_relative_eq!(omega * &ones, ones, epsilon = 1e-12);
        assert_relative_eq!(
            omega * omega.transpose(),
            DMatrix::identity(m, m),
            epsilon = 1e-12
        );
    }

    #[test]
    fn basis_is_orthonormal_and_orthogonal_to_ones() {
        for m in [2usize, 3, 7, 20] {
            let b = ones_complement_basis(m);
            assert_eq!(b.shape(), (m, m - 1));
            assert_relative_eq!(b.transpose() * &b, DMatrix::identity(m - 1, m - 1), epsilon = 1e-13);
            let ones = DVector::from_element(m, 1.0);
            assert_abs_diff_eq!((b.transpose() * ones).norm(), 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn random_rotations_are_admissible_and_vary() {
        let mut rng = SeedTree::new(7).rng();
        let a = random_rotation(6, &mut rng);
        let b = random_rotation(6, &mut rng);
        assert_admissible(&a);
        assert_admissible(&b);
        assert!((&a - &b).amax() > 1e-3, "two draws should differ");
    }

    #[test]
    fn procrustes_recovers_a_planted_rotation() {
        // K = Ω₀·P for symmetric PSD P supported on 𝟙⊥ has optimum Ω₀
        let mut rng = SeedTree::new(8).rng();
        let m = 5;
        let omega0 = random_rotation(m, &mut rng);
        let b = ones_complement_basis(m);
        let g = DMatrix::from_fn(m - 1, m - 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let p = &b * (&g * g.transpose() + DMatrix::identity(m - 1, m - 1)) * b.transpose();
        let k = &omega0 * p;
        let got = procrustes_rotation(&k).unwrap();
        assert_relative_eq!(got, omega0, epsilon = 1e-10);
    }

    #[test]
    fn procrustes_beats_other_admissible_rotations() {
        let mut rng = SeedTree::new(9).rng();
        let m = 6;
        let b = ones_complement_basis(m);
        let raw = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        // project K into the required double-kernel structure
        let k = &b * (b.transpose() * raw * &b) * b.transpose();
        let best = procrustes_rotation(&k).unwrap();
        let score = |o: &DMatrix<f64>| (o.transpose() * &k).trace();
        let s_best = score(&best);
        for _ in 0..20 {
            let other = random_rotation(m, &mut rng);
            assert!(score(&other) <= s_best + 1e-10);
        }
        assert_admissible(&best);
    }

    #[test]
    fn zero_objective_returns_identity() {
        let k = DMatrix::zeros(4, 4);
        assert_eq!(procrustes_rotation(&k).unwrap(), DMatrix::identity(4, 4));
    }
}
