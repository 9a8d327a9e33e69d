//! Trajectory resampling as a transform: the naive smoother baseline.
//!
//! Systematic resampling draws one uniform offset and strides through the
//! weight CDF, giving each member a number of copies within one of `M·wᵢ`.
//! Written as a 0/1 transform matrix (column j picks slot j's ancestor) it
//! slots into the same window machinery as the deterministic schemes —
//! which also makes the comparison fair: the naive smoother re-uses
//! surviving trajectories wholesale, and its fixed-lag marginals collapse
//! onto few distinct ancestors as the lag grows.

use nalgebra::DMatrix;
use rand::Rng;

use crate::ensemble::{Scheme, Transform, Weights};

/// Systematic-resampling transform for the given weights.
pub fn systematic_transform<R: Rng>(w: &Weights, rng: &mut R) -> Transform {
    let m = w.len();
    let offset = rng.random_range(0.0..1.0 / m as f64);
    let mut d = DMatrix::zeros(m, m);
    let mut cum = w[0];
    let mut i = 0;
    for j in 0..m {
        let u = offset + j as f64 / m as f64;
        while u > cum && i + 1 < m {
            i += 1;
            cum += w[i];
        }
        d[(i, j)] = 1.0;
    }
    Transform::new(d, Scheme::Bootstrap).expect("0/1 columns sum to one")
}
