//! Discrete optimal-transport solvers between a weighted ensemble and its
//! uniformly weighted self.
//!
//! All three solvers produce a coupling `D ≥ 0` between the forecast members
//! (source masses `M·wᵢ`) and the analysis slots (unit mass each), so `D`
//! doubles directly as an analysis transform: columns sum to one and
//! `D·𝟙 = M·w` reproduces the weighted mean. [`exact::solve_exact`] runs a
//! transportation-network simplex to optimality with a duality certificate,
//! [`sinkhorn::solve_sinkhorn`] computes the entropy-regularized relaxation in
//! the log domain, and [`sorted::solve_1d`] handles scalar states by monotone
//! rearrangement, which is exact for squared-distance costs on the line.

pub mod exact;
pub mod sinkhorn;
pub mod sorted;

pub use exact::solve_exact;
pub use sinkhorn::{solve_sinkhorn, SinkhornOptions};
pub use sorted::solve_1d;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A transport plan in transform scaling: row sums `M·wᵢ`, column sums 1.
#[derive(Clone, Debug)]
pub struct Plan {
    pub d: DMatrix<f64>,
    /// Transport cost `Σᵢⱼ cᵢⱼ·dᵢⱼ` of the returned plan.
    pub objective: f64,
    /// Simplex pivots or Sinkhorn sweeps spent.
    pub iterations: usize,
    /// Worst absolute violation of the prescribed marginals.
    pub marginal_error: f64,
    /// `|primal − dual|` optimality certificate (exact solver only).
    pub duality_gap: Option<f64>,
}

/// Pairwise squared Euclidean distances between ensemble columns. For
/// transforms acting on a whole smoother window, flatten the window first so
/// distances accumulate over the trajectory segment.
pub fn cost_matrix(x: &DMatrix<f64>) -> DMatrix<f64> {
    let m = x.ncols();
    let mut c = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let d2 = (x.column(i) - x.column(j)).norm_squared();
            c[(i, j)] = d2;
            c[(j, i)] = d2;
        }
    }
    c
}

fn check_instance(costs: &DMatrix<f64>, m: usize) -> Result<()> {
    if costs.nrows() != m || costs.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "{}×{} cost matrix for {m} members",
            costs.nrows(),
            costs.ncols()
        )));
    }
    if costs.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite transport cost".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_matrix_by_hand() {
        let x = DMatrix::from_column_slice(2, 3, &[0.0, 0.0, 1.0, 0.0, 1.0, 2.0]);
        let c = cost_matrix(&x);
        assert_eq!(c[(0, 0)], 0.0);
        assert_eq!(c[(0, 1)], 1.0);
        assert_eq!(c[(0, 2)], 5.0);
        assert_eq!(c[(1, 2)], 4.0);
        assert_eq!(c, c.transpose());
    }
}
