//! Monotone-rearrangement transport for scalar states. On the line with
//! squared-distance cost the optimal coupling never crosses itself, so it
//! can be read off by sorting both sides and sweeping two cursors that pour
//! source mass `M·wᵢ` into unit target slots in order. Runs in
//! O(M log M + nnz) and agrees with the network simplex.

use nalgebra::DMatrix;

use super::Plan;
use crate::ensemble::Weights;
use crate::error::{Error, Result};

/// Optimal squared-cost coupling of weighted scalar positions onto the same
/// positions with uniform mass. Ties in position are kept in index order.
pub fn solve_1d(positions: &[f64], w: &Weights) -> Result<Plan> {
    let m = w.len();
    if positions.len() != m {
        return Err(Error::DimensionMismatch(format!("{} positions for {m} weights", positions.len())));
    }
    if positions.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite position".into()));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&p, &q| positions[p].total_cmp(&positions[q]).then(p.cmp(&q)));

    let mut d = DMatrix::<f64>::zeros(m, m);
    let mut objective = 0.0;
    let (mut s, mut t) = (0usize, 0usize);
    let mut ra = m as f64 * w[order[0]];
    let mut rb = 1.0f64;
    while s < m && t < m {
        let take = ra.min(rb);
        if take > 0.0 {
            let (i, j) = (order[s], order[t]);
            d[(i, j)] += take;
            let gap = positions[i] - positions[j];
            objective += take * gap * gap;
        }
        if ra <= rb {
            // source s exhausted; on an exact tie the target closes too
            rb -= take;
            s += 1;
            if s < m {
                ra = m as f64 * w[order[s]];
            }
            if rb == 0.0 {
                t += 1;
                rb = 1.0;
            }
        } else {
            ra -= take;
            t += 1;
            rb = 1.0;
        }
    }

    let mut marginal_error = 0.0f64;
    for j in 0..m {
        marginal_error = marginal_error.max((d.column(j).sum() - 1.0).abs());
    }
    for i in 0..m {
        marginal_error = marginal_error.max((d.row(i).sum() - m as f64 * w[i]).abs());
    }
    Ok(Plan { d, objective, iterations: 0, marginal_error, duality_gap: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use crate::transport::{cost_matrix, solve_exact};
    use approx::assert_abs_diff_eq;
    use lets_testkit::gen::{random_skewed_weights, random_weights};
    use nalgebra::DVector;
    use rand::Rng;

    #[test]
    fn uniform_weights_give_the_identity() {
        let plan = solve_1d(&[3.0, -1.0, 0.5], &Weights::uniform(3)).unwrap();
        assert_eq!(plan.d, DMatrix::identity(3, 3));
        assert_eq!(plan.objective, 0.0);
    }

    #[test]
    fn two_member_plan_by_hand() {
        let w = Weights::new(DVector::from_vec(vec![0.75, 0.25])).unwrap();
        let plan = solve_1d(&[0.0, 1.0], &w).unwrap();
        assert_abs_diff_eq!(plan.d[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(plan.d[(0, 1)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(plan.d[(1, 1)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(plan.objective, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn matches_the_simplex_on_random_lines() {
        let mut rng = SeedTree::new(40).rng();
        for trial in 0..40 {
            let m = 2 + trial % 10;
            let mut pos: Vec<f64> = (0..m).map(|_| rng.random_range(-4.0..4.0)).collect();
            if trial % 3 == 0 {
                pos[m / 2] = pos[0]; // exercise position ties
            }
            let w = if trial % 2 == 0 {
                Weights::new(random_weights(&mut rng, m)).unwrap()
            } else {
                Weights::new(random_skewed_weights(&mut rng, m)).unwrap()
            };
            let x = DMatrix::from_fn(1, m, |_, j| pos[j]);
            let exact = solve_exact(&cost_matrix(&x), &w).unwrap();
            let sorted = solve_1d(&pos, &w).unwrap();
            assert_abs_diff_eq!(sorted.objective, exact.objective, epsilon = 1e-9);
            assert!(sorted.marginal_error < 1e-10);
        }
    }

    #[test]
    fn zero_weight_members_pass_their_slot_along() {
        let w = Weights::new(DVector::from_vec(vec![0.5, 0.0, 0.5])).unwrap();
        let plan = solve_1d(&[0.0, 1.0, 2.0], &w).unwrap();
        assert_eq!(plan.d.row(1).sum(), 0.0);
        for j in 0..3 {
            assert_abs_diff_eq!(plan.d.column(j).sum(), 1.0, epsilon = 1e-15);
        }
        // slot 1 splits between its neighbours: mass 0.5 from each side
        assert_abs_diff_eq!(plan.d[(0, 1)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(plan.d[(2, 1)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn large_instance_stays_cheap_and_feasible() {
        let mut rng = SeedTree::new(41).rng();
        let m = 1000;
        let pos: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = Weights::new(random_skewed_weights(&mut rng, m)).unwrap();
        let plan = solve_1d(&pos, &w).unwrap();
        assert!(plan.marginal_error < 1e-9);
        assert!(plan.d.iter().all(|&v| v >= 0.0));
    }
}
