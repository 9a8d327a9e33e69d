//! Dense two-phase tableau simplex with Bland's rule, plus the transportation
//! problem posed through it. Used as the optimality oracle for transport-plan
//! solvers: slow, simple, and independent of the solver under test.

use nalgebra::DMatrix;

const EPS: f64 = 1e-9;

/// Minimize `cᵀx` subject to `A x = b`, `x ≥ 0`, with `b ≥ 0`.
///
/// Two-phase primal simplex on a dense tableau. Bland's rule (lowest eligible
/// index enters, lowest-index basic variable leaves on ties) guarantees
/// termination on degenerate instances at the price of speed, which is fine
/// for an oracle.
pub fn solve_lp(c: &[f64], a: &DMatrix<f64>, b: &[f64]) -> Result<(f64, Vec<f64>), String> {
    let m = a.nrows();
    let n = a.ncols();
    assert_eq!(c.len(), n);
    assert_eq!(b.len(), m);
    assert!(b.iter().all(|&v| v >= -1e-12), "rhs must be nonnegative");

    // tableau layout: n structural columns, m artificial columns, rhs
    let cols = n + m + 1;
    let mut t = vec![0.0f64; m * cols];
    let mut basis: Vec<usize> = (n..n + m).collect();
    for i in 0..m {
        for j in 0..n {
            t[i * cols + j] = a[(i, j)];
        }
        t[i * cols + n + i] = 1.0;
        t[i * cols + n + m] = b[i].max(0.0);
    }

    let pivot = |t: &mut Vec<f64>, basis: &mut Vec<usize>, row: usize, col: usize| {
        let p = t[row * cols + col];
        for j in 0..cols {
            t[row * cols + j] /= p;
        }
        for i in 0..m {
            if i == row {
                continue;
            }
            let f = t[i * cols + col];
            if f != 0.0 {
                for j in 0..cols {
                    t[i * cols + j] -= f * t[row * cols + j];
                }
            }
        }
        basis[row] = col;
    };

    // one simplex phase: price with `cost`, pivot until no eligible column
    let run_phase = |t: &mut Vec<f64>,
                     basis: &mut Vec<usize>,
                     cost: &dyn Fn(usize) -> f64,
                     allow: &dyn Fn(usize) -> bool|
     -> Result<(), String> {
        for _ in 0..200_000 {
            // reduced costs via the basic-cost combination of each column
            let mut entering = None;
            'cols: for j in 0..n + m {
                if !allow(j) || basis.contains(&j) {
                    continue;
                }
                let mut red = cost(j);
                for i in 0..m {
                    red -= cost(basis[i]) * t[i * cols + j];
                }
                if red < -EPS {
                    entering = Some(j);
                    break 'cols; // Bland: first (lowest-index) eligible column
                }
            }
            let Some(col) = entering else { return Ok(()) };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let aij = t[i * cols + col];
                if aij > EPS {
                    let ratio = t[i * cols + n + m] / aij;
                    let better = match leave {
                        None => true,
                        Some((li, lr)) => {
                            ratio < lr - EPS || (ratio < lr + EPS && basis[i] < basis[li])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((row, _)) = leave else {
                return Err("unbounded".into());
            };
            pivot(t, basis, row, col);
        }
        Err("simplex iteration limit".into())
    };

    // phase 1: drive the artificials out
    run_phase(
        &mut t,
        &mut basis,
        &|j| if j >= n { 1.0 } else { 0.0 },
        &|_| true,
    )?;
    let phase1: f64 = basis
        .iter()
        .enumerate()
        .map(|(i, &j)| if j >= n { t[i * cols + n + m] } else { 0.0 })
        .sum();
    if phase1 > 1e-7 {
        return Err(format!("infeasible (phase-1 objective {phase1:.3e})"));
    }
    // pivot any zero-valued artificial still in the basis out on a structural
    for i in 0..m {
        if basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| t[i * cols + j].abs() > EPS) {
                pivot(&mut t, &mut basis, i, j);
            }
        }
    }

    // phase 2 on the original objective, artificials barred
    run_phase(&mut t, &mut basis, &|j| if j < n { c[j] } else { 0.0 }, &|j| j < n)?;

    let mut x = vec![0.0f64; n];
    for (i, &j) in basis.iter().enumerate() {
        if j < n {
            x[j] = t[i * cols + n + m];
        }
    }
    let obj = x.iter().zip(c).map(|(xi, ci)| xi * ci).sum();
    Ok((obj, x))
}

/// Solve the balanced transportation problem
/// `min Σ cᵢⱼ dᵢⱼ  s.t.  d·1 = row_sums, dᵀ·1 = col_sums, d ≥ 0`
/// by handing the full LP to [`solve_lp`].
pub fn transport_lp(
    costs: &DMatrix<f64>,
    row_sums: &[f64],
    col_sums: &[f64],
) -> Result<(f64, DMatrix<f64>), String> {
    let (r, s) = (costs.nrows(), costs.ncols());
    assert_eq!(row_sums.len(), r);
    assert_eq!(col_sums.len(), s);
    let total_r: f64 = row_sums.iter().sum();
    let total_c: f64 = col_sums.iter().sum();
    assert!((total_r - total_c).abs() < 1e-8, "unbalanced marginals");

    // variables x_{ij} flattened row-major; drop the last (redundant) column
    // constraint to keep the system full-rank for the simplex
    let n = r * s;
    let mut a = DMatrix::zeros(r + s - 1, n);
    let mut b = vec![0.0; r + s - 1];
    for i in 0..r {
        for j in 0..s {
            a[(i, i * s + j)] = 1.0;
        }
        b[i] = row_sums[i];
    }
    for j in 0..s - 1 {
        for i in 0..r {
            a[(r + j, i * s + j)] = 1.0;
        }
        b[r + j] = col_sums[j];
    }
    let c: Vec<f64> = (0..n).map(|k| costs[(k / s, k % s)]).collect();
    let (obj, x) = solve_lp(&c, &a, &b)?;
    let plan = DMatrix::from_fn(r, s, |i, j| x[i * s + j]);
    Ok((obj, plan))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_solved_two_by_two() {
        // costs [[0,1],[1,0]] with uniform marginals: stay put, cost 0
        let c = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let (obj, plan) = transport_lp(&c, &[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!(obj.abs() < 1e-12);
        assert!((plan[(0, 0)] - 1.0).abs() < 1e-9);
        assert!((plan[(1, 1)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hand_solved_forced_transport() {
        // all mass sits on source 0 and must split across both sinks
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 9.0, 9.0]);
        let (obj, plan) = transport_lp(&c, &[2.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((obj - 5.0).abs() < 1e-9);
        assert!((plan[(0, 0)] - 1.0).abs() < 1e-9);
        assert!((plan[(0, 1)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hand_solved_three_by_three() {
        // classic instance solvable by inspection: match i to j = i
        // (diagonal strictly cheapest, marginals uniform)
        let c = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 5.0, 5.0, 5.0, 1.0, 5.0, 5.0, 5.0, 1.0],
        );
        let (obj, _) = transport_lp(&c, &[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]).unwrap();
        assert!((obj - 3.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_marginals_terminate() {
        // zero row mass forces degenerate pivots; Bland's rule must cope
        let c = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 4.0, 1.0, 0.0, 1.0, 4.0, 1.0, 0.0]);
        let (obj, plan) = transport_lp(&c, &[0.0, 0.0, 3.0], &[1.0, 1.0, 1.0]).unwrap();
        assert!((obj - 5.0).abs() < 1e-9);
        assert!((plan.row_sum()[(0, 0)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn marginals_hold_on_random_instance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let m = 6;
        let c = DMatrix::from_fn(m, m, |_, _| rng.random_range(0.0..5.0));
        let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
        let tot: f64 = raw.iter().sum();
        let rows: Vec<f64> = raw.iter().map(|v| m as f64 * v / tot).collect();
        let cols = vec![1.0; m];
        let (_, plan) = transport_lp(&c, &rows, &cols).unwrap();
        for i in 0..m {
            assert!((plan.row(i).sum() - rows[i]).abs() < 1e-8);
            assert!((plan.column(i).sum() - 1.0).abs() < 1e-8);
        }
        assert!(plan.iter().all(|&v| v >= -1e-12));
    }
}
