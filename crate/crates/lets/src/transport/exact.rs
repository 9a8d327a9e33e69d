//! Transportation-network simplex on the dense bipartite problem.
//!
//! The basis is a spanning tree on the `2M` marginal nodes, held in flat
//! arrays. Pivots use block pricing over the flattened cost array with a
//! cursor that resumes after the previous entering arc; long runs of
//! degenerate pivots switch to Bland's rule until flow moves again, which
//! rules out cycling. Node potentials are recomputed from the tree once per
//! pivot (O(M) by breadth-first search), and after termination the basic
//! flows are rebuilt exactly from the marginals by stripping leaves off the
//! tree, so the returned plan satisfies the column sums to machine precision
//! rather than to accumulated pivot roundoff. The result carries a
//! primal-dual gap certificate.

use nalgebra::DMatrix;

use super::{check_instance, Plan};
use crate::ensemble::Weights;
use crate::error::{Error, Result};

/// Relative duality-gap bound certified by [`solve_exact`].
pub const GAP_TOL: f64 = 1e-8;

struct Simplex<'a> {
    m: usize,
    costs: &'a DMatrix<f64>,
    /// Source masses `M·wᵢ` (sinks all carry mass 1).
    supply: Vec<f64>,
    /// Basic arcs: endpoints and current flow, `2M − 1` entries.
    arc_i: Vec<u32>,
    arc_j: Vec<u32>,
    flow: Vec<f64>,
    /// Flattened membership mask over all `M²` arcs.
    is_basic: Vec<bool>,
    /// Tree adjacency per node: (basic-arc slot, other endpoint).
    /// Sources are nodes `0..M`, sinks `M..2M`.
    adj: Vec<Vec<(u32, u32)>>,
    pot: Vec<f64>,
    seen: Vec<bool>,
    queue: Vec<u32>,
    par_arc: Vec<u32>,
}

impl<'a> Simplex<'a> {
    /// Northwest-corner start: walk the cost array from (0,0), saturating
    /// whichever marginal runs out first; ties advance the source so the
    /// walk always adds exactly `2M − 1` basic arcs.
    fn new(costs: &'a DMatrix<f64>, supply: Vec<f64>) -> Self {
        let m = supply.len();
        let n_arcs = 2 * m - 1;
        let mut arc_i = vec![0u32; n_arcs];
        let mut arc_j = vec![0u32; n_arcs];
        let mut flow = vec![0f64; n_arcs];
        let mut is_basic = vec![false; m * m];
        let (mut i, mut j, mut k) = (0usize, 0usize, 0usize);
        let mut ra = supply[0];
        let mut rb = 1.0f64;
        loop {
            arc_i[k] = i as u32;
            arc_j[k] = j as u32;
            let take = ra.min(rb).max(0.0);
            flow[k] = take;
            is_basic[i * m + j] = true;
            k += 1;
            if i == m - 1 && j == m - 1 {
                break;
            }
            let advance_source = if j == m - 1 {
                true
            } else if i == m - 1 {
                false
            } else {
                ra <= rb
            };
            if advance_source {
                rb = (rb - take).max(0.0);
                i += 1;
                ra = supply[i];
            } else {
                ra = (ra - take).max(0.0);
                j += 1;
                rb = 1.0;
            }
        }
        debug_assert_eq!(k, n_arcs);
        Simplex {
            m,
            costs,
            supply,
            arc_i,
            arc_j,
            flow,
            is_basic,
            adj: vec![Vec::new(); 2 * m],
            pot: vec![0.0; 2 * m],
            seen: vec![false; 2 * m],
            queue: Vec::with_capacity(2 * m),
            par_arc: vec![0; 2 * m],
        }
    }

    fn rebuild_adjacency(&mut self) {
        for list in &mut self.adj {
            list.clear();
        }
        for k in 0..self.flow.len() {
            let s = self.arc_i[k] as usize;
            let t = self.m + self.arc_j[k] as usize;
            self.adj[s].push((k as u32, t as u32));
            self.adj[t].push((k as u32, s as u32));
        }
    }

    /// Solve `uᵢ + vⱼ = cᵢⱼ` over the basic arcs by walking the tree from
    /// node 0 with `u₀ = 0`.
    fn recompute_potentials(&mut self) {
        self.seen.fill(false);
        self.queue.clear();
        self.queue.push(0);
        self.seen[0] = true;
        self.pot[0] = 0.0;
        let mut head = 0;
        while head < self.queue.len() {
            let u = self.queue[head] as usize;
            head += 1;
            for &(k, v) in &self.adj[u] {
                let v = v as usize;
                if !self.seen[v] {
                    self.seen[v] = true;
                    let c = self.costs[(self.arc_i[k as usize] as usize, self.arc_j[k as usize] as usize)];
                    self.pot[v] = c - self.pot[u];
                    self.queue.push(v as u32);
                }
            }
        }
        debug_assert!(self.seen.iter().all(|&s| s), "basis tree is disconnected");
    }

    fn reduced_cost(&self, e: usize) -> f64 {
        let (i, j) = (e / self.m, e % self.m);
        self.costs[(i, j)] - self.pot[i] - self.pot[self.m + j]
    }

    /// Entering-arc search. Block mode scans `max(M, 64)` arcs at a time from
    /// the cursor and returns the most negative reduced cost in the first
    /// block that holds one; Bland mode returns the lowest-index eligible arc.
    fn price(&self, cursor: usize, eps: f64, bland: bool) -> Option<usize> {
        let total = self.m * self.m;
        if bland {
            return (0..total).find(|&e| !self.is_basic[e] && self.reduced_cost(e) < -eps);
        }
        let block = self.m.max(64).min(total);
        let mut e = cursor % total;
        let mut scanned = 0;
        while scanned < total {
            let mut best: Option<(usize, f64)> = None;
            let mut in_block = 0;
            while in_block < block && scanned < total {
                if !self.is_basic[e] {
                    let r = self.reduced_cost(e);
                    if r < -eps && best.map_or(true, |(_, br)| r < br) {
                        best = Some((e, r));
                    }
                }
                e = if e + 1 == total { 0 } else { e + 1 };
                in_block += 1;
                scanned += 1;
            }
            if let Some((be, _)) = best {
                return Some(be);
            }
        }
        None
    }

    /// Bring arc `e` into the basis. Returns the flow moved around the
    /// unique tree cycle (zero for a degenerate pivot).
    fn pivot(&mut self, e: usize) -> f64 {
        let (ei, ej) = (e / self.m, e % self.m);
        let target = self.m + ej;
        // path from the entering arc's source node to its sink node
        self.seen.fill(false);
        self.queue.clear();
        self.queue.push(ei as u32);
        self.seen[ei] = true;
        let mut head = 0;
        while head < self.queue.len() {
            let u = self.queue[head] as usize;
            head += 1;
            if u == target {
                break;
            }
            for &(k, v) in &self.adj[u] {
                let v = v as usize;
                if !self.seen[v] {
                    self.seen[v] = true;
                    self.par_arc[v] = k;
                    self.queue.push(v as u32);
                }
            }
        }
        debug_assert!(self.seen[target], "entering arc endpoints not connected by tree");
        // Walk back from the sink: cycle arcs alternate −θ, +θ, −θ, …
        // starting from the tree arc adjacent to the sink (the entering arc
        // itself carries +θ). Only the −θ arcs limit the step.
        let mut theta = f64::INFINITY;
        let mut leaving = usize::MAX;
        let mut node = target;
        let mut minus = true;
        while node != ei {
            let k = self.par_arc[node] as usize;
            if minus {
                let f = self.flow[k];
                if f < theta || (f == theta && k < leaving) {
                    theta = f;
                    leaving = k;
                }
            }
            let s = self.arc_i[k] as usize;
            let t = self.m + self.arc_j[k] as usize;
            node = if node == s { t } else { s };
            minus = !minus;
        }
        debug_assert!(leaving != usize::MAX);
        // apply the flow change around the cycle
        let mut node = target;
        let mut minus = true;
        while node != ei {
            let k = self.par_arc[node] as usize;
            self.flow[k] = if minus { (self.flow[k] - theta).max(0.0) } else { self.flow[k] + theta };
            let s = self.arc_i[k] as usize;
            let t = self.m + self.arc_j[k] as usize;
            node = if node == s { t } else { s };
            minus = !minus;
        }
        // swap the leaving arc's slot for the entering arc
        let le = self.arc_i[leaving] as usize * self.m + self.arc_j[leaving] as usize;
        self.is_basic[le] = false;
        self.arc_i[leaving] = ei as u32;
        self.arc_j[leaving] = ej as u32;
        self.flow[leaving] = theta;
        self.is_basic[e] = true;
        theta
    }

    /// Rebuild the basic flows exactly from the marginals: repeatedly take a
    /// leaf of the basis tree and give its single remaining arc whatever mass
    /// the leaf still owes.
    fn flows_from_marginals(&mut self) -> Vec<f64> {
        let n = 2 * self.m;
        let n_arcs = self.flow.len();
        let mut rem = vec![1.0f64; n];
        rem[..self.m].copy_from_slice(&self.supply);
        let mut deg: Vec<u32> = self.adj.iter().map(|l| l.len() as u32).collect();
        let mut removed = vec![false; n_arcs];
        let mut exact = vec![0f64; n_arcs];
        self.queue.clear();
        for (u, &d) in deg.iter().enumerate() {
            if d == 1 {
                self.queue.push(u as u32);
            }
        }
        let mut head = 0;
        while head < self.queue.len() {
            let u = self.queue[head] as usize;
            head += 1;
            if deg[u] != 1 {
                continue;
            }
            let Some(&(k, v)) = self.adj[u].iter().find(|&&(k, _)| !removed[k as usize]) else {
                continue;
            };
            let (k, v) = (k as usize, v as usize);
            exact[k] = rem[u];
            rem[v] -= rem[u];
            rem[u] = 0.0;
            removed[k] = true;
            deg[u] -= 1;
            deg[v] -= 1;
            if deg[v] == 1 {
                self.queue.push(v as u32);
            }
        }
        exact
    }
}

/// Minimum-cost coupling of the weighted members onto `M` unit slots, solved
/// to optimality. The plan's columns each sum to 1 and row `i` sums to
/// `M·wᵢ`, so it can be used directly as an analysis transform.
pub fn solve_exact(costs: &DMatrix<f64>, w: &Weights) -> Result<Plan> {
    let m = w.len();
    check_instance(costs, m)?;
    let supply: Vec<f64> = (0..m).map(|i| m as f64 * w[i]).collect();
    let mut s = Simplex::new(costs, supply);

    let cost_scale = 1.0 + costs.amax();
    let eps = 1e-12 * cost_scale;
    let max_pivots = 1000 + 120 * m * (usize::BITS as usize - (m.max(2) - 1).leading_zeros() as usize);
    let bland_threshold = 2 * m + 64;

    let mut cursor = 0usize;
    let mut bland = false;
    let mut degenerate_streak = 0usize;
    let mut pivots = 0usize;
    loop {
        s.rebuild_adjacency();
        s.recompute_potentials();
        let Some(e) = s.price(cursor, eps, bland) else {
            break;
        };
        if pivots >= max_pivots {
            return Err(Error::NoConvergence(format!(
                "network simplex not optimal after {pivots} pivots (M = {m})"
            )));
        }
        let theta = s.pivot(e);
        pivots += 1;
        cursor = e + 1;
        if theta > 0.0 {
            degenerate_streak = 0;
            bland = false;
        } else {
            degenerate_streak += 1;
            if degenerate_streak > bland_threshold {
                bland = true;
            }
        }
    }

    s.rebuild_adjacency();
    s.recompute_potentials();
    let exact_flow = s.flows_from_marginals();

    let mut d = DMatrix::zeros(m, m);
    let mut primal = 0.0;
    for k in 0..exact_flow.len() {
        let (i, j) = (s.arc_i[k] as usize, s.arc_j[k] as usize);
        let f = exact_flow[k];
        if f < -1e-9 {
            return Err(Error::NoConvergence(format!("negative basic flow {f} at optimality")));
        }
        let f = f.max(0.0);
        d[(i, j)] = f;
        primal += s.costs[(i, j)] * f;
    }
    let dual: f64 = (0..m).map(|i| s.pot[i] * s.supply[i]).sum::<f64>() + (0..m).map(|j| s.pot[m + j]).sum::<f64>();
    let gap = (primal - dual).abs();
    if gap > GAP_TOL * (1.0 + primal.abs()) {
        return Err(Error::NoConvergence(format!("duality gap {gap:.3e} exceeds certificate bound")));
    }
    let mut marginal_error = 0.0f64;
    for i in 0..m {
        marginal_error = marginal_error.max((d.row(i).sum() - s.supply[i]).abs());
    }
    for j in 0..m {
        marginal_error = marginal_error.max((d.column(j).sum() - 1.0).abs());
    }

    Ok(Plan { d, objective: primal, iterations: pivots, marginal_error, duality_gap: Some(gap) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use crate::transport::cost_matrix;
    use approx::assert_abs_diff_eq;
    use lets_testkit::gen::{random_skewed_weights, random_weights};
    use lets_testkit::lp::transport_lp;
    use nalgebra::DVector;
    use rand::Rng;

    fn weights_from(raw: &[f64]) -> Weights {
        Weights::new(DVector::from_row_slice(raw)).unwrap()
    }

    #[test]
    fn uniform_weights_keep_every_member_in_place() {
        let x = DMatrix::from_row_slice(1, 4, &[0.0, 1.0, 3.0, 7.0]);
        let plan = solve_exact(&cost_matrix(&x), &Weights::uniform(4)).unwrap();
        assert_abs_diff_eq!(plan.objective, 0.0, epsilon = 1e-14);
        assert_eq!(plan.d, DMatrix::identity(4, 4));
    }

    #[test]
    fn two_member_plan_by_hand() {
        // members at 0 and 1 with weights (3/4, 1/4): half a unit of mass
        // must move from member 0 onto slot 1, nothing else moves
        let x = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let plan = solve_exact(&cost_matrix(&x), &weights_from(&[0.75, 0.25])).unwrap();
        assert_abs_diff_eq!(plan.objective, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(plan.d[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(plan.d[(0, 1)], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(plan.d[(1, 1)], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(plan.d[(1, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_weight_member_receives_an_empty_row() {
        let x = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 2.0]);
        let plan = solve_exact(&cost_matrix(&x), &weights_from(&[0.0, 0.5, 0.5])).unwrap();
        assert_eq!(plan.d.row(0).sum(), 0.0);
        // member 1 fills slot 0 (cost 1) and member 2 backfills half of
        // slot 1 (cost 1/2); nothing cheaper exists
        assert_abs_diff_eq!(plan.d.column(0).sum(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(plan.d[(1, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(plan.d[(2, 1)], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(plan.objective, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn coincident_members_cost_nothing() {
        let costs = DMatrix::zeros(5, 5);
        let w = weights_from(&[0.4, 0.3, 0.2, 0.1, 0.0]);
        let plan = solve_exact(&costs, &w).unwrap();
        assert_eq!(plan.objective, 0.0);
        assert!(plan.marginal_error < 1e-12);
    }

    #[test]
    fn matches_the_lp_oracle_on_random_instances() {
        let mut rng = SeedTree::new(20).rng();
        for trial in 0..30 {
            let m = 2 + trial % 9;
            let x = DMatrix::from_fn(2, m, |_, _| rng.random_range(-3.0..3.0));
            let costs = cost_matrix(&x);
            let w = if trial % 2 == 0 {
                random_weights(&mut rng, m)
            } else {
                random_skewed_weights(&mut rng, m)
            };
            let supplies: Vec<f64> = w.iter().map(|&v| m as f64 * v).collect();
            let (oracle_obj, _) = transport_lp(&costs, &supplies, &vec![1.0; m]).unwrap();
            let w = Weights::new(w).unwrap();
            let plan = solve_exact(&costs, &w).unwrap();
            assert_abs_diff_eq!(plan.objective, oracle_obj, epsilon = 1e-8);
            assert!(plan.duality_gap.unwrap() <= GAP_TOL * (1.0 + plan.objective.abs()));
        }
    }

    #[test]
    fn plan_is_never_beaten_by_the_independent_coupling() {
        let mut rng = SeedTree::new(21).rng();
        for m in [3usize, 6, 11, 17] {
            let x = DMatrix::from_fn(3, m, |_, _| rng.random_range(-2.0..2.0));
            let costs = cost_matrix(&x);
            let w = Weights::new(random_skewed_weights(&mut rng, m)).unwrap();
            let plan = solve_exact(&costs, &w).unwrap();
            // dᵢⱼ = wᵢ satisfies both marginals, so it bounds the optimum
            let indep: f64 =
                (0..m).map(|i| costs.row(i).sum() * w[i]).sum();
            assert!(plan.objective <= indep + 1e-10);
        }
    }

    #[test]
    fn marginals_hold_to_machine_precision() {
        let mut rng = SeedTree::new(22).rng();
        let m = 40;
        let x = DMatrix::from_fn(4, m, |_, _| rng.random_range(-1.0..1.0));
        let w = Weights::new(random_skewed_weights(&mut rng, m)).unwrap();
        let plan = solve_exact(&cost_matrix(&x), &w).unwrap();
        for j in 0..m {
            assert_abs_diff_eq!(plan.d.column(j).sum(), 1.0, epsilon = 1e-12);
        }
        for i in 0..m {
            assert_abs_diff_eq!(plan.d.row(i).sum(), m as f64 * w[i], epsilon = 1e-11);
        }
        assert!(plan.d.iter().all(|&v| v >= 0.0));
    }
}

#[cfg(test)]
mod timing_probe {
    use super::*;
    use crate::rng::SeedTree;
    use crate::transport::cost_matrix;
    use lets_testkit::gen::random_skewed_weights;
    use nalgebra::DMatrix;
    use rand::Rng;

    #[test]
    #[ignore]
    fn probe() {
        for m in [35usize, 100, 200, 500, 1000] {
            let mut rng = SeedTree::new(99).rng();
            let x = DMatrix::from_fn(3, m, |_, _| rng.random_range(-2.0..2.0));
            let costs = cost_matrix(&x);
            let w = Weights::new(random_skewed_weights(&mut rng, m)).unwrap();
            let t0 = std::time::Instant::now();
            let reps = if m <= 100 { 20 } else { 3 };
            let mut pivots = 0;
            for _ in 0..reps {
                pivots = solve_exact(&costs, &w).unwrap().iterations;
            }
            println!("M = {m:4}: {:>10.3} ms/solve, {pivots} pivots", t0.elapsed().as_secs_f64() * 1e3 / reps as f64);
        }
    }
}
