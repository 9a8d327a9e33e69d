//! Transport-plan smoother update.
//!
//! The importance weights of the newest observation are turned into an
//! analysis transform by solving an optimal-transport problem between the
//! weighted forecast members and their uniformly weighted selves; the plan
//! itself is the transform. Three scopes of the cost are supported: the
//! whole window trajectory at once, one independent plan per window time,
//! or the newest-time plan reused across the window. An optional
//! second-moment correction repairs each plan's understated spread.

use nalgebra::DMatrix;

use super::riccati::{riccati_delta_seeded, MomentTarget};
use crate::ensemble::{Scheme, Transform, Weights, Window};
use crate::error::{Error, Result};
use crate::transport::{cost_matrix, solve_1d, solve_exact, solve_sinkhorn, Plan, SinkhornOptions};

/// Which transport solver produces the plans.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PlanSolver {
    /// Network simplex, exact. Scalar-state costs are routed through the
    /// equivalent monotone-rearrangement solver.
    Exact,
    /// Entropy-regularized plans with inverse temperature λ.
    Sinkhorn { lambda: f64 },
}

/// Scope of the transport cost.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EtpsVariant {
    /// One plan from the stacked window trajectories, applied window-wide.
    Pathwise,
    /// An independent plan per window time.
    PerTime,
    /// The newest-time plan, reused for every window time.
    Constant,
}

#[derive(Clone, Copy, Debug)]
pub struct EtpsConfig {
    pub variant: EtpsVariant,
    /// Apply the second-moment correction to every plan.
    pub corrected: bool,
    pub solver: PlanSolver,
}

/// Transforms for one analysis, plus solver diagnostics.
#[derive(Clone, Debug)]
pub struct EtpsUpdate {
    /// One transform applied window-wide, or one per window time
    /// (oldest first) for the per-time variant.
    pub transforms: Vec<Transform>,
    pub window_wide: bool,
    /// Summed transport objective across the solved plans.
    pub objective: f64,
}

fn solve_block(x: &DMatrix<f64>, w: &Weights, solver: PlanSolver) -> Result<Plan> {
    match solver {
        PlanSolver::Exact => {
            if x.nrows() == 1 {
                let positions: Vec<f64> = x.row(0).iter().cloned().collect();
                solve_1d(&positions, w)
            } else {
                solve_exact(&cost_matrix(x), w)
            }
        }
        PlanSolver::Sinkhorn { lambda } => {
            // the regularisation strength is quoted relative to the mean
            // cost of the instance; otherwise one number could not serve
            // models whose state scales differ by orders of magnitude
            let costs = cost_matrix(x);
            let mean = costs.iter().sum::<f64>() / costs.len() as f64;
            if mean <= 0.0 {
                // all members coincide: every feasible plan costs nothing
                let m = w.len();
                let d = DMatrix::from_fn(m, m, |i, _| w[i]);
                return Ok(Plan { d, objective: 0.0, iterations: 0, marginal_error: 0.0, duality_gap: None });
            }
            // a 1e-4 row-marginal residual biases the reproduced mean by
            // the same order — far below analysis noise — while chasing
            // tighter marginals on a sharp kernel costs thousands of sweeps
            let opts = SinkhornOptions { max_iter: 800, tol: 1e-4, strict: true };
            match solve_sinkhorn(&(&costs / mean), w, lambda, opts) {
                Ok(mut plan) => {
                    plan.objective *= mean;
                    Ok(plan)
                }
                // near-degenerate weights make a sharp kernel crawl, and
                // those are exactly the instances whose regularized optimum
                // sits on the exact one — hand them to the LP
                Err(Error::NoConvergence(_)) => solve_exact(&costs, w),
                Err(e) => Err(e),
            }
        }
    }
}

fn plan_to_transform(
    plan: Plan,
    w: &Weights,
    target: Option<&MomentTarget>,
) -> Result<(Transform, f64)> {
    let objective = plan.objective;
    let tol = (4.0 * plan.marginal_error).max(1e-9);
    let d = match target {
        Some(t) => {
            let (delta, _) = riccati_delta_seeded(&plan.d, w, t)?;
            plan.d + delta
        }
        None => plan.d,
    };
    let t = Transform::with_first_moment(d, Scheme::Etps, w.as_vector(), tol)?;
    Ok((t, objective))
}

/// Build the analysis transform(s) for the current window under the given
/// weights.
pub fn etps_update(window: &Window, w: &Weights, cfg: EtpsConfig) -> Result<EtpsUpdate> {
    // the moment target depends only on the weights, so one square root
    // serves every plan of a per-time update
    let target = if cfg.corrected { Some(MomentTarget::of(w)?) } else { None };
    match cfg.variant {
        EtpsVariant::Pathwise => {
            let flat = window.flatten();
            let plan = solve_block(&flat, w, cfg.solver)?;
            let (t, objective) = plan_to_transform(plan, w, target.as_ref())?;
            Ok(EtpsUpdate { transforms: vec![t], window_wide: true, objective })
        }
        EtpsVariant::Constant => {
            let plan = solve_block(window.newest(), w, cfg.solver)?;
            let (t, objective) = plan_to_transform(plan, w, target.as_ref())?;
            Ok(EtpsUpdate { transforms: vec![t], window_wide: true, objective })
        }
        EtpsVariant::PerTime => {
            let mut transforms = Vec::with_capacity(window.len());
            let mut objective = 0.0;
            for block in window.blocks() {
                let plan = solve_block(block, w, cfg.solver)?;
                let (t, obj) = plan_to_transform(plan, w, target.as_ref())?;
                objective += obj;
                transforms.push(t);
            }
            Ok(EtpsUpdate { transforms, window_wide: false, objective })
        }
    }
}

/// Apply an update to the window it was built for.
pub fn apply_etps(window: &mut Window, update: &EtpsUpdate) -> Result<()> {
    if update.window_wide {
        window.apply(&update.transforms[0])
    } else {
        window.apply_per_time(&update.transforms)
    }
}
