//! Analysis schemes: each turns one observation into a right-multiplication
//! of the fixed-lag window, possibly followed by additive rejuvenation of
//! the newest block.
//!
//! The square-root scheme ([`esrs`]) is deterministic and second-order
//! exact against the Kalman update. The moment-matching scheme ([`nets`])
//! and transport schemes ([`etps`]) consume importance weights; transport
//! plans may be repaired by the second-moment correction ([`riccati`]).
//! [`bootstrap`] supplies the naive resampling baseline, and the hybrid
//! composes a tempered transport stage with a square-root stage on the
//! remaining fraction of the likelihood.

pub mod bootstrap;
pub mod esrs;
pub mod etps;
pub mod nets;
pub mod riccati;
pub mod rotations;

pub use esrs::{esrs_update, EsrsUpdate};
pub use etps::{apply_etps, etps_update, EtpsConfig, EtpsUpdate, EtpsVariant, PlanSolver};
pub use nets::{nets_delta, nets_transform, Rotation};
pub use riccati::{riccati_delta, RiccatiInfo};

use nalgebra::DVector;
use rand::Rng;

use crate::ensemble::{mean_and_deviations, Window};
use crate::error::{Error, Result};
use crate::models::rejuvenate;
use crate::observation::{effective_sample_size, importance_weights, ObsModel};

/// Which analysis scheme a cycle runs.
#[derive(Clone, Copy, Debug)]
pub enum SmootherKind {
    /// Deterministic ensemble square-root update.
    Esrs,
    /// Moment-matching transform with the chosen rotation.
    Nets { rotation: Rotation },
    /// Optimal-transport plan as transform.
    Etps(EtpsConfig),
    /// Transport stage on `αR⁻¹`, square-root stage on `(1−α)R⁻¹`.
    Hybrid { alpha: f64, etps: EtpsConfig },
    /// Systematic trajectory resampling (the naive smoother).
    Bootstrap,
}

/// Per-cycle diagnostics.
#[derive(Clone, Copy, Debug, Default)]
pub struct CycleReport {
    /// Effective sample size of the importance weights, for the schemes
    /// that compute any.
    pub ess: Option<f64>,
    /// Log-weight spread of the likelihood evaluation.
    pub log_span: Option<f64>,
    /// Weight degeneracy flag (the analysis still proceeds).
    pub degenerate: bool,
    /// Transport objective, for the plan-based schemes.
    pub transport_objective: Option<f64>,
}

/// Run one analysis on the window in place: build the scheme's transform
/// from the newest block's likelihood, apply it over the window, then
/// rejuvenate the newest block with additive spread `beta` (0 disables).
pub fn assimilate<R: Rng>(
    kind: &SmootherKind,
    window: &mut Window,
    y: &DVector<f64>,
    obs: &ObsModel,
    beta: f64,
    rng: &mut R,
) -> Result<CycleReport> {
    if window.is_empty() {
        return Err(Error::InvalidEnsemble("cannot assimilate into an empty window".into()));
    }
    let prior_stats = mean_and_deviations(window.newest())?;
    let mut report = CycleReport::default();
    match kind {
        SmootherKind::Esrs => {
            let scale = DVector::from_element(obs.n_y(), 1.0);
            let up = esrs_update(window.newest(), y, obs, &scale)?;
            window.apply(&up.transform)?;
        }
        SmootherKind::Nets { rotation } => {
            let cw = importance_weights(window.newest(), y, obs, 1.0)?;
            note_weights(&mut report, cw.log_span, cw.degenerate, effective_sample_size(&cw.weights));
            let flat = window.flatten();
            let t = nets_transform(&flat, &cw.weights, *rotation, rng)?;
            window.apply(&t)?;
        }
        SmootherKind::Etps(cfg) => {
            let cw = importance_weights(window.newest(), y, obs, 1.0)?;
            note_weights(&mut report, cw.log_span, cw.degenerate, effective_sample_size(&cw.weights));
            let up = etps_update(window, &cw.weights, *cfg)?;
            report.transport_objective = Some(up.objective);
            apply_etps(window, &up)?;
        }
        SmootherKind::Hybrid { alpha, etps } => {
            if !(0.0..=1.0).contains(alpha) {
                return Err(Error::InvalidArgument(format!("hybrid split must lie in [0, 1], got {alpha}")));
            }
            if *alpha > 0.0 {
                let cw = importance_weights(window.newest(), y, obs, *alpha)?;
                note_weights(&mut report, cw.log_span, cw.degenerate, effective_sample_size(&cw.weights));
                let up = etps_update(window, &cw.weights, *etps)?;
                report.transport_objective = Some(up.objective);
                apply_etps(window, &up)?;
            }
            if *alpha < 1.0 {
                // the square-root stage sees the ensemble the transport
                // stage produced and the leftover share of the precision
                let scale = DVector::from_element(obs.n_y(), 1.0 - alpha);
                let up = esrs_update(window.newest(), y, obs, &scale)?;
                window.apply(&up.transform)?;
            }
        }
        SmootherKind::Bootstrap => {
            let cw = importance_weights(window.newest(), y, obs, 1.0)?;
            note_weights(&mut report, cw.log_span, cw.degenerate, effective_sample_size(&cw.weights));
            let t = bootstrap::systematic_transform(&cw.weights, rng);
            window.apply(&t)?;
        }
    }
    if beta > 0.0 {
        let newest = window.lag();
        rejuvenate(window.block_mut(newest), &prior_stats, beta, rng)?;
    }
    Ok(report)
}

fn note_weights(report: &mut CycleReport, log_span: f64, degenerate: bool, ess: f64) {
    report.ess = Some(ess);
    report.log_span = Some(log_span);
    report.degenerate = degenerate;
}
