//! Twin experiments: simulate a reference trajectory, synthesize its
//! observations, run the configured smoother against them replicate by
//! replicate, and score the recorded fixed-lag estimates against the truth.
//!
//! The window shifts on a fixed cadence (per observation, or per model step
//! for delayed dynamics). A state is recorded the moment it drops out of
//! the window — it has then received every analysis that will ever touch
//! it — so the run scores exactly the completed fixed-lag estimates and the
//! youngest `lag` states are left unscored, like the trailing edge of any
//! fixed-lag pass. The reference trajectory and its observations live on
//! their own seed stream and are shared by all replicates; replicates
//! differ only through their initial draw and any analysis-side randomness.

use std::fs::{self, File};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use lets::ensemble::{mean_and_deviations, Window};
use lets::localisation::{
    localized_update, AutocorrelationTable, LocalKind, LocalisationConfig, SpatialLayout,
};
use lets::metrics::{ensemble_crps, mode_vector, rmse};
use lets::models::{propagate_ensemble, rejuvenate, DelayBuffer, ModelEnsemble, ModelSpec};
use lets::observation::{synth_observe, ObsModel};
use lets::rng::SeedTree;
use lets::smoothers::{assimilate, SmootherKind};

use crate::autocorr;
use crate::config::{CadenceName, DistanceName, ExperimentConfig, ModelName};
use crate::records::{DiagnosticsRow, RunRow};

// Seed-tree layout: the truth and its observations live on stream 0, the
// autocorrelation series on stream 1, and replicate r on stream 2 + r with
// init and cycle substreams. Fixed indices keep runs bit-reproducible no
// matter how replicates are scheduled.
pub const TRUTH_STREAM: u64 = 0;
pub const TABLE_STREAM: u64 = 1;
pub const REPLICATE_STREAMS: u64 = 2;

/// Window-shift schedule: (model steps per shift, shifts per observation,
/// total shifts).
pub fn shift_schedule(cfg: &ExperimentConfig) -> (usize, usize, usize) {
    match cfg.cadence() {
        CadenceName::Observation => (cfg.observation.every, 1, cfg.run.cycles),
        CadenceName::Step => (1, cfg.observation.every, cfg.run.cycles * cfg.observation.every),
    }
}

pub fn obs_model(cfg: &ExperimentConfig) -> Result<ObsModel> {
    let sites = cfg.obs_sites()?;
    ObsModel::select(&sites, cfg.n_x(), cfg.observation.r)
        .map_err(|e| anyhow::anyhow!("[observation]: {e}"))
}

/// A single-trajectory carrier on the model's attractor: seeded near a
/// reference point, jittered by the stream, then run free for the
/// configured spin-up.
pub fn spun_up_state<R: Rng>(cfg: &ExperimentConfig, rng: &mut R) -> Result<ModelEnsemble> {
    let spec = cfg.model_spec();
    let mut carrier = match cfg.model.name {
        ModelName::Lorenz63 => {
            let x = DMatrix::from_fn(3, 1, |_, _| 1.0 + rng.sample::<f64, _>(StandardNormal));
            ModelEnsemble::Memoryless(x)
        }
        ModelName::Lorenz96 => {
            let f = cfg.model.forcing.unwrap_or(8.0);
            let x =
                DMatrix::from_fn(cfg.n_x(), 1, |_, _| f + rng.sample::<f64, _>(StandardNormal));
            ModelEnsemble::Memoryless(x)
        }
        ModelName::MackeyGlass => {
            let x = 1.2 + 0.1 * rng.sample::<f64, _>(StandardNormal);
            ModelEnsemble::Delayed(vec![DelayBuffer::constant(x, spec.memory_order())])
        }
    };
    propagate_ensemble(&mut carrier, &spec, cfg.run.spin_up, rng)?;
    Ok(carrier)
}

/// The reference trajectory at scoring cadence plus its synthetic
/// observations.
pub struct Truth {
    /// States at every window shift; index 0 is the experiment start.
    pub states: Vec<DVector<f64>>,
    /// One observation per assimilation cycle.
    pub observations: Vec<DVector<f64>>,
    /// Delayed dynamics only: the unperturbed value the member delay lines
    /// grow from, captured one memory length before the experiment start.
    pub history_seed: Option<f64>,
}

pub fn generate_truth(cfg: &ExperimentConfig, master: &SeedTree) -> Result<Truth> {
    let spec = cfg.model_spec();
    let obs = obs_model(cfg)?;
    let mut rng = master.child(TRUTH_STREAM).rng();
    let mut carrier = spun_up_state(cfg, &mut rng)?;
    let history_seed = match &carrier {
        ModelEnsemble::Delayed(bufs) => {
            let seed = bufs[0].cur();
            // grow the reference one memory length past the seed point, so
            // members built from perturbed seeds the same way line up with
            // the experiment start
            propagate_ensemble(&mut carrier, &spec, spec.memory_order(), &mut rng)?;
            Some(seed)
        }
        ModelEnsemble::Memoryless(_) => None,
    };
    let (steps, per_cycle, total) = shift_schedule(cfg);
    let mut states = Vec::with_capacity(total + 1);
    states.push(carrier.current().column(0).clone_owned());
    let mut observations = Vec::with_capacity(cfg.run.cycles);
    for shift in 1..=total {
        propagate_ensemble(&mut carrier, &spec, steps, &mut rng)?;
        let state = carrier.current().column(0).clone_owned();
        if shift % per_cycle == 0 {
            observations.push(synth_observe(&state, &obs, &mut rng));
        }
        states.push(state);
    }
    Ok(Truth { states, observations, history_seed })
}

/// Which analysis runs each cycle.
pub enum Updater {
    Global(SmootherKind),
    Local {
        kind: LocalKind,
        layout: SpatialLayout,
        cfg: LocalisationConfig,
        table: Option<AutocorrelationTable>,
    },
}

/// Everything shared across replicates.
pub struct Setup {
    pub spec: ModelSpec,
    pub obs: ObsModel,
    pub updater: Updater,
    pub label: String,
}

pub fn prepare(cfg: &ExperimentConfig, master: &SeedTree) -> Result<Setup> {
    let spec = cfg.model_spec();
    let obs = obs_model(cfg)?;
    let updater = match cfg.localisation_config()? {
        Some(loc) => {
            let table = match cfg.localisation.as_ref().map(|b| b.scheme) {
                Some(DistanceName::Autocorrelation) => {
                    Some(autocorr::ensure_table(cfg, &master.child(TABLE_STREAM))?)
                }
                _ => None,
            };
            Updater::Local { kind: cfg.local_kind()?, layout: cfg.spatial_layout(), cfg: loc, table }
        }
        None => Updater::Global(cfg.smoother_kind()?),
    };
    Ok(Setup { spec, obs, updater, label: cfg.scheme_label() })
}

fn initial_ensemble<R: Rng>(
    cfg: &ExperimentConfig,
    spec: &ModelSpec,
    truth: &Truth,
    rng: &mut R,
) -> Result<ModelEnsemble> {
    let m = cfg.run.members;
    let sd = cfg.run.init_spread.sqrt();
    match cfg.model.name {
        ModelName::MackeyGlass => {
            let seed = truth
                .history_seed
                .context("delayed dynamics need a history seed from the reference run")?;
            let n = spec.memory_order();
            let bufs = (0..m)
                .map(|_| {
                    DelayBuffer::constant(seed + sd * rng.sample::<f64, _>(StandardNormal), n)
                })
                .collect();
            let mut ens = ModelEnsemble::Delayed(bufs);
            propagate_ensemble(&mut ens, spec, n, rng)?;
            Ok(ens)
        }
        _ => {
            let x0 = &truth.states[0];
            Ok(ModelEnsemble::Memoryless(DMatrix::from_fn(x0.len(), m, |i, _| {
                x0[i] + sd * rng.sample::<f64, _>(StandardNormal)
            })))
        }
    }
}

/// Optional per-replicate dump of every recorded ensemble block.
struct EnsembleDump {
    w: csv::Writer<File>,
}

impl EnsembleDump {
    fn create(dir: &Path, replicate: usize, n_x: usize) -> Result<Self> {
        let sub = dir.join("ensembles");
        fs::create_dir_all(&sub)
            .with_context(|| format!("creating dump directory {}", sub.display()))?;
        let file = File::create(sub.join(format!("rep{replicate}.csv")))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec!["time".to_string(), "member".to_string()];
        header.extend((0..n_x).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        Ok(EnsembleDump { w })
    }

    fn write(&mut self, time: usize, block: &DMatrix<f64>) -> Result<()> {
        for j in 0..block.ncols() {
            let mut rec = vec![time.to_string(), j.to_string()];
            rec.extend(block.column(j).iter().map(|v| v.to_string()));
            self.w.write_record(&rec)?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct DiagAccum {
    ess_sum: f64,
    ess_n: usize,
    degenerate: usize,
    obj_sum: f64,
    obj_n: usize,
}

pub fn run_replicate(
    cfg: &ExperimentConfig,
    setup: &Setup,
    truth: &Truth,
    replicate: usize,
    dump_dir: Option<&Path>,
) -> Result<(RunRow, DiagnosticsRow)> {
    let master = SeedTree::new(cfg.run.seed);
    let rep_tree = master.child(REPLICATE_STREAMS + replicate as u64);
    let mut init_rng = rep_tree.child(0).rng();
    let mut cycle_rng = rep_tree.child(1).rng();

    let mut ens = initial_ensemble(cfg, &setup.spec, truth, &mut init_rng)?;
    let mut window = Window::new(cfg.smoother.lag);
    window.shift(ens.current())?;

    let (steps, per_cycle, total) = shift_schedule(cfg);
    let burn_in = cfg.run.burn_in;
    let mut estimates: Vec<DVector<f64>> = Vec::new();
    let mut mode_estimates: Vec<DVector<f64>> = Vec::new();
    let mut crps_sum = 0.0;
    let mut crps_count = 0usize;
    let mut recorded = 0usize;
    let mut dump = match dump_dir {
        Some(dir) => Some(EnsembleDump::create(dir, replicate, cfg.n_x())?),
        None => None,
    };
    let mut diag = DiagAccum::default();

    for shift in 1..=total {
        propagate_ensemble(&mut ens, &setup.spec, steps, &mut cycle_rng)?;
        if let Some(block) = window.shift(ens.current())? {
            let t = recorded;
            recorded += 1;
            if let Some(d) = dump.as_mut() {
                d.write(t, &block)?;
            }
            if t >= burn_in {
                estimates.push(block.column_mean());
                if cfg.run.mode_metric {
                    mode_estimates.push(mode_vector(&block)?);
                }
                crps_sum += ensemble_crps(&block, &truth.states[t])?;
                crps_count += 1;
            }
        }
        if shift % per_cycle == 0 {
            let cycle = shift / per_cycle;
            let y = &truth.observations[cycle - 1];
            match &setup.updater {
                Updater::Global(kind) => {
                    let report =
                        assimilate(kind, &mut window, y, &setup.obs, cfg.smoother.beta, &mut cycle_rng)?;
                    if let Some(ess) = report.ess {
                        diag.ess_sum += ess;
                        diag.ess_n += 1;
                    }
                    if report.degenerate {
                        diag.degenerate += 1;
                    }
                    if let Some(obj) = report.transport_objective {
                        diag.obj_sum += obj;
                        diag.obj_n += 1;
                    }
                }
                Updater::Local { kind, layout, cfg: loc, table } => {
                    let prior = if cfg.smoother.beta > 0.0 {
                        Some(mean_and_deviations(window.newest())?)
                    } else {
                        None
                    };
                    localized_update(
                        *kind,
                        &mut window,
                        y,
                        &setup.obs,
                        layout,
                        loc,
                        table.as_ref(),
                        &mut cycle_rng,
                    )?;
                    if let Some(stats) = prior {
                        let newest = window.lag();
                        rejuvenate(window.block_mut(newest), &stats, cfg.smoother.beta, &mut cycle_rng)?;
                    }
                }
            }
            ens.absorb_window(&window)?;
        }
    }

    let refs = &truth.states[burn_in..burn_in + estimates.len()];
    let rmse_mu = rmse(&estimates, refs)?;
    let rmse_mode =
        if cfg.run.mode_metric { Some(rmse(&mode_estimates, refs)?) } else { None };
    let crps = crps_sum / crps_count as f64;

    let row = RunRow {
        scheme: setup.label.clone(),
        m: cfg.run.members,
        l: cfg.smoother.lag,
        alpha: cfg.alpha_column(),
        lambda: cfg.lambda_column(),
        r_loc: cfg.r_loc_column(),
        seed: rep_tree.key(),
        rmse_mu,
        rmse_mode,
        crps,
    };
    let diags = DiagnosticsRow {
        scheme: setup.label.clone(),
        m: cfg.run.members,
        l: cfg.smoother.lag,
        seed: rep_tree.key(),
        mean_ess: (diag.ess_n > 0).then(|| diag.ess_sum / diag.ess_n as f64),
        degenerate_cycles: diag.degenerate,
        mean_objective: (diag.obj_n > 0).then(|| diag.obj_sum / diag.obj_n as f64),
    };
    Ok((row, diags))
}

/// All replicates of one configuration, optionally spread over a thread
/// pool. Replicate seeds are fixed up front, so the schedule cannot change
/// the results, and rows come back in replicate order.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    threads: usize,
    dump_dir: Option<&Path>,
) -> Result<(Vec<RunRow>, Vec<DiagnosticsRow>)> {
    let master = SeedTree::new(cfg.run.seed);
    let truth = generate_truth(cfg, &master)?;
    let setup = prepare(cfg, &master)?;
    let reps = cfg.run.replicates;

    let mut outcomes: Vec<(RunRow, DiagnosticsRow)> = Vec::with_capacity(reps);
    if threads <= 1 {
        for r in 0..reps {
            outcomes.push(run_replicate(cfg, &setup, &truth, r, dump_dir)?);
        }
    } else {
        let next = AtomicUsize::new(0);
        let collected: Mutex<Vec<(usize, (RunRow, DiagnosticsRow))>> = Mutex::new(Vec::new());
        let failure: Mutex<Option<anyhow::Error>> = Mutex::new(None);
        std::thread::scope(|scope| {
            for _ in 0..threads.min(reps) {
                scope.spawn(|| loop {
                    let r = next.fetch_add(1, Ordering::Relaxed);
                    if r >= reps || failure.lock().unwrap().is_some() {
                        break;
                    }
                    match run_replicate(cfg, &setup, &truth, r, dump_dir) {
                        Ok(out) => collected.lock().unwrap().push((r, out)),
                        Err(e) => {
                            *failure.lock().unwrap() = Some(e);
                            break;
                        }
                    }
                });
            }
        });
        if let Some(e) = failure.into_inner().unwrap() {
            return Err(e);
        }
        let mut v = collected.into_inner().unwrap();
        v.sort_by_key(|(r, _)| *r);
        outcomes.extend(v.into_iter().map(|(_, out)| out));
    }
    Ok(outcomes.into_iter().unzip())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Members,
    Lag,
    Alpha,
    Lambda,
    Radius,
}

impl std::str::FromStr for SweepAxis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "m" | "members" => SweepAxis::Members,
            "l" | "lag" => SweepAxis::Lag,
            "alpha" => SweepAxis::Alpha,
            "lambda" => SweepAxis::Lambda,
            "r_loc" | "rloc" | "radius" => SweepAxis::Radius,
            other => bail!("unknown sweep axis {other:?} (expected M, L, alpha, lambda, or r_loc)"),
        })
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::Members => "M",
            SweepAxis::Lag => "L",
            SweepAxis::Alpha => "alpha",
            SweepAxis::Lambda => "lambda",
            SweepAxis::Radius => "r_loc",
        })
    }
}

fn as_count(axis: SweepAxis, value: f64) -> Result<usize> {
    if value < 0.0 || value.fract() != 0.0 || !value.is_finite() {
        bail!("sweep axis {axis} needs a nonnegative integer, got {value}");
    }
    Ok(value as usize)
}

pub fn apply_axis(cfg: &mut ExperimentConfig, axis: SweepAxis, value: f64) -> Result<()> {
    match axis {
        SweepAxis::Members => cfg.run.members = as_count(axis, value)?,
        SweepAxis::Lag => cfg.smoother.lag = as_count(axis, value)?,
        SweepAxis::Alpha => {
            if cfg.smoother.alpha.is_none() {
                bail!("sweep axis alpha needs the hybrid scheme");
            }
            cfg.smoother.alpha = Some(value);
        }
        SweepAxis::Lambda => {
            if cfg.smoother.lambda.is_none() {
                bail!("sweep axis lambda needs the sinkhorn solver");
            }
            cfg.smoother.lambda = Some(value);
        }
        SweepAxis::Radius => match cfg.localisation.as_mut() {
            Some(block) => block.radius = value,
            None => bail!("sweep axis r_loc needs a [localisation] block"),
        },
    }
    cfg.validate()
}

/// One experiment per axis value, merged into a single long-format table.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    threads: usize,
    dump_dir: Option<&Path>,
) -> Result<(Vec<RunRow>, Vec<DiagnosticsRow>)> {
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    let mut rows = Vec::new();
    let mut diags = Vec::new();
    for &v in values {
        let mut point = cfg.clone();
        apply_axis(&mut point, axis, v)?;
        let sub = dump_dir.map(|d| d.join(format!("{axis}={v}")));
        let (r, d) = run_experiment(&point, threads, sub.as_deref())?;
        rows.extend(r);
        diags.extend(d);
    }
    Ok((rows, diags))
}
