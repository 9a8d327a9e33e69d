//! Forward models for the twin experiments: Lorenz 63, Lorenz 96, the
//! Mackey-Glass delay equation, and a white-noise toy model, plus ensemble
//! propagation and particle rejuvenation.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::ensemble::{psd_sqrt, Stats, Window};
use crate::error::{Error, Result};

/// Mackey-Glass parameters for `dx/dt = φ·x(t−ν)/(1 + x(t−ν)^κ) − γ·x(t)`.
#[derive(Clone, Copy, Debug)]
pub struct MgParams {
    pub phi: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub nu: f64,
}

impl Default for MgParams {
    fn default() -> Self {
        MgParams { phi: 0.2, gamma: 0.1, kappa: 10.0, nu: 17.0 }
    }
}

impl MgParams {
    /// Number of past states the discretisation carries: `n = ν/Δt`.
    pub fn delay_steps(&self, dt: f64) -> usize {
        (self.nu / dt).round() as usize
    }
}

/// The deterministic part of the dynamics.
#[derive(Clone, Debug)]
pub enum Dynamics {
    Lorenz63,
    Lorenz96 { forcing: f64, n_x: usize },
    MackeyGlass(MgParams),
    /// Drift identically zero: the state is redrawn from the process noise
    /// each interval, `x_k = ε_k`.
    WhiteNoise { n_x: usize },
}

/// A forward model: dynamics, internal step size, and process noise.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub dynamics: Dynamics,
    pub dt: f64,
    /// Process-noise covariance added once per propagation call; `None`
    /// for deterministic dynamics.
    pub q: Option<DMatrix<f64>>,
}

impl ModelSpec {
    pub fn lorenz63(dt: f64) -> Self {
        ModelSpec { dynamics: Dynamics::Lorenz63, dt, q: None }
    }

    pub fn lorenz96(dt: f64, forcing: f64, n_x: usize) -> Self {
        ModelSpec { dynamics: Dynamics::Lorenz96 { forcing, n_x }, dt, q: None }
    }

    pub fn mackey_glass(dt: f64, params: MgParams) -> Self {
        ModelSpec { dynamics: Dynamics::MackeyGlass(params), dt, q: None }
    }

    pub fn white_noise(n_x: usize, q: DMatrix<f64>) -> Self {
        ModelSpec { dynamics: Dynamics::WhiteNoise { n_x }, dt: 1.0, q: Some(q) }
    }

    pub fn n_x(&self) -> usize {
        match &self.dynamics {
            Dynamics::Lorenz63 => 3,
            Dynamics::Lorenz96 { n_x, .. } | Dynamics::WhiteNoise { n_x } => *n_x,
            Dynamics::MackeyGlass(_) => 1,
        }
    }

    /// Order of the difference equation: how many past states the model
    /// depends on (1 for memoryless dynamics).
    pub fn memory_order(&self) -> usize {
        match &self.dynamics {
            Dynamics::MackeyGlass(p) => p.delay_steps(self.dt),
            _ => 1,
        }
    }
}

/// One forward-Euler step of the Lorenz 63 system
/// `ψ = (10(y−x), x(28−z)−y, xy−(8/3)z)`.
pub fn lorenz63_step(x: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
    if x.len() != 3 {
        return Err(Error::DimensionMismatch(format!("Lorenz 63 state has 3 components, got {}", x.len())));
    }
    let (a, b, c) = (x[0], x[1], x[2]);
    Ok(DVector::from_vec(vec![
        a + dt * 10.0 * (b - a),
        b + dt * (a * (28.0 - c) - b),
        c + dt * (a * b - 8.0 / 3.0 * c),
    ]))
}

/// One forward-Euler step of Lorenz 96,
/// `dx[s]/dt = (x[s+1] − x[s−2])·x[s−1] − x[s] + F`, cyclic in `s`.
pub fn lorenz96_step(x: &DVector<f64>, dt: f64, forcing: f64) -> Result<DVector<f64>> {
    let n = x.len();
    if n < 4 {
        return Err(Error::DimensionMismatch(format!("Lorenz 96 needs at least 4 components, got {n}")));
    }
    let mut out = DVector::zeros(n);
    for s in 0..n {
        let xp1 = x[(s + 1) % n];
        let xm1 = x[(s + n - 1) % n];
        let xm2 = x[(s + n - 2) % n];
        out[s] = x[s] + dt * ((xp1 - xm2) * xm1 - x[s] + forcing);
    }
    Ok(out)
}

fn mg_rhs(x: f64, x_delayed: f64, p: &MgParams) -> f64 {
    p.phi * x_delayed / (1.0 + x_delayed.powf(p.kappa)) - p.gamma * x
}

/// One RK4 step of the Mackey-Glass equation for a single member.
///
/// `d0 = x(t−ν)` and `d1 = x(t+Δt−ν)` come from the delay buffer; the
/// half-stage delayed value is interpolated linearly between them, keeping
/// the delayed argument consistent with the RK4 sub-stage times.
pub fn mackey_glass_step(x: f64, d0: f64, d1: f64, p: &MgParams, dt: f64) -> f64 {
    let dh = 0.5 * (d0 + d1);
    let k1 = mg_rhs(x, d0, p);
    let k2 = mg_rhs(x + 0.5 * dt * k1, dh, p);
    let k3 = mg_rhs(x + 0.5 * dt * k2, dh, p);
    let k4 = mg_rhs(x + dt * k3, d1, p);
    x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Delay line for one Mackey-Glass member: the current state plus the `n`
/// past states `x(t−n·Δt) … x(t−Δt)` needed to evaluate the delayed term.
#[derive(Clone, Debug)]
pub struct DelayBuffer {
    hist: VecDeque<f64>,
    cur: f64,
}

impl DelayBuffer {
    /// Buffer filled with a constant value (history and current state).
    pub fn constant(x: f64, n: usize) -> Self {
        DelayBuffer { hist: std::iter::repeat(x).take(n).collect(), cur: x }
    }

    pub fn cur(&self) -> f64 {
        self.cur
    }

    pub fn set_cur(&mut self, x: f64) {
        self.cur = x;
    }

    pub fn n(&self) -> usize {
        self.hist.len()
    }

    /// Past state `j` steps back, `1 ≤ j ≤ n`.
    pub fn past(&self, j: usize) -> f64 {
        self.hist[self.hist.len() - j]
    }

    pub fn set_past(&mut self, j: usize, x: f64) {
        let n = self.hist.len();
        self.hist[n - j] = x;
    }

    /// Advance the member one step; the oldest history entry rotates out.
    pub fn step(&mut self, p: &MgParams, dt: f64) -> Result<()> {
        if self.hist.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "delay buffer needs at least 2 past states, has {}",
                self.hist.len()
            )));
        }
        let new = mackey_glass_step(self.cur, self.hist[0], self.hist[1], p, dt);
        self.hist.pop_front();
        self.hist.push_back(self.cur);
        self.cur = new;
        Ok(())
    }
}

/// The propagating ensemble: current states for memoryless dynamics, or the
/// full per-member delay lines for the Mackey-Glass model.
#[derive(Clone, Debug)]
pub enum ModelEnsemble {
    Memoryless(DMatrix<f64>),
    Delayed(Vec<DelayBuffer>),
}

impl ModelEnsemble {
    pub fn m(&self) -> usize {
        match self {
            ModelEnsemble::Memoryless(x) => x.ncols(),
            ModelEnsemble::Delayed(b) => b.len(),
        }
    }

    pub fn n_x(&self) -> usize {
        match self {
            ModelEnsemble::Memoryless(x) => x.nrows(),
            ModelEnsemble::Delayed(_) => 1,
        }
    }

    /// Current states as an `n_x × M` matrix.
    pub fn current(&self) -> DMatrix<f64> {
        match self {
            ModelEnsemble::Memoryless(x) => x.clone(),
            ModelEnsemble::Delayed(bufs) => {
                DMatrix::from_fn(1, bufs.len(), |_, j| bufs[j].cur())
            }
        }
    }

    /// Push an analysed window back into the propagating state: the newest
    /// block becomes the current ensemble, and for delayed dynamics the
    /// overlapping part of the history is rewritten so the delay line sees
    /// the smoothed past instead of the forecast past.
    pub fn absorb_window(&mut self, window: &Window) -> Result<()> {
        if window.m() != self.m() || window.n_x() != self.n_x() {
            return Err(Error::DimensionMismatch(format!(
                "window blocks are {}×{}, ensemble is {}×{}",
                window.n_x(),
                window.m(),
                self.n_x(),
                self.m()
            )));
        }
        match self {
            ModelEnsemble::Memoryless(x) => {
                *x = window.newest().clone();
            }
            ModelEnsemble::Delayed(bufs) => {
                let lag = window.lag();
                let reach = lag.min(bufs[0].n());
                for (j, buf) in bufs.iter_mut().enumerate() {
                    buf.set_cur(window.newest()[(0, j)]);
                    // window block (lag − τ) holds the state τ steps back
                    for tau in 1..=reach {
                        buf.set_past(tau, window.block(lag - tau)[(0, j)]);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Advance every member `steps` internal steps, then add one process-noise
/// draw per member when the model is stochastic. Members are updated in
/// column order so the result is reproducible for a seeded generator.
pub fn propagate_ensemble<R: Rng>(
    ens: &mut ModelEnsemble,
    spec: &ModelSpec,
    steps: usize,
    rng: &mut R,
) -> Result<()> {
    for _ in 0..steps {
        match (&mut *ens, &spec.dynamics) {
            (ModelEnsemble::Memoryless(x), Dynamics::Lorenz63) => {
                for j in 0..x.ncols() {
                    let col = lorenz63_step(&x.column(j).clone_owned(), spec.dt)?;
                    x.set_column(j, &col);
                }
            }
            (ModelEnsemble::Memoryless(x), Dynamics::Lorenz96 { forcing, .. }) => {
                for j in 0..x.ncols() {
                    let col = lorenz96_step(&x.column(j).clone_owned(), spec.dt, *forcing)?;
                    x.set_column(j, &col);
                }
            }
            (ModelEnsemble::Memoryless(x), Dynamics::WhiteNoise { .. }) => {
                x.fill(0.0);
            }
            (ModelEnsemble::Delayed(bufs), Dynamics::MackeyGlass(p)) => {
                for buf in bufs.iter_mut() {
                    buf.step(p, spec.dt)?;
                }
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "ensemble storage does not match the model dynamics".into(),
                ))
            }
        }
    }
    if let Some(q) = &spec.q {
        let ModelEnsemble::Memoryless(x) = ens else {
            return Err(Error::InvalidArgument(
                "process noise is not supported for delayed dynamics".into(),
            ));
        };
        let root = psd_sqrt(q)?;
        let n = x.nrows();
        for j in 0..x.ncols() {
            let xi = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let noise = &root * xi;
            let mut col = x.column_mut(j);
            col += noise;
        }
    }
    Ok(())
}

/// Particle rejuvenation: add `β · P_fc^{1/2} · ξ` to every analysed member,
/// where `P_fc` is the forecast sample covariance ((M−1)-normalized) and
/// `ξ ~ N(0, I)`. Restores the spread a deterministic transform removes.
pub fn rejuvenate<R: Rng>(
    x_post: &mut DMatrix<f64>,
    prior_stats: &Stats,
    beta: f64,
    rng: &mut R,
) -> Result<()> {
    if beta < 0.0 {
        return Err(Error::InvalidArgument(format!("rejuvenation beta must be ≥ 0, got {beta}")));
    }
    if beta == 0.0 {
        return Ok(());
    }
    let root = psd_sqrt(&prior_stats.covariance)?;
    let n = x_post.nrows();
    for j in 0..x_post.ncols() {
        let xi = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let noise = beta * &root * xi;
        let mut col = x_post.column_mut(j);
        col += noise;
    }
    Ok(())
}
