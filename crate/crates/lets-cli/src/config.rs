//! Experiment configuration: one TOML file per experiment, with a block per
//! concern. Validation happens in one pass after parsing and every error
//! names the offending field, so a bad preset fails loudly instead of
//! producing a silently wrong run.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use lets::localisation::{LocalKind, LocalisationConfig, SpatialLayout};
use lets::models::MgParams;
use lets::smoothers::{EtpsConfig, EtpsVariant, PlanSolver, Rotation, SmootherKind};
use lets::ModelSpec;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    pub observation: ObservationBlock,
    pub smoother: SmootherBlock,
    pub run: RunBlock,
    pub localisation: Option<LocalisationBlock>,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    Lorenz63,
    Lorenz96,
    MackeyGlass,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub name: ModelName,
    /// Integrator step.
    pub dt: f64,
    /// Lorenz 96 only.
    pub forcing: Option<f64>,
    /// Lorenz 96 only: number of grid points.
    pub n_x: Option<usize>,
    /// Mackey-Glass only: production, decay, nonlinearity, delay time.
    pub phi: Option<f64>,
    pub gamma: Option<f64>,
    pub kappa: Option<f64>,
    pub nu: Option<f64>,
}

/// Which state components are observed.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum SitesSpec {
    Named(String),
    Listed(Vec<usize>),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationBlock {
    /// "all", "first", "even", "odd", or an explicit site list.
    pub sites: SitesSpec,
    /// Observation error variance (shared across sites).
    pub r: f64,
    /// Model steps between consecutive observations.
    pub every: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeName {
    Esrs,
    Nets,
    Etps,
    Hybrid,
    Bootstrap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RotationName {
    Identity,
    Random,
    Optimal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantName {
    Pathwise,
    PerTime,
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverName {
    Exact,
    Sinkhorn,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmootherBlock {
    pub scheme: SchemeName,
    /// Fixed smoothing lag, in window-shift units (see `[run] cadence`).
    pub lag: usize,
    /// Rejuvenation spread; 0 disables.
    #[serde(default)]
    pub beta: f64,
    /// nets only.
    pub rotation: Option<RotationName>,
    /// etps and hybrid: scope of the transport cost (default pathwise).
    pub variant: Option<VariantName>,
    /// etps and hybrid: apply the second-moment correction (default true).
    pub corrected: Option<bool>,
    /// etps and hybrid: transport solver (default exact).
    pub solver: Option<SolverName>,
    /// sinkhorn regularisation strength.
    pub lambda: Option<f64>,
    /// hybrid only: share of the observation precision given to the
    /// transport stage.
    pub alpha: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CadenceName {
    /// One window shift per observation; states are scored at observation
    /// times. The natural choice for memoryless dynamics.
    Observation,
    /// One window shift per model step; states are scored at every step.
    /// Required for delayed dynamics, where a lag unit is one model step.
    Step,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    /// Ensemble size M.
    pub members: usize,
    /// Number of assimilated observations K.
    pub cycles: usize,
    #[serde(default = "one")]
    pub replicates: usize,
    /// Scored states with time index below this are excluded from metrics.
    #[serde(default)]
    pub burn_in: usize,
    pub seed: u64,
    /// Variance of the initial ensemble perturbation around the true state.
    pub init_spread: f64,
    /// Model steps run before the experiment starts, to land the reference
    /// trajectory on the attractor.
    #[serde(default = "default_spin_up")]
    pub spin_up: usize,
    /// Window-shift and scoring cadence; defaults to the model's natural
    /// choice (observation for memoryless dynamics, step for delayed).
    pub cadence: Option<CadenceName>,
    /// Track the kernel-density mode alongside the mean (costly on long
    /// step-cadence runs).
    #[serde(default = "yes")]
    pub mode_metric: bool,
}

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_spin_up() -> usize {
    4000
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceName {
    Stationary,
    Autocorrelation,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalisationBlock {
    pub radius: f64,
    pub scheme: DistanceName,
    /// Autocorrelation table cache; loaded when present, built and saved
    /// otherwise.
    pub table: Option<PathBuf>,
    /// Snapshots in the series the table is estimated from.
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
}

fn default_snapshots() -> usize {
    10_000
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("parsing config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// State dimension implied by the model block.
    pub fn n_x(&self) -> usize {
        match self.model.name {
            ModelName::Lorenz63 => 3,
            ModelName::Lorenz96 => self.model.n_x.unwrap_or(40),
            ModelName::MackeyGlass => 1,
        }
    }

    pub fn cadence(&self) -> CadenceName {
        self.run.cadence.unwrap_or(match self.model.name {
            ModelName::MackeyGlass => CadenceName::Step,
            _ => CadenceName::Observation,
        })
    }

    pub fn model_spec(&self) -> ModelSpec {
        match self.model.name {
            ModelName::Lorenz63 => ModelSpec::lorenz63(self.model.dt),
            ModelName::Lorenz96 => {
                ModelSpec::lorenz96(self.model.dt, self.model.forcing.unwrap_or(8.0), self.n_x())
            }
            ModelName::MackeyGlass => {
                ModelSpec::mackey_glass(self.model.dt, self.mg_params())
            }
        }
    }

    pub fn mg_params(&self) -> MgParams {
        let d = MgParams::default();
        MgParams {
            phi: self.model.phi.unwrap_or(d.phi),
            gamma: self.model.gamma.unwrap_or(d.gamma),
            kappa: self.model.kappa.unwrap_or(d.kappa),
            nu: self.model.nu.unwrap_or(d.nu),
        }
    }

    pub fn obs_sites(&self) -> Result<Vec<usize>> {
        let n_x = self.n_x();
        let sites = match &self.observation.sites {
            SitesSpec::Named(name) => match name.as_str() {
                "all" => (0..n_x).collect(),
                "first" => vec![0],
                "even" => (0..n_x).step_by(2).collect(),
                "odd" => (1..n_x).step_by(2).collect(),
                other => bail!(
                    "[observation] sites: unknown pattern {other:?} \
                     (expected \"all\", \"first\", \"even\", \"odd\", or a site list)"
                ),
            },
            SitesSpec::Listed(list) => {
                if list.is_empty() {
                    bail!("[observation] sites: the site list is empty");
                }
                list.clone()
            }
        };
        if let Some(&bad) = sites.iter().find(|&&s| s >= n_x) {
            bail!("[observation] sites: site {bad} is outside the {n_x}-component state");
        }
        Ok(sites)
    }

    /// The analysis scheme, for runs without a localisation block.
    pub fn smoother_kind(&self) -> Result<SmootherKind> {
        let s = &self.smoother;
        Ok(match s.scheme {
            SchemeName::Esrs => SmootherKind::Esrs,
            SchemeName::Bootstrap => SmootherKind::Bootstrap,
            SchemeName::Nets => SmootherKind::Nets { rotation: self.rotation() },
            SchemeName::Etps => SmootherKind::Etps(self.etps_config()?),
            SchemeName::Hybrid => {
                let alpha = s.alpha.context("[smoother] alpha: required for the hybrid scheme")?;
                SmootherKind::Hybrid { alpha, etps: self.etps_config()? }
            }
        })
    }

    fn rotation(&self) -> Rotation {
        match self.smoother.rotation.unwrap_or(RotationName::Optimal) {
            RotationName::Identity => Rotation::Identity,
            RotationName::Random => Rotation::Random,
            RotationName::Optimal => Rotation::Optimal,
        }
    }

    fn etps_config(&self) -> Result<EtpsConfig> {
        let s = &self.smoother;
        let variant = match s.variant.unwrap_or(VariantName::Pathwise) {
            VariantName::Pathwise => EtpsVariant::Pathwise,
            VariantName::PerTime => EtpsVariant::PerTime,
            VariantName::Constant => EtpsVariant::Constant,
        };
        let solver = match s.solver.unwrap_or(SolverName::Exact) {
            SolverName::Exact => PlanSolver::Exact,
            SolverName::Sinkhorn => PlanSolver::Sinkhorn {
                lambda: s.lambda.context("[smoother] lambda: required for the sinkhorn solver")?,
            },
        };
        Ok(EtpsConfig { variant, corrected: s.corrected.unwrap_or(true), solver })
    }

    /// The per-component analysis scheme, for runs with a localisation
    /// block.
    pub fn local_kind(&self) -> Result<LocalKind> {
        let s = &self.smoother;
        Ok(match s.scheme {
            SchemeName::Esrs => LocalKind::Esrs,
            SchemeName::Nets => LocalKind::Nets { rotation: self.rotation() },
            SchemeName::Etps => {
                let pathwise = match s.variant.unwrap_or(VariantName::Pathwise) {
                    VariantName::Pathwise => true,
                    VariantName::PerTime => false,
                    VariantName::Constant => bail!(
                        "[smoother] variant: constant is not supported under localisation"
                    ),
                };
                LocalKind::Etps { corrected: s.corrected.unwrap_or(true), pathwise }
            }
            SchemeName::Hybrid | SchemeName::Bootstrap => bail!(
                "[localisation]: only esrs, nets, and etps support localised updates"
            ),
        })
    }

    pub fn spatial_layout(&self) -> SpatialLayout {
        match self.model.name {
            ModelName::Lorenz96 => SpatialLayout::ring(self.n_x()),
            _ => SpatialLayout::line(self.n_x()),
        }
    }

    pub fn localisation_config(&self) -> Result<Option<LocalisationConfig>> {
        let Some(block) = &self.localisation else { return Ok(None) };
        let cfg = match block.scheme {
            DistanceName::Stationary => LocalisationConfig::stationary(block.radius),
            DistanceName::Autocorrelation => LocalisationConfig::autocorrelation(block.radius),
        };
        Ok(Some(cfg))
    }

    /// Scheme label used in result tables: the analysis family plus the
    /// settings that change what it computes.
    pub fn scheme_label(&self) -> String {
        let s = &self.smoother;
        let mut label = match s.scheme {
            SchemeName::Esrs => "esrs".to_string(),
            SchemeName::Bootstrap => "bootstrap".to_string(),
            SchemeName::Hybrid => "hybrid".to_string(),
            SchemeName::Nets => match self.rotation() {
                Rotation::Identity => "nets-identity".to_string(),
                Rotation::Random => "nets-random".to_string(),
                Rotation::Optimal => "nets-optimal".to_string(),
            },
            SchemeName::Etps => {
                let variant = match s.variant.unwrap_or(VariantName::Pathwise) {
                    VariantName::Pathwise => "pathwise",
                    VariantName::PerTime => "pertime",
                    VariantName::Constant => "constant",
                };
                let mut l = format!("etps-{variant}");
                if !s.corrected.unwrap_or(true) {
                    l.push_str("-nocorr");
                }
                l
            }
        };
        if let Some(loc) = &self.localisation {
            label.push_str(match loc.scheme {
                DistanceName::Stationary => "+loc-stationary",
                DistanceName::Autocorrelation => "+loc-autocorr",
            });
        }
        label
    }

    /// The λ column value: only meaningful when a sinkhorn solver is in
    /// play.
    pub fn lambda_column(&self) -> Option<f64> {
        match (self.smoother.scheme, self.smoother.solver) {
            (SchemeName::Etps | SchemeName::Hybrid, Some(SolverName::Sinkhorn)) => {
                self.smoother.lambda
            }
            _ => None,
        }
    }

    pub fn alpha_column(&self) -> Option<f64> {
        match self.smoother.scheme {
            SchemeName::Hybrid => self.smoother.alpha,
            _ => None,
        }
    }

    pub fn r_loc_column(&self) -> Option<f64> {
        self.localisation.as_ref().map(|l| l.radius)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if !(m.dt > 0.0 && m.dt.is_finite()) {
            bail!("[model] dt: must be positive and finite, got {}", m.dt);
        }
        match m.name {
            ModelName::Lorenz63 | ModelName::MackeyGlass => {
                if m.forcing.is_some() || m.n_x.is_some() {
                    bail!("[model] forcing/n_x: only meaningful for lorenz96");
                }
            }
            ModelName::Lorenz96 => {
                if let Some(n) = m.n_x {
                    if n < 4 {
                        bail!("[model] n_x: lorenz96 needs at least 4 grid points, got {n}");
                    }
                }
            }
        }
        if m.name != ModelName::MackeyGlass
            && (m.phi.is_some() || m.gamma.is_some() || m.kappa.is_some() || m.nu.is_some())
        {
            bail!("[model] phi/gamma/kappa/nu: only meaningful for mackey-glass");
        }
        if m.name == ModelName::MackeyGlass {
            let p = self.mg_params();
            if !(p.phi > 0.0 && p.gamma > 0.0 && p.kappa > 0.0 && p.nu > 0.0) {
                bail!("[model] phi/gamma/kappa/nu: all must be positive");
            }
        }

        let o = &self.observation;
        if !(o.r > 0.0 && o.r.is_finite()) {
            bail!("[observation] r: must be a positive variance, got {}", o.r);
        }
        if o.every == 0 {
            bail!("[observation] every: must be at least one model step");
        }
        self.obs_sites()?;

        let s = &self.smoother;
        if !(s.beta >= 0.0 && s.beta.is_finite()) {
            bail!("[smoother] beta: must be nonnegative, got {}", s.beta);
        }
        if s.scheme != SchemeName::Nets && s.rotation.is_some() {
            bail!("[smoother] rotation: only meaningful for the nets scheme");
        }
        let transporty = matches!(s.scheme, SchemeName::Etps | SchemeName::Hybrid);
        if !transporty
            && (s.variant.is_some()
                || s.corrected.is_some()
                || s.solver.is_some()
                || s.lambda.is_some())
        {
            bail!("[smoother] variant/corrected/solver/lambda: only meaningful for etps or hybrid");
        }
        if s.lambda.is_some() && s.solver != Some(SolverName::Sinkhorn) {
            bail!("[smoother] lambda: requires solver = \"sinkhorn\"");
        }
        if let Some(l) = s.lambda {
            if !(l > 0.0 && l.is_finite()) {
                bail!("[smoother] lambda: must be positive, got {l}");
            }
        }
        if let Some(a) = s.alpha {
            if s.scheme != SchemeName::Hybrid {
                bail!("[smoother] alpha: only meaningful for the hybrid scheme");
            }
            if !(0.0..=1.0).contains(&a) {
                bail!("[smoother] alpha: must lie in [0, 1], got {a}");
            }
        }
        if s.scheme == SchemeName::Hybrid {
            self.smoother_kind()?;
        }
        if s.scheme == SchemeName::Etps && s.solver == Some(SolverName::Sinkhorn) {
            self.etps_config()?;
        }

        let r = &self.run;
        if r.members < 2 {
            bail!("[run] members: need an ensemble of at least 2, got {}", r.members);
        }
        if r.cycles == 0 {
            bail!("[run] cycles: need at least one observation");
        }
        if r.replicates == 0 {
            bail!("[run] replicates: need at least one replicate");
        }
        if !(r.init_spread >= 0.0 && r.init_spread.is_finite()) {
            bail!("[run] init_spread: must be a nonnegative variance, got {}", r.init_spread);
        }
        if self.model.name == ModelName::MackeyGlass && self.cadence() == CadenceName::Observation {
            bail!("[run] cadence: mackey-glass windows shift per model step, not per observation");
        }
        let shifts = match self.cadence() {
            CadenceName::Observation => r.cycles,
            CadenceName::Step => r.cycles * self.observation.every,
        };
        if shifts <= self.smoother.lag {
            bail!(
                "[smoother] lag: {} leaves no state to score in a {}-shift run",
                self.smoother.lag,
                shifts
            );
        }
        if r.burn_in >= shifts - self.smoother.lag {
            bail!(
                "[run] burn_in: {} drops every scored state ({} are recorded)",
                r.burn_in,
                shifts - self.smoother.lag
            );
        }

        if let Some(loc) = &self.localisation {
            self.local_kind()?;
            self.localisation_config()?;
            if s.scheme == SchemeName::Etps && s.solver == Some(SolverName::Sinkhorn) {
                bail!("[smoother] solver: localised transport always solves exactly; drop the sinkhorn setting");
            }
            if loc.scheme == DistanceName::Autocorrelation && loc.snapshots <= self.smoother.lag + 2
            {
                bail!(
                    "[localisation] snapshots: {} is too short to estimate lag-{} autocorrelations",
                    loc.snapshots,
                    self.smoother.lag
                );
            }
        }
        Ok(())
    }
}
