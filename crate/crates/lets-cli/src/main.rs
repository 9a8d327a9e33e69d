use std::fs::{self, File};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lets::rng::SeedTree;
use lets_cli::config::ExperimentConfig;
use lets_cli::experiment::{self, SweepAxis};
use lets_cli::records::{self, SummaryRow};
use lets_cli::{autocorr, experiment::generate_truth};

/// Twin experiments for linear ensemble transform smoothers.
#[derive(Parser)]
#[command(name = "lets", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the reference trajectory and its observations.
    Truth(CommonArgs),
    /// Run the configured smoother against synthetic observations and
    /// score it.
    Assimilate(RunArgs),
    /// Repeat the experiment along one axis (M, L, alpha, lambda, r_loc).
    Sweep(SweepArgs),
    /// Re-summarize an existing run table.
    Metrics(MetricsArgs),
    /// Estimate the space-time autocorrelation table and cache it.
    Autocorr(AutocorrArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment description (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Override the configured replicate count.
    #[arg(long)]
    replicates: Option<usize>,
    /// Worker threads for replicates.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Also dump every recorded ensemble block, per replicate.
    #[arg(long)]
    dump_ensembles: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Which knob to vary: M, L, alpha, lambda, or r_loc.
    #[arg(long)]
    axis: String,
    /// Comma-separated values for the axis.
    #[arg(long)]
    values: String,
}

#[derive(Args)]
struct MetricsArgs {
    /// Run table to summarize.
    #[arg(long)]
    runs: PathBuf,
    /// Where to write the summary (default: summary.csv next to the runs).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AutocorrArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Snapshot count for the empirical estimate.
    #[arg(long)]
    snapshots: Option<usize>,
    /// Largest lag to tabulate (default: the configured window lag).
    #[arg(long)]
    max_tau: Option<usize>,
    /// Where to write the table (default: the configured table path).
    #[arg(long)]
    table_out: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Truth(args) => truth(args),
        Command::Assimilate(args) => assimilate(args),
        Command::Sweep(args) => sweep(args),
        Command::Metrics(args) => metrics(args),
        Command::Autocorr(args) => autocorr_cmd(args),
    }
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    if let Some(dir) = &args.out {
        cfg.output.dir = Some(dir.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output.dir.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn truth(args: CommonArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    let master = SeedTree::new(cfg.run.seed);
    let truth = generate_truth(&cfg, &master)?;
    let dir = out_dir(&cfg);
    fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;

    let n_x = cfg.n_x();
    let mut w = csv::Writer::from_writer(File::create(dir.join("truth.csv"))?);
    let mut header = vec!["time".to_string()];
    header.extend((0..n_x).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for (t, state) in truth.states.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(state.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let n_y = truth.observations.first().map_or(0, |y| y.len());
    let mut w = csv::Writer::from_writer(File::create(dir.join("observations.csv"))?);
    let mut header = vec!["cycle".to_string()];
    header.extend((0..n_y).map(|i| format!("y{i}")));
    w.write_record(&header)?;
    for (k, y) in truth.observations.iter().enumerate() {
        let mut rec = vec![(k + 1).to_string()];
        rec.extend(y.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;

    println!(
        "wrote {} states and {} observations to {}",
        truth.states.len(),
        truth.observations.len(),
        dir.display()
    );
    Ok(())
}

fn apply_run_overrides(cfg: &mut ExperimentConfig, args: &RunArgs) -> Result<()> {
    if let Some(reps) = args.replicates {
        if reps == 0 {
            bail!("--replicates must be at least 1");
        }
        cfg.run.replicates = reps;
    }
    if args.threads == 0 {
        bail!("--threads must be at least 1");
    }
    Ok(())
}

fn write_and_report(
    dir: &Path,
    rows: &[records::RunRow],
    diags: &[records::DiagnosticsRow],
) -> Result<()> {
    records::write_runs(&dir.join("runs.csv"), rows)?;
    records::write_diagnostics(&dir.join("diagnostics.csv"), diags)?;
    let summary = records::summarize(rows)?;
    records::write_summary(&dir.join("summary.csv"), &summary)?;
    for line in &summary {
        println!("{}", render_summary(line));
    }
    println!("wrote {} runs to {}", rows.len(), dir.display());
    Ok(())
}

fn render_summary(s: &SummaryRow) -> String {
    let mut line = format!(
        "{:<28} M={:<4} L={:<3} rmse_mu={:.4} [{:.4}, {:.4}]",
        s.scheme, s.m, s.l, s.rmse_mu, s.rmse_mu_lo, s.rmse_mu_hi
    );
    if let Some(mode) = s.rmse_mode {
        line.push_str(&format!(" rmse_mode={mode:.4}"));
    }
    line.push_str(&format!(" crps={:.4} ({} reps)", s.crps, s.replicates));
    line
}

fn assimilate(args: RunArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    apply_run_overrides(&mut cfg, &args)?;
    let dir = out_dir(&cfg);
    let dump = args.dump_ensembles.then(|| dir.clone());
    let (rows, diags) = experiment::run_experiment(&cfg, args.threads, dump.as_deref())?;
    write_and_report(&dir, &rows, &diags)
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = load_config(&args.run.common)?;
    apply_run_overrides(&mut cfg, &args.run)?;
    let axis: SweepAxis = args.axis.parse()?;
    let values = parse_values(&args.values)?;
    let dir = out_dir(&cfg);
    let dump = args.run.dump_ensembles.then(|| dir.clone());
    let (rows, diags) =
        experiment::run_sweep(&cfg, axis, &values, args.run.threads, dump.as_deref())?;
    write_and_report(&dir, &rows, &diags)
}

fn parse_values(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().with_context(|| format!("bad axis value {s:?}")))
        .collect()
}

fn metrics(args: MetricsArgs) -> Result<()> {
    let rows = records::read_runs(&args.runs)?;
    if rows.is_empty() {
        bail!("{} holds no runs", args.runs.display());
    }
    let summary = records::summarize(&rows)?;
    let out = args
        .out
        .unwrap_or_else(|| args.runs.parent().unwrap_or(Path::new(".")).join("summary.csv"));
    records::write_summary(&out, &summary)?;
    for line in &summary {
        println!("{}", render_summary(line));
    }
    println!("wrote {} summary groups to {}", summary.len(), out.display());
    Ok(())
}

fn autocorr_cmd(args: AutocorrArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let block = cfg
        .localisation
        .as_ref()
        .context("the config needs a [localisation] block to build a table for")?;
    let snapshots = args.snapshots.unwrap_or(block.snapshots);
    let max_tau = args.max_tau.unwrap_or(cfg.smoother.lag);
    let path = args
        .table_out
        .clone()
        .or_else(|| block.table.clone())
        .context("give --table-out or set [localisation] table")?;
    let master = SeedTree::new(cfg.run.seed);
    let table =
        autocorr::build_table(&cfg, snapshots, max_tau, &master.child(experiment::TABLE_STREAM))?;
    autocorr::save_table(&path, &table)?;
    println!(
        "tabulated {} sites x {} lags from {} snapshots into {}",
        table.n_x(),
        table.max_tau() + 1,
        snapshots,
        path.display()
    );
    Ok(())
}
