//! Command-line surface: `test`, `simulate`, `experiment`, `growth-rate`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use thiserror::Error;

use crate::eprocess::{log_threshold, Decision, EProcess, EProcessError, Verdict};
use crate::experiments::{
    self, growth_rate_quadrature, growth_series, pretrained_filter, theoretical_growth_rate, ExperimentConfig,
    ExperimentError, ExperimentReport, FilterSettings, Scenario,
};
use crate::format::fmt_f64;
use crate::geometry::{Point, Window};
use crate::io::{self, IoError, PatternMeta, RunMeta, WindowFile, FORMAT_VERSION};
use crate::kernel::{KernelError, SupportBounds};
use crate::pr::{PrError, DEFAULT_GAMMA, DEFAULT_PARTICLES, DEFAULT_PRETRAIN_LAMBDA};
use crate::simulate::{
    sim_changepoint, sim_hpp, sim_matern, sim_trunc_exp, sim_uniform, MaternParams, PointPattern, SimError,
    TruncExpParams,
};

#[derive(Debug, Parser)]
#[command(name = "csr-eprocess", version, about = "Anytime-valid sequential test of complete spatial randomness")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stream a point file through a pretrained e-process.
    Test(TestArgs),
    /// Simulate a point pattern.
    Simulate(SimulateArgs),
    /// Run a replicated study from a config file.
    Experiment(ExperimentArgs),
    /// Expected log e-value growth per point under the truncated-exponential alternative.
    GrowthRate(GrowthRateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrajectoryFormat {
    Csv,
    Ndjson,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// CSV with header `x,y` or `x,y,t`.
    #[arg(long)]
    pub points: PathBuf,
    /// Window JSON file.
    #[arg(long)]
    pub window: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_PARTICLES)]
    pub particles: usize,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    pub gamma: f64,
    /// Shape-parameter support box `lo,hi`.
    #[arg(long, default_value = "0.2,10", value_parser = parse_bounds)]
    pub bounds: SupportBounds,
    #[arg(long, default_value_t = DEFAULT_PRETRAIN_LAMBDA)]
    pub pretrain_lambda: f64,
    /// Record every `stride`-th value of the trajectory.
    #[arg(long, default_value_t = 100)]
    pub stride: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trajectory output file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Trajectory format; defaults to NDJSON for `.ndjson`/`.jsonl` outputs and CSV otherwise.
    #[arg(long, value_enum)]
    pub format: Option<TrajectoryFormat>,
    /// Continue from a saved state. The points already absorbed (the first
    /// `n` of the file) are skipped; filter flags are taken from the snapshot.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Save the final state for a later `--resume`.
    #[arg(long)]
    pub snapshot_out: Option<PathBuf>,
    /// Stream points in order of the `t` column.
    #[arg(long)]
    pub order_by_t: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioKind {
    Hpp,
    Uniform,
    Matern,
    TruncExp,
    Changepoint,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub scenario: ScenarioKind,
    /// Window JSON file or an inline rectangle `xmin,xmax,ymin,ymax`; defaults to the unit square.
    #[arg(long)]
    pub window: Option<String>,
    /// Intensity (hpp).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Number of points (uniform).
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, default_value_t = 50.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 0.1)]
    pub scale: f64,
    #[arg(long, default_value_t = 20.0)]
    pub mu: f64,
    /// Expected count (trunc-exp).
    #[arg(long)]
    pub lambda0: Option<f64>,
    /// Decay rates `g1,g2` (trunc-exp).
    #[arg(long, value_parser = parse_pair)]
    pub gamma: Option<(f64, f64)>,
    /// Clustered prefix length (changepoint).
    #[arg(long, default_value_t = 300)]
    pub n1: usize,
    /// Uniform suffix length (changepoint).
    #[arg(long, default_value_t = 800)]
    pub n2: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Point CSV; provenance goes to `<out>.meta.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the window JSON here.
    #[arg(long)]
    pub window_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// TOML or JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct GrowthRateArgs {
    /// Decay rates `g1,g2`.
    #[arg(long, value_parser = parse_pair)]
    pub gamma: (f64, f64),
    /// Emit the series `(n, n · rate)` up to this `n`.
    #[arg(long)]
    pub n_max: Option<u64>,
    #[arg(long, default_value_t = 100)]
    pub stride: u64,
    /// Series CSV; printed to standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => {
            let a = a.parse::<f64>().map_err(|e| format!("`{a}`: {e}"))?;
            let b = b.parse::<f64>().map_err(|e| format!("`{b}`: {e}"))?;
            Ok((a, b))
        }
        _ => Err(format!("expected two comma-separated numbers, got `{s}`")),
    }
}

fn parse_bounds(s: &str) -> Result<SupportBounds, String> {
    let (lo, hi) = parse_pair(s)?;
    SupportBounds::new(lo, hi).map_err(|e| e.to_string())
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),

    #[error("{0}")]
    Numerical(String),

    #[error("{0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Output(_) => 1,
        })
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<PrError> for CliError {
    fn from(e: PrError) -> Self {
        match e {
            PrError::DegenerateUpdate { .. } | PrError::Kernel(KernelError::NumericalDomain { .. }) => {
                CliError::Numerical(e.to_string())
            }
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<EProcessError> for CliError {
    fn from(e: EProcessError) -> Self {
        match e {
            EProcessError::Filter(pr) => pr.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Filter(pr) => pr.into(),
            ExperimentError::EProcess(ep) => ep.into(),
            ExperimentError::ThreadPool(_) => CliError::Output(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

fn output_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Output(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut w = io::create(path).map_err(|e| CliError::Output(e.to_string()))?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| output_error(path, e))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Test(a) => run_test(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Experiment(a) => run_experiment(a),
        Command::GrowthRate(a) => run_growth_rate(a),
    }
}

fn trajectory_format(args: &TestArgs, out: &Path) -> TrajectoryFormat {
    args.format.unwrap_or_else(|| {
        match out.extension().and_then(|e| e.to_str()) {
            Some("ndjson") | Some("jsonl") => TrajectoryFormat::Ndjson,
            _ => TrajectoryFormat::Csv,
        }
    })
}

fn run_test(args: TestArgs) -> Result<(), CliError> {
    let window = io::read_window(&args.window)?;
    let raw = io::read_pattern(&args.points, args.order_by_t)?;
    let (unit_window, transform) = window.normalize();
    let points: Vec<Point> = raw.iter().map(|&p| transform.apply(p)).collect();

    let (state, skip) = match &args.resume {
        Some(path) => {
            let state = EProcess::read_snapshot(io::open(path)?, unit_window.clone())?;
            let k = state.n() as usize;
            if k > points.len() {
                return Err(CliError::Input(format!(
                    "snapshot has consumed {k} points but {} holds only {}",
                    args.points.display(),
                    points.len()
                )));
            }
            info!("resuming at n = {k}");
            (state, k)
        }
        None => {
            let settings = FilterSettings {
                particles: args.particles,
                gamma: args.gamma,
                bounds: args.bounds,
                pretrain_lambda: args.pretrain_lambda,
            };
            info!("pretraining {} particles", settings.particles);
            let filter = pretrained_filter(&settings, &unit_window, args.seed)?;
            (EProcess::new(filter, unit_window)?, 0)
        }
    };
    let mut state = state.with_alpha(args.alpha)?.with_stride(args.stride)?;
    let records = state.observe_batch(&points[skip..])?;

    if let Some(out) = &args.out {
        match trajectory_format(&args, out) {
            TrajectoryFormat::Csv => write_file(out, |w| io::write_trajectory_csv(w, &records))?,
            TrajectoryFormat::Ndjson => {
                let filter = state.filter();
                let meta = RunMeta {
                    format_version: FORMAT_VERSION,
                    alpha: args.alpha,
                    threshold: log_threshold(args.alpha),
                    particles: filter.len(),
                    gamma: filter.schedule().gamma(),
                    bounds: (filter.bounds().lo(), filter.bounds().hi()),
                    pretrain_lambda: args.pretrain_lambda,
                    stride: args.stride,
                    seed: args.seed,
                    log_area: state.log_area(),
                };
                let mut w = io::create(out).map_err(|e| CliError::Output(e.to_string()))?;
                io::write_trajectory_ndjson(&mut w, &meta, &records)
                    .map_err(|e| output_error(out, e))?;
                w.flush().map_err(|e| output_error(out, e))?;
            }
        }
    }
    if let Some(path) = &args.snapshot_out {
        write_file(path, |w| state.write_snapshot(w))?;
    }

    // The tracker sees every observation, also across resumes.
    let threshold = log_threshold(args.alpha);
    let decision = Decision {
        verdict: if state.first_crossing().is_some() {
            Verdict::RejectNull
        } else {
            Verdict::Continue
        },
        at_n: state.first_crossing(),
        alpha: args.alpha,
        threshold,
    };
    print!(
        "{}",
        io::format_decision(&decision, state.n(), state.log_e(), state.outside_window().len())
    );
    Ok(())
}

fn simulation_window(spec: Option<&str>) -> Result<Window, CliError> {
    let Some(spec) = spec else {
        return Ok(Window::unit_square());
    };
    let nums: Vec<Result<f64, _>> = spec.split(',').map(|s| s.trim().parse::<f64>()).collect();
    if nums.len() == 4 && nums.iter().all(Result::is_ok) {
        let v: Vec<f64> = nums.into_iter().map(Result::unwrap).collect();
        return Window::rectangle(v[0], v[1], v[2], v[3]).map_err(|e| CliError::Input(e.to_string()));
    }
    Ok(io::read_window(Path::new(spec))?)
}

fn missing(flag: &str, scenario: &str) -> CliError {
    CliError::Input(format!("--{flag} is required for --scenario {scenario}"))
}

fn run_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let window = simulation_window(args.window.as_deref())?;
    let matern = MaternParams {
        kappa: args.kappa,
        scale: args.scale,
        mu: args.mu,
    };
    let unit_only = |name: &str| {
        if args.window.is_some() {
            Err(CliError::Input(format!("--scenario {name} is defined on the unit square; drop --window")))
        } else {
            Ok(())
        }
    };
    let pattern: PointPattern = match args.scenario {
        ScenarioKind::Hpp => sim_hpp(&window, args.lambda.ok_or_else(|| missing("lambda", "hpp"))?, args.seed)?,
        ScenarioKind::Uniform => sim_uniform(
            &window,
            args.count.ok_or_else(|| missing("count", "uniform"))?,
            args.seed,
        ),
        ScenarioKind::Matern => sim_matern(&window, &matern, args.seed)?,
        ScenarioKind::TruncExp => {
            unit_only("trunc-exp")?;
            let (gamma1, gamma2) = args.gamma.ok_or_else(|| missing("gamma", "trunc-exp"))?;
            let params = TruncExpParams {
                lambda0: args.lambda0.ok_or_else(|| missing("lambda0", "trunc-exp"))?,
                gamma1,
                gamma2,
            };
            sim_trunc_exp(&params, args.seed)?
        }
        ScenarioKind::Changepoint => {
            unit_only("changepoint")?;
            sim_changepoint(&matern, args.n1, args.n2, args.seed)?
        }
    };
    write_file(&args.out, |w| io::write_pattern(w, &pattern.points))?;
    let meta = PatternMeta {
        format_version: FORMAT_VERSION,
        provenance: pattern.provenance.clone(),
        window: WindowFile::from(&pattern.window),
        count: pattern.len(),
    };
    let meta_path = sidecar_path(&args.out);
    write_file(&meta_path, |w| {
        serde_json::to_writer_pretty(&mut *w, &meta).map_err(std::io::Error::other)?;
        writeln!(w)
    })?;
    if let Some(path) = &args.window_out {
        let mut w = io::create(path).map_err(|e| CliError::Output(e.to_string()))?;
        io::write_window(&mut w, &pattern.window).map_err(|e| output_error(path, e))?;
        w.flush().map_err(|e| output_error(path, e))?;
    }
    println!("wrote {} points to {}", pattern.len(), args.out.display());
    Ok(())
}

/// `points.csv` → `points.csv.meta.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Parses a TOML or JSON (leading `{`) experiment config; relative data paths
/// resolve against the config file's directory.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = io::read_to_string(path)?;
    let mut config: ExperimentConfig = if text.trim_start().starts_with('{') {
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
    };
    if let Scenario::External { points, window, .. } = &mut config.scenario {
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [points, window] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    config.validate()?;
    Ok(config)
}

fn run_experiment(args: ExperimentArgs) -> Result<(), CliError> {
    let config = load_config(&args.config)?;
    std::fs::create_dir_all(&args.out).map_err(|e| output_error(&args.out, e))?;
    let report = experiments::run_replicates(&config, args.jobs)?;
    write_report(&report, &args.out)?;
    let last = report.checkpoints.last().copied();
    println!(
        "replicates: {} completed, {} failed",
        report.replicates.len(),
        report.failures.len()
    );
    if let (Some(n), Some(p)) = (last, report.rejection.last()) {
        println!("rejection proportion at n = {n}: {}", fmt_f64(*p));
    }
    if let Some(rate) = report.growth_rate {
        println!("theoretical growth rate: {}", fmt_f64(rate));
    }
    println!("results in {}", args.out.display());
    Ok(())
}

/// Writes `trajectories.csv`, `rejection.csv`, `summary.json` and, when the
/// report carries a growth rate, `growth_rate.csv`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<(), CliError> {
    write_file(&dir.join("trajectories.csv"), |w| {
        writeln!(w, "replicate,n,log_e,crossed")?;
        for r in &report.replicates {
            for t in &r.trajectory {
                writeln!(w, "{},{},{},{}", r.index, t.n, fmt_f64(t.log_e), u8::from(t.crossed))?;
            }
        }
        Ok(())
    })?;
    write_file(&dir.join("rejection.csv"), |w| {
        writeln!(w, "n,proportion")?;
        for (n, p) in report.checkpoints.iter().zip(&report.rejection) {
            writeln!(w, "{n},{}", fmt_f64(*p))?;
        }
        Ok(())
    })?;
    write_file(&dir.join("summary.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, report).map_err(std::io::Error::other)?;
        writeln!(w)
    })?;
    if let Some(rate) = report.growth_rate {
        let n_max = report.checkpoints.last().copied().unwrap_or(0);
        let series = growth_series(rate, n_max, report.config.stride);
        write_file(&dir.join("growth_rate.csv"), |w| write_series(w, &series))?;
    }
    Ok(())
}

fn write_series(w: &mut dyn Write, series: &[(u64, f64)]) -> std::io::Result<()> {
    writeln!(w, "n,log_e")?;
    for (n, v) in series {
        writeln!(w, "{n},{}", fmt_f64(*v))?;
    }
    Ok(())
}

fn run_growth_rate(args: GrowthRateArgs) -> Result<(), CliError> {
    let (g1, g2) = args.gamma;
    if !(g1.is_finite() && g2.is_finite() && g1 > 0.0 && g2 > 0.0) {
        return Err(CliError::Input(format!("--gamma values must be positive, got {g1},{g2}")));
    }
    if args.stride == 0 {
        return Err(CliError::Input("--stride must be at least 1".into()));
    }
    let rate = theoretical_growth_rate(g1, g2);
    let Some(n_max) = args.n_max else {
        println!("rate: {}", fmt_f64(rate));
        println!("quadrature: {}", fmt_f64(growth_rate_quadrature(g1, g2)));
        return Ok(());
    };
    let series = growth_series(rate, n_max, args.stride);
    match &args.out {
        Some(path) => {
            write_file(path, |w| write_series(w, &series))?;
            println!("rate: {}", fmt_f64(rate));
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_series(&mut lock, &series).map_err(|e| CliError::Output(e.to_string()))?;
        }
    }
    Ok(())
}
