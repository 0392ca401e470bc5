//! Replicated studies: simulate, pretrain, stream, aggregate.
//!
//! Replicate `r` of a study seeded with `m` owns the seed
//! `s_r = derive_seed(m, r)`, and derives its substreams from it:
//! `derive_seed(s_r, 0)` for the pattern (or permutation),
//! `derive_seed(s_r, 1)` for the particle cloud and `derive_seed(s_r, 2)` for
//! the pretraining pattern. A replicate therefore produces the same trajectory
//! whether it runs alone, in a batch, or on any number of threads.

use std::path::PathBuf;

use log::warn;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eprocess::{log_threshold, EProcess, EProcessError, TrajectoryRecord};
use crate::geometry::{Point, Window};
use crate::io::{self, IoError, WindowFile};
use crate::kernel::SupportBounds;
use crate::pr::{pretrain, ParticleSet, PrError, WeightSchedule, DEFAULT_GAMMA, DEFAULT_PRETRAIN_LAMBDA};
use crate::quadrature::gauss_legendre;
use crate::simulate::{
    derive_seed, rng_from_seed, sim_changepoint, sim_hpp, sim_matern, sim_trunc_exp, sim_uniform, MaternParams,
    PointPattern, Provenance, SimError, TruncExpParams,
};

pub const REPORT_FORMAT_VERSION: u32 = 1;

const PATTERN_STREAM: u64 = 0;
const PARTICLE_STREAM: u64 = 1;
const PRETRAIN_STREAM: u64 = 2;
// Substreams of the master seed outside the replicate range.
const SHARED_PATTERN: u64 = u64::MAX;
const SHARED_PRETRAIN: u64 = u64::MAX - 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Simulation(#[from] SimError),

    #[error(transparent)]
    Filter(#[from] PrError),

    #[error(transparent)]
    EProcess(#[from] EProcessError),

    #[error(transparent)]
    Io(#[from] IoError),

    #[error("replicate {replicate} has fewer than 2 records in ({from}, {to}]")]
    InsufficientData { replicate: usize, from: u64, to: u64 },

    #[error("thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

fn unit_square_file() -> WindowFile {
    WindowFile::from(&Window::unit_square())
}

/// Data-generating mechanism of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    /// Homogeneous Poisson process.
    Hpp { window: WindowFile, lambda: f64 },
    /// Fixed number of i.i.d. uniform points.
    Uniform { window: WindowFile, count: usize },
    Matern {
        #[serde(default = "unit_square_file")]
        window: WindowFile,
        kappa: f64,
        scale: f64,
        mu: f64,
    },
    TruncExp { lambda0: f64, gamma1: f64, gamma2: f64 },
    /// `n1` clustered points followed by `n2` uniform points.
    Changepoint {
        kappa: f64,
        scale: f64,
        mu: f64,
        n1: usize,
        n2: usize,
    },
    /// A point file and window file on disk.
    External {
        points: PathBuf,
        window: PathBuf,
        #[serde(default)]
        order_by_t: bool,
    },
}

impl Scenario {
    pub fn is_external(&self) -> bool {
        matches!(self, Scenario::External { .. })
    }

    /// Draws one pattern, or loads the external data.
    pub fn generate(&self, seed: u64) -> Result<PointPattern> {
        let window = |w: &WindowFile| w.to_window().map_err(|e| ExperimentError::Io(e.into()));
        Ok(match self {
            Scenario::Hpp { window: w, lambda } => sim_hpp(&window(w)?, *lambda, seed)?,
            Scenario::Uniform { window: w, count } => sim_uniform(&window(w)?, *count, seed),
            Scenario::Matern { window: w, kappa, scale, mu } => {
                let params = MaternParams {
                    kappa: *kappa,
                    scale: *scale,
                    mu: *mu,
                };
                sim_matern(&window(w)?, &params, seed)?
            }
            Scenario::TruncExp { lambda0, gamma1, gamma2 } => sim_trunc_exp(
                &TruncExpParams {
                    lambda0: *lambda0,
                    gamma1: *gamma1,
                    gamma2: *gamma2,
                },
                seed,
            )?,
            Scenario::Changepoint { kappa, scale, mu, n1, n2 } => {
                let params = MaternParams {
                    kappa: *kappa,
                    scale: *scale,
                    mu: *mu,
                };
                sim_changepoint(&params, *n1, *n2, seed)?
            }
            Scenario::External { points, window, order_by_t } => PointPattern {
                points: io::read_pattern(points, *order_by_t)?,
                window: io::read_window(window)?,
                provenance: Provenance {
                    generator: format!("external:{}", points.display()),
                    params: Default::default(),
                    seed: None,
                },
            },
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    /// Independent patterns, one per replicate.
    #[default]
    Replicates,
    /// One pattern, one random ordering per replicate.
    Permutation,
}

fn default_replicates() -> usize {
    100
}
fn default_particles() -> usize {
    2000
}
fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}
fn default_pretrain_lambda() -> f64 {
    DEFAULT_PRETRAIN_LAMBDA
}
fn default_stride() -> u64 {
    100
}
fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub study: Study,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub bounds: SupportBounds,
    #[serde(default = "default_pretrain_lambda")]
    pub pretrain_lambda: f64,
    #[serde(default = "default_stride")]
    pub stride: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    /// Pretrain once and reuse the state in every replicate.
    #[serde(default)]
    pub shared_pretraining: bool,
    /// Stream at most this many points per replicate.
    #[serde(default)]
    pub max_n: Option<u64>,
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            study: Study::default(),
            replicates: default_replicates(),
            particles: default_particles(),
            gamma: default_gamma(),
            bounds: SupportBounds::default(),
            pretrain_lambda: default_pretrain_lambda(),
            stride: default_stride(),
            alpha: default_alpha(),
            seed: 0,
            shared_pretraining: false,
            max_n: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(ExperimentError::Config(m));
        if self.replicates == 0 {
            return fail("replicates must be at least 1".into());
        }
        if self.stride == 0 {
            return fail("stride must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.particles == 0 {
            return fail("particles must be at least 1".into());
        }
        if !(self.pretrain_lambda.is_finite() && self.pretrain_lambda > 0.0) {
            return fail(format!("pretrain_lambda must be positive, got {}", self.pretrain_lambda));
        }
        WeightSchedule::new(self.gamma)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub index: usize,
    pub seed: u64,
    pub n_points: usize,
    pub trajectory: Vec<TrajectoryRecord>,
    /// Exact first `n` with `ln E_n ≥ ln(1/α)` at the configured `α`.
    pub first_crossing: Option<u64>,
    pub sup_log_e: f64,
    pub final_log_e: f64,
    pub outside_window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub index: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub replicates: Vec<ReplicateResult>,
    pub failures: Vec<ReplicateFailure>,
    /// Every `n` carried by some retained record, ascending.
    pub checkpoints: Vec<u64>,
    /// Rejection proportion at the configured `α` for each checkpoint.
    pub rejection: Vec<f64>,
    /// Median `ln E_n` over replicates holding a record at each checkpoint.
    pub median_log_e: Vec<Option<f64>>,
    /// Expected `ln E` increment per point, for truncated-exponential studies.
    pub growth_rate: Option<f64>,
}

/// Seed owned by replicate `index`.
pub fn replicate_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, index as u64)
}

/// Uniformly random ordering of `0..n` for a permutation seed.
pub fn permutation_for(seed: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    order
}

/// Filter settings shared by the CLI and the experiment harness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSettings {
    pub particles: usize,
    pub gamma: f64,
    pub bounds: SupportBounds,
    pub pretrain_lambda: f64,
}

impl From<&ExperimentConfig> for FilterSettings {
    fn from(c: &ExperimentConfig) -> Self {
        Self {
            particles: c.particles,
            gamma: c.gamma,
            bounds: c.bounds,
            pretrain_lambda: c.pretrain_lambda,
        }
    }
}

/// Samples the cloud from `derive_seed(seed, 1)` and pretrains it on the
/// normalized window with `derive_seed(seed, 2)`.
pub fn pretrained_filter(settings: &FilterSettings, unit_window: &Window, seed: u64) -> Result<ParticleSet> {
    let mut rng = rng_from_seed(derive_seed(seed, PARTICLE_STREAM));
    let cloud = ParticleSet::sample(settings.particles, settings.bounds, settings.gamma, &mut rng)?;
    Ok(pretrain(
        unit_window,
        settings.pretrain_lambda,
        cloud,
        derive_seed(seed, PRETRAIN_STREAM),
    )?)
}

fn pretrained_state(config: &ExperimentConfig, unit_window: &Window, seed: u64) -> Result<ParticleSet> {
    pretrained_filter(&FilterSettings::from(config), unit_window, seed)
}

/// Normalizes `points` with `window` and streams them through a fresh
/// e-process. `shared` replaces the replicate's own pretraining.
pub fn stream_replicate(
    index: usize,
    seed: u64,
    points: &[Point],
    window: &Window,
    config: &ExperimentConfig,
    shared: Option<&ParticleSet>,
) -> Result<ReplicateResult> {
    let (unit_window, transform) = window.normalize();
    let filter = match shared {
        Some(s) => s.clone(),
        None => pretrained_state(config, &unit_window, seed)?,
    };
    let limit = config.max_n.map_or(points.len(), |m| points.len().min(m as usize));
    let unit: Vec<Point> = points[..limit].iter().map(|&p| transform.apply(p)).collect();
    let mut e = EProcess::new(filter, unit_window)?
        .with_alpha(config.alpha)?
        .with_stride(config.stride)?;
    let trajectory = e.observe_batch(&unit)?;
    Ok(ReplicateResult {
        index,
        seed,
        n_points: unit.len(),
        trajectory,
        first_crossing: e.first_crossing(),
        sup_log_e: e.sup_log_e(),
        final_log_e: e.log_e(),
        outside_window: e.outside_window().len(),
    })
}

fn shared_state(config: &ExperimentConfig, window: &Window) -> Result<Option<ParticleSet>> {
    if !config.shared_pretraining {
        return Ok(None);
    }
    let (unit_window, _) = window.normalize();
    pretrained_state(config, &unit_window, derive_seed(config.seed, SHARED_PRETRAIN)).map(Some)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}

fn collect(
    config: &ExperimentConfig,
    outcomes: Vec<(usize, u64, Result<ReplicateResult>)>,
) -> ExperimentReport {
    let mut replicates = Vec::new();
    let mut failures = Vec::new();
    for (index, seed, outcome) in outcomes {
        match outcome {
            Ok(r) => replicates.push(r),
            Err(e) => {
                warn!("replicate {index} (seed {seed}) failed: {e}");
                failures.push(ReplicateFailure {
                    index,
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }
    summarize(config.clone(), replicates, failures)
}

/// Assembles a report from per-replicate results.
pub fn summarize(
    config: ExperimentConfig,
    replicates: Vec<ReplicateResult>,
    failures: Vec<ReplicateFailure>,
) -> ExperimentReport {
    let mut checkpoints: Vec<u64> = replicates
        .iter()
        .flat_map(|r| r.trajectory.iter().map(|t| t.n))
        .collect();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let growth_rate = match config.scenario {
        Scenario::TruncExp { gamma1, gamma2, .. } => Some(theoretical_growth_rate(gamma1, gamma2)),
        _ => None,
    };
    let mut report = ExperimentReport {
        format_version: REPORT_FORMAT_VERSION,
        config,
        replicates,
        failures,
        checkpoints,
        rejection: Vec::new(),
        median_log_e: Vec::new(),
        growth_rate,
    };
    report.rejection = rejection_proportion(&report, report.config.alpha, &report.checkpoints);
    report.median_log_e = report
        .checkpoints
        .iter()
        .map(|&n| median(values_at(&report, n)))
        .collect();
    report
}

/// Independent replicates of the configured scenario.
///
/// `jobs` sizes the worker pool (0 picks the machine default); results are
/// ordered by replicate index, so the report does not depend on it. A failing
/// replicate is logged and recorded, and the batch continues.
pub fn run_replicates(config: &ExperimentConfig, jobs: usize) -> Result<ExperimentReport> {
    config.validate()?;
    if config.study == Study::Permutation {
        let pattern = config.scenario.generate(derive_seed(config.seed, SHARED_PATTERN))?;
        return permutation_study(&pattern, config, jobs);
    }
    let fixed = if config.scenario.is_external() {
        Some(config.scenario.generate(0)?)
    } else {
        None
    };
    let shared = match &fixed {
        Some(p) => shared_state(config, &p.window)?,
        None if config.shared_pretraining => {
            // all synthetic scenarios of one config share their window
            let probe = config.scenario.generate(derive_seed(config.seed, SHARED_PATTERN))?;
            shared_state(config, &probe.window)?
        }
        None => None,
    };
    let run = |r: usize| {
        let seed = replicate_seed(config.seed, r);
        let outcome = (|| {
            let generated;
            let pattern = match &fixed {
                Some(p) => p,
                None => {
                    generated = config.scenario.generate(derive_seed(seed, PATTERN_STREAM))?;
                    &generated
                }
            };
            stream_replicate(r, seed, &pattern.points, &pattern.window, config, shared.as_ref())
        })();
        (r, seed, outcome)
    };
    let outcomes = pool(jobs)?.install(|| (0..config.replicates).into_par_iter().map(run).collect());
    Ok(collect(config, outcomes))
}

/// Streams `config.replicates` random orderings of one pattern, each through
/// its own freshly pretrained e-process.
pub fn permutation_study(pattern: &PointPattern, config: &ExperimentConfig, jobs: usize) -> Result<ExperimentReport> {
    config.validate()?;
    if pattern.is_empty() {
        return Err(ExperimentError::Config("permutation study needs a non-empty pattern".into()));
    }
    let shared = shared_state(config, &pattern.window)?;
    let run = |r: usize| {
        let seed = replicate_seed(config.seed, r);
        let order = permutation_for(derive_seed(seed, PATTERN_STREAM), pattern.len());
        let points: Vec<Point> = order.iter().map(|&i| pattern.points[i]).collect();
        let outcome = stream_replicate(r, seed, &points, &pattern.window, config, shared.as_ref());
        (r, seed, outcome)
    };
    let outcomes = pool(jobs)?.install(|| (0..config.replicates).into_par_iter().map(run).collect());
    Ok(collect(config, outcomes))
}

/// First retained record at or above `ln(1/α)`.
pub fn trajectory_crossing(trajectory: &[TrajectoryRecord], alpha: f64) -> Option<u64> {
    let threshold = log_threshold(alpha);
    trajectory.iter().find(|r| r.log_e >= threshold).map(|r| r.n)
}

/// Fraction of replicates whose retained trajectory reached `ln(1/α)` at or
/// before each checkpoint.
pub fn rejection_proportion(report: &ExperimentReport, alpha: f64, checkpoints: &[u64]) -> Vec<f64> {
    let total = report.replicates.len();
    if total == 0 {
        return vec![0.0; checkpoints.len()];
    }
    let mut crossings: Vec<u64> = report
        .replicates
        .iter()
        .filter_map(|r| trajectory_crossing(&r.trajectory, alpha))
        .collect();
    crossings.sort_unstable();
    checkpoints
        .iter()
        .map(|&n| crossings.partition_point(|&c| c <= n) as f64 / total as f64)
        .collect()
}

/// `ln E_n` of every replicate holding a record at `n`.
pub fn values_at(report: &ExperimentReport, n: u64) -> Vec<f64> {
    report
        .replicates
        .iter()
        .filter_map(|r| {
            r.trajectory
                .binary_search_by_key(&n, |t| t.n)
                .ok()
                .map(|i| r.trajectory[i].log_e)
        })
        .collect()
}

pub fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

/// Least-squares slope of `ln E_n` on `n` over records with
/// `from_n < n ≤ to_n`, per replicate.
pub fn slope_summary(report: &ExperimentReport, from_n: u64, to_n: u64) -> Result<Vec<f64>> {
    report
        .replicates
        .iter()
        .map(|r| {
            let pts: Vec<(f64, f64)> = r
                .trajectory
                .iter()
                .filter(|t| t.n > from_n && t.n <= to_n)
                .map(|t| (t.n as f64, t.log_e))
                .collect();
            least_squares_slope(&pts).ok_or(ExperimentError::InsufficientData {
                replicate: r.index,
                from: from_n,
                to: to_n,
            })
        })
        .collect()
}

/// Ordinary least-squares slope; `None` with fewer than two distinct abscissae.
pub fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// KL divergence of one truncated-exponential coordinate from `Unif(0, 1)`.
fn coordinate_rate(gamma: f64) -> f64 {
    (gamma / -(-gamma).exp_m1()).ln() - 1.0 + gamma / gamma.exp_m1()
}

/// Expected `ln E` increment per observation when the data follow the
/// normalized truncated-exponential density: `KL(m* ‖ Unif(0,1)²)`.
pub fn theoretical_growth_rate(gamma1: f64, gamma2: f64) -> f64 {
    coordinate_rate(gamma1) + coordinate_rate(gamma2)
}

/// The same divergence by 64×64 Gauss–Legendre quadrature of `m* ln m*`.
pub fn growth_rate_quadrature(gamma1: f64, gamma2: f64) -> f64 {
    let density = |s: f64, g: f64| g * (-g * s).exp() / -(-g).exp_m1();
    gauss_legendre(64).integrate_2d(|x, y| {
        let m = density(x, gamma1) * density(y, gamma2);
        m * m.ln()
    })
}

/// `(n, n · rate)` for `n = stride, 2·stride, …, n_max`.
pub fn growth_series(rate: f64, n_max: u64, stride: u64) -> Vec<(u64, f64)> {
    (1..=n_max / stride.max(1))
        .map(|k| {
            let n = k * stride;
            (n, n as f64 * rate)
        })
        .collect()
}
