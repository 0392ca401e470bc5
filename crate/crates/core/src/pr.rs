//! Predictive recursion over a fixed particle cloud (the PRticle filter).
//!
//! The mixing distribution is represented by `T` atoms `U_t` drawn from a
//! uniform initial guess on the support box. Each atom carries its current
//! mixing density `p_t` and the ratio `d_t = p_t / p0_t` to the initial density.
//! An observation `s` with weight `w` moves every atom by the same factor:
//!
//! ```text
//! Dr   = T⁻¹ Σ_t k(s | U_t) d_t
//! f_t  = 1 + w (k(s | U_t) / Dr − 1)
//! p_t ← p_t f_t,   d_t ← d_t f_t
//! ```
//!
//! which keeps `T⁻¹ Σ_t d_t = 1` exactly in real arithmetic. `Dr` is the
//! predictive density of `s` given everything consumed so far; the engine
//! returns `ln Dr` for each step.

use std::io::{BufRead, Write};

use rand::Rng;
use thiserror::Error;

use crate::format::fmt_f64;
use crate::geometry::{Point, Window};
use crate::kernel::{self, log_beta_density, ln_beta, CoordLogs, KernelParams, SupportBounds};
use crate::simulate;

/// Default weight exponent.
pub const DEFAULT_GAMMA: f64 = 0.67;
/// Default particle count of the CLI (experiments use fewer).
pub const DEFAULT_PARTICLES: usize = 10_000;
/// Intensity of the homogeneous pretraining pattern.
pub const DEFAULT_PRETRAIN_LAMBDA: f64 = 20_000.0;

// Below this the shifted sum is recomputed with the full log-sum-exp.
const FAST_PATH_MIN_SUM: f64 = 1e-280;

const SNAPSHOT_MAGIC: &str = "csr-eprocess-particles";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PrError {
    #[error("weight exponent must lie in [2/3, 1), got {0}")]
    InvalidGamma(f64),

    #[error("particle set must be non-empty")]
    EmptyParticles,

    #[error("particle {index} lies outside the support bounds: {params:?}")]
    ParticleOutOfBounds { index: usize, params: KernelParams },

    #[error("observation {index} at ({x}, {y}) is not finite")]
    NonFinitePoint { index: u64, x: f64, y: f64 },

    #[error("degenerate update at observation {index} ({x}, {y}): every particle kernel vanished")]
    DegenerateUpdate { index: u64, x: f64, y: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error(transparent)]
    Kernel(#[from] kernel::KernelError),

    #[error(transparent)]
    Simulation(#[from] simulate::SimError),

    #[error("snapshot line {line}: {message}")]
    Snapshot { line: usize, message: String },

    #[error("snapshot I/O: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PrError>;

/// `w_i = 1 / (i + 1)^γ` with a global observation counter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSchedule {
    gamma: f64,
    index: u64,
}

impl WeightSchedule {
    pub fn new(gamma: f64) -> Result<Self> {
        if (2.0 / 3.0..1.0).contains(&gamma) {
            Ok(Self { gamma, index: 0 })
        } else {
            Err(PrError::InvalidGamma(gamma))
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Number of observations consumed in the current phase.
    pub fn index(&self) -> u64 {
        self.index
    }

    /// Weight applied to observation number `index()`.
    pub fn weight(&self) -> f64 {
        weight_at(self.index, self.gamma)
    }

    pub fn with_index(self, index: u64) -> Self {
        Self { index, ..self }
    }

    fn advance(&mut self) {
        self.index += 1;
    }
}

impl Default for WeightSchedule {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            index: 0,
        }
    }
}

pub fn weight_at(i: u64, gamma: f64) -> f64 {
    (i as f64 + 1.0).powf(-gamma)
}

/// Per-step log predictive densities of a filter run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterResult {
    pub log_predictives: Vec<f64>,
}

impl FilterResult {
    /// `Σ_i ln Dr_i`, summed in observation order.
    pub fn total(&self) -> f64 {
        self.log_predictives.iter().fold(0.0, |acc, v| acc + v)
    }
}

// Log kernel values at one point and the normalizer derived from them.
struct Predictive {
    log_k: Vec<f64>,
    log_dr: f64,
    /// `exp(log_k_t − shift)` when the fast path applies.
    shifted: Option<(Vec<f64>, f64)>,
}

// Log-sum-exp over ln k_t + ln d_t.
fn full_log_dr(log_k: &[f64], d: &[f64], ln_t: f64) -> f64 {
    let terms: Vec<f64> = log_k.iter().zip(d).map(|(lk, d)| lk + d.ln()).collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_finite() {
        max + terms.iter().map(|v| (v - max).exp()).sum::<f64>().ln() - ln_t
    } else {
        f64::NEG_INFINITY
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    params: Vec<KernelParams>,
    ln_betas: Vec<[f64; 2]>,
    p: Vec<f64>,
    d: Vec<f64>,
    p0: f64,
    schedule: WeightSchedule,
    bounds: SupportBounds,
}

impl ParticleSet {
    /// Fresh filter: uniform initial guess on the support box, `d ≡ 1`.
    pub fn new(
        particles: Vec<KernelParams>,
        schedule: WeightSchedule,
        bounds: SupportBounds,
    ) -> Result<Self> {
        if particles.is_empty() {
            return Err(PrError::EmptyParticles);
        }
        for (index, params) in particles.iter().enumerate() {
            KernelParams::new(params.a1, params.b1, params.a2, params.b2)?;
            if !params.within(&bounds) {
                return Err(PrError::ParticleOutOfBounds {
                    index,
                    params: *params,
                });
            }
        }
        let p0 = 1.0 / bounds.volume();
        let t = particles.len();
        Ok(Self {
            ln_betas: particles
                .iter()
                .map(|u| [ln_beta(u.a1, u.b1), ln_beta(u.a2, u.b2)])
                .collect(),
            params: particles,
            p: vec![p0; t],
            d: vec![1.0; t],
            p0,
            schedule: schedule.with_index(0),
            bounds,
        })
    }

    /// Draws `count` particles uniformly on the support box and initializes.
    pub fn sample<R: Rng + ?Sized>(
        count: usize,
        bounds: SupportBounds,
        gamma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let particles = kernel::sample_particles(count, &bounds, rng);
        Self::new(particles, WeightSchedule::new(gamma)?, bounds)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[KernelParams] {
        &self.params
    }

    /// Current mixing density at each particle.
    pub fn p(&self) -> &[f64] {
        &self.p
    }

    /// Ratio of current to initial mixing density at each particle.
    pub fn d(&self) -> &[f64] {
        &self.d
    }

    /// Initial (uniform) mixing density, identical at every particle.
    pub fn p0(&self) -> f64 {
        self.p0
    }

    pub fn schedule(&self) -> &WeightSchedule {
        &self.schedule
    }

    pub fn bounds(&self) -> &SupportBounds {
        &self.bounds
    }

    pub fn mean_d(&self) -> f64 {
        self.d.iter().sum::<f64>() / self.d.len() as f64
    }

    /// Restarts the weight sequence; the next update uses `w_1`.
    pub fn reset_schedule(&mut self) {
        self.schedule = self.schedule.with_index(0);
    }

    fn predictive(&self, s: Point) -> Predictive {
        let lx = CoordLogs::new(s.x);
        let ly = CoordLogs::new(s.y);
        let log_k: Vec<f64> = self
            .params
            .iter()
            .zip(&self.ln_betas)
            .map(|(u, lb)| {
                log_beta_density(lx, u.a1, u.b1, lb[0]) + log_beta_density(ly, u.a2, u.b2, lb[1])
            })
            .collect();
        let ln_t = (self.len() as f64).ln();
        let shift = log_k.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if shift.is_finite() {
            let shifted: Vec<f64> = log_k.iter().map(|lk| (lk - shift).exp()).collect();
            let sum: f64 = shifted.iter().zip(&self.d).map(|(e, d)| e * d).sum();
            if sum >= FAST_PATH_MIN_SUM && sum.is_finite() {
                return Predictive {
                    log_dr: shift + sum.ln() - ln_t,
                    log_k,
                    shifted: Some((shifted, sum)),
                };
            }
        }
        let log_dr = full_log_dr(&log_k, &self.d, ln_t);
        Predictive {
            log_k,
            log_dr,
            shifted: None,
        }
    }

    /// `ln m(s)` under the current mixing estimate; the value the next
    /// [`update`](Self::update) at `s` would return.
    pub fn log_mixture_density(&self, s: Point) -> f64 {
        self.predictive(s).log_dr
    }

    /// `m(s) = T⁻¹ Σ_t k(s | U_t) d_t`.
    pub fn mixture_density(&self, s: Point) -> f64 {
        self.log_mixture_density(s).exp()
    }

    /// Consumes one observation and returns `ln Dr`, the log predictive
    /// density of `s` before the update.
    pub fn update(&mut self, s: Point) -> Result<f64> {
        let index = self.schedule.index() + 1;
        if !s.is_finite() {
            return Err(PrError::NonFinitePoint { index, x: s.x, y: s.y });
        }
        let pred = self.predictive(s);
        if !pred.log_dr.is_finite() {
            return Err(PrError::DegenerateUpdate { index, x: s.x, y: s.y });
        }
        self.schedule.advance();
        let w = self.schedule.weight();
        match &pred.shifted {
            Some((shifted, sum)) => {
                let scale = self.len() as f64 / sum;
                for ((p, d), e) in self.p.iter_mut().zip(self.d.iter_mut()).zip(shifted) {
                    let factor = 1.0 + w * (e * scale - 1.0);
                    *p *= factor;
                    *d *= factor;
                }
            }
            None => {
                for ((p, d), lk) in self.p.iter_mut().zip(self.d.iter_mut()).zip(&pred.log_k) {
                    let excess = lk - pred.log_dr;
                    let (new_p, new_d) = if *d > 0.0 {
                        (
                            (1.0 - w) * *p + w * (p.ln() + excess).exp(),
                            (1.0 - w) * *d + w * (d.ln() + excess).exp(),
                        )
                    } else {
                        (0.0, 0.0)
                    };
                    *p = new_p;
                    *d = new_d;
                }
            }
        }
        Ok(pred.log_dr)
    }

    /// Folds [`update`](Self::update) over `points` in order.
    pub fn run_filter(&mut self, points: &[Point]) -> Result<FilterResult> {
        let mut out = FilterResult {
            log_predictives: Vec::with_capacity(points.len()),
        };
        for &s in points {
            out.log_predictives.push(self.update(s)?);
        }
        Ok(out)
    }

    /// Writes a lossless text snapshot. Layout:
    ///
    /// ```text
    /// csr-eprocess-particles 1
    /// bounds <lo> <hi>
    /// gamma <γ>
    /// index <i>
    /// particles <T>
    /// <α₁> <β₁> <α₂> <β₂> <p> <d>      (T rows)
    /// ```
    ///
    /// Reals use the shortest decimal text that parses back to the same bits.
    pub fn write_snapshot<W: Write + ?Sized>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION}")?;
        writeln!(w, "bounds {} {}", fmt_f64(self.bounds.lo()), fmt_f64(self.bounds.hi()))?;
        writeln!(w, "gamma {}", fmt_f64(self.schedule.gamma()))?;
        writeln!(w, "index {}", self.schedule.index())?;
        writeln!(w, "particles {}", self.len())?;
        for ((u, p), d) in self.params.iter().zip(&self.p).zip(&self.d) {
            writeln!(
                w,
                "{} {} {} {} {} {}",
                fmt_f64(u.a1),
                fmt_f64(u.b1),
                fmt_f64(u.a2),
                fmt_f64(u.b2),
                fmt_f64(*p),
                fmt_f64(*d)
            )?;
        }
        Ok(())
    }

    /// Reads a snapshot written by [`write_snapshot`](Self::write_snapshot).
    /// `line_offset` shifts reported line numbers when the snapshot is
    /// embedded in a larger file.
    pub fn read_snapshot<R: BufRead>(lines: &mut std::io::Lines<R>, line_offset: usize) -> Result<Self> {
        let mut reader = SnapshotReader {
            lines,
            line: line_offset,
        };
        let header = reader.fields()?;
        if header.len() != 2 || header[0] != SNAPSHOT_MAGIC {
            return Err(reader.error("not a particle snapshot"));
        }
        if header[1] != SNAPSHOT_VERSION.to_string() {
            return Err(reader.error(&format!("unsupported snapshot version {}", header[1])));
        }
        let bounds_row = reader.keyed("bounds", 2)?;
        let lo = reader.real(&bounds_row[0])?;
        let hi = reader.real(&bounds_row[1])?;
        let bounds = SupportBounds::new(lo, hi)?;
        let gamma_row = reader.keyed("gamma", 1)?;
        let gamma = reader.real(&gamma_row[0])?;
        let index_row = reader.keyed("index", 1)?;
        let index: u64 = index_row[0]
            .parse()
            .map_err(|_| reader.error("index is not an integer"))?;
        let count_row = reader.keyed("particles", 1)?;
        let count: usize = count_row[0]
            .parse()
            .map_err(|_| reader.error("particle count is not an integer"))?;
        let mut params = Vec::with_capacity(count);
        let mut p = Vec::with_capacity(count);
        let mut d = Vec::with_capacity(count);
        for _ in 0..count {
            let row = reader.fields()?;
            if row.len() != 6 {
                return Err(reader.error("expected 6 fields per particle"));
            }
            let v: Vec<f64> = row.iter().map(|f| reader.real(f)).collect::<Result<_>>()?;
            params.push(KernelParams {
                a1: v[0],
                b1: v[1],
                a2: v[2],
                b2: v[3],
            });
            p.push(v[4]);
            d.push(v[5]);
        }
        let schedule = WeightSchedule::new(gamma)?.with_index(index);
        let mut set = Self::new(params, schedule, bounds)?;
        set.p = p;
        set.d = d;
        set.schedule = schedule;
        Ok(set)
    }
}

struct SnapshotReader<'a, R: BufRead> {
    lines: &'a mut std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> SnapshotReader<'_, R> {
    fn error(&self, message: &str) -> PrError {
        PrError::Snapshot {
            line: self.line,
            message: message.to_string(),
        }
    }

    fn fields(&mut self) -> Result<Vec<String>> {
        self.line += 1;
        match self.lines.next() {
            Some(line) => Ok(line?.split_whitespace().map(str::to_string).collect()),
            None => Err(self.error("unexpected end of snapshot")),
        }
    }

    fn keyed(&mut self, key: &str, arity: usize) -> Result<Vec<String>> {
        let mut row = self.fields()?;
        if row.len() != arity + 1 || row[0] != key {
            return Err(self.error(&format!("expected `{key}` with {arity} value(s)")));
        }
        row.remove(0);
        Ok(row)
    }

    fn real(&self, field: &str) -> Result<f64> {
        field
            .parse::<f64>()
            .map_err(|_| self.error(&format!("`{field}` is not a real number")))
    }
}

/// Runs the filter over one homogeneous Poisson pattern of intensity
/// `lambda0` on `unit_window`, then restarts the weight sequence so the test
/// stream begins at `w_1`. The pretraining pattern itself uses `w_1, w_2, …`.
pub fn pretrain(unit_window: &Window, lambda0: f64, mut state: ParticleSet, seed: u64) -> Result<ParticleSet> {
    let bbox = unit_window.bounding_rect();
    if bbox.xmin < 0.0 || bbox.ymin < 0.0 || bbox.xmax > 1.0 || bbox.ymax > 1.0 {
        return Err(PrError::InvalidConfiguration(
            "pretraining window must lie inside the unit square".into(),
        ));
    }
    let pattern = simulate::sim_hpp(unit_window, lambda0, seed)?;
    if pattern.is_empty() {
        return Err(PrError::InvalidConfiguration(format!(
            "pretraining pattern is empty (intensity {lambda0} on area {})",
            unit_window.area()
        )));
    }
    state.reset_schedule();
    state.run_filter(&pattern.points)?;
    state.reset_schedule();
    Ok(state)
}
