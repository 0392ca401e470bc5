//! The PRe-process: running log e-value of a point stream against the
//! uniform null on the normalized window.
//!
//! After `n` observations
//!
//! ```text
//! ln E_n = Σ_{i ≤ n} ln m_{i−1}(s_i) + n · ln |Ω*|
//! ```
//!
//! where `m_{i−1}` is the filter's mixture estimate from the first `i − 1`
//! points and `|Ω*|` the area of the unit-coordinate window. By Ville's
//! inequality the null is rejected at level `α` as soon as `ln E_n ≥ ln(1/α)`,
//! and that verdict stays valid whenever the stream is stopped.

use std::io::{BufRead, Write};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::fmt_f64;
use crate::geometry::{Point, Window};
use crate::pr::{ParticleSet, PrError};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_STRIDE: u64 = 100;

const SNAPSHOT_MAGIC: &str = "csr-eprocess-state";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EProcessError {
    #[error(transparent)]
    Filter(#[from] PrError),

    #[error("significance level must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("reporting stride must be at least 1")]
    InvalidStride,

    #[error("window must have positive area inside the unit square")]
    InvalidWindow,

    #[error("snapshot line {line}: {message}")]
    Snapshot { line: usize, message: String },

    #[error("snapshot I/O: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EProcessError>;

/// `ln(1/α)`.
pub fn log_threshold(alpha: f64) -> f64 {
    -alpha.ln()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(EProcessError::InvalidAlpha(alpha))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub n: u64,
    pub log_e: f64,
    /// `log_e ≥ ln(1/α)` at this record.
    pub crossed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    RejectNull,
    Continue,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::RejectNull => "reject_null",
            Verdict::Continue => "continue",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub verdict: Verdict,
    /// First observation index at which the threshold was reached.
    pub at_n: Option<u64>,
    pub alpha: f64,
    pub threshold: f64,
}

/// First-crossing decision over a sequence of records.
pub fn decide(records: &[TrajectoryRecord], alpha: f64) -> Decision {
    let threshold = log_threshold(alpha);
    let at_n = records.iter().find(|r| r.log_e >= threshold).map(|r| r.n);
    Decision {
        verdict: if at_n.is_some() {
            Verdict::RejectNull
        } else {
            Verdict::Continue
        },
        at_n,
        alpha,
        threshold,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EProcess {
    filter: ParticleSet,
    unit_window: Window,
    n: u64,
    log_e: f64,
    log_area: f64,
    alpha: f64,
    sup_log_e: f64,
    first_crossing: Option<u64>,
    stride: u64,
    history: Option<Vec<TrajectoryRecord>>,
    outside: Vec<u64>,
}

impl EProcess {
    /// Starts a stream at `E_0 = 1` from a (pretrained) filter.
    ///
    /// Defaults: `α = 0.05`, reporting stride 100, history retained.
    pub fn new(filter: ParticleSet, unit_window: Window) -> Result<Self> {
        let area = unit_window.area();
        let bbox = unit_window.bounding_rect();
        let inside_unit = bbox.xmin >= 0.0 && bbox.ymin >= 0.0 && bbox.xmax <= 1.0 && bbox.ymax <= 1.0;
        if !(area > 0.0) || !inside_unit {
            return Err(EProcessError::InvalidWindow);
        }
        Ok(Self {
            filter,
            unit_window,
            n: 0,
            log_e: 0.0,
            log_area: area.ln(),
            alpha: DEFAULT_ALPHA,
            sup_log_e: 0.0,
            first_crossing: None,
            stride: DEFAULT_STRIDE,
            history: Some(Vec::new()),
            outside: Vec::new(),
        })
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        self.alpha = alpha;
        Ok(self)
    }

    pub fn with_stride(mut self, stride: u64) -> Result<Self> {
        if stride == 0 {
            return Err(EProcessError::InvalidStride);
        }
        self.stride = stride;
        Ok(self)
    }

    /// Streaming mode keeps only the running supremum, the current value and
    /// the first crossing of the configured level.
    pub fn without_history(mut self) -> Self {
        self.history = None;
        self
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn log_e(&self) -> f64 {
        self.log_e
    }

    pub fn log_area(&self) -> f64 {
        self.log_area
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn stride(&self) -> u64 {
        self.stride
    }

    pub fn sup_log_e(&self) -> f64 {
        self.sup_log_e
    }

    /// First `n` with `ln E_n ≥ ln(1/α)` at the configured `α`, checked at
    /// every observation regardless of the reporting stride.
    pub fn first_crossing(&self) -> Option<u64> {
        self.first_crossing
    }

    pub fn filter(&self) -> &ParticleSet {
        &self.filter
    }

    pub fn unit_window(&self) -> &Window {
        &self.unit_window
    }

    pub fn history(&self) -> Option<&[TrajectoryRecord]> {
        self.history.as_deref()
    }

    /// Observation indices that fell outside the unit window.
    pub fn outside_window(&self) -> &[u64] {
        &self.outside
    }

    /// Consumes one unit-coordinate observation.
    ///
    /// The increment uses the mixture estimate before `s` is absorbed.
    pub fn observe(&mut self, s: Point) -> Result<TrajectoryRecord> {
        let log_m = self.filter.update(s)?;
        self.n += 1;
        if !self.unit_window.contains(s) {
            warn!(
                "observation {} at ({}, {}) lies outside the window; clamped and consumed",
                self.n, s.x, s.y
            );
            self.outside.push(self.n);
        }
        self.log_e += log_m + self.log_area;
        let threshold = log_threshold(self.alpha);
        let crossed = self.log_e >= threshold;
        if crossed && self.first_crossing.is_none() {
            self.first_crossing = Some(self.n);
        }
        self.sup_log_e = self.sup_log_e.max(self.log_e);
        let record = TrajectoryRecord {
            n: self.n,
            log_e: self.log_e,
            crossed,
        };
        if self.n % self.stride == 0 {
            if let Some(h) = self.history.as_mut() {
                h.push(record);
            }
        }
        Ok(record)
    }

    /// Sequential fold of [`observe`](Self::observe); returns the records that
    /// fall on the reporting stride.
    pub fn observe_batch(&mut self, points: &[Point]) -> Result<Vec<TrajectoryRecord>> {
        let mut out = Vec::new();
        for &s in points {
            let r = self.observe(s)?;
            if r.n % self.stride == 0 {
                out.push(r);
            }
        }
        Ok(out)
    }

    /// Anytime decision at level `alpha`.
    ///
    /// With history retained this is the first retained record at or above
    /// `ln(1/α)`. In streaming mode the verdict comes from the running
    /// supremum and `at_n` is known only for the configured level.
    pub fn decision(&self, alpha: f64) -> Decision {
        match &self.history {
            Some(h) => decide(h, alpha),
            None => {
                let threshold = log_threshold(alpha);
                let reject = self.n > 0 && self.sup_log_e >= threshold;
                Decision {
                    verdict: if reject {
                        Verdict::RejectNull
                    } else {
                        Verdict::Continue
                    },
                    at_n: if reject && alpha == self.alpha {
                        self.first_crossing
                    } else {
                        None
                    },
                    alpha,
                    threshold,
                }
            }
        }
    }

    /// Writes the stream counters followed by the particle snapshot.
    pub fn write_snapshot<W: Write + ?Sized>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION}")?;
        writeln!(w, "n {}", self.n)?;
        writeln!(w, "log_e {}", fmt_f64(self.log_e))?;
        writeln!(w, "log_area {}", fmt_f64(self.log_area))?;
        writeln!(w, "sup_log_e {}", fmt_f64(self.sup_log_e))?;
        match self.first_crossing {
            Some(k) => writeln!(w, "first_crossing {k}")?,
            None => writeln!(w, "first_crossing none")?,
        }
        self.filter.write_snapshot(w)
    }

    /// Restores a stream saved by [`write_snapshot`](Self::write_snapshot).
    /// The window must be the one the stream was started with; `alpha` and
    /// `stride` apply to the continued run, and history restarts empty.
    pub fn read_snapshot<R: BufRead>(reader: R, unit_window: Window) -> Result<Self> {
        let mut lines = reader.lines();
        let mut line = 0usize;
        let mut next = |expect: &str| -> Result<String> {
            line += 1;
            let text = lines
                .next()
                .ok_or_else(|| snapshot_error(line, "unexpected end of snapshot"))??;
            let mut parts = text.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some(k), Some(v), None) if k == expect => Ok(v.to_string()),
                _ => Err(snapshot_error(line, &format!("expected `{expect} <value>`"))),
            }
        };
        let version = next(SNAPSHOT_MAGIC)?;
        if version != SNAPSHOT_VERSION.to_string() {
            return Err(snapshot_error(1, &format!("unsupported state version {version}")));
        }
        let n: u64 = parse_field(&next("n")?, 2)?;
        let log_e: f64 = parse_field(&next("log_e")?, 3)?;
        let log_area: f64 = parse_field(&next("log_area")?, 4)?;
        let sup_log_e: f64 = parse_field(&next("sup_log_e")?, 5)?;
        let fc = next("first_crossing")?;
        let first_crossing = if fc == "none" {
            None
        } else {
            Some(parse_field::<u64>(&fc, 6)?)
        };
        drop(next);
        let filter = ParticleSet::read_snapshot(&mut lines, 6)?;
        let mut state = Self::new(filter, unit_window)?;
        if state.log_area.to_bits() != log_area.to_bits() {
            return Err(snapshot_error(
                4,
                &format!(
                    "window area mismatch: snapshot has ln|Ω*| = {log_area}, window gives {}",
                    state.log_area
                ),
            ));
        }
        state.n = n;
        state.log_e = log_e;
        state.sup_log_e = sup_log_e;
        state.first_crossing = first_crossing;
        Ok(state)
    }
}

fn snapshot_error(line: usize, message: &str) -> EProcessError {
    EProcessError::Snapshot {
        line,
        message: message.to_string(),
    }
}

fn parse_field<T: std::str::FromStr>(v: &str, line: usize) -> Result<T> {
    v.parse()
        .map_err(|_| snapshot_error(line, &format!("cannot parse `{v}`")))
}
