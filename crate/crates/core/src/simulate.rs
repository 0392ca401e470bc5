//! Seeded point-process generators.
//!
//! Every generator takes a `u64` seed, drives a ChaCha8 stream from it, and
//! records the seed in the pattern's [`Provenance`]. Point order is generation
//! order and is never rearranged afterwards.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point, Rect, Window};

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of substream `index` under `parent`:
/// `splitmix64(parent + (index + 1) · 0x9E3779B97F4A7C15)`.
///
/// Replicate `r` of an experiment seeded with `m` uses `derive_seed(m, r)`, so
/// any replicate can be rerun alone.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(parent.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub params: BTreeMap<String, f64>,
    pub seed: Option<u64>,
}

impl Provenance {
    fn new(generator: &str, params: &[(&str, f64)], seed: u64) -> Self {
        Self {
            generator: generator.to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            seed: Some(seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointPattern {
    pub points: Vec<Point>,
    pub window: Window,
    pub provenance: Provenance,
}

impl PointPattern {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Matérn cluster process parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    /// Parent intensity.
    pub kappa: f64,
    /// Cluster disc radius.
    pub scale: f64,
    /// Mean offspring per parent.
    pub mu: f64,
}

impl MaternParams {
    pub fn validate(&self, window: &Window) -> Result<()> {
        let ok = self.kappa.is_finite()
            && self.kappa > 0.0
            && self.scale.is_finite()
            && self.scale > 0.0
            && self.mu.is_finite()
            && self.mu >= 0.0;
        if !ok {
            return Err(SimError::InvalidParameter(format!(
                "Matérn parameters must be positive and finite: {self:?}"
            )));
        }
        if self.scale >= window.diameter() {
            return Err(SimError::InvalidParameter(format!(
                "Matérn scale {} must be below the window diameter {}",
                self.scale,
                window.diameter()
            )));
        }
        Ok(())
    }
}

impl Default for MaternParams {
    fn default() -> Self {
        Self {
            kappa: 50.0,
            scale: 0.1,
            mu: 20.0,
        }
    }
}

/// Truncated joint exponential intensity on the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncExpParams {
    pub lambda0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl TruncExpParams {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.lambda0, self.gamma1, self.gamma2]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidParameter(format!(
                "truncated-exponential parameters must be positive and finite: {self:?}"
            )))
        }
    }
}

fn check_intensity(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(SimError::InvalidParameter(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

/// Poisson count; zero mean yields zero.
pub(crate) fn poisson_count<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(mean).expect("finite positive Poisson mean");
    dist.sample(rng) as usize
}

fn uniform_in_rect<R: Rng + ?Sized>(rng: &mut R, r: &Rect) -> Point {
    let x = r.xmin + r.width() * rng.random::<f64>();
    let y = r.ymin + r.height() * rng.random::<f64>();
    // guard against rounding past the upper edge
    Point::new(x.min(r.xmax), y.min(r.ymax))
}

/// One uniform draw on the window; rejection from the bounding box.
pub(crate) fn uniform_in_window<R: Rng + ?Sized>(rng: &mut R, window: &Window) -> Point {
    let bbox = window.bounding_rect();
    loop {
        let p = uniform_in_rect(rng, &bbox);
        if window.contains(p) {
            return p;
        }
    }
}

/// `count` i.i.d. uniform points on the window (the binomial process).
pub fn sim_uniform(window: &Window, count: usize, seed: u64) -> PointPattern {
    let mut rng = rng_from_seed(seed);
    let points = (0..count).map(|_| uniform_in_window(&mut rng, window)).collect();
    PointPattern {
        points,
        window: window.clone(),
        provenance: Provenance::new("uniform", &[("count", count as f64)], seed),
    }
}

/// Homogeneous Poisson process with intensity `lambda` on the window.
pub fn sim_hpp(window: &Window, lambda: f64, seed: u64) -> Result<PointPattern> {
    check_intensity("lambda", lambda)?;
    let mut rng = rng_from_seed(seed);
    let n = poisson_count(&mut rng, lambda * window.area());
    let points = (0..n).map(|_| uniform_in_window(&mut rng, window)).collect();
    Ok(PointPattern {
        points,
        window: window.clone(),
        provenance: Provenance::new("hpp", &[("lambda", lambda)], seed),
    })
}

fn matern_offspring<R: Rng + ?Sized>(rng: &mut R, window: &Window, params: &MaternParams) -> Vec<Point> {
    let target = window.bounding_rect();
    let r = params.scale;
    let dilated = Rect {
        xmin: target.xmin - r,
        xmax: target.xmax + r,
        ymin: target.ymin - r,
        ymax: target.ymax + r,
    };
    let n_parents = poisson_count(rng, params.kappa * dilated.area());
    let parents: Vec<Point> = (0..n_parents).map(|_| uniform_in_rect(rng, &dilated)).collect();
    let mut out = Vec::new();
    for parent in parents {
        let n_children = poisson_count(rng, params.mu);
        for _ in 0..n_children {
            let rho = r * rng.random::<f64>().sqrt();
            let theta = TAU * rng.random::<f64>();
            let p = Point::new(parent.x + rho * theta.cos(), parent.y + rho * theta.sin());
            if window.contains(p) {
                out.push(p);
            }
        }
    }
    out
}

/// Matérn cluster process.
///
/// Parents are drawn on the bounding box dilated by `scale` on every side;
/// offspring land uniformly in the disc around their parent and are kept only
/// inside the window. Offspring are emitted parent by parent.
pub fn sim_matern(window: &Window, params: &MaternParams, seed: u64) -> Result<PointPattern> {
    params.validate(window)?;
    let mut rng = rng_from_seed(seed);
    let points = matern_offspring(&mut rng, window, params);
    Ok(PointPattern {
        points,
        window: window.clone(),
        provenance: Provenance::new(
            "matern",
            &[("kappa", params.kappa), ("scale", params.scale), ("mu", params.mu)],
            seed,
        ),
    })
}

/// Inverse CDF of the density `γ e^{−γ s} / (1 − e^{−γ})` on `(0, 1)`.
pub fn trunc_exp_quantile(u: f64, gamma: f64) -> f64 {
    -(u * (-gamma).exp_m1()).ln_1p() / gamma
}

/// CDF matching [`trunc_exp_quantile`].
pub fn trunc_exp_cdf(s: f64, gamma: f64) -> f64 {
    (-gamma * s).exp_m1() / (-gamma).exp_m1()
}

/// Inhomogeneous Poisson process with the normalized truncated-exponential
/// intensity on the unit square; the expected count is `lambda0`.
pub fn sim_trunc_exp(params: &TruncExpParams, seed: u64) -> Result<PointPattern> {
    params.validate()?;
    let mut rng = rng_from_seed(seed);
    let n = poisson_count(&mut rng, params.lambda0);
    let points = (0..n)
        .map(|_| {
            let x = trunc_exp_quantile(rng.random::<f64>(), params.gamma1);
            let y = trunc_exp_quantile(rng.random::<f64>(), params.gamma2);
            Point::new(x, y)
        })
        .collect();
    Ok(PointPattern {
        points,
        window: Window::unit_square(),
        provenance: Provenance::new(
            "trunc_exp",
            &[
                ("lambda0", params.lambda0),
                ("gamma1", params.gamma1),
                ("gamma2", params.gamma2),
            ],
            seed,
        ),
    })
}

/// The first `n1` points of Matérn realizations on the unit square followed by
/// `n2` uniform points. Extra independent Matérn realizations are appended
/// until `n1` clustered points are available.
pub fn sim_changepoint(matern: &MaternParams, n1: usize, n2: usize, seed: u64) -> Result<PointPattern> {
    let window = Window::unit_square();
    matern.validate(&window)?;
    if n1 > 0 && matern.mu == 0.0 {
        return Err(SimError::InvalidParameter(
            "clustered prefix requested but mu = 0 produces no offspring".into(),
        ));
    }
    let mut rng = rng_from_seed(seed);
    let mut points = Vec::with_capacity(n1 + n2);
    while points.len() < n1 {
        let batch = matern_offspring(&mut rng, &window, matern);
        let need = n1 - points.len();
        points.extend(batch.into_iter().take(need));
    }
    points.extend((0..n2).map(|_| uniform_in_rect(&mut rng, &Rect::UNIT)));
    Ok(PointPattern {
        points,
        window,
        provenance: Provenance::new(
            "changepoint",
            &[
                ("kappa", matern.kappa),
                ("scale", matern.scale),
                ("mu", matern.mu),
                ("n1", n1 as f64),
                ("n2", n2 as f64),
            ],
            seed,
        ),
    })
}
