//! Product beta kernel on the unit square and the compact particle support.
//!
//! `k(s | u) = Beta(s.x; α₁, β₁) · Beta(s.y; α₂, β₂)` with
//! `u = (α₁, β₁, α₂, β₂)`. All evaluation happens in log space. Coordinates are
//! clamped to `[ε, 1 − ε]` first because beta densities are zero or infinite
//! on the boundary whenever a shape differs from one.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;

/// Boundary clamp applied to every coordinate before kernel evaluation.
pub const BOUNDARY_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("support bounds must satisfy 0 < lo < hi < inf, got ({lo}, {hi})")]
    InvalidBounds { lo: f64, hi: f64 },

    #[error("kernel shape parameters must be positive and finite: {0:?}")]
    InvalidShape(KernelParams),

    #[error("log kernel is not finite at ({x}, {y}) for {params:?}")]
    NumericalDomain { x: f64, y: f64, params: KernelParams },
}

/// One mixing atom `u = (α₁, β₁, α₂, β₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
}

impl KernelParams {
    pub const UNIFORM: KernelParams = KernelParams {
        a1: 1.0,
        b1: 1.0,
        a2: 1.0,
        b2: 1.0,
    };

    pub fn new(a1: f64, b1: f64, a2: f64, b2: f64) -> Result<Self, KernelError> {
        let p = Self { a1, b1, a2, b2 };
        if p.shapes().iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(p)
        } else {
            Err(KernelError::InvalidShape(p))
        }
    }

    pub fn shapes(&self) -> [f64; 4] {
        [self.a1, self.b1, self.a2, self.b2]
    }

    pub fn within(&self, bounds: &SupportBounds) -> bool {
        self.shapes()
            .iter()
            .all(|&s| s >= bounds.lo() && s <= bounds.hi())
    }
}

/// Compact box `[lo, hi]⁴` holding every particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "(f64, f64)", into = "(f64, f64)")]
pub struct SupportBounds {
    lo: f64,
    hi: f64,
}

impl SupportBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self, KernelError> {
        if lo > 0.0 && hi > lo && hi.is_finite() {
            Ok(Self { lo, hi })
        } else {
            Err(KernelError::InvalidBounds { lo, hi })
        }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    /// Lebesgue volume of the four-dimensional box.
    pub fn volume(&self) -> f64 {
        (self.hi - self.lo).powi(4)
    }
}

impl Default for SupportBounds {
    fn default() -> Self {
        Self { lo: 0.2, hi: 10.0 }
    }
}

impl TryFrom<(f64, f64)> for SupportBounds {
    type Error = KernelError;

    fn try_from((lo, hi): (f64, f64)) -> Result<Self, Self::Error> {
        Self::new(lo, hi)
    }
}

impl From<SupportBounds> for (f64, f64) {
    fn from(b: SupportBounds) -> Self {
        (b.lo, b.hi)
    }
}

pub fn clamp_unit(v: f64) -> f64 {
    v.clamp(BOUNDARY_EPS, 1.0 - BOUNDARY_EPS)
}

/// `ln B(a, b)`.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
}

/// `ln x` and `ln(1 − x)` of a clamped coordinate; the pair every kernel
/// evaluation at that coordinate needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct CoordLogs {
    pub ln: f64,
    pub ln_comp: f64,
}

impl CoordLogs {
    pub fn new(v: f64) -> Self {
        let c = clamp_unit(v);
        Self {
            ln: c.ln(),
            ln_comp: (-c).ln_1p(),
        }
    }
}

#[inline]
pub(crate) fn log_beta_density(logs: CoordLogs, a: f64, b: f64, ln_b: f64) -> f64 {
    (a - 1.0) * logs.ln + (b - 1.0) * logs.ln_comp - ln_b
}

/// Log density of `Beta(a, b)` at the clamped coordinate `x`.
pub fn log_kernel_1d(x: f64, a: f64, b: f64) -> f64 {
    log_beta_density(CoordLogs::new(x), a, b, ln_beta(a, b))
}

/// `ln k(s | u)`.
pub fn log_kernel(s: Point, u: &KernelParams) -> Result<f64, KernelError> {
    let v = log_kernel_1d(s.x, u.a1, u.b1) + log_kernel_1d(s.y, u.a2, u.b2);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(KernelError::NumericalDomain {
            x: s.x,
            y: s.y,
            params: *u,
        })
    }
}

/// `count` particles with every shape drawn i.i.d. `Uniform(lo, hi)`.
pub fn sample_particles<R: Rng + ?Sized>(
    count: usize,
    bounds: &SupportBounds,
    rng: &mut R,
) -> Vec<KernelParams> {
    let (lo, hi) = (bounds.lo(), bounds.hi());
    let mut draw = || lo + (hi - lo) * rng.random::<f64>();
    (0..count)
        .map(|_| KernelParams {
            a1: draw(),
            b1: draw(),
            a2: draw(),
            b2: draw(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_kernel_is_one() {
        let v = log_kernel(Point::new(0.5, 0.5), &KernelParams::UNIFORM).unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn symmetric_beta_two_two() {
        let u = KernelParams::new(2.0, 2.0, 2.0, 2.0).unwrap();
        let v = log_kernel(Point::new(0.5, 0.5), &u).unwrap();
        assert!((v - 2.0 * 1.5f64.ln()).abs() < 1e-14);
        assert!((v - 0.810_930_216_216_329).abs() < 1e-12);
    }

    #[test]
    fn linear_beta_kernels() {
        // Beta(x;2,1) = 2x, Beta(y;1,2) = 2(1-y)
        let u = KernelParams::new(2.0, 1.0, 1.0, 2.0).unwrap();
        let v = log_kernel(Point::new(0.25, 0.75), &u).unwrap();
        assert!((v - 2.0 * 0.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn boundary_is_clamped() {
        let u = KernelParams::new(0.5, 3.0, 2.0, 0.3).unwrap();
        let on_edge = log_kernel(Point::new(0.0, 1.0), &u).unwrap();
        let clamped = log_kernel(Point::new(BOUNDARY_EPS, 1.0 - BOUNDARY_EPS), &u).unwrap();
        assert!(on_edge.is_finite());
        assert_eq!(on_edge, clamped);
    }

    #[test]
    fn sampled_particles_stay_in_bounds() {
        let bounds = SupportBounds::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ps = sample_particles(10_000, &bounds, &mut rng);
        assert_eq!(ps.len(), 10_000);
        assert!(ps.iter().all(|p| p.within(&bounds)));
    }

    #[test]
    fn degenerate_support_gives_uniform_kernel() {
        let bounds = SupportBounds::new(1.0, 1.0 + 1e-12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ps = sample_particles(1, &bounds, &mut rng);
        assert!(ps[0].shapes().iter().all(|s| (s - 1.0).abs() < 1e-11));
    }

    #[test]
    fn particle_means_match_uniform_mean() {
        let bounds = SupportBounds::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let ps = sample_particles(100_000, &bounds, &mut rng);
        let n = ps.len() as f64;
        // 5.1 ± 3 SE with SE = 9.8/sqrt(12)/sqrt(n) ≈ 0.009
        for k in 0..4 {
            let mean = ps.iter().map(|p| p.shapes()[k]).sum::<f64>() / n;
            assert!((mean - 5.1).abs() < 0.03, "coordinate {k} mean {mean}");
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let bounds = SupportBounds::default();
        let a = sample_particles(50, &bounds, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_particles(50, &bounds, &mut ChaCha8Rng::seed_from_u64(9));
        let c = sample_particles(50, &bounds, &mut ChaCha8Rng::seed_from_u64(10));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_bounds_and_shapes() {
        assert!(SupportBounds::new(0.0, 1.0).is_err());
        assert!(SupportBounds::new(2.0, 1.0).is_err());
        assert!(SupportBounds::new(1.0, f64::INFINITY).is_err());
        assert!(KernelParams::new(1.0, -1.0, 1.0, 1.0).is_err());
        assert!(KernelParams::new(1.0, f64::NAN, 1.0, 1.0).is_err());
    }

    #[test]
    fn ln_beta_reference_values() {
        // B(2,3) = 1/12, B(0.5,0.5) = π
        assert!((ln_beta(2.0, 3.0) - (1.0f64 / 12.0).ln()).abs() < 1e-14);
        assert!((ln_beta(0.5, 0.5) - std::f64::consts::PI.ln()).abs() < 1e-14);
    }

    // Raw density at interior quadrature nodes; the clamp is irrelevant to
    // the normalization identity.
    fn integral_1d(rule: &quadrature::Rule, a: f64, b: f64) -> f64 {
        let lb = ln_beta(a, b);
        rule.nodes
            .iter()
            .zip(&rule.complements)
            .zip(&rule.weights)
            .map(|((x, xc), w)| w * ((a - 1.0) * x.ln() + (b - 1.0) * xc.ln() - lb).exp())
            .sum()
    }

    proptest! {
        #[test]
        fn kernel_integrates_to_one(
            a1 in 0.2f64..10.0, b1 in 0.2f64..10.0,
            a2 in 0.2f64..10.0, b2 in 0.2f64..10.0,
        ) {
            let rule = quadrature::beta_rule();
            let lb1 = ln_beta(a1, b1);
            let lb2 = ln_beta(a2, b2);
            let mut total = 0.0;
            for i in 0..rule.len() {
                for j in 0..rule.len() {
                    let lk = (a1 - 1.0) * rule.nodes[i].ln() + (b1 - 1.0) * rule.complements[i].ln() - lb1
                        + (a2 - 1.0) * rule.nodes[j].ln() + (b2 - 1.0) * rule.complements[j].ln() - lb2;
                    total += rule.weights[i] * rule.weights[j] * lk.exp();
                }
            }
            prop_assert!((total - 1.0).abs() <= 1e-6, "integral {}", total);
            let product = integral_1d(&rule, a1, b1) * integral_1d(&rule, a2, b2);
            prop_assert!((total - product).abs() < 1e-9);
        }

        #[test]
        fn kernel_reflection_symmetry(
            x in 0.001f64..0.999, y in 0.001f64..0.999,
            a in 0.2f64..10.0, b in 0.2f64..10.0,
            c in 0.2f64..10.0, d in 0.2f64..10.0,
        ) {
            let u = KernelParams::new(a, b, c, d).unwrap();
            let mirrored = KernelParams::new(b, a, d, c).unwrap();
            let lhs = log_kernel(Point::new(x, y), &u).unwrap();
            let rhs = log_kernel(Point::new(1.0 - x, 1.0 - y), &mirrored).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
        }

        #[test]
        fn kernel_is_a_product(
            x in 0.0f64..=1.0, y in 0.0f64..=1.0,
            a in 0.2f64..10.0, b in 0.2f64..10.0,
            c in 0.2f64..10.0, d in 0.2f64..10.0,
        ) {
            let u = KernelParams::new(a, b, c, d).unwrap();
            let joint = log_kernel(Point::new(x, y), &u).unwrap();
            prop_assert_eq!(joint, log_kernel_1d(x, a, b) + log_kernel_1d(y, c, d));
        }
    }
}
