//! Fixed-node quadrature rules on `[0,1]`.
//!
//! Gauss–Legendre is exact for smooth integrands such as the truncated
//! exponential; tanh–sinh handles the integrable endpoint singularities of beta
//! densities with shapes below one.

use std::f64::consts::{FRAC_PI_2, PI};

/// Nodes and weights of a rule on the unit interval.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `1 - node`, computed without cancellation where the rule allows it.
    pub complements: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Tensor-product rule over the unit square.
    pub fn integrate_2d(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let mut total = 0.0;
        for (&x, &wx) in self.nodes.iter().zip(&self.weights) {
            let mut row = 0.0;
            for (&y, &wy) in self.nodes.iter().zip(&self.weights) {
                row += wy * f(x, y);
            }
            total += wx * row;
        }
        total
    }
}

/// `n`-point Gauss–Legendre rule mapped to `[0,1]`. Nodes are Newton-refined
/// roots of `P_n`.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1, "quadrature needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        // z is descending in i; map [-1,1] -> [0,1]
        nodes[i] = 0.5 * (1.0 - z);
        nodes[n - 1 - i] = 0.5 * (1.0 + z);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    let complements = nodes.iter().map(|x| 1.0 - x).collect();
    Rule {
        nodes,
        weights,
        complements,
    }
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Tanh–sinh rule on `[0,1]` with step `h` and abscissae `|t| ≤ t_max`.
///
/// Node complements are evaluated directly from the substitution, so
/// integrands can use `ln(1 - x)` accurately even where `x` rounds to one.
pub fn tanh_sinh(h: f64, t_max: f64) -> Rule {
    let half = (t_max / h).floor() as i64;
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let mut complements = Vec::new();
    for k in -half..=half {
        let t = k as f64 * h;
        let u = FRAC_PI_2 * t.sinh();
        // x = 1 / (1 + e^{-2u}), 1 - x = 1 / (1 + e^{2u})
        let x = 1.0 / (1.0 + (-2.0 * u).exp());
        let xc = 1.0 / (1.0 + (2.0 * u).exp());
        let w = 0.5 * h * FRAC_PI_2 * t.cosh() / (u.cosh() * u.cosh());
        if x > 0.0 && xc > 0.0 && w > 0.0 {
            nodes.push(x);
            complements.push(xc);
            weights.push(w);
        }
    }
    Rule {
        nodes,
        weights,
        complements,
    }
}

/// The tanh–sinh rule used for beta-kernel normalization checks.
pub fn beta_rule() -> Rule {
    tanh_sinh(0.1, 4.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let rule = gauss_legendre(8);
        // degree 15 is exact for 8 nodes
        let v = rule.integrate(|x| x.powi(15));
        assert!((v - 1.0 / 16.0).abs() < 1e-15);
        assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gauss_legendre_64_exponential() {
        let rule = gauss_legendre(64);
        let v = rule.integrate(|x| (-10.0 * x).exp());
        let exact = (1.0 - (-10.0f64).exp()) / 10.0;
        assert!((v - exact).abs() < 1e-15);
        assert!(rule.nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn tanh_sinh_handles_endpoint_singularity() {
        let rule = beta_rule();
        // ∫ x^{-0.8} dx = 5
        let v: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(x, w)| w * x.powf(-0.8))
            .sum();
        assert!((v - 5.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn two_dimensional_product() {
        let rule = gauss_legendre(16);
        let v = rule.integrate_2d(|x, y| x * y * y);
        assert!((v - 1.0 / 6.0).abs() < 1e-15);
    }
}
