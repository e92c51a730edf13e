//! Approximate nonlocal total variation over a sliding window.
//!
//! For a series `x` of length `n`, every center `i` looks at the clamped
//! window `max(1, i−k) ≤ j ≤ min(n, i+k)` and penalizes
//! `|x_j − x_i| · ω(i, j)` with a Gaussian similarity kernel `ω`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which gradient the correction step follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AntvGradient {
    /// Per-center pass: kernel held fixed, `sign(0) = 0`, centers updated
    /// sequentially so later centers see earlier updates.
    #[default]
    Sequential,
    /// Full gradient of the loss, kernel derivative included, applied to all
    /// points at once.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AntvConfig {
    /// Half-window size.
    pub k: usize,
    pub alpha: f64,
    /// Gaussian kernel width.
    pub sigma_w: f64,
    /// Step size of the correction pass.
    pub rate: f64,
    #[serde(default)]
    pub gradient: AntvGradient,
}

impl Default for AntvConfig {
    fn default() -> Self {
        Self { k: 2, alpha: 1.0, sigma_w: 1.0, rate: 0.03, gradient: AntvGradient::Sequential }
    }
}

impl AntvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::domain("ANTV half-window k must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.sigma_w > 0.0 && self.rate >= 0.0) {
            return Err(Error::domain("ANTV alpha and sigma_w must be positive, rate nonnegative"));
        }
        Ok(())
    }
}

/// `exp(−(x_i − x_j)² / (2σ_w²))`.
pub fn antv_weight(xi: f64, xj: f64, sigma_w: f64) -> f64 {
    let d = xi - xj;
    (-(d * d) / (2.0 * sigma_w * sigma_w)).exp()
}

fn window(i: usize, n: usize, k: usize) -> std::ops::RangeInclusive<usize> {
    i.saturating_sub(k)..=(i + k).min(n - 1)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn antv_loss(x: &[f64], cfg: &AntvConfig) -> f64 {
    let n = x.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in window(i, n, cfg.k) {
            total += ((x[j] - x[i]) * antv_weight(x[i], x[j], cfg.sigma_w)).abs();
        }
    }
    cfg.alpha * total
}

/// Exact gradient of [`antv_loss`] with respect to every point.
pub fn antv_exact_gradient(x: &[f64], cfg: &AntvConfig) -> Vec<f64> {
    let n = x.len();
    let s2 = cfg.sigma_w * cfg.sigma_w;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        for j in window(i, n, cfg.k) {
            // g(d) = |d| exp(−d²/2σ²),  d = x_j − x_i
            let d = x[j] - x[i];
            let w = (-(d * d) / (2.0 * s2)).exp();
            let dg = w * (sign(d) - d.abs() * d / s2);
            grad[j] += cfg.alpha * dg;
            grad[i] -= cfg.alpha * dg;
        }
    }
    grad
}

/// One correction pass over the series.
pub fn antv_step(x: &[f64], cfg: &AntvConfig) -> Vec<f64> {
    let mut out = x.to_vec();
    match cfg.gradient {
        AntvGradient::Sequential => antv_sequential_pass(&mut out, cfg),
        AntvGradient::Exact => {
            let g = antv_exact_gradient(x, cfg);
            for (o, gi) in out.iter_mut().zip(g) {
                *o -= cfg.rate * gi;
            }
        }
    }
    out
}

fn antv_sequential_pass(x: &mut [f64], cfg: &AntvConfig) {
    let n = x.len();
    for i in 0..n {
        let mut grad = 0.0;
        for j in window(i, n, cfg.k) {
            let w = antv_weight(x[i], x[j], cfg.sigma_w);
            grad += sign((x[j] - x[i]) * w) * w * -1.0;
        }
        x[i] -= cfg.rate * cfg.alpha * grad;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, seeded};

    fn unit(rate: f64) -> AntvConfig {
        AntvConfig { k: 1, alpha: 1.0, sigma_w: 1.0, rate, gradient: AntvGradient::Sequential }
    }

    #[test]
    fn weight_values() {
        assert_eq!(antv_weight(0.7, 0.7, 0.3), 1.0);
        assert!((antv_weight(0.0, 1.0, 1.0) - 0.606_530_659_712_633_4).abs() < 1e-15);
        assert_eq!(antv_weight(0.2, -1.3, 0.8), antv_weight(-1.3, 0.2, 0.8));
    }

    #[test]
    fn loss_examples() {
        assert_eq!(antv_loss(&[2.5; 7], &unit(0.1)), 0.0);
        let two = antv_loss(&[0.0, 1.0], &unit(0.1));
        assert!((two - 2.0 * (-0.5f64).exp()).abs() < 1e-15);
        let doubled = AntvConfig { alpha: 2.0, ..unit(0.1) };
        assert!((antv_loss(&[0.0, 1.0], &doubled) - 2.0 * two).abs() < 1e-15);
    }

    #[test]
    fn sequential_pass_hand_trace() {
        let out = antv_step(&[0.0, 1.0], &unit(0.1));
        let x1 = 0.1 * (-0.5f64).exp();
        let x2 = 1.0 - 0.1 * (-(x1 - 1.0f64).powi(2) / 2.0).exp();
        assert!((out[0] - x1).abs() < 1e-15);
        assert!((out[0] - 0.060_653_1).abs() < 1e-6);
        assert!((out[1] - x2).abs() < 1e-15);
        assert!((out[1] - 0.935_673).abs() < 1e-6);
    }

    #[test]
    fn constant_series_is_fixed_point() {
        for gradient in [AntvGradient::Sequential, AntvGradient::Exact] {
            let cfg = AntvConfig { gradient, ..unit(0.5) };
            assert_eq!(antv_step(&[1.25; 9], &cfg), vec![1.25; 9]);
        }
    }

    #[test]
    fn single_point_series() {
        assert_eq!(antv_loss(&[3.0], &unit(0.1)), 0.0);
        assert_eq!(antv_step(&[3.0], &unit(0.1)), vec![3.0]);
    }

    #[test]
    fn exact_gradient_matches_central_differences() {
        let mut rng = seeded(3);
        let cfg = AntvConfig { k: 2, alpha: 0.7, sigma_w: 0.9, rate: 0.0, gradient: AntvGradient::Exact };
        for _ in 0..20 {
            let x = normal_vec(&mut rng, 8);
            let g = antv_exact_gradient(&x, &cfg);
            let h = 1e-6;
            for m in 0..x.len() {
                let (mut up, mut dn) = (x.clone(), x.clone());
                up[m] += h;
                dn[m] -= h;
                let fd = (antv_loss(&up, &cfg) - antv_loss(&dn, &cfg)) / (2.0 * h);
                assert!((fd - g[m]).abs() <= 1e-5 * fd.abs().max(g[m].abs()).max(1e-3));
            }
        }
    }

    #[test]
    fn rejects_invalid_config() {
        assert!(AntvConfig { k: 0, ..unit(0.1) }.validate().is_err());
        assert!(AntvConfig { sigma_w: 0.0, ..unit(0.1) }.validate().is_err());
        assert!(unit(0.1).validate().is_ok());
    }
}
