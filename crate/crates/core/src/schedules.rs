//! Discrete noise schedules.
//!
//! Steps are 1-based: `t ∈ [1, T]`. Accessors accept `t = 0` where the
//! quantity is defined there (`ᾱ_0 = 1`), which lets the last reverse step
//! land exactly on the data.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::standard_normal;

pub const DEFAULT_STEPS: usize = 400;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Variance-preserving schedule: β_t, α_t = 1 − β_t, ᾱ_t = ∏ α_i and the
/// posterior variance of `q(x_{t−1} | x_t, x_0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    posterior_var: Vec<f64>,
}

/// On-disk form. Only β is stored; everything else is recomputed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleFile {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta: Vec<f64>,
}

impl NoiseSchedule {
    /// β as an arithmetic progression from `beta_start` to `beta_end`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::domain("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::domain(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let beta = if steps == 1 {
            vec![beta_start]
        } else {
            let span = beta_end - beta_start;
            (0..steps)
                .map(|i| beta_start + span * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Self::from_betas(beta)
    }

    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::domain("schedule needs at least one step"));
        }
        if beta.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::domain("every beta must lie in (0, 1)"));
        }
        if beta.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::domain("beta must be nondecreasing"));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let posterior_var = (0..beta.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                (1.0 - prev) * beta[i] / (1.0 - alpha_bar[i])
            })
            .collect();
        Ok(Self { beta, alpha, alpha_bar, posterior_var })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn posterior_variances(&self) -> &[f64] {
        &self.posterior_var
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::StepOutOfRange { t, steps: self.steps() });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// ᾱ_t, with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Σ_q(t) = (1 − ᾱ_{t−1}) β_t / (1 − ᾱ_t).
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.posterior_var[t - 1]
    }

    /// Variance of `q(x_s | x_t, x_0)` for an arbitrary earlier step `s < t`.
    /// Reduces to [`posterior_variance`](Self::posterior_variance) when `s = t − 1`.
    pub fn posterior_variance_between(&self, t: usize, s: usize) -> f64 {
        let ab_t = self.alpha_bar(t);
        let ab_s = self.alpha_bar(s);
        (1.0 - ab_s) / (1.0 - ab_t) * (1.0 - ab_t / ab_s)
    }

    pub fn to_file(&self) -> ScheduleFile {
        ScheduleFile { steps: self.steps(), beta: self.beta.clone() }
    }

    pub fn from_file(file: ScheduleFile) -> Result<Self> {
        check_len(file.steps, file.beta.len())?;
        Self::from_betas(file.beta)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(s)?)
    }

    /// Maps a continuous time `u ∈ [0, 1]` (1 = maximum noise) onto a step index.
    pub fn step_for_fraction(&self, u: f64) -> usize {
        let t = (u.clamp(0.0, 1.0) * self.steps() as f64).ceil() as usize;
        t.clamp(1, self.steps())
    }

    /// Uniform draw from `{1, …, T}`.
    pub fn sample_step<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.gen_range(1..=self.steps())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule parameters are valid")
    }
}

/// `√ᾱ_t · x0 + √(1 − ᾱ_t) · eps`.
pub fn forward_perturb(x0: &[f64], t: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    check_len(x0.len(), eps.len())?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// One Markov forward step `x_t = √(1 − β_t) x_{t−1} + √β_t z`.
pub fn vp_forward_step(x_prev: &[f64], t: usize, z: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    check_len(x_prev.len(), z.len())?;
    let beta = schedule.beta(t);
    let (a, b) = ((1.0 - beta).sqrt(), beta.sqrt());
    Ok(x_prev.iter().zip(z).map(|(x, e)| a * x + b * e).collect())
}

/// Geometric noise ladder `σ_1 < … < σ_N` for annealed Langevin sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaLadder {
    sigma: Vec<f64>,
}

impl SigmaLadder {
    pub fn geometric(sigma_min: f64, sigma_max: f64, levels: usize) -> Result<Self> {
        if !(sigma_min > 0.0 && sigma_min < sigma_max && sigma_max.is_finite()) {
            return Err(Error::domain(format!(
                "need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}"
            )));
        }
        if levels < 2 {
            return Err(Error::domain("sigma ladder needs at least two levels"));
        }
        let ratio = sigma_max / sigma_min;
        let last = levels - 1;
        let sigma = (0..levels)
            .map(|i| match i {
                0 => sigma_min,
                i if i == last => sigma_max,
                i => sigma_min * ratio.powf(i as f64 / last as f64),
            })
            .collect();
        Ok(Self { sigma })
    }

    pub fn levels(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    /// σ_i, 1-based.
    pub fn sigma(&self, i: usize) -> f64 {
        self.sigma[i - 1]
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma[0]
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma[self.sigma.len() - 1]
    }

    /// Step sizes `ε_i = ε · σ_i² / σ_min²`, one per level.
    pub fn annealed_step_sizes(&self, base: f64) -> Vec<f64> {
        let s2 = self.sigma_min() * self.sigma_min();
        self.sigma.iter().map(|s| base * s * s / s2).collect()
    }
}

/// One variance-exploding forward step `x_i = x_{i−1} + √(σ_i² − σ_{i−1}²) z`.
/// For `i = 1` the previous level is taken as zero noise.
pub fn ve_forward_step<R: Rng + ?Sized>(x_prev: &[f64], i: usize, ladder: &SigmaLadder, rng: &mut R) -> Vec<f64> {
    let prev = if i <= 1 { 0.0 } else { ladder.sigma(i - 1) };
    let s = ladder.sigma(i);
    let scale = (s * s - prev * prev).sqrt();
    x_prev.iter().map(|x| x + scale * standard_normal(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, seeded};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(1, 0.5, 0.5).unwrap();
        assert_eq!(s.betas(), &[0.5]);
        assert_eq!(s.alpha_bars(), &[0.5]);
        assert_eq!(s.posterior_variance(1), 0.0);
    }

    #[test]
    fn two_equal_steps() {
        let s = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5, 0.25]);
    }

    #[test]
    fn default_schedule_matches_product_loop() {
        let s = NoiseSchedule::linear(400, 1e-4, 0.02).unwrap();
        // independent product over the arithmetic progression
        let mut prod = 1.0f64;
        for i in 0..400 {
            let beta = 1e-4 + (0.02 - 1e-4) * (i as f64) / 399.0;
            prod *= 1.0 - beta;
        }
        assert!(rel(s.alpha_bar(400), prod) < 1e-12);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        for t in 2..=400 {
            assert!(s.posterior_variance(t) < s.beta(t));
            assert_eq!(s.alpha_bar(t), s.alpha_bar(t - 1) * s.alpha(t));
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(NoiseSchedule::linear(0, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
        assert!(NoiseSchedule::linear(10, 0.2, 0.1).is_err());
    }

    #[test]
    fn json_round_trip_recomputes_derived() {
        let s = NoiseSchedule::linear(16, 1e-3, 0.05).unwrap();
        let json = s.to_json().unwrap();
        assert!(json.starts_with("{\"T\":16,\"beta\":["));
        assert_eq!(NoiseSchedule::from_json(&json).unwrap(), s);
        assert!(NoiseSchedule::from_json("{\"T\":3,\"beta\":[0.1,0.2]}").is_err());
    }

    #[test]
    fn posterior_between_adjacent_matches() {
        let s = NoiseSchedule::default();
        for t in [2, 10, 200, 400] {
            assert!(rel(s.posterior_variance_between(t, t - 1), s.posterior_variance(t)) < 1e-12);
        }
        assert_eq!(s.posterior_variance_between(1, 0), 0.0);
    }

    #[test]
    fn sigma_ladder_examples() {
        assert_eq!(SigmaLadder::geometric(0.01, 1.0, 2).unwrap().sigmas(), &[0.01, 1.0]);
        let three = SigmaLadder::geometric(0.01, 1.0, 3).unwrap();
        assert!(rel(three.sigma(2), 0.1) < 1e-12);
        let ladder = SigmaLadder::geometric(0.01, 50.0, 10).unwrap();
        let (lo, hi) = (0.01f64.ln(), 50.0f64.ln());
        for i in 0..10 {
            let expect = (lo + (hi - lo) * i as f64 / 9.0).exp();
            assert!(rel(ladder.sigmas()[i], expect) < 1e-12);
        }
        assert!(ladder.sigmas().windows(2).all(|w| w[0] < w[1]));
        assert!(SigmaLadder::geometric(1.0, 0.5, 4).is_err());
        assert!(SigmaLadder::geometric(-1.0, 0.5, 4).is_err());
        assert!(SigmaLadder::geometric(0.1, 0.5, 1).is_err());
    }

    #[test]
    fn forward_perturb_degenerate_inputs() {
        let s = NoiseSchedule::default();
        let eps = [0.3, -1.2, 2.0];
        let out = forward_perturb(&[0.0; 3], 100, &eps, &s).unwrap();
        let b = (1.0 - s.alpha_bar(100)).sqrt();
        for (o, e) in out.iter().zip(eps) {
            assert_eq!(*o, b * e);
        }
        let x0 = [1.0, 2.0, -3.0];
        let out = forward_perturb(&x0, 100, &[0.0; 3], &s).unwrap();
        let a = s.alpha_bar(100).sqrt();
        for (o, x) in out.iter().zip(x0) {
            assert_eq!(*o, a * x);
        }
        assert!(matches!(forward_perturb(&x0, 0, &eps, &s), Err(Error::StepOutOfRange { .. })));
        assert!(matches!(forward_perturb(&x0, 401, &eps, &s), Err(Error::StepOutOfRange { .. })));
        assert!(matches!(forward_perturb(&x0, 1, &[0.0; 2], &s), Err(Error::Shape { .. })));
    }

    #[test]
    fn forward_perturb_monte_carlo_moments() {
        let s = NoiseSchedule::default();
        let mut rng = seeded(7);
        let t = 150;
        let x0 = 0.8;
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| forward_perturb(&[x0], t, &normal_vec(&mut rng, 1), &s).unwrap()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let target_var = 1.0 - s.alpha_bar(t);
        let se = (target_var / n as f64).sqrt();
        assert!((mean - s.alpha_bar(t).sqrt() * x0).abs() < 4.0 * se);
        assert!(rel(var, target_var) < 0.02);
    }

    #[test]
    fn composed_markov_steps_match_closed_form() {
        let s = NoiseSchedule::linear(50, 1e-3, 0.05).unwrap();
        let mut rng = seeded(11);
        let (t, x0, n) = (30, -1.5, 50_000);
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            let mut x = vec![x0];
            for step in 1..=t {
                let z = normal_vec(&mut rng, 1);
                x = vp_forward_step(&x, step, &z, &s).unwrap();
            }
            draws.push(x[0]);
        }
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = ((1.0 - s.alpha_bar(t)) / n as f64).sqrt();
        assert!((mean - s.alpha_bar(t).sqrt() * x0).abs() < 4.0 * se);
        assert!(rel(var, 1.0 - s.alpha_bar(t)) < 0.02);
    }

    #[test]
    fn step_fraction_mapping() {
        let s = NoiseSchedule::default();
        assert_eq!(s.step_for_fraction(1.0), 400);
        assert_eq!(s.step_for_fraction(0.0), 1);
        assert_eq!(s.step_for_fraction(0.5), 200);
    }
}
