//! Reverse-process sampling.
//!
//! All samplers work on the ε parameterization. The guided loop runs either
//! ancestral DDPM steps over every index or DDIM steps over a subsequence
//! `τ_1 < … < τ_{T′}`, applying the ANTV and band-pass corrections after
//! every denoising step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::regularizers::{antv_step, bp_grad_step, AntvConfig, BandSpec};
use crate::rng::{derive_seed, normal_vec, seeded, standard_normal};
use crate::schedules::{forward_perturb, NoiseSchedule, SigmaLadder};
use crate::scorenet::{Condition, EpsModel};

/// Classifier-free guidance in ε space: `ω ε̂(x, t, c) + (1 − ω) ε̂(x, t, ∅)`.
pub fn guided_eps<M: EpsModel + ?Sized>(
    model: &M,
    x: &[f64],
    t: usize,
    condition: &Condition,
    omega: f64,
) -> Result<Vec<f64>> {
    if omega == 0.0 {
        return model.predict(x, t, &Condition::Null);
    }
    if condition.is_null() {
        return Err(Error::domain(format!("guidance scale {omega} needs a non-null condition")));
    }
    if omega == 1.0 {
        return model.predict(x, t, condition);
    }
    let cond = model.predict(x, t, condition)?;
    let uncond = model.predict(x, t, &Condition::Null)?;
    Ok(cond.iter().zip(&uncond).map(|(c, u)| omega * c + (1.0 - omega) * u).collect())
}

/// Mean of `p(x_{t−1} | x_t)`: `(x_t − β_t / √(1 − ᾱ_t) · ε̂) / √α_t`.
pub fn ddpm_mean(x_t: &[f64], t: usize, eps_hat: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    check_len(x_t.len(), eps_hat.len())?;
    let coef = schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt();
    let inv = 1.0 / schedule.alpha(t).sqrt();
    Ok(x_t.iter().zip(eps_hat).map(|(x, e)| inv * (x - coef * e)).collect())
}

/// Ancestral step with variance `Σ_q(t)`; noise-free at `t = 1`.
pub fn ddpm_step<R: Rng + ?Sized>(
    x_t: &[f64],
    t: usize,
    eps_hat: &[f64],
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut mean = ddpm_mean(x_t, t, eps_hat, schedule)?;
    let var = schedule.posterior_variance(t);
    if var > 0.0 {
        let sd = var.sqrt();
        for m in &mut mean {
            *m += sd * standard_normal(rng);
        }
    }
    Ok(mean)
}

/// `x̂_0 = (x_t − √(1 − ᾱ_t) ε̂) / √ᾱ_t`.
pub fn predict_x0(x_t: &[f64], t: usize, eps_hat: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    check_len(x_t.len(), eps_hat.len())?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x_t.iter().zip(eps_hat).map(|(x, e)| (x - b * e) / a).collect())
}

fn check_sigma(schedule: &NoiseSchedule, t: usize, prev: usize, sigma: f64) -> Result<f64> {
    schedule.check_step(t)?;
    if prev >= t {
        return Err(Error::domain(format!("DDIM target step {prev} must precede {t}")));
    }
    let budget = 1.0 - schedule.alpha_bar(prev);
    let s2 = sigma * sigma;
    if !(sigma >= 0.0) || s2 > budget * (1.0 + 1e-12) {
        return Err(Error::domain(format!("sigma² = {s2} exceeds direction budget {budget}")));
    }
    Ok((budget - s2).max(0.0))
}

/// Deterministic part of a DDIM step from `t` to `prev`.
pub fn ddim_mean(
    x_t: &[f64],
    t: usize,
    prev: usize,
    eps_hat: &[f64],
    schedule: &NoiseSchedule,
    sigma: f64,
) -> Result<Vec<f64>> {
    let direction = check_sigma(schedule, t, prev, sigma)?.sqrt();
    let x0 = predict_x0(x_t, t, eps_hat, schedule)?;
    let a_prev = schedule.alpha_bar(prev).sqrt();
    Ok(x0.iter().zip(eps_hat).map(|(x, e)| a_prev * x + direction * e).collect())
}

/// DDIM step `x_t → x_prev` with noise scale `sigma`; deterministic at `sigma = 0`.
pub fn ddim_step<R: Rng + ?Sized>(
    x_t: &[f64],
    t: usize,
    prev: usize,
    eps_hat: &[f64],
    schedule: &NoiseSchedule,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut out = ddim_mean(x_t, t, prev, eps_hat, schedule, sigma)?;
    if sigma > 0.0 {
        for o in &mut out {
            *o += sigma * standard_normal(rng);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsequenceStrategy {
    /// Stride `⌊T/T′⌋` anchored at `T`.
    #[default]
    Uniform,
    /// Rounded evenly spaced points on `[1, T]`.
    Linspace,
}

/// Increasing step indices of length `T′` ending at `T`.
pub fn make_subsequence(steps: usize, len: usize, strategy: SubsequenceStrategy) -> Result<Vec<usize>> {
    if len == 0 || len > steps {
        return Err(Error::domain(format!("subsequence length {len} outside [1, {steps}]")));
    }
    let taus = match strategy {
        SubsequenceStrategy::Uniform => {
            let stride = steps / len;
            (0..len).map(|i| steps - (len - 1 - i) * stride).collect()
        }
        SubsequenceStrategy::Linspace => {
            if len == 1 {
                vec![steps]
            } else {
                let mut taus: Vec<usize> = (0..len)
                    .map(|i| (1.0 + (steps - 1) as f64 * i as f64 / (len - 1) as f64).round() as usize)
                    .collect();
                taus.dedup();
                taus
            }
        }
    };
    Ok(taus)
}

/// Noise scale of a DDIM step as a multiple of the posterior standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    #[default]
    Zero,
    DdpmMatch,
    /// `σ = η · √Σ_q(t, prev)`
    Scaled(f64),
}

impl SigmaMode {
    pub fn eta(&self) -> f64 {
        match *self {
            SigmaMode::Zero => 0.0,
            SigmaMode::DdpmMatch => 1.0,
            SigmaMode::Scaled(eta) => eta,
        }
    }

    pub fn sigma(&self, schedule: &NoiseSchedule, t: usize, prev: usize) -> f64 {
        let eta = self.eta();
        if eta == 0.0 {
            0.0
        } else {
            eta * schedule.posterior_variance_between(t, prev).sqrt()
        }
    }
}

/// Annealed Langevin dynamics over a σ ladder.
///
/// Starts from `N(0, σ_max² I)` and runs `inner` steps
/// `x ← x + ε_i s(x, σ_i) + √(2ε_i) z` at every level from `σ_N` down to `σ_1`.
pub fn langevin_sample<F, R>(
    mut score_fn: F,
    ladder: &SigmaLadder,
    step_sizes: &[f64],
    inner: usize,
    dim: usize,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], f64) -> Vec<f64>,
    R: Rng + ?Sized,
{
    check_len(ladder.levels(), step_sizes.len())?;
    if inner == 0 {
        return Err(Error::domain("Langevin needs at least one inner step"));
    }
    if step_sizes.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::domain("Langevin step sizes must be positive"));
    }
    let mut x: Vec<f64> = (0..dim).map(|_| ladder.sigma_max() * standard_normal(rng)).collect();
    for level in (1..=ladder.levels()).rev() {
        let sigma = ladder.sigma(level);
        let eps = step_sizes[level - 1];
        let noise_scale = (2.0 * eps).sqrt();
        for _ in 0..inner {
            let s = score_fn(&x, sigma);
            langevin_update(&mut x, &s, eps, noise_scale, rng)?;
        }
    }
    Ok(x)
}

fn langevin_update<R: Rng + ?Sized>(x: &mut [f64], score: &[f64], eps: f64, noise_scale: f64, rng: &mut R) -> Result<()> {
    check_len(x.len(), score.len())?;
    if score.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("score function output".into()));
    }
    for (xi, si) in x.iter_mut().zip(score) {
        *xi += eps * si + noise_scale * standard_normal(rng);
    }
    Ok(())
}

/// One Langevin update `x + ε s + √(2ε) z`.
pub fn langevin_step<R: Rng + ?Sized>(x: &[f64], score: &[f64], eps: f64, rng: &mut R) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    langevin_update(&mut out, score, eps, (2.0 * eps).sqrt(), rng)?;
    Ok(out)
}

/// Diffuses a real window to step `t` with fresh noise.
pub fn perturb_to_level<R: Rng + ?Sized>(x0: &[f64], t: usize, schedule: &NoiseSchedule, rng: &mut R) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    let eps = normal_vec(rng, x0.len());
    forward_perturb(x0, t, &eps, schedule)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    Ddpm,
    #[default]
    Ddim,
}

/// Start the reverse process from a partially noised real window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub source: Vec<f64>,
    /// Step the source is diffused to before denoising.
    pub start_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub mode: SamplerMode,
    /// Subsequence length `T′` (DDIM only).
    pub steps: usize,
    pub strategy: SubsequenceStrategy,
    pub sigma: SigmaMode,
    /// Guidance scale `ω`.
    pub guidance: f64,
    /// Number of runs averaged into the mean output.
    pub samples: usize,
    /// ANTV correction; `antv.rate` is the per-step weight.
    pub antv: AntvConfig,
    /// Band-pass step weight, applied to the length-normalized loss.
    pub bp_rate: f64,
    pub band: BandSpec,
    pub transfer: Option<Transfer>,
    pub condition: Condition,
    pub seed: u64,
    /// Reuse `seed` for every run instead of deriving one per run.
    #[serde(default)]
    pub shared_seed: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            mode: SamplerMode::Ddim,
            steps: 50,
            strategy: SubsequenceStrategy::Uniform,
            sigma: SigmaMode::Zero,
            guidance: 7.5,
            samples: 1,
            antv: AntvConfig::default(),
            bp_rate: 0.03,
            band: BandSpec::default(),
            transfer: None,
            condition: Condition::Null,
            seed: 0,
            shared_seed: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, schedule: &NoiseSchedule, window: usize) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::domain("at least one sample is required"));
        }
        if self.mode == SamplerMode::Ddim && (self.steps == 0 || self.steps > schedule.steps()) {
            return Err(Error::domain(format!("subsequence length {} outside [1, {}]", self.steps, schedule.steps())));
        }
        if self.antv.rate > 0.0 {
            self.antv.validate()?;
        }
        if !(self.antv.rate >= 0.0 && self.bp_rate >= 0.0) {
            return Err(Error::domain("correction weights must be nonnegative"));
        }
        if self.sigma.eta() < 0.0 {
            return Err(Error::domain("eta must be nonnegative"));
        }
        if self.condition.is_null() && self.guidance != 0.0 {
            return Err(Error::domain("a null condition requires guidance 0"));
        }
        if let Some(tr) = &self.transfer {
            check_len(window, tr.source.len())?;
            schedule.check_step(tr.start_step)?;
            self.band.validate(window)?;
        }
        Ok(())
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        if self.shared_seed {
            self.seed
        } else {
            derive_seed(self.seed, run as u64)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    /// Pointwise mean over runs.
    pub mean: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
}

/// Step pairs `(t, prev)` visited from the top of the chain down to zero.
pub fn reverse_steps(schedule: &NoiseSchedule, cfg: &SamplerConfig) -> Result<Vec<(usize, usize)>> {
    let top = cfg.transfer.as_ref().map_or(schedule.steps(), |tr| tr.start_step);
    let taus = match cfg.mode {
        SamplerMode::Ddpm => (1..=top).collect(),
        SamplerMode::Ddim => make_subsequence(top, cfg.steps.min(top), cfg.strategy)?,
    };
    Ok((0..taus.len()).rev().map(|i| (taus[i], if i == 0 { 0 } else { taus[i - 1] })).collect())
}

/// One complete reverse run from the config's starting point.
pub fn sample_run<M: EpsModel + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    run: usize,
) -> Result<Vec<f64>> {
    let n = model.window();
    let mut rng = seeded(cfg.run_seed(run));
    let mut x = match &cfg.transfer {
        Some(tr) => perturb_to_level(&tr.source, tr.start_step, schedule, &mut rng)?,
        None => normal_vec(&mut rng, n),
    };
    for (t, prev) in reverse_steps(schedule, cfg)? {
        let eps = guided_eps(model, &x, t, &cfg.condition, cfg.guidance)?;
        x = match cfg.mode {
            SamplerMode::Ddpm => ddpm_step(&x, t, &eps, schedule, &mut rng)?,
            SamplerMode::Ddim => ddim_step(&x, t, prev, &eps, schedule, cfg.sigma.sigma(schedule, t, prev), &mut rng)?,
        };
        if cfg.antv.rate > 0.0 {
            x = antv_step(&x, &cfg.antv);
        }
        if let Some(tr) = &cfg.transfer {
            if cfg.bp_rate > 0.0 {
                x = bp_grad_step(&x, &tr.source, &cfg.band, cfg.bp_rate / n as f64)?;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sampler state at step {t} (run {run})")));
        }
    }
    Ok(x)
}

/// Runs `cfg.samples` reverse chains and averages them.
pub fn sample<M: EpsModel + ?Sized>(model: &M, schedule: &NoiseSchedule, cfg: &SamplerConfig) -> Result<SampleOutput> {
    cfg.validate(schedule, model.window())?;
    let samples = (0..cfg.samples)
        .map(|run| sample_run(model, schedule, cfg, run))
        .collect::<Result<Vec<_>>>()?;
    let mut mean = vec![0.0; model.window()];
    for s in &samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    let k = samples.len() as f64;
    mean.iter_mut().for_each(|m| *m /= k);
    Ok(SampleOutput { mean, samples })
}

/// One generated window as written to JSON lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedWindow {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ticker: Option<String>,
    pub industry_id: Option<usize>,
    pub board_id: Option<usize>,
    pub values: Vec<f64>,
    pub seed: u64,
    pub config_digest: String,
    /// `"sample"` for a raw run, `"mean"` for the average.
    pub kind: String,
    pub index: usize,
}
