//! Reference computations for tests.
//!
//! Everything here is written from definitions, without calling into the
//! modules it is used to check.

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSpec {
    pub mean: f64,
    pub var: f64,
}

impl GaussianSpec {
    pub fn new(mean: f64, var: f64) -> Result<Self> {
        if !(var > 0.0 && var.is_finite()) {
            return Err(Error::domain(format!("variance {var} must be positive")));
        }
        Ok(Self { mean, var })
    }

    pub fn standard() -> Self {
        Self { mean: 0.0, var: 1.0 }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        -0.5 * (2.0 * std::f64::consts::PI * self.var).ln() - (x - self.mean).powi(2) / (2.0 * self.var)
    }

    /// Marginal after `x_t = √ᾱ x_0 + √(1−ᾱ) ε`.
    pub fn perturbed(&self, alpha_bar: f64) -> Self {
        Self { mean: alpha_bar.sqrt() * self.mean, var: alpha_bar * self.var + (1.0 - alpha_bar) }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let d = Normal::new(self.mean, self.var.sqrt()).expect("valid normal");
        (0..n).map(|_| d.sample(rng)).collect()
    }
}

/// `d/dx log N(x; μ, v) = −(x − μ)/v`.
pub fn gaussian_score(x: f64, spec: &GaussianSpec) -> f64 {
    -(x - spec.mean) / spec.var
}

/// Score of the Gaussian data distribution after forward noising to level ᾱ.
pub fn perturbed_gaussian_score(x: f64, spec: &GaussianSpec, alpha_bar: f64) -> f64 {
    let mean = alpha_bar.sqrt() * spec.mean;
    let var = alpha_bar * spec.var + (1.0 - alpha_bar);
    -(x - mean) / var
}

/// Central differences `(f(x + h eᵢ) − f(x − h eᵢ)) / 2h`.
pub fn finite_diff_grad<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::domain("step h must be positive"));
    }
    let mut probe = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("objective near coordinate {i}")));
        }
        g.push((up - down) / (2.0 * h));
    }
    Ok(g)
}

/// Sample mean, unbiased variance and standard error of the mean.
pub fn mc_moments(samples: &[f64]) -> (f64, f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var, (var / n).sqrt())
}

/// Silverman's rule `0.9 min(σ̂, IQR/1.34) n^{−1/5}`.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let (_, var, _) = mc_moments(samples);
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
    };
    let iqr = q(0.75) - q(0.25);
    0.9 * var.sqrt().min(iqr / 1.34) * (samples.len() as f64).powf(-0.2)
}

/// Score of a Gaussian kernel density estimate at `x`.
pub fn kde_score(x: f64, samples: &[f64], bandwidth: f64) -> f64 {
    let h2 = bandwidth * bandwidth;
    // log-sum-exp shift keeps far tails finite
    let logs: Vec<f64> = samples.iter().map(|s| -(x - s).powi(2) / (2.0 * h2)).collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (s, l) in samples.iter().zip(&logs) {
        let w = (l - m).exp();
        num += w * (s - x) / h2;
        den += w;
    }
    num / den
}

/// Score of the perturbed marginal estimated from clean data samples: the
/// marginal is the sample set scaled by `√ᾱ` and smoothed by the forward
/// noise, so the kernel width is `√(1 − ᾱ)` rather than a fitted bandwidth.
pub fn perturbed_kde_score(x: f64, data: &[f64], alpha_bar: f64) -> f64 {
    let scaled: Vec<f64> = data.iter().map(|d| alpha_bar.sqrt() * d).collect();
    kde_score(x, &scaled, (1.0 - alpha_bar).sqrt())
}

/// `ᾱ_t` by a plain running product, with `ᾱ_0 = 1` at index 0.
pub fn naive_alpha_bars(betas: &[f64]) -> Vec<f64> {
    let mut out = vec![1.0];
    let mut prod = 1.0;
    for b in betas {
        prod *= 1.0 - b;
        out.push(prod);
    }
    out
}

/// `Σ_q(t) = (1 − ᾱ_{t−1}) β_t / (1 − ᾱ_t)` for t = 1..=T.
pub fn naive_posterior_variances(betas: &[f64]) -> Vec<f64> {
    let ab = naive_alpha_bars(betas);
    (1..=betas.len()).map(|t| (1.0 - ab[t - 1]) * betas[t - 1] / (1.0 - ab[t])).collect()
}

/// Mean of `q(x_{t−1} | x_t, x_0)` with `x_0` recovered from ε̂.
pub fn posterior_mean_from_eps(x_t: &[f64], eps: &[f64], t: usize, betas: &[f64]) -> Vec<f64> {
    let ab = naive_alpha_bars(betas);
    let (abt, abp, beta) = (ab[t], ab[t - 1], betas[t - 1]);
    let alpha = 1.0 - beta;
    x_t.iter()
        .zip(eps)
        .map(|(x, e)| {
            let x0 = (x - (1.0 - abt).sqrt() * e) / abt.sqrt();
            abp.sqrt() * beta / (1.0 - abt) * x0 + alpha.sqrt() * (1.0 - abp) / (1.0 - abt) * x
        })
        .collect()
}

/// `X_k = Σ_j x_j e^{−2πi jk/n}` as (re, im) pairs, straight from the sum.
pub fn direct_dft(x: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter().enumerate().fold((0.0, 0.0), |(re, im), (j, v)| {
                let ang = -2.0 * std::f64::consts::PI * ((j * k) % n) as f64 / n as f64;
                (re + v * ang.cos(), im + v * ang.sin())
            })
        })
        .collect()
}

/// Pearson correlation: means first, then centred sums.
pub fn pearson_two_pass(p: &[f64], r: &[f64]) -> f64 {
    let n = p.len() as f64;
    let mp = p.iter().sum::<f64>() / n;
    let mr = r.iter().sum::<f64>() / n;
    let cov: f64 = p.iter().zip(r).map(|(a, b)| (a - mp) * (b - mr)).sum();
    let vp: f64 = p.iter().map(|a| (a - mp).powi(2)).sum();
    let vr: f64 = r.iter().map(|b| (b - mr).powi(2)).sum();
    cov / (vp * vr).sqrt()
}

/// Rank of each entry as `1 + #smaller + (#equal − 1)/2`, by counting.
pub fn count_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let less = v.iter().filter(|y| *y < x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn spearman_oracle(p: &[f64], r: &[f64]) -> f64 {
    pearson_two_pass(&count_ranks(p), &count_ranks(r))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDay {
    pub date: NaiveDate,
    pub holdings: Vec<String>,
    pub portfolio_return: f64,
    pub cumulative_rr: f64,
}

/// Top-k selection by counting, per ticker, how many names outrank it.
/// Input cells are `(date, ticker, score, realized_return)`.
pub fn reference_backtest(cells: &[(NaiveDate, String, f64, f64)], k: usize) -> Vec<ReferenceDay> {
    let mut dates: Vec<NaiveDate> = cells.iter().map(|c| c.0).collect();
    dates.sort();
    dates.dedup();
    let mut growth = 1.0;
    let mut out = Vec::new();
    for date in dates {
        let day: Vec<&(NaiveDate, String, f64, f64)> = cells.iter().filter(|c| c.0 == date).collect();
        let mut held: Vec<(&str, f64)> = Vec::new();
        for c in &day {
            let better = day.iter().filter(|o| o.2 > c.2 || (o.2 == c.2 && o.1 < c.1)).count();
            if better < k {
                held.push((c.1.as_str(), c.3));
            }
        }
        held.sort_by(|a, b| a.0.cmp(b.0));
        let ret = held.iter().map(|h| h.1).sum::<f64>() / held.len() as f64;
        growth *= 1.0 + ret;
        out.push(ReferenceDay {
            date,
            holdings: held.iter().map(|h| h.0.to_string()).collect(),
            portfolio_return: ret,
            cumulative_rr: growth - 1.0,
        });
    }
    out
}

/// One-dimensional score model with an available derivative.
pub trait ScalarScoreModel {
    fn score(&self, x: f64) -> f64;
    fn dscore(&self, x: f64) -> f64;
}

/// `s(x) = a tanh(b x + c) + d x + e`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TanhScoreModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
}

impl TanhScoreModel {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).expect("valid normal");
        Self {
            a: n.sample(&mut rng),
            b: n.sample(&mut rng),
            c: n.sample(&mut rng),
            d: 0.5 * n.sample(&mut rng),
            e: 0.5 * n.sample(&mut rng),
        }
    }
}

impl ScalarScoreModel for TanhScoreModel {
    fn score(&self, x: f64) -> f64 {
        self.a * (self.b * x + self.c).tanh() + self.d * x + self.e
    }

    fn dscore(&self, x: f64) -> f64 {
        let th = (self.b * x + self.c).tanh();
        self.a * self.b * (1.0 - th * th) + self.d
    }
}

/// The true score of a Gaussian, as a model.
#[derive(Debug, Clone, Copy)]
pub struct GaussianScoreModel(pub GaussianSpec);

impl ScalarScoreModel for GaussianScoreModel {
    fn score(&self, x: f64) -> f64 {
        gaussian_score(x, &self.0)
    }

    fn dscore(&self, _x: f64) -> f64 {
        -1.0 / self.0.var
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceCheck {
    /// `½ E[(s(x) − ∇log p(x))²]`
    pub explicit: f64,
    /// `E[s'(x) + ½ s(x)²]`
    pub trace: f64,
    /// `½ E[(∇log p)²]`, which is `1/(2v)` for a Gaussian.
    pub constant: f64,
    /// Sample mean of the per-draw difference `explicit − trace − constant`.
    pub drift: f64,
    pub drift_se: f64,
}

/// Monte-Carlo comparison of the explicit and integrated-by-parts score
/// matching objectives on Gaussian data.
pub fn score_matching_equivalence_check<M: ScalarScoreModel>(
    model: &M,
    spec: &GaussianSpec,
    n_samples: usize,
    seed: u64,
) -> EquivalenceCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = spec.sample(&mut rng, n_samples);
    let constant = 1.0 / (2.0 * spec.var);
    let (mut ex, mut tr) = (0.0, 0.0);
    let mut diffs = Vec::with_capacity(n_samples);
    for &x in &xs {
        let s = model.score(x);
        let g = gaussian_score(x, spec);
        let e = 0.5 * (s - g).powi(2);
        let t = model.dscore(x) + 0.5 * s * s;
        ex += e;
        tr += t;
        diffs.push(e - t - constant);
    }
    let n = n_samples as f64;
    let (drift, _, drift_se) = mc_moments(&diffs);
    EquivalenceCheck { explicit: ex / n, trace: tr / n, constant, drift, drift_se }
}
