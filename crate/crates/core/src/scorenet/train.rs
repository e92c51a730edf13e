//! Denoising score matching in ε form with condition dropout.

use log::info;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::condition::Condition;
use super::network::ScoreNetworkParams;
use super::EpsModel;
use crate::error::{check_len, Error, Result};
use crate::rng::{normal_vec, seeded};
use crate::schedules::{forward_perturb, NoiseSchedule};

/// Per-step weight `w_t` of the squared ε error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossWeighting {
    /// `w_t = 1 − ᾱ_t`
    Elbo,
    /// `w_t = 1`
    #[default]
    Unit,
}

impl LossWeighting {
    pub fn weight(&self, schedule: &NoiseSchedule, t: usize) -> f64 {
        match self {
            LossWeighting::Elbo => 1.0 - schedule.alpha_bar(t),
            LossWeighting::Unit => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Probability of replacing a condition with `Null`.
    pub p_uncond: f64,
    pub weighting: LossWeighting,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 64, learning_rate: 1e-3, p_uncond: 0.1, weighting: LossWeighting::Unit, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p_uncond) {
            return Err(Error::domain(format!("p_uncond {} outside [0, 1)", self.p_uncond)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::domain("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch size must be positive"));
        }
        Ok(())
    }
}

/// One normalized window with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingItem {
    pub values: Vec<f64>,
    pub condition: Condition,
}

impl TrainingItem {
    pub fn new(values: Vec<f64>, condition: Condition) -> Self {
        Self { values, condition }
    }
}

/// The random quantities of one training example.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub t: usize,
    pub eps: Vec<f64>,
    pub x_t: Vec<f64>,
    /// Condition after dropout.
    pub condition: Condition,
    pub dropped: bool,
}

/// Draws step, noise and dropout for every item, in item order.
pub fn draw_noise<R: Rng + ?Sized>(
    batch: &[TrainingItem],
    schedule: &NoiseSchedule,
    rng: &mut R,
    p_uncond: f64,
) -> Result<Vec<NoiseDraw>> {
    batch
        .iter()
        .map(|item| {
            let t = schedule.sample_step(rng);
            let eps = normal_vec(rng, item.values.len());
            let x_t = forward_perturb(&item.values, t, &eps, schedule)?;
            let dropped = rng.gen::<f64>() < p_uncond;
            let condition = if dropped { Condition::Null } else { item.condition };
            Ok(NoiseDraw { t, eps, x_t, condition, dropped })
        })
        .collect()
}

/// `(1/B) Σ w_t ‖ε̂(x_t, t, c) − ε‖²` for any ε model, given fixed draws.
pub fn dsm_objective<M: EpsModel + ?Sized>(
    model: &M,
    draws: &[NoiseDraw],
    schedule: &NoiseSchedule,
    weighting: LossWeighting,
) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::Empty("training batch".into()));
    }
    let mut total = 0.0;
    for d in draws {
        let pred = model.predict(&d.x_t, d.t, &d.condition)?;
        let sq: f64 = pred.iter().zip(&d.eps).map(|(p, e)| (p - e).powi(2)).sum();
        total += weighting.weight(schedule, d.t) * sq;
    }
    Ok(total / draws.len() as f64)
}

#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// How many conditions were replaced by `Null`.
    pub dropped: usize,
}

/// Loss and its exact gradient for fixed draws.
pub fn dsm_loss_with_draws(
    params: &ScoreNetworkParams,
    draws: &[NoiseDraw],
    schedule: &NoiseSchedule,
    weighting: LossWeighting,
) -> Result<LossEval> {
    if draws.is_empty() {
        return Err(Error::Empty("training batch".into()));
    }
    let scale = 1.0 / draws.len() as f64;
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for d in draws {
        check_len(params.config().window, d.x_t.len())?;
        let w = weighting.weight(schedule, d.t);
        let mut sq = 0.0;
        params.backprop(&d.x_t, d.t, &d.condition, &mut grad, |pred| {
            pred.iter()
                .zip(&d.eps)
                .map(|(p, e)| {
                    let r = p - e;
                    sq += r * r;
                    2.0 * w * scale * r
                })
                .collect()
        })?;
        loss += w * sq * scale;
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let dropped = draws.iter().filter(|d| d.dropped).count();
    Ok(LossEval { loss, grad, dropped })
}

/// Draws noise for the batch and evaluates loss and gradient.
pub fn dsm_loss<R: Rng + ?Sized>(
    params: &ScoreNetworkParams,
    batch: &[TrainingItem],
    schedule: &NoiseSchedule,
    rng: &mut R,
    weighting: LossWeighting,
    p_uncond: f64,
) -> Result<LossEval> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch".into()));
    }
    let draws = draw_noise(batch, schedule, rng, p_uncond)?;
    dsm_loss_with_draws(params, &draws, schedule, weighting)
}

/// Adaptive moment estimation.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ScoreNetworkParams,
    /// Mean per-item loss of every epoch.
    pub epoch_losses: Vec<f64>,
    pub dropped: usize,
    pub draws: usize,
}

/// Runs `config.epochs` passes of shuffled minibatch training.
pub fn train(
    initial: ScoreNetworkParams,
    dataset: &[TrainingItem],
    schedule: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let window = initial.config().window;
    for item in dataset {
        check_len(window, item.values.len())?;
        item.condition.validate(initial.config().industries)?;
    }
    let mut params = initial;
    let mut rng = seeded(config.seed);
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let (mut dropped, mut draws) = (0, 0);
    let mut batch = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| dataset[i].clone()));
            let eval = dsm_loss(&params, &batch, schedule, &mut rng, config.weighting, config.p_uncond)
                .map_err(|e| match e {
                    Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}: {msg}")),
                    other => other,
                })?;
            total += eval.loss * batch.len() as f64;
            dropped += eval.dropped;
            draws += batch.len();
            adam.update(params.values_mut(), &eval.grad);
        }
        let mean = total / dataset.len() as f64;
        if !mean.is_finite() || params.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("training diverged at epoch {epoch}")));
        }
        info!("epoch {epoch}: loss {mean:.6}");
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome { params, epoch_losses, dropped, draws })
}
