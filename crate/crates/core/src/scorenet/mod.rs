//! Conditional noise-prediction network and its denoising score matching
//! trainer.
//!
//! The network predicts the forward noise `ε` from `(x_t, t, c)`; the score
//! of the perturbed marginal is recovered as `−ε̂ / √(1 − ᾱ_t)`.

mod checkpoint;
mod condition;
mod network;
mod train;

pub use checkpoint::{Checkpoint, TensorRecord, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use condition::{Condition, ConditionVector, BOARD_SLOTS, INDUSTRY_COUNT};
pub use network::{time_embedding, NetConfig, ScoreNetworkParams, TensorSpec};
pub use train::{
    draw_noise, dsm_loss, dsm_loss_with_draws, dsm_objective, train, Adam, LossEval, LossWeighting, NoiseDraw,
    TrainConfig, TrainOutcome, TrainingItem,
};

use crate::error::Result;
use crate::schedules::NoiseSchedule;

/// Anything that predicts the forward noise of a perturbed window.
pub trait EpsModel {
    fn window(&self) -> usize;

    fn predict(&self, x: &[f64], t: usize, condition: &Condition) -> Result<Vec<f64>>;
}

impl EpsModel for ScoreNetworkParams {
    fn window(&self) -> usize {
        self.config().window
    }

    fn predict(&self, x: &[f64], t: usize, condition: &Condition) -> Result<Vec<f64>> {
        let c = self.encode_condition(condition)?;
        self.predict_eps(x, t, &c)
    }
}

/// Score implied by a noise prediction: `−ε̂ / √(1 − ᾱ_t)`.
pub fn implied_score(eps_hat: &[f64], t: usize, schedule: &NoiseSchedule) -> Vec<f64> {
    let s = (1.0 - schedule.alpha_bar(t)).sqrt();
    eps_hat.iter().map(|e| -e / s).collect()
}
