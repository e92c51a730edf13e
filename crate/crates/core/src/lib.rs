//! Conditional score-based diffusion for synthesizing financial time-series
//! windows.
//!
//! The crate is organized along the pipeline:
//!
//! * [`schedules`]: discrete noise schedules (variance-preserving β ladder and
//!   the variance-exploding σ ladder) with closed-form perturbation quantities.
//! * [`scorenet`]: the conditional ε-prediction network, condition encoding,
//!   denoising score matching loss with hand-written reverse-mode gradients,
//!   and the trainer.
//! * [`samplers`]: classifier-free guidance, DDPM/DDIM reverse steps,
//!   annealed Langevin dynamics and the full guided sampling loop.
//! * [`regularizers`]: windowed nonlocal total variation smoothing and the
//!   DFT band-pass loss used as in-loop corrections.
//! * [`dataio`]: close-price ingestion, suspension repair and windowing.
//! * [`eval`]: return metrics, IC / Rank IC and a top-k/drop-k backtest.
//! * [`oracles`]: independent reference implementations used by tests.

pub mod dataio;
pub mod error;
pub mod eval;
pub mod oracles;
pub mod regularizers;
pub mod rng;
pub mod samplers;
pub mod schedules;
pub mod scorenet;

pub use error::{Error, Result};
pub use schedules::{NoiseSchedule, SigmaLadder};
pub use scorenet::{Condition, ConditionVector, NetConfig, ScoreNetworkParams, TrainConfig};
