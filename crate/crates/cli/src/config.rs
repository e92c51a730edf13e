//! Run configuration: a flat JSON object with dotted keys layered over the
//! defaults, e.g. `{"train.epochs": 5, "sampler.guidance": 3.0}`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use stockdiff::dataio::{IngestConfig, RepairConfig};
use stockdiff::regularizers::{AntvConfig, BandSpec};
use stockdiff::samplers::{SamplerConfig, SamplerMode, SigmaMode, SubsequenceStrategy};
use stockdiff::scorenet::{LossWeighting, NetConfig, TrainConfig, INDUSTRY_COUNT};
use stockdiff::NoiseSchedule;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub input: Option<PathBuf>,
    pub denylist: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub panel: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataParams {
    pub window: usize,
    pub step: usize,
    pub ipo_days: usize,
    pub train_fraction: f64,
    pub max_interp_gap: usize,
    pub max_long_gaps: usize,
    pub max_gap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetParams {
    pub width: usize,
    pub blocks: usize,
    pub time_dim: usize,
    pub industries: usize,
    pub embed_dim: usize,
    pub cond_hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub p_uncond: f64,
    pub weighting: LossWeighting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Emit {
    Mean,
    Raw,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerParams {
    pub mode: SamplerMode,
    pub steps: usize,
    pub strategy: SubsequenceStrategy,
    /// DDIM noise as a multiple of the posterior standard deviation.
    pub eta: f64,
    pub guidance: f64,
    pub samples: usize,
    pub antv: AntvConfig,
    pub bp_rate: f64,
    pub band: BandSpec,
    /// Diffusion step the source window is pushed to in transfer mode.
    pub transfer_step: usize,
    pub emit: Emit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalParams {
    pub k: usize,
    pub lookback: usize,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub paths: Paths,
    pub schedule: ScheduleParams,
    pub data: DataParams,
    pub net: NetParams,
    pub train: TrainParams,
    pub sampler: SamplerParams,
    pub eval: EvalParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        let repair = RepairConfig::default();
        let ingest = IngestConfig::default();
        let net = NetConfig::default();
        let train = TrainConfig::default();
        let sampler = SamplerConfig::default();
        Self {
            seed: None,
            paths: Paths { input: None, denylist: None, store: None, checkpoint: None, panel: None, out: "out".into() },
            schedule: ScheduleParams { steps: 400, beta_start: 1e-4, beta_end: 0.02 },
            data: DataParams {
                window: ingest.window,
                step: ingest.step,
                ipo_days: ingest.ipo_days,
                train_fraction: ingest.train_fraction,
                max_interp_gap: repair.max_interp_gap,
                max_long_gaps: repair.max_long_gaps,
                max_gap: repair.max_gap,
            },
            net: NetParams {
                width: net.width,
                blocks: net.blocks,
                time_dim: net.time_dim,
                industries: INDUSTRY_COUNT,
                embed_dim: net.embed_dim,
                cond_hidden: net.cond_hidden,
            },
            train: TrainParams {
                epochs: train.epochs,
                batch_size: train.batch_size,
                learning_rate: train.learning_rate,
                p_uncond: train.p_uncond,
                weighting: train.weighting,
            },
            sampler: SamplerParams {
                mode: sampler.mode,
                steps: sampler.steps,
                strategy: sampler.strategy,
                eta: 0.0,
                guidance: sampler.guidance,
                samples: 8,
                antv: sampler.antv,
                bp_rate: sampler.bp_rate,
                band: sampler.band,
                transfer_step: 200,
                emit: Emit::Mean,
            },
            eval: EvalParams { k: 20, lookback: 5, horizon: 5 },
        }
    }
}

/// Nested JSON object to `{"a.b.c": leaf}`.
fn flatten(prefix: &str, value: &Value, out: &mut BTreeMap<String, Value>) {
    match value {
        Value::Object(map) if !map.is_empty() => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        _ => {
            out.insert(prefix.to_string(), value.clone());
        }
    }
}

fn set_dotted(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| CliError::Config(format!("config key {key:?} nests under a value")))?;
        if i + 1 == parts.len() {
            if !obj.contains_key(*part) {
                return Err(CliError::Config(format!("unknown config key {key:?}")));
            }
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.get_mut(*part).ok_or_else(|| CliError::Config(format!("unknown config key {key:?}")))?;
    }
    Ok(())
}

impl RunConfig {
    /// Defaults overlaid with the dotted keys of `flat`.
    pub fn from_flat(flat: &Map<String, Value>) -> Result<Self, CliError> {
        let mut root = serde_json::to_value(Self::default()).map_err(|e| CliError::Config(e.to_string()))?;
        for (key, value) in flat {
            set_dotted(&mut root, key, value.clone())?;
        }
        serde_json::from_value(root).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let value: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        match value {
            Value::Object(map) => Self::from_flat(&map),
            _ => Err(CliError::Config("config must be a JSON object".into())),
        }
    }

    pub fn flattened(&self) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        flatten("", &serde_json::to_value(self).expect("config serializes"), &mut out);
        out
    }

    /// SHA-256 of the flattened config, paths excluded so relocating a run
    /// does not change it.
    pub fn digest(&self) -> String {
        let mut flat = self.flattened();
        flat.retain(|k, _| !k.starts_with("paths."));
        let text = serde_json::to_string(&flat).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn require_seed(&self) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| CliError::Config("a seed is required (--seed or \"seed\" in the config)".into()))
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, CliError> {
        Ok(NoiseSchedule::linear(self.schedule.steps, self.schedule.beta_start, self.schedule.beta_end)?)
    }

    pub fn ingest(&self) -> IngestConfig {
        IngestConfig {
            window: self.data.window,
            step: self.data.step,
            ipo_days: self.data.ipo_days,
            train_fraction: self.data.train_fraction,
            repair: RepairConfig {
                max_interp_gap: self.data.max_interp_gap,
                max_long_gaps: self.data.max_long_gaps,
                max_gap: self.data.max_gap,
            },
        }
    }

    pub fn net(&self, window: usize) -> NetConfig {
        NetConfig {
            window,
            width: self.net.width,
            blocks: self.net.blocks,
            time_dim: self.net.time_dim,
            industries: self.net.industries,
            embed_dim: self.net.embed_dim,
            cond_hidden: self.net.cond_hidden,
        }
    }

    pub fn train(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            p_uncond: self.train.p_uncond,
            weighting: self.train.weighting,
            seed,
        }
    }

    pub fn sampler(&self, seed: u64) -> SamplerConfig {
        let s = &self.sampler;
        let sigma = if s.eta == 0.0 {
            SigmaMode::Zero
        } else if s.eta == 1.0 {
            SigmaMode::DdpmMatch
        } else {
            SigmaMode::Scaled(s.eta)
        };
        SamplerConfig {
            mode: s.mode,
            steps: s.steps,
            strategy: s.strategy,
            sigma,
            guidance: s.guidance,
            samples: s.samples,
            antv: s.antv,
            bp_rate: s.bp_rate,
            band: s.band,
            transfer: None,
            seed,
            ..SamplerConfig::default()
        }
    }
}
