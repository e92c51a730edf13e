//! JSON checkpoint: version tag, network shape header, schedule, and one
//! row-major array per named tensor.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{NetConfig, ScoreNetworkParams};
use crate::error::{Error, Result};
use crate::schedules::{NoiseSchedule, ScheduleFile};

pub const CHECKPOINT_FORMAT: &str = "stockdiff-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub network: NetConfig,
    pub schedule: ScheduleFile,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn new(params: &ScoreNetworkParams, schedule: &NoiseSchedule, metadata: BTreeMap<String, String>) -> Self {
        let tensors = params
            .tensors()
            .iter()
            .map(|spec| TensorRecord {
                name: spec.name.clone(),
                shape: spec.shape.clone(),
                values: params.values()[spec.offset..spec.offset + spec.len()].to_vec(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            network: params.config().clone(),
            schedule: schedule.to_file(),
            metadata,
            tensors,
        }
    }

    /// Rebuilds parameters and schedule, checking every tensor against the
    /// layout implied by the network header.
    pub fn restore(&self) -> Result<(ScoreNetworkParams, NoiseSchedule)> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::data(format!("unknown checkpoint format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::data(format!("unsupported checkpoint version {}", self.version)));
        }
        let mut params = ScoreNetworkParams::zeros(self.network.clone())?;
        let specs = params.tensors().to_vec();
        if specs.len() != self.tensors.len() {
            return Err(Error::data(format!(
                "checkpoint holds {} tensors, network expects {}",
                self.tensors.len(),
                specs.len()
            )));
        }
        for (spec, rec) in specs.iter().zip(&self.tensors) {
            if spec.name != rec.name || spec.shape != rec.shape || rec.values.len() != spec.len() {
                return Err(Error::data(format!("tensor {} does not match network layout", rec.name)));
            }
            params.values_mut()[spec.offset..spec.offset + spec.len()].copy_from_slice(&rec.values);
        }
        let params = ScoreNetworkParams::from_values(self.network.clone(), params.values().to_vec())?;
        let schedule = NoiseSchedule::from_file(self.schedule.clone())?;
        Ok((params, schedule))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
