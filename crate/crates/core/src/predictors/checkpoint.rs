use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cost::CostPredictor;
use super::gp::PerfPredictor;
use crate::error::{Error, Result};
use crate::meta_features::MetaStats;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Datasets whose curves the predictors were trained on.
    pub dataset_ids: Vec<String>,
    pub records: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub final_perf_nll: f64,
    pub final_cost_mse: f64,
}

/// Meta-trained predictors plus everything needed to use them on a new
/// dataset. Stored as a single JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub perf: PerfPredictor,
    pub cost: CostPredictor,
    pub meta_stats: MetaStats,
    pub metadata: CheckpointMeta,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Checkpoint = serde_json::from_str(&text)?;
        if c.format_version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion(c.format_version));
        }
        Ok(c)
    }

    pub fn trained_on(&self, dataset_id: &str) -> bool {
        self.metadata.dataset_ids.iter().any(|d| d == dataset_id)
    }
}
