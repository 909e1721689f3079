//! Run manifest: the full resolved configuration, seeds, and dataset
//! fingerprint, written before training starts and finalized after. It
//! carries everything needed to re-run bit-identically.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::data::ContinualDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub dataset_fingerprint: String,
    pub tasks: usize,
    pub finalized: bool,
    pub total_seconds: Option<f64>,
    pub config: RunConfig,
    /// Free-form annotations (sweep axes, run labels).
    pub extra: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(config: &RunConfig, dataset: &ContinualDataset) -> Self {
        RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            dataset_fingerprint: format!("{:016x}", dataset.fingerprint()),
            tasks: dataset.task_count(),
            finalized: false,
            total_seconds: None,
            config: config.clone(),
            extra: BTreeMap::new(),
        }
    }

    pub fn finalize(&mut self, total_seconds: f64) {
        self.finalized = true;
        self.total_seconds = Some(total_seconds);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("manifest parse: {e}")))
    }
}
