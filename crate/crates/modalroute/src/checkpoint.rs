//! Trained router snapshots. A checkpoint only loads under the
//! configuration it was trained with.

use std::path::Path;

use modalroute_core::policies::PolicyParams;
use modalroute_core::training::ValueParams;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub seed: u64,
    /// Routing head plus the validation-tuned combiner weights.
    pub params: PolicyParams,
    pub value: ValueParams,
    /// Validation-selected fusion weight.
    pub alpha: f64,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        ck.params.validate()?;
        Ok(ck)
    }

    /// Loads and refuses a checkpoint written under a different config.
    pub fn load_for(path: &Path, config_hash: &str) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.config_hash != config_hash {
            return Err(Error::Config(format!(
                "{} was trained under config {}, current config is {config_hash}",
                path.display(),
                ck.config_hash
            )));
        }
        Ok(ck)
    }
}
