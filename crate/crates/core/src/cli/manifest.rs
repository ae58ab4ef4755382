use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::train::TrainConfig;
use crate::{Error, Result};

/// `git describe` output captured at build time, or the package version.
pub(crate) const VERSION: &str = match option_env!("MICROSPLAT_GIT_DESCRIBE") {
    Some(v) => v,
    None => concat!("v", env!("CARGO_PKG_VERSION")),
};

pub fn version_string() -> &'static str {
    VERSION
}

/// Written to the output directory before any work starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub threads: usize,
    pub args: Vec<String>,
    pub inputs: BTreeMap<String, String>,
    /// Fully resolved configuration, every default materialized.
    pub config: Option<TrainConfig>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)
            .map_err(|e| Error::io(&path, e))?;
        if let Some(cfg) = &self.config {
            let path = dir.join("config.json");
            std::fs::write(&path, cfg.to_json()?).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
