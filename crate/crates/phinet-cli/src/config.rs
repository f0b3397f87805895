//! Run configuration: one JSON document with a section per module, every
//! field optional and defaulted, unknown keys rejected.

use anyhow::Result;
use phinet_core::arch::NetworkSpec;
use phinet_core::phantom::PhantomSpec;
use phinet_core::train::TrainConfig;
use phinet_core::volume::PreprocessConfig;
use serde::Deserialize;
use std::fs;
use std::path::{Path, PathBuf};

use crate::fail;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    /// Base directory for outputs when a command's --out is relative.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: Option<NetworkSpec>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub preprocess: Option<PreprocessConfig>,
    #[serde(default)]
    pub phantom: Option<PhantomSpec>,
    #[serde(default)]
    pub paths: Option<PathsSection>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| fail::usage(format!("config {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| fail::usage(format!("config {}: {e}", path.display())))?;
        if let Some(pp) = &config.preprocess {
            pp.validate().map_err(fail::from_core)?;
        }
        if let Some(ph) = &config.phantom {
            ph.validate().map_err(fail::from_core)?;
        }
        if let Some(tr) = &config.train {
            tr.validate().map_err(fail::from_core)?;
        }
        Ok(config)
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        self.preprocess.clone().unwrap_or_default()
    }

    pub fn phantom_spec(&self) -> PhantomSpec {
        self.phantom.clone().unwrap_or_default()
    }

    /// Commands that consume randomness demand an explicit seed, from the
    /// --seed flag or the config's seed field (flag wins).
    pub fn require_seed(&self, flag: Option<u64>) -> Result<u64> {
        flag.or(self.seed)
            .ok_or_else(|| fail::usage("a seed is required: pass --seed or set \"seed\" in the config"))
    }

    /// Resolves an output path against paths.out_dir when one is set.
    pub fn resolve_out(&self, out: &Path) -> PathBuf {
        match self.paths.as_ref().and_then(|p| p.out_dir.as_ref()) {
            Some(base) if out.is_relative() => base.join(out),
            _ => out.to_path_buf(),
        }
    }
}
