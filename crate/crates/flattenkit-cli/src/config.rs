//! The JSON run-config file and flag/file/env resolution.
//!
//! Precedence for every setting: command-line flag, then config file,
//! then the `FLATTENKIT_SEED` environment variable (seed only), then the
//! built-in default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use flattenkit::Result;

/// Config-file mirror of the flatten plan flags.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlattenSection {
    pub kind: Option<String>,
    /// `RxC`.
    pub grid: Option<String>,
    pub nested_n: Option<usize>,
    pub seed: Option<u64>,
    pub transpose: Option<bool>,
}

/// Config-file mirror of the training flags.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub base_lr: Option<f64>,
    pub warmup_epochs: Option<usize>,
    pub weight_decay: Option<f32>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train_manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
}

/// The full config file. Every key is optional; flags override.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    /// `AxBxCxD`.
    pub views: Option<String>,
    #[serde(default)]
    pub flatten: FlattenSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub data: DataSection,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                serde_json::from_str(&text).map_err(|e| {
                    flattenkit::Error::Io(std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("config {}: {e}", path.display()),
                    ))
                })
            }
        }
    }
}

/// Seed resolution: flag, config, `FLATTENKIT_SEED`, then 1.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> u64 {
    flag.or(config)
        .or_else(|| {
            std::env::var("FLATTENKIT_SEED")
                .ok()
                .and_then(|v| v.trim().parse().ok())
        })
        .unwrap_or(1)
}
