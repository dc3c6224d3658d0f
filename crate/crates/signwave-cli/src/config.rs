//! Run configuration files. Strictly validated: unknown keys anywhere are
//! an error, and parse failures report the offending field path.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use signwave::corpus::SyntheticConfig;
use signwave::train::TrainConfig;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Training manifest (JSON Lines); the vocabulary is built from it.
    pub manifest: PathBuf,
    /// Optional held-out manifest scored with greedy BLEU during training.
    #[serde(default)]
    pub val_manifest: Option<PathBuf>,
    /// Epochs between validation scoring passes.
    #[serde(default = "default_val_interval")]
    pub val_interval: usize,
    /// Output directory for the echoed config, log, and checkpoints.
    pub out_dir: PathBuf,
    pub train: TrainConfig,
}

fn default_val_interval() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthRunConfig {
    pub corpus: SyntheticConfig,
    pub n_sentences: usize,
}

/// Parses JSON with field-path error messages
/// (e.g. `train.learning_rate: invalid type`).
pub fn parse_strict<T: serde::de::DeserializeOwned>(bytes: &[u8], what: &str) -> Result<T> {
    let mut deserializer = serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(&mut deserializer)
        .with_context(|| format!("invalid {what} config"))
}

pub fn read_config<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<(T, Vec<u8>)> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("cannot read {what} config {}", path.display()))?;
    let parsed = parse_strict(&bytes, what)?;
    Ok((parsed, bytes))
}
