//! The machine-readable run manifest written by every subcommand.

use std::path::Path;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use arz_control::Result;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    sha256_hex(config.to_toml().as_bytes())
}

/// Write `summary.json` in the output directory.
pub fn write_summary(
    config: &ExperimentConfig,
    command: &str,
    outputs: &[&Path],
    metrics: Value,
    warnings: &[String],
) -> Result<()> {
    let summary = json!({
        "command": command,
        "seed": config.seed,
        "config_sha256": config_hash(config),
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "metrics": metrics,
        "warnings": warnings,
    });
    let path = config.out_dir.join("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary).expect("valid json"))?;
    Ok(())
}
