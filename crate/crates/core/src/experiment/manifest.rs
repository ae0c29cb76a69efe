//! Run manifests: the commit marker written after all artifacts exist.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, CoreResult};

use super::config::ExperimentConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub command: String,
    pub seeds: Vec<u64>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config.canonical_json().as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    /// Validates that every artifact exists under `out_dir`, then writes
    /// `manifest_<command>.json` as the final commit marker.
    pub fn write(
        out_dir: &Path,
        command: &str,
        config: &ExperimentConfig,
        artifacts: Vec<PathBuf>,
    ) -> CoreResult<Self> {
        let mut relative = Vec::with_capacity(artifacts.len());
        for artifact in &artifacts {
            let full = if artifact.is_absolute() {
                artifact.clone()
            } else {
                out_dir.join(artifact)
            };
            if !full.exists() {
                return Err(CoreError::Orchestration(format!(
                    "manifest refers to missing artifact {}",
                    full.display()
                )));
            }
            let rel = full
                .strip_prefix(out_dir)
                .unwrap_or(&full)
                .to_string_lossy()
                .into_owned();
            relative.push(rel);
        }
        relative.sort();
        let manifest = RunManifest {
            config_hash: config_hash(config),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seeds: config.seeds.clone(),
            artifacts: relative,
        };
        let path = out_dir.join(format!("manifest_{command}.json"));
        let json =
            serde_json::to_string_pretty(&manifest).map_err(|e| CoreError::Parse(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(manifest)
    }

    pub fn read(path: &Path) -> CoreResult<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| CoreError::Parse(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_config_sensitive() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig::default();
        assert_eq!(config_hash(&a), config_hash(&b));
        let mut c = ExperimentConfig::default();
        c.washout = 7;
        assert_ne!(config_hash(&a), config_hash(&c));
    }

    #[test]
    fn missing_artifacts_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig::default();
        let err = RunManifest::write(
            dir.path(),
            "generate",
            &config,
            vec![PathBuf::from("data/none.csv")],
        );
        assert!(matches!(err, Err(CoreError::Orchestration(_))));

        std::fs::create_dir_all(dir.path().join("data")).unwrap();
        std::fs::write(dir.path().join("data/ok.csv"), "t,x\n0,1\n").unwrap();
        let manifest = RunManifest::write(
            dir.path(),
            "generate",
            &config,
            vec![PathBuf::from("data/ok.csv")],
        )
        .unwrap();
        assert_eq!(manifest.artifacts, vec!["data/ok.csv".to_string()]);
        let back = RunManifest::read(&dir.path().join("manifest_generate.json")).unwrap();
        assert_eq!(back.config_hash, manifest.config_hash);
    }
}
