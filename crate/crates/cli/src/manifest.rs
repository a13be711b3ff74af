//! Per-run record of inputs and produced artifacts.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub artifacts: Vec<Artifact>,
    pub duration_secs: f64,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(
        command: &str,
        config_path: Option<&Path>,
        seed: u64,
        out_dir: &Path,
        files: &[PathBuf],
        duration: Duration,
    ) -> Result<Self, CliError> {
        let mut artifacts = Vec::with_capacity(files.len());
        for f in files {
            let rel = f.strip_prefix(out_dir).unwrap_or(f);
            artifacts.push(Artifact {
                path: rel.display().to_string(),
                sha256: sha256_file(f)?,
            });
        }
        Ok(RunManifest {
            command: command.to_string(),
            config_path: config_path.map(Path::to_path_buf),
            seed,
            out_dir: out_dir.to_path_buf(),
            artifacts,
            duration_secs: duration.as_secs_f64(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(facedit_core::error::parse_json(&text, &path.display().to_string())?)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    /// Artifacts whose current checksum differs from the recorded one.
    /// Paths resolve against `base`.
    pub fn mismatches(&self, base: &Path) -> Result<Vec<String>, CliError> {
        let mut bad = Vec::new();
        for a in &self.artifacts {
            if sha256_file(&base.join(&a.path))? != a.sha256 {
                bad.push(a.path.clone());
            }
        }
        Ok(bad)
    }
}
