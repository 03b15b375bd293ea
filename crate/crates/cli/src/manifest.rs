//! Run manifest: every emitted file with its hash, per stage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use taskspace::rng::sha256_hex;

use crate::layout::Layout;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub artifacts: Vec<Artifact>,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub tool_version: String,
    pub seed: u64,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn load_or_new(layout: &Layout, config_hash: &str, seed: u64) -> Result<Self, CliError> {
        let fresh = || Self {
            config_hash: config_hash.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            stages: BTreeMap::new(),
        };
        match std::fs::read(layout.manifest()) {
            Ok(bytes) => {
                let m: Self = serde_json::from_slice(&bytes)?;
                if m.config_hash != config_hash {
                    log::warn!("config changed since the last run; earlier stage records are dropped");
                    return Ok(fresh());
                }
                Ok(m)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(fresh()),
            Err(e) => Err(e.into()),
        }
    }

    /// Hashes `paths` and records them under `stage`, replacing any
    /// earlier record of that stage.
    pub fn record(
        &mut self,
        layout: &Layout,
        stage: &str,
        paths: &[PathBuf],
        seconds: f64,
        notes: Vec<String>,
    ) -> Result<(), CliError> {
        let mut artifacts = Vec::with_capacity(paths.len());
        for p in paths {
            artifacts.push(artifact(layout, p)?);
        }
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        self.stages.insert(
            stage.to_string(),
            StageRecord {
                artifacts,
                seconds,
                notes,
            },
        );
        Ok(())
    }

    pub fn save(&self, layout: &Layout) -> Result<(), CliError> {
        std::fs::create_dir_all(&layout.root)?;
        std::fs::write(layout.manifest(), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

fn artifact(layout: &Layout, path: &Path) -> Result<Artifact, CliError> {
    let bytes = std::fs::read(path)?;
    Ok(Artifact {
        path: layout.relative(path),
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    })
}

/// Every regular file below `dir`, sorted.
pub fn files_under(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}
