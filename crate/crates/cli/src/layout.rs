//! Where every artifact lives under the output directory.

use std::path::{Path, PathBuf};

use crate::CliError;

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("run_manifest.json")
    }

    pub fn suite(&self) -> PathBuf {
        self.root.join("suite")
    }

    pub fn pretrain(&self) -> PathBuf {
        self.root.join("pretrain")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.pretrain().join("checkpoints")
    }

    pub fn checkpoint(&self, epoch: usize) -> PathBuf {
        self.checkpoints().join(format!("epoch_{epoch:03}.ckpt"))
    }

    pub fn loss_csv(&self) -> PathBuf {
        self.pretrain().join("loss.csv")
    }

    pub fn probe(&self, epoch: usize) -> PathBuf {
        self.root.join("probe").join(format!("epoch_{epoch:03}"))
    }

    pub fn analysis(&self) -> PathBuf {
        self.root.join("analysis")
    }

    pub fn analysis_epoch(&self, epoch: usize) -> PathBuf {
        self.analysis().join(format!("epoch_{epoch:03}"))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.md")
    }

    /// Epochs with a saved checkpoint, ascending.
    pub fn checkpoint_epochs(&self) -> Result<Vec<usize>, CliError> {
        epochs_in(&self.checkpoints(), "epoch_", ".ckpt")
    }

    /// Epochs with a gradient probe, ascending.
    pub fn probed_epochs(&self) -> Result<Vec<usize>, CliError> {
        let dir = self.root.join("probe");
        let mut out = epochs_in(&dir, "epoch_", "")?;
        out.retain(|&e| self.probe(e).join("gradients.json").is_file());
        Ok(out)
    }

    /// Path relative to the root, with `/` separators, for manifests.
    pub fn relative(&self, path: &Path) -> String {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        rel.components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/")
    }
}

fn epochs_in(dir: &Path, prefix: &str, suffix: &str) -> Result<Vec<usize>, CliError> {
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out: Vec<usize> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.strip_prefix(prefix)?.strip_suffix(suffix)?.parse().ok()
        })
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// Fails with the missing-artifact error when `path` does not exist.
pub fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact(path.to_path_buf()))
    }
}
