//! Output directories and the `run.json` manifest that lists every file in them.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use kldpg_core::digest::sha256_hex;

use crate::CliError;

pub const MANIFEST_NAME: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<Artifact>,
    pub artifacts: Vec<Artifact>,
    pub wall_clock_secs: f64,
    /// Subcommand-specific facts such as swap counts or the base compilability rate.
    pub details: serde_json::Value,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<RunManifest, CliError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }
}

pub struct OutputDir {
    root: PathBuf,
    artifacts: Vec<Artifact>,
}

impl OutputDir {
    /// Creates `root`. An existing nonempty directory is an error unless `force`,
    /// in which case it is emptied first.
    pub fn create(root: &Path, force: bool) -> Result<OutputDir, CliError> {
        if root.exists() {
            let nonempty = fs::read_dir(root)?.next().is_some();
            if nonempty && !force {
                return Err(CliError::Config(format!(
                    "{} is not empty; pass --force to overwrite",
                    root.display()
                )));
            }
            if nonempty {
                fs::remove_dir_all(root)?;
            }
        }
        fs::create_dir_all(root)?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.root.join(name);
        fs::write(&path, bytes)?;
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    /// Records a file some other writer already put in the directory.
    pub fn adopt(&mut self, name: &str) -> Result<(), CliError> {
        let bytes = fs::read(self.root.join(name))?;
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn finish(mut self, mut manifest: RunManifest) -> Result<RunManifest, CliError> {
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        manifest.artifacts = self.artifacts;
        let mut json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        json.push('\n');
        fs::write(self.root.join(MANIFEST_NAME), json)?;
        Ok(manifest)
    }
}

/// Digests an input file and, when a `run.json` next to it lists the file,
/// checks the digest recorded there.
pub fn check_input(path: &Path) -> Result<Artifact, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let sha256 = sha256_hex(&bytes);
    let dir = path.parent().unwrap_or(Path::new("."));
    let manifest_path = dir.join(MANIFEST_NAME);
    if manifest_path.is_file() {
        let manifest = RunManifest::load(&manifest_path)?;
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        if let Some(recorded) = manifest.artifacts.iter().find(|a| a.path == name) {
            if recorded.sha256 != sha256 {
                return Err(CliError::Runtime(format!(
                    "{} does not match the digest in {}",
                    path.display(),
                    manifest_path.display()
                )));
            }
        }
    }
    Ok(Artifact {
        path: path.display().to_string(),
        sha256,
    })
}
