//! Run manifests: what ran, with which settings, on which files.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    fn of(path: &Path) -> Result<FileDigest> {
        let data = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
        Ok(FileDigest {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&data)),
            bytes: data.len() as u64,
        })
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    /// Every resolved flag value, defaults included.
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    pub fn new(subcommand: &str, args: &impl Serialize, seed: Option<u64>) -> Result<Self> {
        Ok(Self {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: serde_json::to_value(args)?,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.retain(|d| d.path != path);
        self.outputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn outputs_is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// Writes the manifest to `explicit`, or to `default` when not given.
    pub fn write(&self, explicit: Option<&Path>, default: &Path) -> Result<()> {
        let path = explicit.unwrap_or(default);
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
        log::info!("manifest written to {}", path.display());
        Ok(())
    }
}
