//! Run manifests: everything needed to repeat a command bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::{EvalSettings, ToySettings, TrainSettings};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(InputDigest { path: path.to_path_buf(), sha256: sha256_file(path)? })
    }
}

/// Resolved settings of one command, defaults filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Settings {
    Train(TrainSettings),
    Eval(EvalSettings),
    GenToy(ToySettings),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub seed: u64,
    pub settings: Settings,
    pub inputs: Vec<InputDigest>,
}

impl RunManifest {
    pub fn new(seed: u64, settings: Settings, inputs: &[&Path]) -> Result<Self> {
        let inputs = inputs.iter().map(|p| InputDigest::of(p)).collect::<Result<_>>()?;
        Ok(RunManifest { toolkit_version: env!("CARGO_PKG_VERSION").to_string(), seed, settings, inputs })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(FILE_NAME);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("{} is not a run manifest", path.display()))
    }

    /// Fails if any input changed since the manifest was written.
    pub fn verify_inputs(&self) -> Result<()> {
        for input in &self.inputs {
            let now = sha256_file(&input.path)?;
            if now != input.sha256 {
                bail!("{} changed since the run (sha256 {} now {})", input.path.display(), input.sha256, now);
            }
        }
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
