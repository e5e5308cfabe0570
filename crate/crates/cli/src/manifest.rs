use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context as _, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

/// Record of one run: what was asked, what was read and what was written.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    /// SHA-256 over the command, the config and every input's digest.
    pub input_hash: String,
    pub wall_clock_secs: f64,
    pub version: &'static str,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn artifact(path: &Path) -> Result<Artifact> {
    Ok(Artifact { path: path.display().to_string(), sha256: sha256_file(path)? })
}

pub struct Run {
    command: String,
    config: Value,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    start: Instant,
}

impl Run {
    pub fn start(command: &str, config: &impl Serialize, seed: Option<u64>, inputs: &[&Path]) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            seed,
            inputs: inputs.iter().map(|p| p.to_path_buf()).collect(),
            start: Instant::now(),
        })
    }

    /// Writes the manifest next to `primary` as `<primary>.manifest.json`.
    pub fn finish(self, primary: &Path, outputs: &[&Path]) -> Result<PathBuf> {
        let inputs: Vec<Artifact> = self.inputs.iter().map(|p| artifact(p)).collect::<Result<_>>()?;
        let outputs: Vec<Artifact> = outputs.iter().map(|p| artifact(p)).collect::<Result<_>>()?;
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        h.update(serde_json::to_vec(&self.config)?);
        for a in &inputs {
            h.update(a.sha256.as_bytes());
        }
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            seed: self.seed,
            inputs,
            outputs,
            input_hash: hex::encode(h.finalize()),
            wall_clock_secs: self.start.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION"),
        };
        let path = sibling(primary, "manifest.json");
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// `<path>.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}
