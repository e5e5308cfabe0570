use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::attract_repel::ReferenceBank;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "sgg-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub params: ModelParams,
    pub bank: ReferenceBank,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ModelParams, bank: ReferenceBank) -> Self {
        Self { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, config, params, bank }
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let text = serde_json::to_string(ckpt)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Config(format!(
            "{} is a {} v{} file, expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}",
            path.display(),
            ckpt.format,
            ckpt.version
        )));
    }
    ckpt.config.validate()?;
    ckpt.params.validate()?;
    Ok(ckpt)
}
