//! Versioned JSON checkpoints of a [`Trainer`]. Floats are written in
//! shortest round-trip form and parsed exactly, so save → load is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::Trainer;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub trainer: Trainer,
}

impl Checkpoint {
    pub fn new(trainer: Trainer) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            trainer,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: header.format_version,
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
