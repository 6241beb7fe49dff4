use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::optim::AdamState;
use crate::nn::params::{NamedTensor, ParamStore};

pub const CHECKPOINT_FORMAT: &str = "cxr-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned container of named parameter tensors, optimizer state and the
/// model configuration `C` needed to rebuild the architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<C> {
    pub format: String,
    pub version: u32,
    /// Model family, e.g. `"text2box"` or `"classifier"`.
    pub kind: String,
    pub config: C,
    pub params: Vec<NamedTensor>,
    pub optimizer: Option<AdamState>,
}

impl<C> Checkpoint<C> {
    pub fn new(kind: &str, config: C, store: &ParamStore, optimizer: Option<AdamState>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: kind.into(),
            config,
            params: store.entries().to_vec(),
            optimizer,
        }
    }

    /// Checks the header fields before the payload is used.
    pub fn check_header(&self, kind: &str) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(alloc::format!("unknown format `{}`", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(alloc::format!(
                "unsupported version {}",
                self.version
            )));
        }
        if self.kind != kind {
            return Err(Error::Checkpoint(alloc::format!(
                "expected a `{}` checkpoint, found `{}`",
                kind,
                self.kind
            )));
        }
        Ok(())
    }
}
