use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions and seed of the toy predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub dim: usize,
    pub state_tokens: usize,
    pub heads: usize,
    pub blocks: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { height: 32, width: 32, patch: 8, dim: 32, state_tokens: 16, heads: 4, blocks: 2, seed: 0 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.height, self.width, self.patch, self.dim, self.state_tokens, self.heads, self.blocks];
        if dims.iter().any(|d| *d == 0) {
            return Err(Error::InvalidConfig(format!("all model dimensions must be >= 1: {self:?}")));
        }
        if self.height % self.patch != 0 || self.width % self.patch != 0 {
            return Err(Error::InvalidConfig(format!(
                "image {}x{} is not divisible by patch size {}",
                self.height, self.width, self.patch
            )));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "token dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn patch_rows(&self) -> usize {
        self.height / self.patch
    }

    pub fn patch_cols(&self) -> usize {
        self.width / self.patch
    }

    /// Number of image tokens.
    pub fn tokens(&self) -> usize {
        self.patch_rows() * self.patch_cols()
    }

    /// Values per flattened RGB patch.
    pub fn patch_values(&self) -> usize {
        self.patch * self.patch * 3
    }
}
