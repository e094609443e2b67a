use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::packing::{END_OF_CHUNK, PAD};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding width.
    pub d: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// MLP hidden width is `mlp_ratio · d`.
    pub mlp_ratio: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub encoder: EncoderConfig,
    pub pad_id: u32,
    pub end_of_chunk_id: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 64,
            n_layers: 2,
            n_heads: 4,
            mlp_ratio: 4,
            vocab_size: 0,
            max_seq_len: 128,
            encoder: EncoderConfig::default(),
            pad_id: PAD,
            end_of_chunk_id: END_OF_CHUNK,
        }
    }
}

impl ModelConfig {
    pub fn tokens_per_image(&self) -> usize {
        self.encoder.tokens_per_image()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.d == 0 || self.n_layers == 0 || self.n_heads == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.d % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d = {} is not divisible by n_heads = {}",
                self.d, self.n_heads
            )));
        }
        if self.max_seq_len == 0 {
            return Err(Error::Config("max_seq_len must be positive".into()));
        }
        let n = self.vocab_size as u64;
        if self.pad_id as u64 >= n || self.end_of_chunk_id as u64 >= n {
            return Err(Error::Config("special token ids must be below vocab_size".into()));
        }
        if self.pad_id == self.end_of_chunk_id {
            return Err(Error::Config("special token ids must be distinct".into()));
        }
        Ok(())
    }
}
