//! Deterministic stand-in for a text encoder. Each prompt maps to a fixed pseudo-random
//! embedding; there is no semantic structure.

use crate::types::{Embedding, ValidationError, DEFAULT_CHANNELS, DEFAULT_TOKENS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncoderError {
    #[error("prompt must not be empty")]
    EmptyPrompt,
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StubEncoder {
    pub tokens: usize,
    pub channels: usize,
    pub seed: u64,
}

impl Default for StubEncoder {
    fn default() -> Self {
        Self {
            tokens: DEFAULT_TOKENS,
            channels: DEFAULT_CHANNELS,
            seed: 0,
        }
    }
}

impl StubEncoder {
    pub fn new(tokens: usize, channels: usize, seed: u64) -> Result<Self, EncoderError> {
        if tokens == 0 || channels == 0 {
            return Err(ValidationError::EmptyShape {
                what: "encoder",
                rows: tokens,
                cols: channels,
            }
            .into());
        }
        Ok(Self {
            tokens,
            channels,
            seed,
        })
    }

    /// Entries are i.i.d. normal with standard deviation `1 / sqrt(tokens * channels)`,
    /// so every embedding has norm close to 1 regardless of shape.
    pub fn encode(&self, prompt: &str) -> Result<Embedding, EncoderError> {
        if prompt.is_empty() {
            return Err(EncoderError::EmptyPrompt);
        }
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(prompt.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(key);

        let count = self.tokens * self.channels;
        let normal = Normal::new(0.0, 1.0 / (count as f64).sqrt()).expect("positive std dev");
        let data = (0..count).map(|_| normal.sample(&mut rng)).collect();
        Ok(Embedding::new(self.tokens, self.channels, data)?)
    }
}
