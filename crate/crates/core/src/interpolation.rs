//! Linear interpolation between two prompt embeddings.

use crate::types::{Embedding, ValidationError};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InterpolationError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("a sweep needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
}

/// `(1 - alpha) * e1 + alpha * e2`, elementwise.
pub fn lerp(e1: &Embedding, e2: &Embedding, alpha: f64) -> Result<Embedding, InterpolationError> {
    e1.ensure_same_shape(e2)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ValidationError::AlphaOutOfRange(alpha).into());
    }
    let data = e1
        .as_slice()
        .iter()
        .zip(e2.as_slice())
        .map(|(&a, &b)| (1.0 - alpha) * a + alpha * b)
        .collect();
    Ok(Embedding::new(e1.tokens(), e1.channels(), data)?)
}

/// Interpolation weights `(i - 1) / (n - 1)` for `i = 1..=n`, endpoints included.
pub fn uniform_alphas(n: usize) -> Result<Vec<f64>, InterpolationError> {
    if n < 2 {
        return Err(InterpolationError::TooFewSamples(n));
    }
    let last = (n - 1) as f64;
    Ok((0..n).map(|i| i as f64 / last).collect())
}

/// A uniform sweep from `e1` to `e2`.
#[derive(Debug, Clone)]
pub struct InterpolationSweep {
    pub e1: Embedding,
    pub e2: Embedding,
    pub alphas: Vec<f64>,
}

impl InterpolationSweep {
    pub fn new(e1: Embedding, e2: Embedding, n: usize) -> Result<Self, InterpolationError> {
        e1.ensure_same_shape(&e2)?;
        let alphas = uniform_alphas(n)?;
        Ok(Self { e1, e2, alphas })
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn embedding_at(&self, index: usize) -> Result<Embedding, InterpolationError> {
        lerp(&self.e1, &self.e2, self.alphas[index])
    }

    pub fn materialize(&self) -> Result<Vec<(f64, Embedding)>, InterpolationError> {
        self.alphas
            .iter()
            .map(|&a| Ok((a, lerp(&self.e1, &self.e2, a)?)))
            .collect()
    }
}

/// The `n` pairs `(alpha_i, lerp(e1, e2, alpha_i))` of a uniform sweep.
pub fn uniform_sweep(
    e1: &Embedding,
    e2: &Embedding,
    n: usize,
) -> Result<Vec<(f64, Embedding)>, InterpolationError> {
    InterpolationSweep::new(e1.clone(), e2.clone(), n)?.materialize()
}
