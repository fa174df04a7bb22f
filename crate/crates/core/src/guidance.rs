//! Classifier-free guidance composition for instruction-driven editing, with an optional
//! binary mask gating the text-guidance term.

use crate::types::{MaskBuffer, ValidationError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GuidanceError {
    #[error("latent shape mismatch: {left:?} vs {right:?}")]
    Shape { left: Vec<usize>, right: Vec<usize> },
    #[error("latent tensor data has {actual} entries, shape {shape:?} needs {expected}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("latent tensor needs at least two spatial dimensions to apply a mask, shape is {0:?}")]
    NoSpatialDims(Vec<usize>),
    #[error("mask {mask_h}x{mask_w} does not match latent spatial size {latent_h}x{latent_w}")]
    MaskBroadcast {
        mask_h: usize,
        mask_w: usize,
        latent_h: usize,
        latent_w: usize,
    },
    #[error("guidance scales must be finite and non-negative (s_image = {s_image}, s_text = {s_text})")]
    Scales { s_image: f64, s_text: f64 },
    #[error("latent tensor contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

/// Dense tensor; the last two shape entries are the spatial `(height, width)` axes.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl LatentTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, GuidanceError> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || data.len() != expected {
            return Err(GuidanceError::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(GuidanceError::NonFinite(i));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Result<Self, GuidanceError> {
        let len = shape.iter().product();
        Self::new(shape, vec![value; len])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// The three noise predictions: unconditional, image-only, and image + text.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTriple {
    pub eps_uncond: LatentTensor,
    pub eps_image: LatentTensor,
    pub eps_full: LatentTensor,
}

impl NoiseTriple {
    pub fn new(
        eps_uncond: LatentTensor,
        eps_image: LatentTensor,
        eps_full: LatentTensor,
    ) -> Result<Self, GuidanceError> {
        for other in [&eps_image, &eps_full] {
            if other.shape != eps_uncond.shape {
                return Err(GuidanceError::Shape {
                    left: eps_uncond.shape.clone(),
                    right: other.shape.clone(),
                });
            }
        }
        Ok(Self {
            eps_uncond,
            eps_image,
            eps_full,
        })
    }

    fn check(&self) -> Result<(), GuidanceError> {
        for other in [&self.eps_image, &self.eps_full] {
            if other.shape != self.eps_uncond.shape {
                return Err(GuidanceError::Shape {
                    left: self.eps_uncond.shape.clone(),
                    right: other.shape.clone(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceParams {
    pub s_image: f64,
    pub s_text: f64,
}

impl Default for GuidanceParams {
    fn default() -> Self {
        Self {
            s_image: 1.5,
            s_text: 7.5,
        }
    }
}

impl GuidanceParams {
    pub fn new(s_image: f64, s_text: f64) -> Result<Self, GuidanceError> {
        let g = Self { s_image, s_text };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GuidanceError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.s_image) && ok(self.s_text) {
            Ok(())
        } else {
            Err(GuidanceError::Scales {
                s_image: self.s_image,
                s_text: self.s_text,
            })
        }
    }
}

/// Which denoising steps receive the masked prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSchedule {
    /// Gate the text term at every step.
    #[default]
    EveryStep,
    /// Gate only the first step; later steps use the unmasked prediction.
    FirstStep,
}

impl MaskSchedule {
    pub fn applies_at(self, step: usize) -> bool {
        match self {
            MaskSchedule::EveryStep => true,
            MaskSchedule::FirstStep => step == 0,
        }
    }
}

fn compose_with(
    t: &NoiseTriple,
    g: GuidanceParams,
    gate: impl Fn(usize) -> f64,
) -> Result<LatentTensor, GuidanceError> {
    t.check()?;
    g.validate()?;
    let data = t
        .eps_uncond
        .data
        .iter()
        .zip(&t.eps_image.data)
        .zip(&t.eps_full.data)
        .enumerate()
        .map(|(i, ((&u, &img), &full))| {
            // Expanded per-prediction weights; exact at s_I = s_T = 1 (returns `full`) and
            // at zero scales (returns `u`).
            let text = g.s_text * gate(i);
            (1.0 - g.s_image) * u + (g.s_image - text) * img + text * full
        })
        .collect();
    LatentTensor::new(t.eps_uncond.shape.clone(), data)
}

/// `u + s_I (i − u) + s_T (f − i)`.
pub fn compose_unmasked(t: &NoiseTriple, g: GuidanceParams) -> Result<LatentTensor, GuidanceError> {
    compose_with(t, g, |_| 1.0)
}

/// `u + s_I (i − u) + s_T (f − i) ⊙ M`; one mask value per spatial position, shared by all
/// leading (channel/batch) indices.
pub fn compose_masked(
    t: &NoiseTriple,
    g: GuidanceParams,
    mask: &MaskBuffer,
) -> Result<LatentTensor, GuidanceError> {
    t.check()?;
    mask.ensure_binary()?;
    let shape = t.eps_uncond.shape();
    if shape.len() < 2 {
        return Err(GuidanceError::NoSpatialDims(shape.to_vec()));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if mask.height() != h || mask.width() != w {
        return Err(GuidanceError::MaskBroadcast {
            mask_h: mask.height(),
            mask_w: mask.width(),
            latent_h: h,
            latent_w: w,
        });
    }
    let plane = h * w;
    let values = mask.as_slice();
    compose_with(t, g, |i| values[i % plane])
}

/// Prediction for one denoising step under a mask schedule.
pub fn compose_for_step(
    t: &NoiseTriple,
    g: GuidanceParams,
    mask: &MaskBuffer,
    schedule: MaskSchedule,
    step: usize,
) -> Result<LatentTensor, GuidanceError> {
    if schedule.applies_at(step) {
        compose_masked(t, g, mask)
    } else {
        compose_unmasked(t, g)
    }
}
