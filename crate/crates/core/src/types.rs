//! Shared domain types: embeddings, colors, images, masks and calibration samples.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default prompt-embedding shape produced by the text encoder.
pub const DEFAULT_TOKENS: usize = 77;
pub const DEFAULT_CHANNELS: usize = 768;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("{component} component {value} is outside 0..=255")]
    ComponentOutOfRange { component: char, value: i64 },
    #[error("{component} component {value} is outside [0, 1]")]
    UnitOutOfRange { component: char, value: f64 },
    #[error("{what}: expected {expected} values, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{what} must have positive dimensions, got {rows}x{cols}")]
    EmptyShape {
        what: &'static str,
        rows: usize,
        cols: usize,
    },
    #[error("{what} contains a non-finite value at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("pixel value {value} at index {index} is outside [0, 1]")]
    PixelOutOfRange { index: usize, value: f64 },
    #[error("dimension mismatch: image is {image_h}x{image_w}, mask is {mask_h}x{mask_w}")]
    DimensionMismatch {
        image_h: usize,
        image_w: usize,
        mask_h: usize,
        mask_w: usize,
    },
    #[error("mask is not binary: value {value} at index {index}")]
    NonBinaryMask { index: usize, value: f64 },
    #[error("embedding shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("alpha {0} is outside [0, 1]")]
    AlphaOutOfRange(f64),
}

/// A prompt embedding: `tokens x channels` reals, row-major (`t * channels + c`).
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    tokens: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Embedding {
    pub fn new(tokens: usize, channels: usize, data: Vec<f64>) -> Result<Self, ValidationError> {
        if tokens == 0 || channels == 0 {
            return Err(ValidationError::EmptyShape {
                what: "embedding",
                rows: tokens,
                cols: channels,
            });
        }
        if data.len() != tokens * channels {
            return Err(ValidationError::LengthMismatch {
                what: "embedding",
                expected: tokens * channels,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(ValidationError::NonFinite {
                what: "embedding",
                index,
            });
        }
        Ok(Self {
            tokens,
            channels,
            data,
        })
    }

    pub fn filled(tokens: usize, channels: usize, value: f64) -> Result<Self, ValidationError> {
        Self::new(tokens, channels, vec![value; tokens * channels])
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.tokens, self.channels)
    }

    /// Flattened dimension `tokens * channels`.
    pub fn dim(&self) -> usize {
        self.data.len()
    }

    /// Row-major flattened view.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, token: usize, channel: usize) -> f64 {
        self.data[token * self.channels + channel]
    }

    pub fn ensure_same_shape(&self, other: &Embedding) -> Result<(), ValidationError> {
        if self.shape() != other.shape() {
            return Err(ValidationError::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    /// Euclidean (Frobenius) distance to another embedding of the same shape.
    pub fn distance(&self, other: &Embedding) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Normalized RGB color, each channel in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rgb {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl Rgb {
    pub fn new(r: f64, g: f64, b: f64) -> Result<Self, ValidationError> {
        for (component, value) in [('r', r), ('g', g), ('b', b)] {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(ValidationError::UnitOutOfRange { component, value });
            }
        }
        Ok(Self { r, g, b })
    }

    /// Builds a color from arbitrary channel values, clamping each into `[0, 1]`.
    /// Non-finite values map to 0.
    pub fn clamped(r: f64, g: f64, b: f64) -> Self {
        let c = |v: f64| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        Self {
            r: c(r),
            g: c(g),
            b: c(b),
        }
    }

    pub fn from_array(values: [f64; 3]) -> Result<Self, ValidationError> {
        Self::new(values[0], values[1], values[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }

    /// Linear blend `(1 - t) * self + t * other`.
    pub fn lerp(self, other: Rgb, t: f64) -> Rgb {
        let a = self.to_array();
        let b = other.to_array();
        let mix = |i: usize| (1.0 - t) * a[i] + t * b[i];
        Rgb::clamped(mix(0), mix(1), mix(2))
    }

    /// Largest per-channel absolute difference.
    pub fn max_abs_diff(self, other: Rgb) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Converts 8-bit channel values to a normalized color (`value / 255`).
pub fn rgb_from_u8(r8: i64, g8: i64, b8: i64) -> Result<Rgb, ValidationError> {
    let mut out = [0.0; 3];
    for (slot, (component, value)) in out.iter_mut().zip([('r', r8), ('g', g8), ('b', b8)]) {
        if !(0..=255).contains(&value) {
            return Err(ValidationError::ComponentOutOfRange { component, value });
        }
        *slot = value as f64 / 255.0;
    }
    Ok(Rgb {
        r: out[0],
        g: out[1],
        b: out[2],
    })
}

/// Quantizes one normalized channel to 8 bits, ties away from zero.
pub fn unit_to_u8(value: f64) -> u8 {
    (value * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn rgb_to_u8(c: Rgb) -> (u8, u8, u8) {
    (unit_to_u8(c.r), unit_to_u8(c.g), unit_to_u8(c.b))
}

/// Row-major RGB image with values in `[0, 1]`; pixel `(y, x)` starts at `(y * width + x) * 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self, ValidationError> {
        if height == 0 || width == 0 {
            return Err(ValidationError::EmptyShape {
                what: "image",
                rows: height,
                cols: width,
            });
        }
        if pixels.len() != height * width * 3 {
            return Err(ValidationError::LengthMismatch {
                what: "image",
                expected: height * width * 3,
                actual: pixels.len(),
            });
        }
        if let Some(index) = pixels
            .iter()
            .position(|v| !v.is_finite() || !(0.0..=1.0).contains(v))
        {
            return Err(ValidationError::PixelOutOfRange {
                index,
                value: pixels[index],
            });
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, color: Rgb) -> Result<Self, ValidationError> {
        let pixels = (0..height * width)
            .flat_map(|_| color.to_array())
            .collect();
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        Rgb {
            r: self.pixels[i],
            g: self.pixels[i + 1],
            b: self.pixels[i + 2],
        }
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, color: Rgb) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&color.to_array());
    }
}

/// Binary mask; 1 marks the editable region.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskBuffer {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl MaskBuffer {
    /// Stores the values as given; binarity is checked by [`validate_pair`] and [`MaskBuffer::binary`].
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self, ValidationError> {
        if height == 0 || width == 0 {
            return Err(ValidationError::EmptyShape {
                what: "mask",
                rows: height,
                cols: width,
            });
        }
        if values.len() != height * width {
            return Err(ValidationError::LengthMismatch {
                what: "mask",
                expected: height * width,
                actual: values.len(),
            });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Constructor that also rejects non-binary entries.
    pub fn binary(height: usize, width: usize, values: Vec<f64>) -> Result<Self, ValidationError> {
        let mask = Self::new(height, width, values)?;
        mask.ensure_binary()?;
        Ok(mask)
    }

    pub fn from_bools(height: usize, width: usize, on: &[bool]) -> Result<Self, ValidationError> {
        Self::new(
            height,
            width,
            on.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Result<Self, ValidationError> {
        Self::new(height, width, vec![if value { 1.0 } else { 0.0 }; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn is_set(&self, x: usize, y: usize) -> bool {
        self.values[y * self.width + x] == 1.0
    }

    pub fn ensure_binary(&self) -> Result<(), ValidationError> {
        match self
            .values
            .iter()
            .position(|&v| v != 0.0 && v != 1.0)
        {
            Some(index) => Err(ValidationError::NonBinaryMask {
                index,
                value: self.values[index],
            }),
            None => Ok(()),
        }
    }

    /// Reduces the mask to a coarser `height x width` grid. A cell is set when any pixel it
    /// covers is set, so the reduced mask always contains the original region.
    pub fn block_max(&self, height: usize, width: usize) -> Result<MaskBuffer, ValidationError> {
        self.ensure_binary()?;
        if height == 0 || width == 0 || height > self.height || width > self.width {
            return Err(ValidationError::DimensionMismatch {
                image_h: height,
                image_w: width,
                mask_h: self.height,
                mask_w: self.width,
            });
        }
        let mut values = vec![0.0; height * width];
        for y in 0..self.height {
            let cy = y * height / self.height;
            for x in 0..self.width {
                if self.values[y * self.width + x] == 1.0 {
                    values[cy * width + x * width / self.width] = 1.0;
                }
            }
        }
        MaskBuffer::new(height, width, values)
    }
}

/// Checks that the mask matches the image dimensions and is binary.
pub fn validate_pair(image: &ImageBuffer, mask: &MaskBuffer) -> Result<(), ValidationError> {
    if image.height != mask.height || image.width != mask.width {
        return Err(ValidationError::DimensionMismatch {
            image_h: image.height,
            image_w: image.width,
            mask_h: mask.height,
            mask_w: mask.width,
        });
    }
    mask.ensure_binary()
}

/// One calibration observation: interpolation weight, the embedding used and the probed color.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSample {
    pub alpha: f64,
    pub embedding: Embedding,
    pub rgb: Rgb,
}

impl CalibrationSample {
    pub fn new(alpha: f64, embedding: Embedding, rgb: Rgb) -> Result<Self, ValidationError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(ValidationError::AlphaOutOfRange(alpha));
        }
        Ok(Self {
            alpha,
            embedding,
            rgb,
        })
    }
}
