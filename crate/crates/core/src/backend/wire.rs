//! JSON wire format of the remote generation protocol.
//!
//! Tensors travel as base64 of little-endian `f32` arrays (masks as one byte per pixel,
//! 0 or 1) together with their dimensions.

use super::GenerationRequest;
use crate::guidance::MaskSchedule;
use crate::types::{Embedding, ImageBuffer, MaskBuffer};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

pub fn encode_f32s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_f32s(text: &str) -> Result<Vec<f64>, String> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| format!("invalid base64: {e}"))?;
    if bytes.len() % 4 != 0 {
        return Err(format!("{} bytes is not a whole number of f32 values", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireImage {
    pub data: String,
    pub height: usize,
    pub width: usize,
}

impl WireImage {
    pub fn encode(image: &ImageBuffer) -> Self {
        Self {
            data: encode_f32s(image.as_slice()),
            height: image.height(),
            width: image.width(),
        }
    }

    /// Decodes without range validation; callers decide how to treat out-of-range values.
    pub fn decode_raw(&self) -> Result<Vec<f64>, String> {
        let values = decode_f32s(&self.data)?;
        let expected = self.height * self.width * 3;
        if values.len() != expected {
            return Err(format!(
                "image payload has {} values, {}x{}x3 needs {expected}",
                values.len(),
                self.height,
                self.width
            ));
        }
        Ok(values)
    }

    pub fn decode(&self) -> Result<ImageBuffer, String> {
        ImageBuffer::new(self.height, self.width, self.decode_raw()?).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMask {
    pub data: String,
    pub height: usize,
    pub width: usize,
}

impl WireMask {
    pub fn encode(mask: &MaskBuffer) -> Self {
        let bytes: Vec<u8> = mask
            .as_slice()
            .iter()
            .map(|&v| u8::from(v == 1.0))
            .collect();
        Self {
            data: STANDARD.encode(bytes),
            height: mask.height(),
            width: mask.width(),
        }
    }

    pub fn decode(&self) -> Result<MaskBuffer, String> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| format!("invalid base64: {e}"))?;
        let values = bytes.iter().map(|&b| b as f64).collect();
        MaskBuffer::binary(self.height, self.width, values).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireEmbedding {
    pub data: String,
    pub tokens: usize,
    pub channels: usize,
}

impl WireEmbedding {
    pub fn encode(e: &Embedding) -> Self {
        Self {
            data: encode_f32s(e.as_slice()),
            tokens: e.tokens(),
            channels: e.channels(),
        }
    }

    pub fn decode(&self) -> Result<Embedding, String> {
        Embedding::new(self.tokens, self.channels, decode_f32s(&self.data)?)
            .map_err(|e| e.to_string())
    }
}

/// Body of `POST {base_url}/generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub image: WireImage,
    pub mask: WireMask,
    pub embedding: WireEmbedding,
    pub s_image: f64,
    pub s_text: f64,
    pub steps: usize,
    pub sampler_name: String,
    pub seed: u64,
    #[serde(default)]
    pub mask_schedule: MaskSchedule,
}

impl WireRequest {
    pub fn from_request(r: &GenerationRequest) -> Self {
        Self {
            image: WireImage::encode(&r.image),
            mask: WireMask::encode(&r.mask),
            embedding: WireEmbedding::encode(&r.embedding),
            s_image: r.guidance.s_image,
            s_text: r.guidance.s_text,
            steps: r.steps,
            sampler_name: r.sampler_name.clone(),
            seed: r.seed,
            mask_schedule: r.mask_schedule,
        }
    }
}

/// Successful response body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub image: WireImage,
}

/// Error response body (4xx/5xx).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub error: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn f32_payload_is_little_endian() {
        let text = encode_f32s(&[1.0, -2.5]);
        let bytes = STANDARD.decode(&text).unwrap();
        assert_eq!(bytes, [0, 0, 128, 63, 0, 0, 32, 192]);
        assert!(decode_f32s("AAA=").is_err());
    }

    #[test]
    fn mask_bytes_are_zero_or_one() {
        let mask = MaskBuffer::from_bools(1, 3, &[true, false, true]).unwrap();
        let wire = WireMask::encode(&mask);
        assert_eq!(STANDARD.decode(&wire.data).unwrap(), vec![1, 0, 1]);
        assert_eq!(wire.decode().unwrap(), mask);
        let bad = WireMask {
            data: STANDARD.encode([0u8, 2, 1]),
            height: 1,
            width: 3,
        };
        assert!(bad.decode().is_err());
    }

    proptest! {
        #[test]
        fn f32_values_survive(values in prop::collection::vec(-1e6f32..1e6, 0..64)) {
            let wide: Vec<f64> = values.iter().map(|&v| v as f64).collect();
            prop_assert_eq!(decode_f32s(&encode_f32s(&wide)).unwrap(), wide);
        }
    }
}
