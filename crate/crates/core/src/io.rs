//! Boundary formats: 8-bit PNG images and masks, raw `f32` embedding files with JSON sidecars.

use crate::types::{unit_to_u8, Embedding, ImageBuffer, MaskBuffer, ValidationError};
use image::{ImageEncoder, RgbImage};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("PNG decode failed: {0}")]
    Decode(String),
    #[error("PNG encode failed: {0}")]
    Encode(String),
    #[error("mask pixel {index} has value {value}; masks must be 0 or 255")]
    MaskValue { index: usize, value: u8 },
    #[error("embedding sidecar {path}: {message}")]
    Sidecar { path: PathBuf, message: String },
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

fn file_error(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

pub fn decode_png_image(bytes: &[u8]) -> Result<ImageBuffer, IoError> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| IoError::Decode(e.to_string()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let pixels = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Ok(ImageBuffer::new(h as usize, w as usize, pixels)?)
}

/// Grayscale (or color, reduced to luma) PNG where 0 is outside and 255 inside the mask.
pub fn decode_png_mask(bytes: &[u8]) -> Result<MaskBuffer, IoError> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| IoError::Decode(e.to_string()))?
        .to_luma8();
    let (w, h) = img.dimensions();
    let raw = img.into_raw();
    let mut values = Vec::with_capacity(raw.len());
    for (index, &value) in raw.iter().enumerate() {
        values.push(match value {
            0 => 0.0,
            255 => 1.0,
            _ => return Err(IoError::MaskValue { index, value }),
        });
    }
    Ok(MaskBuffer::new(h as usize, w as usize, values)?)
}

/// 8-bit RGB PNG; channels quantize with ties away from zero.
pub fn encode_png_image(image: &ImageBuffer) -> Result<Vec<u8>, IoError> {
    let raw: Vec<u8> = image.as_slice().iter().map(|&v| unit_to_u8(v)).collect();
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(
            &raw,
            image.width() as u32,
            image.height() as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| IoError::Encode(e.to_string()))?;
    Ok(out)
}

pub fn encode_png_mask(mask: &MaskBuffer) -> Result<Vec<u8>, IoError> {
    mask.ensure_binary()?;
    let raw: Vec<u8> = mask.as_slice().iter().map(|&v| if v == 1.0 { 255 } else { 0 }).collect();
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(
            &raw,
            mask.width() as u32,
            mask.height() as u32,
            image::ExtendedColorType::L8,
        )
        .map_err(|e| IoError::Encode(e.to_string()))?;
    Ok(out)
}

pub fn read_png_image(path: &Path) -> Result<ImageBuffer, IoError> {
    decode_png_image(&std::fs::read(path).map_err(file_error(path))?)
}

pub fn read_png_mask(path: &Path) -> Result<MaskBuffer, IoError> {
    decode_png_mask(&std::fs::read(path).map_err(file_error(path))?)
}

pub fn write_png_image(path: &Path, image: &ImageBuffer) -> Result<(), IoError> {
    std::fs::write(path, encode_png_image(image)?).map_err(file_error(path))
}

/// Quantizes an image the way [`encode_png_image`] does, without encoding.
pub fn quantize(image: &ImageBuffer) -> ImageBuffer {
    let pixels = image
        .as_slice()
        .iter()
        .map(|&v| unit_to_u8(v) as f64 / 255.0)
        .collect();
    ImageBuffer::new(image.height(), image.width(), pixels).expect("quantized values stay in range")
}

pub fn to_rgb_image(image: &ImageBuffer) -> RgbImage {
    let raw: Vec<u8> = image.as_slice().iter().map(|&v| unit_to_u8(v)).collect();
    RgbImage::from_raw(image.width() as u32, image.height() as u32, raw).expect("buffer size matches")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSidecar {
    pub tokens: usize,
    pub channels: usize,
}

/// `<file>.json` next to a raw embedding file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Reads raw little-endian `f32` values, shaped by the JSON sidecar.
pub fn read_embedding(path: &Path) -> Result<Embedding, IoError> {
    let side = sidecar_path(path);
    let meta: EmbeddingSidecar = serde_json::from_slice(
        &std::fs::read(&side).map_err(file_error(&side))?,
    )
    .map_err(|e| IoError::Sidecar {
        path: side.clone(),
        message: e.to_string(),
    })?;
    let bytes = std::fs::read(path).map_err(file_error(path))?;
    if bytes.len() % 4 != 0 {
        return Err(IoError::Sidecar {
            path: path.to_path_buf(),
            message: format!("{} bytes is not a whole number of f32 values", bytes.len()),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Embedding::new(meta.tokens, meta.channels, data)?)
}

pub fn write_embedding(path: &Path, e: &Embedding) -> Result<(), IoError> {
    let mut bytes = Vec::with_capacity(e.dim() * 4);
    for v in e.as_slice() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(file_error(path))?;
    let side = sidecar_path(path);
    let meta = EmbeddingSidecar {
        tokens: e.tokens(),
        channels: e.channels(),
    };
    std::fs::write(&side, serde_json::to_vec_pretty(&meta).expect("sidecar serializes"))
        .map_err(file_error(&side))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Rgb;

    #[test]
    fn png_round_trip_of_quantized_image() {
        let mut img = ImageBuffer::filled(3, 5, Rgb::new(0.2, 0.4, 0.6).unwrap()).unwrap();
        img.set_pixel(4, 2, Rgb::new(1.0, 0.0, 0.5).unwrap());
        let decoded = decode_png_image(&encode_png_image(&img).unwrap()).unwrap();
        assert_eq!(decoded, quantize(&img));
        assert_eq!(decoded.pixel(4, 2).to_array()[2], 128.0 / 255.0);
    }

    #[test]
    fn mask_png_round_trip_and_rejects_gray() {
        let mask = MaskBuffer::from_bools(2, 2, &[true, false, false, true]).unwrap();
        assert_eq!(decode_png_mask(&encode_png_mask(&mask).unwrap()).unwrap(), mask);

        let mut out = Vec::new();
        image::codecs::png::PngEncoder::new(&mut out)
            .write_image(&[0, 128, 255, 0], 2, 2, image::ExtendedColorType::L8)
            .unwrap();
        assert!(matches!(
            decode_png_mask(&out),
            Err(IoError::MaskValue { index: 1, value: 128 })
        ));
    }

    #[test]
    fn embedding_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.f32");
        let e = Embedding::new(2, 3, vec![0.5, -1.25, 3.0, 0.0, 2.0, -0.125]).unwrap();
        write_embedding(&path, &e).unwrap();
        assert!(sidecar_path(&path).exists());
        assert_eq!(read_embedding(&path).unwrap(), e);
    }
}
