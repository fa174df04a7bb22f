//! The Color Mapper: target RGB → MLP → PCA code → inverse PCA → embedding, plus the
//! binary model file.
//!
//! File layout (little-endian):
//!
//! ```text
//! "CMAP" | u16 version | u32 header length | header JSON (UTF-8)
//! f32 payload: pca mean, pca basis (row-major), variances,
//!              per layer: weights (row-major, out x in) then biases,
//!              endpoint embedding 1, endpoint embedding 2
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! Parameters are rounded to `f32` when a model is assembled, so a saved and reloaded model
//! predicts bit-identically to the in-memory one.

use crate::metrics::Probe;
use crate::mlp::{Layer, MlpModel};
use crate::pca::{Code, PcaModel};
use crate::types::{Embedding, Rgb};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"CMAP";
pub const FORMAT_VERSION: u16 = 1;
const PREAMBLE: usize = 4 + 2 + 4;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic number: expected \"CMAP\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {found} (this build reads version {supported})")]
    Version { found: u16, supported: u16 },
    #[error("truncation: file has {actual} bytes, expected {expected}")]
    Truncated { expected: usize, actual: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("invalid model: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapperError {
    #[error("invalid mapper parts: {0}")]
    Parts(String),
}

/// Per-channel range of RGB values seen during calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gamut {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Gamut {
    pub fn from_colors(colors: &[Rgb]) -> Option<Self> {
        let first = colors.first()?.to_array();
        let mut g = Gamut {
            min: first,
            max: first,
        };
        for c in colors {
            for (k, v) in c.to_array().into_iter().enumerate() {
                g.min[k] = g.min[k].min(v);
                g.max[k] = g.max[k].max(v);
            }
        }
        Some(g)
    }

    pub fn contains(&self, c: Rgb) -> bool {
        c.to_array()
            .iter()
            .enumerate()
            .all(|(k, v)| *v >= self.min[k] && *v <= self.max[k])
    }
}

/// Endpoint embeddings of the calibration sweep and the prompts they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Endpoints {
    pub e1: Embedding,
    pub e2: Embedding,
    pub prompt1: Option<String>,
    pub prompt2: Option<String>,
}

/// JSON header of a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub tokens: usize,
    pub channels: usize,
    pub m: usize,
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: String,
    pub probe: Probe,
    pub image_height: usize,
    pub image_width: usize,
    pub gamut: Gamut,
    pub prompts: [Option<String>; 2],
}

impl ModelHeader {
    fn payload_len(&self) -> Result<usize, ModelFileError> {
        let overflow = || ModelFileError::Header("declared sizes overflow".into());
        let d = self.tokens.checked_mul(self.channels).ok_or_else(overflow)?;
        let mut count = self
            .m
            .checked_add(3)
            .and_then(|k| k.checked_mul(d))
            .and_then(|c| c.checked_add(self.m))
            .ok_or_else(overflow)?;
        for w in self.layer_sizes.windows(2) {
            count = w[0]
                .checked_mul(w[1])
                .and_then(|c| c.checked_add(w[1]))
                .and_then(|c| c.checked_add(count))
                .ok_or_else(overflow)?;
        }
        count.checked_mul(4).ok_or_else(overflow)?;
        Ok(count)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub embedding: Embedding,
    pub out_of_gamut: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorMapperModel {
    pca: PcaModel,
    mlp: MlpModel,
    probe: Probe,
    image_size: (usize, usize),
    gamut: Gamut,
    endpoints: Endpoints,
}

fn round_f32(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| v as f32 as f64).collect()
}

fn round_embedding(e: &Embedding) -> Embedding {
    Embedding::new(e.tokens(), e.channels(), round_f32(e.as_slice()))
        .expect("rounding preserves shape and finiteness")
}

impl ColorMapperModel {
    /// Assembles a model, rounding every numeric parameter to `f32` precision.
    /// `image_size` is `(height, width)` of the calibration image.
    pub fn new(
        pca: PcaModel,
        mlp: MlpModel,
        probe: Probe,
        image_size: (usize, usize),
        gamut: Gamut,
        endpoints: Endpoints,
    ) -> Result<Self, MapperError> {
        if mlp.output_dim() != pca.components() {
            return Err(MapperError::Parts(format!(
                "MLP outputs {} values but PCA keeps {} components",
                mlp.output_dim(),
                pca.components()
            )));
        }
        if endpoints.e1.shape() != pca.embedding_shape() || endpoints.e2.shape() != pca.embedding_shape() {
            return Err(MapperError::Parts("endpoint embedding shape differs from PCA shape".into()));
        }
        if (0..3).any(|k| gamut.min[k].is_nan() || gamut.max[k].is_nan() || gamut.min[k] > gamut.max[k]) {
            return Err(MapperError::Parts(format!("gamut min exceeds max: {gamut:?}")));
        }
        if !probe.fits(image_size.1, image_size.0) {
            return Err(MapperError::Parts(format!(
                "probe {probe:?} does not fit a {}x{} image",
                image_size.0, image_size.1
            )));
        }

        let (tokens, channels) = pca.embedding_shape();
        let pca = PcaModel::from_parts(
            tokens,
            channels,
            round_f32(pca.mean()),
            pca.basis().iter().map(|r| round_f32(r)).collect(),
            round_f32(pca.variances()),
        )
        .map_err(|e| MapperError::Parts(e.to_string()))?;
        let mlp = MlpModel::from_layers(
            mlp.layers()
                .iter()
                .map(|l| Layer {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weights: round_f32(&l.weights),
                    biases: round_f32(&l.biases),
                })
                .collect(),
        )
        .map_err(|e| MapperError::Parts(e.to_string()))?;
        let endpoints = Endpoints {
            e1: round_embedding(&endpoints.e1),
            e2: round_embedding(&endpoints.e2),
            ..endpoints
        };
        Ok(Self {
            pca,
            mlp,
            probe,
            image_size,
            gamut,
            endpoints,
        })
    }

    pub fn pca(&self) -> &PcaModel {
        &self.pca
    }

    pub fn mlp(&self) -> &MlpModel {
        &self.mlp
    }

    pub fn probe(&self) -> Probe {
        self.probe
    }

    /// `(height, width)` of the calibration image.
    pub fn image_size(&self) -> (usize, usize) {
        self.image_size
    }

    pub fn gamut(&self) -> Gamut {
        self.gamut
    }

    pub fn endpoints(&self) -> &Endpoints {
        &self.endpoints
    }

    pub fn embedding_shape(&self) -> (usize, usize) {
        self.pca.embedding_shape()
    }

    pub fn predict_code(&self, target: Rgb) -> Code {
        self.mlp.forward(target)
    }

    /// Embedding predicted for a target color. Targets outside the calibrated gamut are
    /// still mapped, with `out_of_gamut` set.
    pub fn predict_embedding(&self, target: Rgb) -> Prediction {
        let embedding = self
            .pca
            .inverse(&self.predict_code(target))
            .expect("MLP output size matches PCA components");
        Prediction {
            embedding,
            out_of_gamut: !self.gamut.contains(target),
        }
    }

    /// Upper bound on `‖Δembedding‖ / ‖Δrgb‖`: the MLP's weight-norm product times the
    /// largest singular value of the stored basis.
    pub fn lipschitz_bound(&self) -> f64 {
        let basis = self.pca.basis();
        let m = basis.len();
        let mut gram = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                gram[(i, j)] = basis[i].iter().zip(&basis[j]).map(|(a, b)| a * b).sum();
            }
        }
        let top = SymmetricEigen::new(gram)
            .eigenvalues
            .iter()
            .copied()
            .fold(0.0f64, f64::max);
        self.mlp.lipschitz_bound() * top.sqrt()
    }

    pub fn header(&self) -> ModelHeader {
        let (tokens, channels) = self.embedding_shape();
        ModelHeader {
            tokens,
            channels,
            m: self.pca.components(),
            layer_sizes: self.mlp.layer_sizes(),
            hidden_activation: "tanh".into(),
            probe: self.probe,
            image_height: self.image_size.0,
            image_width: self.image_size.1,
            gamut: self.gamut,
            prompts: [self.endpoints.prompt1.clone(), self.endpoints.prompt2.clone()],
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);

        let mut put = |values: &[f64]| {
            for v in values {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        };
        put(self.pca.mean());
        for row in self.pca.basis() {
            put(row);
        }
        put(self.pca.variances());
        for layer in self.mlp.layers() {
            put(&layer.weights);
            put(&layer.biases);
        }
        put(self.endpoints.e1.as_slice());
        put(self.endpoints.e2.as_slice());

        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn save<W: Write>(&self, mut writer: W) -> Result<(), ModelFileError> {
        writer.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn save_to_path(&self, path: impl AsRef<Path>) -> Result<(), ModelFileError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load<R: Read>(mut reader: R) -> Result<Self, ModelFileError> {
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn load_from_path(path: impl AsRef<Path>) -> Result<Self, ModelFileError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelFileError> {
        let (header, payload) = parse_container(bytes)?;
        build_model(header, &payload)
    }
}

fn truncated(expected: usize, actual: usize) -> ModelFileError {
    ModelFileError::Truncated { expected, actual }
}

fn checksum_status(bytes: &[u8]) -> Result<(), ModelFileError> {
    if bytes.len() < 4 {
        return Err(truncated(4, bytes.len()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let computed = crc32fast::hash(body);
    if stored == computed {
        Ok(())
    } else {
        Err(ModelFileError::Checksum { stored, computed })
    }
}

/// Validates the container and returns the header and decoded `f32` payload.
fn parse_container(bytes: &[u8]) -> Result<(ModelHeader, Vec<f64>), ModelFileError> {
    if bytes.len() < 4 {
        return Err(truncated(PREAMBLE, bytes.len()));
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if &magic != MAGIC {
        return Err(ModelFileError::BadMagic(magic));
    }
    if bytes.len() < 6 {
        return Err(truncated(PREAMBLE, bytes.len()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(ModelFileError::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    if bytes.len() < PREAMBLE {
        return Err(truncated(PREAMBLE, bytes.len()));
    }
    let header_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let header_end = PREAMBLE + header_len;
    if bytes.len() < header_end {
        return Err(truncated(header_end, bytes.len()));
    }
    let header: ModelHeader = match serde_json::from_slice(&bytes[PREAMBLE..header_end]) {
        Ok(h) => h,
        Err(e) => {
            // A damaged header is reported as corruption when the checksum disagrees.
            checksum_status(bytes)?;
            return Err(ModelFileError::Header(e.to_string()));
        }
    };
    let count = header.payload_len()?;
    let expected = header_end
        .checked_add(4 * count + 4)
        .ok_or_else(|| ModelFileError::Header("declared sizes overflow".into()))?;
    if bytes.len() < expected {
        return Err(truncated(expected, bytes.len()));
    }
    if bytes.len() > expected {
        checksum_status(&bytes[..expected])?;
        return Err(ModelFileError::Invalid(format!(
            "{} unexpected trailing bytes",
            bytes.len() - expected
        )));
    }
    checksum_status(bytes)?;
    let payload = bytes[header_end..expected - 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((header, payload))
}

fn build_model(header: ModelHeader, payload: &[f64]) -> Result<ColorMapperModel, ModelFileError> {
    let invalid = |e: String| ModelFileError::Invalid(e);
    if header.hidden_activation != "tanh" {
        return Err(invalid(format!(
            "unsupported activation {:?}",
            header.hidden_activation
        )));
    }
    let sizes = &header.layer_sizes;
    if sizes.len() < 2 || sizes.last() != Some(&header.m) {
        return Err(invalid(format!(
            "layer sizes {sizes:?} must end with m = {}",
            header.m
        )));
    }
    let d = header.tokens * header.channels;
    let mut cursor = payload;
    let mut take = |n: usize| {
        let (head, rest) = cursor.split_at(n);
        cursor = rest;
        head.to_vec()
    };
    let mean = take(d);
    let basis = (0..header.m).map(|_| take(d)).collect();
    let variances = take(header.m);
    let layers = sizes
        .windows(2)
        .map(|w| Layer {
            inputs: w[0],
            outputs: w[1],
            weights: take(w[0] * w[1]),
            biases: take(w[1]),
        })
        .collect();
    let e1 = take(d);
    let e2 = take(d);

    let pca = PcaModel::from_parts(header.tokens, header.channels, mean, basis, variances)
        .map_err(|e| invalid(e.to_string()))?;
    let mlp = MlpModel::from_layers(layers).map_err(|e| invalid(e.to_string()))?;
    let endpoint = |v: Vec<f64>| {
        Embedding::new(header.tokens, header.channels, v).map_err(|e| invalid(e.to_string()))
    };
    let [prompt1, prompt2] = header.prompts;
    let endpoints = Endpoints {
        e1: endpoint(e1)?,
        e2: endpoint(e2)?,
        prompt1,
        prompt2,
    };
    ColorMapperModel::new(
        pca,
        mlp,
        header.probe,
        (header.image_height, header.image_width),
        header.gamut,
        endpoints,
    )
    .map_err(|e| invalid(e.to_string()))
}

/// Fully validates a model file and returns its header.
pub fn read_header(bytes: &[u8]) -> Result<ModelHeader, ModelFileError> {
    let model = ColorMapperModel::from_bytes(bytes)?;
    Ok(model.header())
}
