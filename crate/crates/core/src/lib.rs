//! Continuous, RGB-controlled color editing for instruction-driven image editors.
//!
//! Calibration interpolates between two prompt embeddings, runs each through a generator,
//! reads back the color at a probe pixel, and fits a mapping from RGB to embedding (PCA
//! compression plus a small MLP). At inference the mapping is used in reverse: a target RGB
//! becomes an embedding, and the generator edits only the masked region.

pub mod backend;
pub mod encoder;
pub mod guidance;
pub mod interpolation;
pub mod io;
pub mod mapper;
pub mod metrics;
pub mod mlp;
pub mod pca;
pub mod pipeline;
pub mod types;

pub use backend::{GenerationRequest, GeneratorBackend, RemoteClient, RemoteConfig, Simulator, SimulatorSpec};
pub use encoder::StubEncoder;
pub use guidance::{compose_masked, compose_unmasked, GuidanceParams, LatentTensor, NoiseTriple};
pub use interpolation::{lerp, uniform_sweep};
pub use mapper::{ColorMapperModel, Endpoints, Gamut, ModelFileError, Prediction};
pub use metrics::{extract_probe_rgb, linearity, mask_confinement, LinearityReport, Probe};
pub use mlp::{mse_loss, MlpModel, Normalization, TrainConfig, TrainReport};
pub use pca::{Code, PcaModel};
pub use pipeline::{
    calibrate, calibrate_with_progress, edit, sweep_edit, CalibrationConfig, CalibrationRecord, EditParams,
    EditResult, FailureKind, PipelineError, PromptInfo,
};
pub use types::{rgb_from_u8, rgb_to_u8, validate_pair, CalibrationSample, Embedding, ImageBuffer, MaskBuffer, Rgb};
