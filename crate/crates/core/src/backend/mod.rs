//! Generator backends: anything that turns (image, mask, embedding, guidance) into an
//! edited image. Every implementation must leave pixels outside the mask untouched.

mod remote;
mod simulator;
pub mod wire;

pub use remote::{RemoteClient, RemoteConfig, RemoteOutcome, DEFAULT_TIMEOUT, ENV_BASE_URL, ENV_TIMEOUT};
pub use simulator::{Simulator, SimulatorSpec};

use crate::guidance::{GuidanceParams, MaskSchedule};
use crate::types::{validate_pair, Embedding, ImageBuffer, MaskBuffer, ValidationError};
use thiserror::Error;

pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_SAMPLER: &str = "euler_ancestral";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    Request(String),
    #[error("cannot reach backend at {url}: {message}")]
    Connection { url: String, message: String },
    #[error("backend request timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("backend reported error (HTTP {status}): {message}")]
    Server { status: u16, message: String },
    #[error("simulator: {0}")]
    Simulator(String),
}

impl From<ValidationError> for BackendError {
    fn from(e: ValidationError) -> Self {
        BackendError::Request(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub image: ImageBuffer,
    pub mask: MaskBuffer,
    pub embedding: Embedding,
    pub guidance: GuidanceParams,
    pub steps: usize,
    pub sampler_name: String,
    pub seed: u64,
    pub mask_schedule: MaskSchedule,
}

impl GenerationRequest {
    /// Request with default sampler settings.
    pub fn new(image: ImageBuffer, mask: MaskBuffer, embedding: Embedding) -> Self {
        Self {
            image,
            mask,
            embedding,
            guidance: GuidanceParams::default(),
            steps: DEFAULT_STEPS,
            sampler_name: DEFAULT_SAMPLER.to_string(),
            seed: 0,
            mask_schedule: MaskSchedule::default(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        validate_pair(&self.image, &self.mask)?;
        if self.steps == 0 {
            return Err(BackendError::Request("steps must be >= 1".into()));
        }
        self.guidance
            .validate()
            .map_err(|e| BackendError::Request(e.to_string()))
    }
}

pub trait GeneratorBackend: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<ImageBuffer, BackendError>;

    fn name(&self) -> &str;
}

impl<T: GeneratorBackend + ?Sized> GeneratorBackend for Box<T> {
    fn generate(&self, request: &GenerationRequest) -> Result<ImageBuffer, BackendError> {
        (**self).generate(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<T: GeneratorBackend + ?Sized> GeneratorBackend for std::sync::Arc<T> {
    fn generate(&self, request: &GenerationRequest) -> Result<ImageBuffer, BackendError> {
        (**self).generate(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Copies `original` into `edited` wherever the mask is 0. Returns how many pixels differed
/// by more than `tolerance` on some channel before the copy.
pub fn enforce_confinement(
    original: &ImageBuffer,
    edited: &mut ImageBuffer,
    mask: &MaskBuffer,
    tolerance: f64,
) -> usize {
    let mut violations = 0;
    for y in 0..original.height() {
        for x in 0..original.width() {
            if mask.is_set(x, y) {
                continue;
            }
            let want = original.pixel(x, y);
            if edited.pixel(x, y).max_abs_diff(want) > tolerance {
                violations += 1;
            }
            edited.set_pixel(x, y, want);
        }
    }
    violations
}
