use super::wire::{WireError, WireRequest, WireResponse};
use super::{enforce_confinement, BackendError, GenerationRequest, GeneratorBackend};
use crate::types::ImageBuffer;
use std::time::Duration;

pub const ENV_BASE_URL: &str = "COLOR_MAPPER_BACKEND_URL";
pub const ENV_TIMEOUT: &str = "COLOR_MAPPER_BACKEND_TIMEOUT";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub timeout: Duration,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            timeout: DEFAULT_TIMEOUT,
        }
    }

    /// Reads the base URL and timeout (seconds) from the environment.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var(ENV_BASE_URL).ok()?;
        let mut config = Self::new(url);
        if let Some(secs) = std::env::var(ENV_TIMEOUT)
            .ok()
            .and_then(|v| v.parse::<f64>().ok())
            .filter(|v| *v > 0.0)
        {
            config.timeout = Duration::from_secs_f64(secs);
        }
        Some(config)
    }
}

/// Result of a remote generation before it is handed to callers.
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteOutcome {
    pub image: ImageBuffer,
    /// Pixels outside the mask that the server changed and that were restored.
    pub repaired_pixels: usize,
}

/// HTTP client for an out-of-process generator.
#[derive(Debug, Clone)]
pub struct RemoteClient {
    config: RemoteConfig,
    http: reqwest::blocking::Client,
}

impl RemoteClient {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Connection {
                url: config.base_url.clone(),
                message: e.to_string(),
            })?;
        Ok(Self { config, http })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn transport_error(&self, url: &str, e: reqwest::Error) -> BackendError {
        if e.is_timeout() {
            BackendError::Timeout(self.config.timeout)
        } else {
            BackendError::Connection {
                url: url.to_string(),
                message: e.to_string(),
            }
        }
    }

    /// `GET {base_url}/health`.
    pub fn health(&self) -> Result<(), BackendError> {
        let url = format!("{}/health", self.config.base_url);
        let response = self
            .http
            .get(&url)
            .send()
            .map_err(|e| self.transport_error(&url, e))?;
        let status = response.status().as_u16();
        let body = response.text().unwrap_or_default();
        if status == 200 && body.trim() == "ok" {
            Ok(())
        } else {
            Err(BackendError::Server {
                status,
                message: format!("unhealthy: {body}"),
            })
        }
    }

    /// Sends the request and validates the response, restoring any pixel outside the mask.
    pub fn generate_checked(&self, request: &GenerationRequest) -> Result<RemoteOutcome, BackendError> {
        request.validate()?;
        let url = format!("{}/generate", self.config.base_url);
        let response = self
            .http
            .post(&url)
            .json(&WireRequest::from_request(request))
            .send()
            .map_err(|e| self.transport_error(&url, e))?;
        let status = response.status();
        let body = response.bytes().map_err(|e| self.transport_error(&url, e))?;

        if !status.is_success() {
            let message = serde_json::from_slice::<WireError>(&body)
                .map(|e| e.error)
                .unwrap_or_else(|_| String::from_utf8_lossy(&body).into_owned());
            return Err(BackendError::Server {
                status: status.as_u16(),
                message,
            });
        }

        let parsed: WireResponse = serde_json::from_slice(&body)
            .map_err(|e| BackendError::MalformedResponse(format!("invalid JSON body: {e}")))?;
        let (h, w) = (request.image.height(), request.image.width());
        if parsed.image.height != h || parsed.image.width != w {
            return Err(BackendError::MalformedResponse(format!(
                "image is {}x{}, expected {h}x{w}",
                parsed.image.height, parsed.image.width
            )));
        }
        let raw = parsed
            .image
            .decode_raw()
            .map_err(BackendError::MalformedResponse)?;
        if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
            return Err(BackendError::MalformedResponse(format!(
                "non-finite pixel value at index {i}"
            )));
        }
        // Values the server passed through untouched come back as the f32 we sent; map them
        // to the exact input so an unchanged pixel survives the round trip bit-for-bit.
        let clamped = raw
            .into_iter()
            .zip(request.image.as_slice())
            .map(|(v, &orig)| if v == orig as f32 as f64 { orig } else { v.clamp(0.0, 1.0) })
            .collect();
        let mut image = ImageBuffer::new(h, w, clamped)
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;

        let repaired_pixels = enforce_confinement(&request.image, &mut image, &request.mask, 0.0);
        if repaired_pixels > 0 {
            log::warn!(
                "backend at {} changed {repaired_pixels} pixel(s) outside the mask; restored from input",
                self.config.base_url
            );
        }
        Ok(RemoteOutcome {
            image,
            repaired_pixels,
        })
    }
}

impl GeneratorBackend for RemoteClient {
    fn generate(&self, request: &GenerationRequest) -> Result<ImageBuffer, BackendError> {
        self.generate_checked(request).map(|o| o.image)
    }

    fn name(&self) -> &str {
        "remote"
    }
}
