//! HTTP front end for calibrating a color mapper and editing images with it.
//!
//! Sessions live in memory. Calibration runs in the background and is polled; edits and
//! sweeps run on the blocking pool so the server stays responsive.

mod api;
pub mod error;
pub mod session;

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post};
use axum::Router;
use color_mapper::backend::BackendError;
use color_mapper::{
    Embedding, GenerationRequest, GeneratorBackend, ImageBuffer, RemoteClient, RemoteConfig, Rgb, Simulator,
    SimulatorSpec,
};
use session::SessionStore;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(3600);
const MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;

/// Which generator the service drives.
#[derive(Clone)]
pub enum BackendChoice {
    /// The synthetic generator, anchored on each calibration's endpoint embeddings.
    Simulator { color0: Rgb, color1: Rgb, gamma: f64 },
    Remote(Arc<RemoteHandle>),
}

/// A remote client that may be created and dropped from async code.
///
/// The blocking HTTP client runs its own runtime, which tokio refuses to build or tear
/// down on an async worker, so both happen on a short-lived helper thread.
pub struct RemoteHandle(Option<RemoteClient>);

impl RemoteHandle {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let client = std::thread::spawn(move || RemoteClient::new(config))
            .join()
            .map_err(|_| BackendError::Request("remote client setup panicked".into()))??;
        Ok(Self(Some(client)))
    }

    fn client(&self) -> &RemoteClient {
        self.0.as_ref().expect("client is present until drop")
    }
}

impl Drop for RemoteHandle {
    fn drop(&mut self) {
        if let Some(client) = self.0.take() {
            std::thread::spawn(move || drop(client));
        }
    }
}

impl GeneratorBackend for RemoteHandle {
    fn generate(&self, request: &GenerationRequest) -> Result<ImageBuffer, BackendError> {
        self.client().generate(request)
    }

    fn name(&self) -> &str {
        self.client().name()
    }
}

impl BackendChoice {
    pub fn remote(config: RemoteConfig) -> Result<Self, BackendError> {
        Ok(BackendChoice::Remote(Arc::new(RemoteHandle::new(config)?)))
    }

    /// A backend for embeddings between `anchor0` and `anchor1`.
    pub fn backend(&self, anchor0: &Embedding, anchor1: &Embedding) -> Result<Arc<dyn GeneratorBackend>, BackendError> {
        match self {
            BackendChoice::Simulator { color0, color1, gamma } => {
                let mut spec = SimulatorSpec::new(anchor0.clone(), anchor1.clone(), *color0, *color1);
                spec.gamma = *gamma;
                Ok(Arc::new(Simulator::new(spec)?))
            }
            BackendChoice::Remote(client) => Ok(client.clone() as Arc<dyn GeneratorBackend>),
        }
    }
}

#[derive(Clone)]
pub struct ServiceConfig {
    pub backend: BackendChoice,
    pub idle_timeout: Duration,
    /// Directory of built UI assets served at `/`.
    pub static_dir: Option<PathBuf>,
}

pub struct AppState {
    pub sessions: SessionStore,
    pub config: ServiceConfig,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            sessions: SessionStore::default(),
            config,
        })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/health", get(api::health))
        .route("/sessions", post(api::create_session))
        .route("/sessions/{id}", get(api::session_summary))
        .route("/sessions/{id}/image", post(api::upload_image))
        .route("/sessions/{id}/mask", post(api::upload_mask))
        .route("/sessions/{id}/calibrate", post(api::start_calibration))
        .route("/sessions/{id}/calibration", get(api::calibration_status))
        .route("/sessions/{id}/edit", post(api::edit))
        .route("/sessions/{id}/sweep", post(api::sweep))
        .route("/sessions/{id}/sweeps/{sweep}/{index}", get(api::sweep_image))
        .route("/sessions/{id}/history", get(api::history))
        .route("/sessions/{id}/model", get(api::download_model))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state.clone());
    match &state.config.static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Periodically drops idle sessions until the process exits.
pub fn spawn_eviction(state: Arc<AppState>) -> tokio::task::JoinHandle<()> {
    let period = (state.config.idle_timeout / 4).clamp(Duration::from_secs(1), Duration::from_secs(60));
    tokio::spawn(async move {
        let mut ticker = tokio::time::interval(period);
        loop {
            ticker.tick().await;
            let removed = state.sessions.evict_idle(state.config.idle_timeout);
            if removed > 0 {
                log::info!("evicted {removed} idle session(s)");
            }
        }
    })
}
