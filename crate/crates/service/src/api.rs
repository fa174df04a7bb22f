use crate::error::{ApiError, ApiResult};
use crate::session::{lock, Calibrated, CalibrationStatus, HistoryEntry, Session, SessionHandle};
use crate::AppState;
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use color_mapper::backend::wire::WireEmbedding;
use color_mapper::io::{decode_png_image, decode_png_mask, encode_png_image, quantize};
use color_mapper::pipeline::linear_targets;
use color_mapper::{
    calibrate_with_progress, edit as run_edit, extract_probe_rgb, linearity, rgb_from_u8, rgb_to_u8, sweep_edit,
    CalibrationConfig, ColorMapperModel, EditParams, EditResult, Embedding, Gamut, GuidanceParams, ImageBuffer,
    LinearityReport, MaskBuffer, Probe, PromptInfo, Rgb, StubEncoder,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

pub const MEASURED_RGB: HeaderName = HeaderName::from_static("x-measured-rgb");
pub const OUT_OF_GAMUT: HeaderName = HeaderName::from_static("x-out-of-gamut");
pub const REQUESTED_RGB: HeaderName = HeaderName::from_static("x-requested-rgb");

type AppStateRef = State<Arc<AppState>>;

fn session(state: &AppState, id: &str) -> ApiResult<SessionHandle> {
    state
        .sessions
        .get(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))
}

fn parse_json<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

fn parse_rgb(field: &str, values: &[i64]) -> ApiResult<Rgb> {
    match values {
        [r, g, b] => rgb_from_u8(*r, *g, *b).map_err(|e| ApiError::field(field, format!("{field}: {e}"))),
        _ => Err(ApiError::field(
            field,
            format!("{field} must have 3 channels, got {}", values.len()),
        )),
    }
}

fn rgb255(c: Rgb) -> [u8; 3] {
    let (r, g, b) = rgb_to_u8(c);
    [r, g, b]
}

/// Runs blocking pipeline work off the async workers.
async fn blocking<T: Send + 'static>(job: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(job)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
}

pub async fn health() -> &'static str {
    "ok"
}

#[derive(Serialize)]
pub struct Created {
    id: String,
}

pub async fn create_session(State(state): AppStateRef) -> (StatusCode, Json<Created>) {
    let id = state.sessions.create();
    (StatusCode::CREATED, Json(Created { id }))
}

#[derive(Serialize)]
pub struct Summary {
    id: String,
    image: Option<[usize; 2]>,
    mask: Option<[usize; 2]>,
    status: &'static str,
    history_len: usize,
}

pub async fn session_summary(State(state): AppStateRef, Path(id): Path<String>) -> ApiResult<Json<Summary>> {
    let handle = session(&state, &id)?;
    let s = lock(&handle);
    Ok(Json(Summary {
        id,
        image: s.image.as_ref().map(|i| [i.height(), i.width()]),
        mask: s.mask.as_ref().map(|m| [m.height(), m.width()]),
        status: s.status.label(),
        history_len: s.history.len(),
    }))
}

#[derive(Serialize)]
pub struct Uploaded {
    height: usize,
    width: usize,
}

fn ensure_not_running(s: &Session) -> ApiResult<()> {
    if s.status == CalibrationStatus::Running {
        return Err(ApiError::conflict("calibration is running; wait for it to finish"));
    }
    Ok(())
}

fn check_dims(what: &str, got: (usize, usize), other: &str, expected: Option<(usize, usize)>) -> ApiResult<()> {
    match expected {
        Some(dims) if dims != got => Err(ApiError::field(
            what,
            format!("{what} is {}x{} but the {other} is {}x{}", got.1, got.0, dims.1, dims.0),
        )),
        _ => Ok(()),
    }
}

pub async fn upload_image(
    State(state): AppStateRef,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Uploaded>> {
    let handle = session(&state, &id)?;
    let image = decode_png_image(&body).map_err(|e| ApiError::field("image", e.to_string()))?;
    let mut s = lock(&handle);
    ensure_not_running(&s)?;
    let dims = (image.height(), image.width());
    check_dims("image", dims, "mask", s.mask.as_ref().map(|m| (m.height(), m.width())))?;
    s.image = Some(image);
    Ok(Json(Uploaded {
        height: dims.0,
        width: dims.1,
    }))
}

pub async fn upload_mask(
    State(state): AppStateRef,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Uploaded>> {
    let handle = session(&state, &id)?;
    let mask = decode_png_mask(&body).map_err(|e| ApiError::field("mask", e.to_string()))?;
    let mut s = lock(&handle);
    ensure_not_running(&s)?;
    let dims = (mask.height(), mask.width());
    check_dims("mask", dims, "image", s.image.as_ref().map(|i| (i.height(), i.width())))?;
    s.mask = Some(mask);
    Ok(Json(Uploaded {
        height: dims.0,
        width: dims.1,
    }))
}

/// Optional calibration settings; anything absent keeps its default.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    n_samples: Option<usize>,
    pca_dims: Option<usize>,
    hidden: Option<Vec<usize>>,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    train_seed: Option<u64>,
    s_image: Option<f64>,
    s_text: Option<f64>,
    steps: Option<usize>,
    sampler_name: Option<String>,
    seed: Option<u64>,
    probe: Option<Probe>,
    probe_radius: Option<usize>,
    parallel: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateBody {
    prompt1: Option<String>,
    prompt2: Option<String>,
    stub_seed: Option<u64>,
    embedding1: Option<WireEmbedding>,
    embedding2: Option<WireEmbedding>,
    #[serde(default)]
    config: ConfigOverrides,
}

fn endpoints(body: &CalibrateBody) -> ApiResult<(Embedding, Embedding, PromptInfo)> {
    match (&body.embedding1, &body.embedding2, &body.prompt1, &body.prompt2) {
        (Some(w1), Some(w2), None, None) => {
            let decode = |field: &str, w: &WireEmbedding| w.decode().map_err(|e| ApiError::field(field, e));
            Ok((decode("embedding1", w1)?, decode("embedding2", w2)?, PromptInfo::default()))
        }
        (None, None, Some(p1), Some(p2)) => {
            let encoder = StubEncoder {
                seed: body.stub_seed.unwrap_or(0),
                ..StubEncoder::default()
            };
            let encode = |field: &str, p: &str| encoder.encode(p).map_err(|e| ApiError::field(field, e.to_string()));
            Ok((
                encode("prompt1", p1)?,
                encode("prompt2", p2)?,
                PromptInfo {
                    prompt1: Some(p1.clone()),
                    prompt2: Some(p2.clone()),
                },
            ))
        }
        _ => Err(ApiError::bad_request(
            "give either prompt1 and prompt2, or embedding1 and embedding2",
        )),
    }
}

fn calibration_config(o: &ConfigOverrides, mask: &MaskBuffer) -> ApiResult<CalibrationConfig> {
    let radius = o.probe_radius.unwrap_or(1);
    let probe = match o.probe {
        Some(p) => p,
        None => Probe::centered_in(mask, radius).ok_or_else(|| {
            ApiError::field("probe", "no fully masked probe window at the mask centroid; set config.probe")
        })?,
    };
    let mut config = CalibrationConfig::new(probe);
    config.n_samples = o.n_samples.unwrap_or(config.n_samples);
    config.pca_dims = o.pca_dims.unwrap_or(config.pca_dims);
    if let Some(hidden) = &o.hidden {
        config.hidden = hidden.clone();
    }
    config.train.epochs = o.epochs.unwrap_or(config.train.epochs);
    config.train.learning_rate = o.learning_rate.unwrap_or(config.train.learning_rate);
    config.train.seed = o.train_seed.unwrap_or(config.train.seed);
    config.guidance = GuidanceParams {
        s_image: o.s_image.unwrap_or(config.guidance.s_image),
        s_text: o.s_text.unwrap_or(config.guidance.s_text),
    };
    config.steps = o.steps.unwrap_or(config.steps);
    if let Some(name) = &o.sampler_name {
        config.sampler_name = name.clone();
    }
    config.seed = o.seed.unwrap_or(config.seed);
    config.parallel = o.parallel.unwrap_or(1).max(1);
    config.validate().map_err(|e| ApiError::field("config", e.to_string()))?;
    if !probe.inside_mask(mask) {
        return Err(ApiError::field(
            "probe",
            format!(
                "probe window at ({}, {}) radius {} is not fully inside the mask",
                probe.x, probe.y, probe.radius
            ),
        ));
    }
    Ok(config)
}

#[derive(Serialize)]
pub struct Accepted {
    status_url: String,
}

pub async fn start_calibration(
    State(state): AppStateRef,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Accepted>)> {
    let handle = session(&state, &id)?;
    let body: CalibrateBody = parse_json(&body)?;
    let (e1, e2, prompts) = endpoints(&body)?;

    let (image, mask, config, progress) = {
        let mut s = lock(&handle);
        if s.status == CalibrationStatus::Running {
            return Err(ApiError::conflict("calibration already running"));
        }
        let image = s.image.clone().ok_or_else(|| ApiError::field("image", "upload an image first"))?;
        let mask = s.mask.clone().ok_or_else(|| ApiError::field("mask", "upload a mask first"))?;
        e1.ensure_same_shape(&e2)
            .map_err(|e| ApiError::field("embedding2", e.to_string()))?;
        let config = calibration_config(&body.config, &mask)?;
        s.status = CalibrationStatus::Running;
        s.calibrated = None;
        s.progress.reset(config.n_samples);
        (image, mask, config, s.progress.clone())
    };

    let backend = match state.config.backend.backend(&e1, &e2) {
        Ok(b) => b,
        Err(e) => {
            let mut s = lock(&handle);
            s.status = CalibrationStatus::Failed(e.to_string());
            return Err(ApiError::bad_request(e.to_string()));
        }
    };
    let task_handle = handle.clone();
    tokio::task::spawn_blocking(move || {
        let on_progress = |done: usize, _total: usize| progress.advance(done);
        let outcome = calibrate_with_progress(backend.as_ref(), &e1, &e2, &image, &mask, &config, prompts, &on_progress);
        let mut s = lock(&task_handle);
        match outcome {
            Ok(record) => {
                for w in &record.warnings {
                    log::warn!("{w}");
                }
                s.calibrated = Some(Calibrated {
                    model: Arc::new(record.model),
                    train_report: record.train_report,
                    pca_dims_used: record.pca_dims_used,
                    warnings: record.warnings,
                });
                s.status = CalibrationStatus::Done;
            }
            Err(e) => {
                log::warn!("calibration failed: {e}");
                s.status = CalibrationStatus::Failed(e.to_string());
            }
        }
    });

    Ok((
        StatusCode::ACCEPTED,
        Json(Accepted {
            status_url: format!("/sessions/{id}/calibration"),
        }),
    ))
}

#[derive(Serialize)]
pub struct ProgressView {
    done: usize,
    total: usize,
}

#[derive(Serialize)]
pub struct CalibrationView {
    status: &'static str,
    progress: ProgressView,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    loss_history: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamut: Option<Gamut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pca_dims_used: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

pub async fn calibration_status(
    State(state): AppStateRef,
    Path(id): Path<String>,
) -> ApiResult<Json<CalibrationView>> {
    let handle = session(&state, &id)?;
    let s = lock(&handle);
    let (done, total) = s.progress.snapshot();
    let calibrated = s.calibrated.as_ref();
    Ok(Json(CalibrationView {
        status: s.status.label(),
        progress: ProgressView { done, total },
        error: match &s.status {
            CalibrationStatus::Failed(msg) => Some(msg.clone()),
            _ => None,
        },
        loss_history: calibrated.map(|c| c.train_report.loss_history.clone()),
        final_loss: calibrated.map(|c| c.train_report.final_loss),
        gamut: s.gamut(),
        pca_dims_used: calibrated.map(|c| c.pca_dims_used),
        warnings: calibrated.map(|c| c.warnings.clone()).unwrap_or_default(),
    }))
}

/// Model and inputs for an edit, or 409 when the session has no model yet.
fn edit_inputs(s: &Session) -> ApiResult<(Arc<ColorMapperModel>, ImageBuffer, MaskBuffer)> {
    let model = match (&s.status, &s.calibrated) {
        (CalibrationStatus::Done, Some(c)) => c.model.clone(),
        (CalibrationStatus::Running, _) => return Err(ApiError::conflict("not calibrated: calibration is running")),
        _ => return Err(ApiError::conflict("not calibrated: run a calibration first")),
    };
    let image = s.image.clone().ok_or_else(|| ApiError::field("image", "upload an image first"))?;
    let mask = s.mask.clone().ok_or_else(|| ApiError::field("mask", "upload a mask first"))?;
    Ok((model, image, mask))
}

#[derive(Debug, Default, Deserialize)]
pub struct SamplerOverrides {
    seed: Option<u64>,
    s_image: Option<f64>,
    s_text: Option<f64>,
    steps: Option<usize>,
    sampler_name: Option<String>,
}

impl SamplerOverrides {
    fn params(&self) -> ApiResult<EditParams> {
        let d = EditParams::default();
        let guidance = GuidanceParams::new(
            self.s_image.unwrap_or(d.guidance.s_image),
            self.s_text.unwrap_or(d.guidance.s_text),
        )
        .map_err(|e| ApiError::field("s_image", e.to_string()))?;
        let steps = self.steps.unwrap_or(d.steps);
        if steps == 0 {
            return Err(ApiError::field("steps", "steps must be >= 1"));
        }
        Ok(EditParams {
            guidance,
            steps,
            sampler_name: self.sampler_name.clone().unwrap_or(d.sampler_name),
            seed: self.seed.unwrap_or(d.seed),
            mask_schedule: d.mask_schedule,
        })
    }
}

#[derive(Debug, Deserialize)]
pub struct EditBody {
    rgb: Vec<i64>,
    #[serde(flatten)]
    sampler: SamplerOverrides,
}

/// PNG bytes of the stored (quantized) result and the probe color measured on them.
fn render(model: &ColorMapperModel, result: &EditResult) -> ApiResult<(Vec<u8>, Rgb)> {
    let stored = quantize(&result.image);
    let measured = extract_probe_rgb(&stored, model.probe())
        .map_err(|e| ApiError::bad_request(format!("probe: {e}")))?;
    let png = encode_png_image(&stored).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok((png, measured))
}

fn rgb_header(c: [u8; 3]) -> HeaderValue {
    HeaderValue::from_str(&format!("{},{},{}", c[0], c[1], c[2])).expect("digits and commas")
}

pub async fn edit(State(state): AppStateRef, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let handle = session(&state, &id)?;
    let body: EditBody = parse_json(&body)?;
    let target = parse_rgb("rgb", &body.rgb)?;
    let params = body.sampler.params()?;
    let (model, image, mask) = edit_inputs(&lock(&handle))?;
    let ends = model.endpoints();
    let backend = state.config.backend.backend(&ends.e1, &ends.e2).map_err(|e| ApiError::bad_request(e.to_string()))?;

    let (png, measured, out_of_gamut, seed) = blocking(move || {
        let result = run_edit(backend.as_ref(), &model, &image, &mask, target, &params)?;
        let (png, measured) = render(&model, &result)?;
        Ok((png, measured, result.out_of_gamut, result.seed))
    })
    .await?;

    let measured = rgb255(measured);
    lock(&handle).record_edit(HistoryEntry {
        requested_rgb: rgb255(target),
        measured_rgb: measured,
        out_of_gamut,
        seed,
    });
    let headers = [
        (header::CONTENT_TYPE, HeaderValue::from_static("image/png")),
        (MEASURED_RGB, rgb_header(measured)),
        (REQUESTED_RGB, rgb_header(rgb255(target))),
        (OUT_OF_GAMUT, HeaderValue::from_static(if out_of_gamut { "true" } else { "false" })),
    ];
    Ok((headers, png).into_response())
}

#[derive(Debug, Deserialize)]
pub struct SweepBody {
    rgb_start: Vec<i64>,
    rgb_end: Vec<i64>,
    count: usize,
    parallel: Option<usize>,
    #[serde(flatten)]
    sampler: SamplerOverrides,
}

#[derive(Serialize)]
pub struct SweepItem {
    url: String,
    requested_rgb: [u8; 3],
    measured_rgb: [u8; 3],
    out_of_gamut: bool,
}

#[derive(Serialize)]
pub struct SweepManifest {
    sweep_id: String,
    images: Vec<SweepItem>,
    linearity: LinearityReport,
}

pub async fn sweep(State(state): AppStateRef, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<SweepManifest>> {
    const MAX_COUNT: usize = 64;
    let handle = session(&state, &id)?;
    let body: SweepBody = parse_json(&body)?;
    let start = parse_rgb("rgb_start", &body.rgb_start)?;
    let end = parse_rgb("rgb_end", &body.rgb_end)?;
    if !(2..=MAX_COUNT).contains(&body.count) {
        return Err(ApiError::field("count", format!("count must be in 2..={MAX_COUNT}, got {}", body.count)));
    }
    let params = body.sampler.params()?;
    let parallel = body.parallel.unwrap_or(1).max(1);
    let (model, image, mask) = edit_inputs(&lock(&handle))?;
    let ends = model.endpoints();
    let backend = state.config.backend.backend(&ends.e1, &ends.e2).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let count = body.count;

    let (rendered, flags, report) = blocking(move || {
        let targets = linear_targets(start, end, count)?;
        let results = sweep_edit(backend.as_ref(), &model, &image, &mask, start, end, count, &params, parallel)?;
        let rendered = results.iter().map(|r| render(&model, r)).collect::<ApiResult<Vec<_>>>()?;
        let measured: Vec<Rgb> = rendered.iter().map(|(_, m)| *m).collect();
        let report = linearity(&targets, &measured).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let flags: Vec<(Rgb, bool)> = results.iter().map(|r| (r.requested, r.out_of_gamut)).collect();
        Ok((rendered, flags, report))
    })
    .await?;

    let sweep_id = uuid::Uuid::new_v4().simple().to_string();
    let images = rendered
        .iter()
        .zip(&flags)
        .enumerate()
        .map(|(i, ((_, measured), (requested, oog)))| SweepItem {
            url: format!("/sessions/{id}/sweeps/{sweep_id}/{i}"),
            requested_rgb: rgb255(*requested),
            measured_rgb: rgb255(*measured),
            out_of_gamut: *oog,
        })
        .collect();
    lock(&handle).store_sweep(sweep_id.clone(), rendered.into_iter().map(|(png, _)| png).collect());
    Ok(Json(SweepManifest {
        sweep_id,
        images,
        linearity: report,
    }))
}

pub async fn sweep_image(
    State(state): AppStateRef,
    Path((id, sweep, index)): Path<(String, String, usize)>,
) -> ApiResult<Response> {
    let handle = session(&state, &id)?;
    let s = lock(&handle);
    let png = s
        .sweep_image(&sweep, index)
        .ok_or_else(|| ApiError::not_found(format!("no image {index} in sweep {sweep}")))?
        .to_vec();
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

pub async fn history(State(state): AppStateRef, Path(id): Path<String>) -> ApiResult<Json<Vec<HistoryEntry>>> {
    let handle = session(&state, &id)?;
    let s = lock(&handle);
    Ok(Json(s.history.iter().cloned().collect()))
}

pub async fn download_model(State(state): AppStateRef, Path(id): Path<String>) -> ApiResult<Response> {
    let handle = session(&state, &id)?;
    let model = lock(&handle)
        .calibrated
        .as_ref()
        .map(|c| c.model.clone())
        .ok_or_else(|| ApiError::not_found("not calibrated"))?;
    let bytes = model.to_bytes();
    Ok((
        [
            (header::CONTENT_TYPE, "application/octet-stream"),
            (header::CONTENT_DISPOSITION, "attachment; filename=\"model.cmap\""),
        ],
        bytes,
    )
        .into_response())
}
