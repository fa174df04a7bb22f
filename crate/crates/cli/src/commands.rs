use crate::args::{BackendArgs, BackendKind, CalibrateArgs, EditArgs, InspectArgs, SamplerArgs, SweepArgs};
use color_mapper::io::{quantize, read_embedding, read_png_image, read_png_mask, write_png_image, IoError};
use color_mapper::mapper::read_header;
use color_mapper::pipeline::linear_targets;
use color_mapper::{
    calibrate_with_progress, edit, extract_probe_rgb, linearity, rgb_to_u8, sweep_edit, CalibrationConfig,
    ColorMapperModel, EditParams, EditResult, Embedding, FailureKind, GeneratorBackend, GuidanceParams,
    ImageBuffer, LinearityReport, MaskBuffer, ModelFileError, PipelineError, Probe, PromptInfo, RemoteClient,
    RemoteConfig, Rgb, Simulator, SimulatorSpec, StubEncoder, TrainConfig,
};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Duration;

/// A failed command: the diagnostic plus the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let code = match e.kind() {
            FailureKind::Validation => 1,
            FailureKind::Backend => 2,
            FailureKind::Fitting => 3,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<ModelFileError> for CliError {
    fn from(e: ModelFileError) -> Self {
        Self::validation(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| CliError::validation(format!("missing required flag --{flag}")))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    std::fs::write(path, text + "\n")
        .map_err(|e| CliError::validation(format!("cannot write {}: {e}", path.display())))
}

fn rgb255(c: Rgb) -> [u8; 3] {
    let (r, g, b) = rgb_to_u8(c);
    [r, g, b]
}

fn remote_backend(args: &BackendArgs) -> CliResult<Box<dyn GeneratorBackend>> {
    let url = args
        .backend_url
        .as_ref()
        .ok_or_else(|| CliError::validation("--backend remote needs --backend-url or COLOR_MAPPER_BACKEND_URL"))?;
    if !(args.timeout.is_finite() && args.timeout > 0.0) {
        return Err(CliError::validation(format!("--timeout must be positive, got {}", args.timeout)));
    }
    let mut config = RemoteConfig::new(url.clone());
    config.timeout = Duration::from_secs_f64(args.timeout);
    let client = RemoteClient::new(config).map_err(|e| CliError {
        code: 2,
        message: e.to_string(),
    })?;
    Ok(Box::new(client))
}

/// The simulator traces its color curve between the two given anchors.
fn backend(args: &BackendArgs, anchor0: &Embedding, anchor1: &Embedding) -> CliResult<Box<dyn GeneratorBackend>> {
    match args.backend {
        BackendKind::Remote => remote_backend(args),
        BackendKind::Simulator => {
            let mut spec = SimulatorSpec::new(anchor0.clone(), anchor1.clone(), args.sim_color0, args.sim_color1);
            spec.gamma = args.sim_gamma;
            let sim = Simulator::new(spec).map_err(|e| CliError::validation(e.to_string()))?;
            Ok(Box::new(sim))
        }
    }
}

fn guidance(args: &SamplerArgs) -> CliResult<GuidanceParams> {
    GuidanceParams::new(args.s_image, args.s_text).map_err(|e| CliError::validation(e.to_string()))
}

fn edit_params(args: &SamplerArgs) -> CliResult<EditParams> {
    Ok(EditParams {
        guidance: guidance(args)?,
        steps: args.steps,
        sampler_name: args.sampler.clone(),
        seed: args.seed,
        ..EditParams::default()
    })
}

fn load_inputs(image: &Option<PathBuf>, mask: &Option<PathBuf>) -> CliResult<(ImageBuffer, MaskBuffer)> {
    let image_path = required(image, "image")?;
    let mask_path = required(mask, "mask")?;
    Ok((read_png_image(image_path)?, read_png_mask(mask_path)?))
}

fn endpoints(args: &CalibrateArgs) -> CliResult<(Embedding, Embedding, PromptInfo)> {
    match (&args.embedding1, &args.embedding2, &args.prompt1, &args.prompt2) {
        (Some(p1), Some(p2), None, None) => Ok((read_embedding(p1)?, read_embedding(p2)?, PromptInfo::default())),
        (None, None, Some(t1), Some(t2)) => {
            let encoder = StubEncoder {
                seed: args.stub_seed,
                ..StubEncoder::default()
            };
            let encode = |t: &str| encoder.encode(t).map_err(|e| CliError::validation(e.to_string()));
            Ok((
                encode(t1)?,
                encode(t2)?,
                PromptInfo {
                    prompt1: Some(t1.clone()),
                    prompt2: Some(t2.clone()),
                },
            ))
        }
        _ => Err(CliError::validation(
            "give either --embedding1 and --embedding2, or --prompt1 and --prompt2",
        )),
    }
}

fn default_probe(mask: &MaskBuffer, radius: usize) -> CliResult<Probe> {
    Probe::centered_in(mask, radius).ok_or_else(|| {
        CliError::validation("no fully masked probe window at the mask centroid; pass --probe x,y")
    })
}

#[derive(Serialize)]
struct SampleRow {
    alpha: f64,
    rgb: [f64; 3],
    rgb255: [u8; 3],
}

#[derive(Serialize)]
struct CalibrationReport {
    n_samples: usize,
    pca_dims_used: usize,
    layer_sizes: Vec<usize>,
    probe: Probe,
    final_loss: f64,
    loss_history: Vec<f64>,
    gamut: color_mapper::Gamut,
    warnings: Vec<String>,
    samples: Vec<SampleRow>,
}

fn report_path(args: &CalibrateArgs, model: &Path) -> PathBuf {
    args.report.clone().unwrap_or_else(|| {
        let mut name = model.as_os_str().to_owned();
        name.push(".report.json");
        PathBuf::from(name)
    })
}

pub fn calibrate(args: &CalibrateArgs) -> CliResult {
    let (image, mask) = load_inputs(&args.image, &args.mask)?;
    let model_path = required(&args.model, "model")?;
    let (e1, e2, prompts) = endpoints(args)?;
    let probe = match args.probe {
        Some((x, y)) => Probe::new(x, y, args.probe_radius),
        None => default_probe(&mask, args.probe_radius)?,
    };
    let config = CalibrationConfig {
        n_samples: args.samples,
        pca_dims: args.pca_dims,
        hidden: args.hidden.clone(),
        train: TrainConfig {
            learning_rate: args.lr,
            epochs: args.epochs,
            seed: args.train_seed,
            ..TrainConfig::default()
        },
        guidance: guidance(&args.sampler)?,
        steps: args.sampler.steps,
        sampler_name: args.sampler.sampler.clone(),
        seed: args.sampler.seed,
        parallel: args.parallel.max(1),
        ..CalibrationConfig::new(probe)
    };
    let backend = backend(&args.backend, &e1, &e2)?;
    let progress = |done: usize, total: usize| log::info!("generated sample {done}/{total}");
    let record = calibrate_with_progress(backend.as_ref(), &e1, &e2, &image, &mask, &config, prompts, &progress)?;

    record.model.save_to_path(model_path)?;
    let report = CalibrationReport {
        n_samples: record.samples.len(),
        pca_dims_used: record.pca_dims_used,
        layer_sizes: record.model.mlp().layer_sizes(),
        probe,
        final_loss: record.train_report.final_loss,
        loss_history: record.train_report.loss_history.clone(),
        gamut: record.model.gamut(),
        warnings: record.warnings.clone(),
        samples: record
            .samples
            .iter()
            .map(|s| SampleRow {
                alpha: s.alpha,
                rgb: s.rgb.to_array(),
                rgb255: rgb255(s.rgb),
            })
            .collect(),
    };
    let report_path = report_path(args, model_path);
    write_json(&report_path, &report)?;
    println!(
        "calibrated {} samples, {} PCA component(s), final loss {:.3e}; model {} report {}",
        report.n_samples,
        report.pca_dims_used,
        report.final_loss,
        model_path.display(),
        report_path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EditSidecar {
    requested_rgb: [u8; 3],
    measured_rgb: [u8; 3],
    measured_rgb_unit: [f64; 3],
    out_of_gamut: bool,
    seed: u64,
}

fn load_model(path: &Option<PathBuf>) -> CliResult<ColorMapperModel> {
    Ok(ColorMapperModel::load_from_path(required(path, "model")?)?)
}

fn model_backend(args: &BackendArgs, model: &ColorMapperModel) -> CliResult<Box<dyn GeneratorBackend>> {
    let ends = model.endpoints();
    backend(args, &ends.e1, &ends.e2)
}

/// Writes the quantized PNG and its sidecar; returns the probe color measured on the PNG.
fn write_result(path: &Path, model: &ColorMapperModel, result: &EditResult) -> CliResult<Rgb> {
    let stored = quantize(&result.image);
    let measured = extract_probe_rgb(&stored, model.probe()).map_err(|e| CliError::validation(e.to_string()))?;
    write_png_image(path, &stored)?;
    let sidecar = EditSidecar {
        requested_rgb: rgb255(result.requested),
        measured_rgb: rgb255(measured),
        measured_rgb_unit: measured.to_array(),
        out_of_gamut: result.out_of_gamut,
        seed: result.seed,
    };
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    write_json(Path::new(&name), &sidecar)?;
    Ok(measured)
}

pub fn edit_command(args: &EditArgs) -> CliResult {
    let model = load_model(&args.model)?;
    let (image, mask) = load_inputs(&args.image, &args.mask)?;
    let target = *required(&args.rgb, "rgb")?;
    let output = required(&args.output, "output")?;
    let params = edit_params(&args.sampler)?;
    let backend = model_backend(&args.backend, &model)?;
    let result = edit(backend.as_ref(), &model, &image, &mask, target, &params)?;
    let measured = write_result(output, &model, &result)?;
    if result.out_of_gamut {
        log::warn!("requested color is outside the calibrated gamut");
    }
    println!(
        "requested {:?} measured {:?} -> {}",
        rgb255(target),
        rgb255(measured),
        output.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SweepManifest {
    images: Vec<String>,
    requested: Vec<[u8; 3]>,
    measured: Vec<[u8; 3]>,
    linearity: LinearityReport,
}

pub fn sweep(args: &SweepArgs) -> CliResult {
    let model = load_model(&args.model)?;
    let (image, mask) = load_inputs(&args.image, &args.mask)?;
    let start = *required(&args.rgb_start, "rgb-start")?;
    let end = *required(&args.rgb_end, "rgb-end")?;
    let out_dir = required(&args.out_dir, "out-dir")?;
    let targets = linear_targets(start, end, args.count)?;
    let params = edit_params(&args.sampler)?;
    let backend = model_backend(&args.backend, &model)?;
    let results = sweep_edit(
        backend.as_ref(),
        &model,
        &image,
        &mask,
        start,
        end,
        args.count,
        &params,
        args.parallel.max(1),
    )?;

    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::validation(format!("cannot create {}: {e}", out_dir.display())))?;
    let mut names = Vec::new();
    let mut measured = Vec::new();
    for (i, result) in results.iter().enumerate() {
        let name = format!("sweep_{i:03}.png");
        measured.push(write_result(&out_dir.join(&name), &model, result)?);
        names.push(name);
    }
    let out_of_gamut = results.iter().filter(|r| r.out_of_gamut).count();
    if out_of_gamut > 0 {
        log::warn!("{out_of_gamut} of {} sweep targets are outside the calibrated gamut", results.len());
    }
    let report = linearity(&targets, &measured).map_err(|e| CliError::validation(e.to_string()))?;
    let manifest = SweepManifest {
        images: names,
        requested: targets.iter().map(|&c| rgb255(c)).collect(),
        measured: measured.iter().map(|&c| rgb255(c)).collect(),
        linearity: report.clone(),
    };
    write_json(&out_dir.join("linearity.json"), &manifest)?;

    if let Some(csv_path) = &args.csv {
        let mut writer = csv::Writer::from_path(csv_path)
            .map_err(|e| CliError::validation(format!("cannot write {}: {e}", csv_path.display())))?;
        let csv_err = |e: csv::Error| CliError::validation(format!("cannot write {}: {e}", csv_path.display()));
        writer
            .write_record(["index", "req_r", "req_g", "req_b", "meas_r", "meas_g", "meas_b"])
            .map_err(csv_err)?;
        for (i, (req, meas)) in targets.iter().zip(&measured).enumerate() {
            let (req, meas) = (rgb255(*req), rgb255(*meas));
            let row = [i as u32, req[0].into(), req[1].into(), req[2].into(), meas[0].into(), meas[1].into(), meas[2].into()];
            writer.serialize(row).map_err(csv_err)?;
        }
        writer.flush().map_err(|e| CliError::validation(e.to_string()))?;
    }

    println!(
        "wrote {} images to {}; R² per channel {:?}",
        results.len(),
        out_dir.display(),
        report.per_channel_r2
    );
    Ok(())
}

pub fn inspect(args: &InspectArgs) -> CliResult {
    let path = required(&args.model, "model")?;
    let bytes = std::fs::read(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    // Decode the whole file so payload corruption is reported too, not just header damage.
    ColorMapperModel::from_bytes(&bytes)?;
    let header = read_header(&bytes)?;
    println!("{}", serde_json::to_string_pretty(&header).expect("header serializes"));
    Ok(())
}
