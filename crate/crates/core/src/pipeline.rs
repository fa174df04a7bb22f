//! Calibration (sweep → generate → probe → PCA → MLP) and inference (RGB → embedding →
//! edited image).

use crate::backend::{BackendError, GenerationRequest, GeneratorBackend, DEFAULT_SAMPLER, DEFAULT_STEPS};
use crate::guidance::{GuidanceParams, MaskSchedule};
use crate::interpolation::{uniform_sweep, InterpolationError};
use crate::mapper::{ColorMapperModel, Endpoints, Gamut, MapperError};
use crate::metrics::{extract_probe_rgb, MetricsError, Probe};
use crate::mlp::{MlpError, MlpModel, Normalization, TrainConfig, TrainReport, DEFAULT_HIDDEN};
use crate::pca::{PcaError, PcaModel};
use crate::types::{validate_pair, CalibrationSample, Embedding, ImageBuffer, MaskBuffer, Rgb, ValidationError};
use rayon::prelude::*;
use std::sync::atomic::{AtomicUsize, Ordering};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("probe window at ({x}, {y}) radius {radius} is not fully inside the mask")]
    ProbeOutsideMask { x: usize, y: usize, radius: usize },
    #[error("backend failed on sample {index}: {source}")]
    SampleGeneration {
        index: usize,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error(transparent)]
    Training(#[from] MlpError),
    #[error(transparent)]
    Interpolation(#[from] InterpolationError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Mapper(#[from] MapperError),
}

/// Coarse cause of a pipeline failure, for mapping onto exit codes or HTTP statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    /// Bad inputs or configuration.
    Validation,
    /// The generator could not produce an image.
    Backend,
    /// PCA fitting or MLP training failed.
    Fitting,
}

impl PipelineError {
    pub fn kind(&self) -> FailureKind {
        match self {
            PipelineError::SampleGeneration { .. } => FailureKind::Backend,
            PipelineError::Backend(BackendError::Request(_)) => FailureKind::Validation,
            PipelineError::Backend(_) => FailureKind::Backend,
            PipelineError::Pca(_) | PipelineError::Training(_) => FailureKind::Fitting,
            _ => FailureKind::Validation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub n_samples: usize,
    /// Ceiling on PCA components; reduced automatically to the achievable rank.
    pub pca_dims: usize,
    pub probe: Probe,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub guidance: GuidanceParams,
    pub steps: usize,
    pub sampler_name: String,
    pub seed: u64,
    pub mask_schedule: MaskSchedule,
    /// Concurrent backend requests during the sweep.
    pub parallel: usize,
}

impl CalibrationConfig {
    pub fn new(probe: Probe) -> Self {
        Self {
            n_samples: 30,
            pca_dims: 15,
            probe,
            hidden: DEFAULT_HIDDEN.to_vec(),
            train: TrainConfig::default(),
            guidance: GuidanceParams::default(),
            steps: DEFAULT_STEPS,
            sampler_name: DEFAULT_SAMPLER.to_string(),
            seed: 0,
            mask_schedule: MaskSchedule::default(),
            parallel: 1,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.pca_dims == 0 {
            return Err(PipelineError::Config("pca_dims must be >= 1".into()));
        }
        if self.n_samples < (self.pca_dims + 1).max(2) {
            return Err(PipelineError::Config(format!(
                "n_samples {} must be at least pca_dims + 1 = {}",
                self.n_samples,
                self.pca_dims + 1
            )));
        }
        if self.steps == 0 {
            return Err(PipelineError::Config("steps must be >= 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(PipelineError::Config("hidden layer sizes must be >= 1".into()));
        }
        self.guidance
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.train.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationRecord {
    pub samples: Vec<CalibrationSample>,
    pub train_report: TrainReport,
    pub model: ColorMapperModel,
    /// Components actually kept (≤ `pca_dims`).
    pub pca_dims_used: usize,
    pub warnings: Vec<String>,
}

/// Prompt texts recorded in the model file, if the endpoints came from prompts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptInfo {
    pub prompt1: Option<String>,
    pub prompt2: Option<String>,
}

fn run_indexed<T, F>(count: usize, parallel: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if parallel <= 1 {
        return (0..count).map(job).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(parallel).build() {
        Ok(pool) => pool.install(|| (0..count).into_par_iter().map(&job).collect()),
        Err(_) => (0..count).map(job).collect(),
    }
}

/// Runs the full calibration workflow. `progress(done, total)` is called after each
/// generated sample.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_with_progress(
    backend: &dyn GeneratorBackend,
    e1: &Embedding,
    e2: &Embedding,
    image: &ImageBuffer,
    mask: &MaskBuffer,
    config: &CalibrationConfig,
    prompts: PromptInfo,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<CalibrationRecord, PipelineError> {
    validate_pair(image, mask)?;
    e1.ensure_same_shape(e2)?;
    config.validate()?;
    let probe = config.probe;
    if !probe.inside_mask(mask) {
        return Err(PipelineError::ProbeOutsideMask {
            x: probe.x,
            y: probe.y,
            radius: probe.radius,
        });
    }

    let sweep = uniform_sweep(e1, e2, config.n_samples)?;
    let done = AtomicUsize::new(0);
    let total = sweep.len();
    let results = run_indexed(total, config.parallel, |i| {
        let (alpha, embedding) = &sweep[i];
        let request = GenerationRequest {
            image: image.clone(),
            mask: mask.clone(),
            embedding: embedding.clone(),
            guidance: config.guidance,
            steps: config.steps,
            sampler_name: config.sampler_name.clone(),
            seed: config.seed,
            mask_schedule: config.mask_schedule,
        };
        let generated = backend
            .generate(&request)
            .map_err(|source| PipelineError::SampleGeneration { index: i, source })?;
        let rgb = extract_probe_rgb(&generated, probe)?;
        progress(done.fetch_add(1, Ordering::SeqCst) + 1, total);
        Ok(CalibrationSample::new(*alpha, embedding.clone(), rgb)?)
    });
    let samples = results.into_iter().collect::<Result<Vec<_>, PipelineError>>()?;

    let embeddings: Vec<Embedding> = samples.iter().map(|s| s.embedding.clone()).collect();
    let mut warnings = Vec::new();
    let mut requested = config.pca_dims;
    if requested > e1.dim() {
        let msg = format!(
            "embeddings have only {} values; using {} PCA component(s) instead of {requested}",
            e1.dim(),
            e1.dim()
        );
        log::warn!("{msg}");
        warnings.push(msg);
        requested = e1.dim();
    }
    let pca = match PcaModel::fit(&embeddings, requested) {
        Ok(p) => p,
        Err(PcaError::RankDeficient {
            requested,
            achievable,
        }) if achievable >= 1 => {
            let msg = format!(
                "calibration embeddings have rank {achievable}; using {achievable} PCA component(s) instead of {requested}"
            );
            log::warn!("{msg}");
            warnings.push(msg);
            PcaModel::fit(&embeddings, achievable)?
        }
        Err(e) => return Err(e.into()),
    };

    let training: Vec<(Rgb, _)> = samples
        .iter()
        .map(|s| Ok((s.rgb, pca.transform(&s.embedding)?)))
        .collect::<Result<_, PcaError>>()?;
    let colors: Vec<Rgb> = samples.iter().map(|s| s.rgb).collect();
    let gamut = Gamut::from_colors(&colors).expect("sweep has at least two samples");

    // Calibration colors often span a thin slice of the cube and codes can be tiny or huge;
    // training on rescaled values keeps the fixed Adam budget effective at any scale.
    let code_std: Vec<f64> = pca.variances().iter().map(|v| v.sqrt()).collect();
    let norm = Normalization::from_ranges(gamut.min, gamut.max, &code_std);
    let mlp = MlpModel::with_hidden(&config.hidden, pca.components(), config.train.seed)?;
    let (mlp, train_report) = mlp.train_normalized(&training, &config.train, &norm)?;
    let pca_dims_used = pca.components();
    let model = ColorMapperModel::new(
        pca,
        mlp,
        probe,
        (image.height(), image.width()),
        gamut,
        Endpoints {
            e1: e1.clone(),
            e2: e2.clone(),
            prompt1: prompts.prompt1,
            prompt2: prompts.prompt2,
        },
    )?;
    Ok(CalibrationRecord {
        samples,
        train_report,
        model,
        pca_dims_used,
        warnings,
    })
}

pub fn calibrate(
    backend: &dyn GeneratorBackend,
    e1: &Embedding,
    e2: &Embedding,
    image: &ImageBuffer,
    mask: &MaskBuffer,
    config: &CalibrationConfig,
) -> Result<CalibrationRecord, PipelineError> {
    calibrate_with_progress(backend, e1, e2, image, mask, config, PromptInfo::default(), &|_, _| {})
}

/// Sampler settings for an edit.
#[derive(Debug, Clone, PartialEq)]
pub struct EditParams {
    pub guidance: GuidanceParams,
    pub steps: usize,
    pub sampler_name: String,
    pub seed: u64,
    pub mask_schedule: MaskSchedule,
}

impl Default for EditParams {
    fn default() -> Self {
        Self {
            guidance: GuidanceParams::default(),
            steps: DEFAULT_STEPS,
            sampler_name: DEFAULT_SAMPLER.to_string(),
            seed: 0,
            mask_schedule: MaskSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditResult {
    pub image: ImageBuffer,
    pub requested: Rgb,
    pub out_of_gamut: bool,
    pub seed: u64,
}

/// Generates an edit whose masked region should take the target color.
pub fn edit(
    backend: &dyn GeneratorBackend,
    model: &ColorMapperModel,
    image: &ImageBuffer,
    mask: &MaskBuffer,
    target: Rgb,
    params: &EditParams,
) -> Result<EditResult, PipelineError> {
    validate_pair(image, mask)?;
    let prediction = model.predict_embedding(target);
    if prediction.out_of_gamut {
        log::warn!(
            "target {:?} lies outside the calibrated gamut {:?}; the result is extrapolated",
            target.to_array(),
            model.gamut()
        );
    }
    let request = GenerationRequest {
        image: image.clone(),
        mask: mask.clone(),
        embedding: prediction.embedding,
        guidance: params.guidance,
        steps: params.steps,
        sampler_name: params.sampler_name.clone(),
        seed: params.seed,
        mask_schedule: params.mask_schedule,
    };
    let edited = backend.generate(&request)?;
    Ok(EditResult {
        image: edited,
        requested: target,
        out_of_gamut: prediction.out_of_gamut,
        seed: params.seed,
    })
}

/// `k` targets evenly spaced on the straight RGB segment, endpoints included.
pub fn linear_targets(start: Rgb, end: Rgb, k: usize) -> Result<Vec<Rgb>, PipelineError> {
    if k < 2 {
        return Err(PipelineError::Config(format!("sweep count must be >= 2, got {k}")));
    }
    Ok((0..k)
        .map(|i| start.lerp(end, i as f64 / (k - 1) as f64))
        .collect())
}

/// Edits for `k` targets linear in RGB between `start` and `end`, in order.
#[allow(clippy::too_many_arguments)]
pub fn sweep_edit(
    backend: &dyn GeneratorBackend,
    model: &ColorMapperModel,
    image: &ImageBuffer,
    mask: &MaskBuffer,
    start: Rgb,
    end: Rgb,
    k: usize,
    params: &EditParams,
    parallel: usize,
) -> Result<Vec<EditResult>, PipelineError> {
    let targets = linear_targets(start, end, k)?;
    run_indexed(k, parallel, |i| edit(backend, model, image, mask, targets[i], params))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Simulator, SimulatorSpec};
    use crate::encoder::StubEncoder;

    fn setup() -> (Simulator, Embedding, Embedding, ImageBuffer, MaskBuffer) {
        let enc = StubEncoder::new(4, 16, 0).unwrap();
        let e1 = enc.encode("paint it orange").unwrap();
        let e2 = enc.encode("paint it teal").unwrap();
        let sim = Simulator::new(SimulatorSpec::new(
            e1.clone(),
            e2.clone(),
            Rgb::new(0.95, 0.55, 0.1).unwrap(),
            Rgb::new(0.1, 0.5, 0.55).unwrap(),
        ))
        .unwrap();
        let image = ImageBuffer::filled(8, 8, Rgb::new(0.3, 0.3, 0.3).unwrap()).unwrap();
        let on: Vec<bool> = (0..64).map(|i| (2..6).contains(&(i % 8)) && (2..6).contains(&(i / 8))).collect();
        let mask = MaskBuffer::from_bools(8, 8, &on).unwrap();
        (sim, e1, e2, image, mask)
    }

    #[test]
    fn probe_outside_mask_is_rejected() {
        let (sim, e1, e2, image, mask) = setup();
        let config = CalibrationConfig::new(Probe::new(1, 1, 0));
        assert!(matches!(
            calibrate(&sim, &e1, &e2, &image, &mask, &config),
            Err(PipelineError::ProbeOutsideMask { .. })
        ));
        // Window straddling the mask edge.
        let config = CalibrationConfig::new(Probe::new(2, 3, 1));
        assert!(matches!(
            calibrate(&sim, &e1, &e2, &image, &mask, &config),
            Err(PipelineError::ProbeOutsideMask { .. })
        ));
    }

    #[test]
    fn rank_guard_reduces_components() {
        let (sim, e1, e2, image, mask) = setup();
        let mut config = CalibrationConfig::new(Probe::new(3, 3, 1));
        config.train.epochs = 20;
        let record = calibrate(&sim, &e1, &e2, &image, &mask, &config).unwrap();
        assert_eq!(record.samples.len(), 30);
        assert_eq!(record.pca_dims_used, 1);
        assert_eq!(record.warnings.len(), 1);
        assert_eq!(record.model.pca().components(), 1);
    }

    #[test]
    fn recorded_colors_follow_simulator_curve() {
        let (sim, e1, e2, image, mask) = setup();
        let mut config = CalibrationConfig::new(Probe::new(3, 3, 1));
        config.train.epochs = 5;
        let record = calibrate(&sim, &e1, &e2, &image, &mask, &config).unwrap();
        for s in &record.samples {
            // Independent evaluation of the curve at alpha.
            let w = (2.2 * s.alpha.ln()).exp();
            let c0 = [0.95, 0.55, 0.1];
            let c1 = [0.1, 0.5, 0.55];
            for k in 0..3 {
                let expected = (1.0 - w) * c0[k] + w * c1[k];
                assert!((s.rgb.to_array()[k] - expected).abs() < 1e-9, "alpha {}", s.alpha);
            }
        }
        let g = record.model.gamut();
        assert_eq!(g.min[0], record.samples.last().unwrap().rgb.r);
        assert_eq!(g.max[0], record.samples[0].rgb.r);
    }

    #[test]
    fn config_validation() {
        let (sim, e1, e2, image, mask) = setup();
        let mut config = CalibrationConfig::new(Probe::new(3, 3, 1));
        config.n_samples = 10;
        assert!(matches!(
            calibrate(&sim, &e1, &e2, &image, &mask, &config),
            Err(PipelineError::Config(_))
        ));
        assert!(linear_targets(Rgb::new(0.0, 0.0, 0.0).unwrap(), Rgb::new(1.0, 1.0, 1.0).unwrap(), 1).is_err());
    }

    #[test]
    fn empty_mask_edit_is_identity() {
        let (sim, e1, e2, image, mask) = setup();
        let mut config = CalibrationConfig::new(Probe::new(3, 3, 1));
        config.train.epochs = 5;
        let record = calibrate(&sim, &e1, &e2, &image, &mask, &config).unwrap();
        let empty = MaskBuffer::filled(8, 8, false).unwrap();
        let out = edit(
            &sim,
            &record.model,
            &image,
            &empty,
            Rgb::new(0.5, 0.5, 0.3).unwrap(),
            &EditParams::default(),
        )
        .unwrap();
        assert_eq!(out.image, image);
    }
}
