use clap::{Args, Parser, Subcommand, ValueEnum};
use color_mapper::{rgb_from_u8, Rgb};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "color-mapper", version, about = "Continuous RGB-controlled color editing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sweep between two prompt embeddings, fit the mapper, and write a model file.
    Calibrate(CalibrateArgs),
    /// Edit the masked region to one target color.
    Edit(EditArgs),
    /// Edit to evenly spaced colors on an RGB segment and report linearity.
    Sweep(SweepArgs),
    /// Print a model file's header as JSON.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Simulator,
    Remote,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// Generator to run against.
    #[arg(long, value_enum, default_value = "simulator")]
    pub backend: BackendKind,
    /// Base URL of the remote generator.
    #[arg(long, env = "COLOR_MAPPER_BACKEND_URL")]
    pub backend_url: Option<String>,
    /// Remote request timeout in seconds.
    #[arg(long, env = "COLOR_MAPPER_BACKEND_TIMEOUT", default_value_t = 120.0)]
    pub timeout: f64,
    /// Simulator color at the first endpoint, R,G,B in 0-255.
    #[arg(long, value_parser = parse_rgb, default_value = "140,191,242")]
    pub sim_color0: Rgb,
    /// Simulator color at the second endpoint, R,G,B in 0-255.
    #[arg(long, value_parser = parse_rgb, default_value = "13,26,115")]
    pub sim_color1: Rgb,
    /// Simulator curve exponent.
    #[arg(long, default_value_t = 2.2)]
    pub sim_gamma: f64,
}

#[derive(Debug, Args)]
pub struct SamplerArgs {
    /// Image guidance scale s_I.
    #[arg(long, default_value_t = 1.5)]
    pub s_image: f64,
    /// Text guidance scale s_T.
    #[arg(long, default_value_t = 7.5)]
    pub s_text: f64,
    /// Denoising steps.
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    /// Sampler name passed to the backend.
    #[arg(long, default_value = "euler_ancestral")]
    pub sampler: String,
    /// Generation seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Input image (PNG).
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Binary mask (PNG, 0 outside / 255 inside).
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// First endpoint embedding (raw f32 file with a .json sidecar).
    #[arg(long)]
    pub embedding1: Option<PathBuf>,
    /// Second endpoint embedding.
    #[arg(long)]
    pub embedding2: Option<PathBuf>,
    /// First endpoint prompt, encoded with the stub encoder.
    #[arg(long)]
    pub prompt1: Option<String>,
    /// Second endpoint prompt.
    #[arg(long)]
    pub prompt2: Option<String>,
    /// Seed of the stub encoder.
    #[arg(long, default_value_t = 0)]
    pub stub_seed: u64,
    /// Where to write the model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Calibration report path (default: <model>.report.json).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Probe pixel as x,y.
    #[arg(long, value_parser = parse_point)]
    pub probe: Option<(usize, usize)>,
    /// Probe window radius; the window is (2r+1)^2 pixels.
    #[arg(long, default_value_t = 1)]
    pub probe_radius: usize,
    /// Number of interpolation samples.
    #[arg(long, default_value_t = 30)]
    pub samples: usize,
    /// PCA components (reduced automatically to the achievable rank).
    #[arg(long, default_value_t = 15)]
    pub pca_dims: usize,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    pub hidden: Vec<usize>,
    /// Adam learning rate.
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// Training epochs.
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    /// Network initialization seed.
    #[arg(long, default_value_t = 0)]
    pub train_seed: u64,
    /// Concurrent backend requests.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    /// Model file from `calibrate`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Target color, R,G,B in 0-255.
    #[arg(long, value_parser = parse_rgb)]
    pub rgb: Option<Rgb>,
    /// Output PNG; a JSON sidecar is written next to it.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// First target, R,G,B in 0-255.
    #[arg(long, value_parser = parse_rgb)]
    pub rgb_start: Option<Rgb>,
    /// Last target, R,G,B in 0-255.
    #[arg(long, value_parser = parse_rgb)]
    pub rgb_end: Option<Rgb>,
    /// Number of targets (>= 2), endpoints included.
    #[arg(long, default_value_t = 5)]
    pub count: usize,
    /// Directory for images, sidecars, and linearity.json.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Also write (requested, measured) pairs as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Concurrent backend requests.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
}

/// `R,G,B` with integer channels in 0-255.
pub fn parse_rgb(text: &str) -> Result<Rgb, String> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected R,G,B, got {text:?}"));
    }
    let mut channels = [0i64; 3];
    for (slot, part) in channels.iter_mut().zip(&parts) {
        *slot = part
            .parse()
            .map_err(|_| format!("channel {part:?} is not an integer"))?;
    }
    rgb_from_u8(channels[0], channels[1], channels[2]).map_err(|e| e.to_string())
}

/// `x,y` pixel coordinates.
pub fn parse_point(text: &str) -> Result<(usize, usize), String> {
    let (x, y) = text
        .split_once(',')
        .ok_or_else(|| format!("expected x,y, got {text:?}"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| format!("coordinate {v:?} is not a non-negative integer"))
    };
    Ok((parse(x)?, parse(y)?))
}
