//! Probe extraction, requested-vs-measured linearity, and mask-confinement measurement.

use crate::types::{ImageBuffer, MaskBuffer, Rgb};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("probe window at ({x}, {y}) radius {radius} leaves the {width}x{height} image")]
    ProbeOutOfBounds {
        x: usize,
        y: usize,
        radius: usize,
        width: usize,
        height: usize,
    },
    #[error("requested and measured lists differ in length ({requested} vs {measured})")]
    LengthMismatch { requested: usize, measured: usize },
    #[error("linearity needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
}

/// Pixel location sampled for calibration, with a square window of side `2·radius + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    pub x: usize,
    pub y: usize,
    pub radius: usize,
}

impl Probe {
    pub fn new(x: usize, y: usize, radius: usize) -> Self {
        Self { x, y, radius }
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x >= self.radius
            && self.y >= self.radius
            && self.x + self.radius < width
            && self.y + self.radius < height
    }

    fn check(&self, width: usize, height: usize) -> Result<(), MetricsError> {
        if self.fits(width, height) {
            Ok(())
        } else {
            Err(MetricsError::ProbeOutOfBounds {
                x: self.x,
                y: self.y,
                radius: self.radius,
                width,
                height,
            })
        }
    }

    /// Window coordinates `(x, y)` in row-major order. Callers must check bounds first.
    pub fn window(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (x0, y0) = (self.x - self.radius, self.y - self.radius);
        let side = 2 * self.radius + 1;
        (0..side).flat_map(move |dy| (0..side).map(move |dx| (x0 + dx, y0 + dy)))
    }

    /// True when the whole window lies inside the image and on set mask pixels.
    pub fn inside_mask(&self, mask: &MaskBuffer) -> bool {
        self.fits(mask.width(), mask.height()) && self.window().all(|(x, y)| mask.is_set(x, y))
    }

    /// Probe at the pixel nearest the centroid of the mask, or `None` when the mask is
    /// empty or that window is not entirely masked.
    pub fn centered_in(mask: &MaskBuffer, radius: usize) -> Option<Probe> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.is_set(x, y) {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1;
                }
            }
        }
        if n == 0 {
            return None;
        }
        let probe = Probe::new((sx / n as f64).round() as usize, (sy / n as f64).round() as usize, radius);
        probe.inside_mask(mask).then_some(probe)
    }
}

fn lower_median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values[(values.len() - 1) / 2]
}

/// Per-channel median over the probe window.
pub fn extract_probe_rgb(image: &ImageBuffer, probe: Probe) -> Result<Rgb, MetricsError> {
    probe.check(image.width(), image.height())?;
    let mut channels: [Vec<f64>; 3] = Default::default();
    for (x, y) in probe.window() {
        let p = image.pixel(x, y).to_array();
        for k in 0..3 {
            channels[k].push(p[k]);
        }
    }
    let [mut r, mut g, mut b] = channels;
    Ok(Rgb::clamped(
        lower_median(&mut r),
        lower_median(&mut g),
        lower_median(&mut b),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityReport {
    pub per_channel_r2: [f64; 3],
    pub per_channel_max_abs_err: [f64; 3],
    pub n_points: usize,
}

impl LinearityReport {
    pub fn min_r2(&self) -> f64 {
        self.per_channel_r2.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Coefficient of determination of the least-squares line `measured ≈ a·requested + b`.
///
/// Degenerate cases: constant `requested` scores 1 when `measured` is constant too and 0
/// otherwise; constant `measured` against varying `requested` scores 0.
pub fn r_squared(requested: &[f64], measured: &[f64]) -> f64 {
    let n = requested.len() as f64;
    let mx = requested.iter().sum::<f64>() / n;
    let my = measured.iter().sum::<f64>() / n;
    let sxx: f64 = requested.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = measured.iter().map(|y| (y - my) * (y - my)).sum();
    let sxy: f64 = requested
        .iter()
        .zip(measured)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum();
    if sxx == 0.0 {
        return if syy == 0.0 { 1.0 } else { 0.0 };
    }
    if syy == 0.0 {
        return 0.0;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = requested
        .iter()
        .zip(measured)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    (1.0 - ss_res / syy).clamp(0.0, 1.0)
}

/// Per-channel R² of measured against requested, plus the largest absolute error.
pub fn linearity(requested: &[Rgb], measured: &[Rgb]) -> Result<LinearityReport, MetricsError> {
    if requested.len() != measured.len() {
        return Err(MetricsError::LengthMismatch {
            requested: requested.len(),
            measured: measured.len(),
        });
    }
    if requested.len() < 2 {
        return Err(MetricsError::TooFewPoints(requested.len()));
    }
    let mut r2 = [0.0; 3];
    let mut max_err = [0.0; 3];
    for k in 0..3 {
        let req: Vec<f64> = requested.iter().map(|c| c.to_array()[k]).collect();
        let mea: Vec<f64> = measured.iter().map(|c| c.to_array()[k]).collect();
        r2[k] = r_squared(&req, &mea);
        max_err[k] = req
            .iter()
            .zip(&mea)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
    }
    Ok(LinearityReport {
        per_channel_r2: r2,
        per_channel_max_abs_err: max_err,
        n_points: requested.len(),
    })
}

/// Largest per-channel change over pixels outside the mask (0 means untouched).
pub fn mask_confinement(
    original: &ImageBuffer,
    edited: &ImageBuffer,
    mask: &MaskBuffer,
) -> Result<f64, MetricsError> {
    let dims = |h: usize, w: usize| (h, w);
    let o = dims(original.height(), original.width());
    if o != dims(edited.height(), edited.width()) || o != dims(mask.height(), mask.width()) {
        return Err(MetricsError::Dimensions(format!(
            "original {}x{}, edited {}x{}, mask {}x{}",
            original.height(),
            original.width(),
            edited.height(),
            edited.width(),
            mask.height(),
            mask.width()
        )));
    }
    let mut worst = 0.0f64;
    for y in 0..original.height() {
        for x in 0..original.width() {
            if !mask.is_set(x, y) {
                worst = worst.max(original.pixel(x, y).max_abs_diff(edited.pixel(x, y)));
            }
        }
    }
    Ok(worst)
}
