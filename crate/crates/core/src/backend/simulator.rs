use super::{BackendError, GenerationRequest, GeneratorBackend};
use crate::types::{Embedding, ImageBuffer, Rgb};

/// Parameters of the synthetic generator. The request embedding is projected onto the
/// segment `anchor0 → anchor1`, giving `t ∈ [0, 1]`, and the masked region is painted with
/// `(1 − t^gamma)·color0 + t^gamma·color1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatorSpec {
    pub anchor0: Embedding,
    pub anchor1: Embedding,
    pub color0: Rgb,
    pub color1: Rgb,
    pub gamma: f64,
}

impl SimulatorSpec {
    pub const DEFAULT_GAMMA: f64 = 2.2;

    pub fn new(anchor0: Embedding, anchor1: Embedding, color0: Rgb, color1: Rgb) -> Self {
        Self {
            anchor0,
            anchor1,
            color0,
            color1,
            gamma: Self::DEFAULT_GAMMA,
        }
    }
}

/// Deterministic embedding → color oracle. Ignores steps, sampler, seed and guidance.
#[derive(Debug, Clone)]
pub struct Simulator {
    spec: SimulatorSpec,
    direction: Vec<f64>,
    direction_sq: f64,
}

impl Simulator {
    pub fn new(spec: SimulatorSpec) -> Result<Self, BackendError> {
        spec.anchor0
            .ensure_same_shape(&spec.anchor1)
            .map_err(|e| BackendError::Simulator(e.to_string()))?;
        if !(spec.gamma.is_finite() && spec.gamma > 0.0) {
            return Err(BackendError::Simulator(format!(
                "gamma must be positive, got {}",
                spec.gamma
            )));
        }
        let direction: Vec<f64> = spec
            .anchor1
            .as_slice()
            .iter()
            .zip(spec.anchor0.as_slice())
            .map(|(b, a)| b - a)
            .collect();
        let direction_sq: f64 = direction.iter().map(|v| v * v).sum();
        if direction_sq == 0.0 {
            return Err(BackendError::Simulator("anchors must differ".into()));
        }
        Ok(Self {
            spec,
            direction,
            direction_sq,
        })
    }

    pub fn spec(&self) -> &SimulatorSpec {
        &self.spec
    }

    /// Position of the embedding along the anchor segment, clamped to `[0, 1]`.
    pub fn position(&self, e: &Embedding) -> Result<f64, BackendError> {
        e.ensure_same_shape(&self.spec.anchor0)
            .map_err(|err| BackendError::Request(err.to_string()))?;
        let along: f64 = e
            .as_slice()
            .iter()
            .zip(self.spec.anchor0.as_slice())
            .zip(&self.direction)
            .map(|((v, a), w)| (v - a) * w)
            .sum();
        Ok((along / self.direction_sq).clamp(0.0, 1.0))
    }

    /// Color painted for segment position `t`.
    pub fn color_at(&self, t: f64) -> Rgb {
        let s = t.clamp(0.0, 1.0).powf(self.spec.gamma);
        self.spec.color0.lerp(self.spec.color1, s)
    }

    /// Recovers `t` from a painted color, using the channel with the largest endpoint
    /// difference. `None` when the endpoint colors coincide.
    pub fn invert(&self, c: Rgb) -> Option<f64> {
        let c0 = self.spec.color0.to_array();
        let c1 = self.spec.color1.to_array();
        let v = c.to_array();
        let k = (0..3).max_by(|&i, &j| (c1[i] - c0[i]).abs().total_cmp(&(c1[j] - c0[j]).abs()))?;
        let span = c1[k] - c0[k];
        if span == 0.0 {
            return None;
        }
        let s = ((v[k] - c0[k]) / span).clamp(0.0, 1.0);
        Some(s.powf(1.0 / self.spec.gamma))
    }
}

impl GeneratorBackend for Simulator {
    fn generate(&self, request: &GenerationRequest) -> Result<ImageBuffer, BackendError> {
        request.validate()?;
        let color = self.color_at(self.position(&request.embedding)?);
        let mut out = request.image.clone();
        for y in 0..out.height() {
            for x in 0..out.width() {
                if request.mask.is_set(x, y) {
                    out.set_pixel(x, y, color);
                }
            }
        }
        Ok(out)
    }

    fn name(&self) -> &str {
        "simulator"
    }
}
