//! RGB → PCA-code regressor: a small tanh MLP trained full-batch with Adam on the
//! mean-over-samples squared-error loss.

use crate::pca::Code;
use crate::types::Rgb;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Hidden layer widths used by calibration.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MlpError {
    #[error("invalid layer sizes {0:?}: need at least [3, m], first = 3, all >= 1")]
    LayerSizes(Vec<usize>),
    #[error("{what}: lengths differ ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("training needs at least one sample")]
    NoSamples,
    #[error("target code has {actual} entries, network outputs {expected}")]
    CodeDim { expected: usize, actual: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("inconsistent layer parameters: {0}")]
    Parts(String),
}

/// One affine layer, `out x in` weights stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.biases)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    /// Frobenius norm of the weights, an upper bound on the spectral norm.
    pub fn weight_norm_bound(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

/// Multilayer perceptron with tanh on every layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
}

/// Per-layer gradients, same layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            epochs: 500,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MlpError> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(MlpError::Config(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(MlpError::Config("epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(MlpError::Config("moment decay rates must lie in [0, 1)".into()));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(MlpError::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss before the update of each epoch.
    pub loss_history: Vec<f64>,
    /// Loss of the returned parameters.
    pub final_loss: f64,
}

fn split_samples(samples: &[(Rgb, Code)]) -> (Vec<[f64; 3]>, Vec<Code>) {
    samples.iter().map(|(r, c)| (r.to_array(), c.clone())).unzip()
}

/// Affine rescaling used while training: inputs become `input_scale * x + input_shift`
/// and targets are divided by `output_scale`. Once training ends, [`Normalization::fold`]
/// absorbs both maps into the outer layers, so the result operates on raw values again.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub input_scale: [f64; 3],
    pub input_shift: [f64; 3],
    pub output_scale: Vec<f64>,
}

impl Normalization {
    /// Maps each input channel's `[min, max]` onto `[-1, 1]` (a collapsed channel is only
    /// centered) and divides each output by its standard deviation (non-positive or
    /// non-finite values fall back to 1).
    pub fn from_ranges(min: [f64; 3], max: [f64; 3], output_std: &[f64]) -> Self {
        let mut input_scale = [1.0; 3];
        let mut input_shift = [0.0; 3];
        for k in 0..3 {
            let span = max[k] - min[k];
            if span > 1e-12 {
                input_scale[k] = 2.0 / span;
                input_shift[k] = -(max[k] + min[k]) / span;
            } else {
                input_shift[k] = -min[k];
            }
        }
        let output_scale = output_std
            .iter()
            .map(|&s| if s.is_finite() && s > 0.0 { s } else { 1.0 })
            .collect();
        Self {
            input_scale,
            input_shift,
            output_scale,
        }
    }

    pub fn identity(outputs: usize) -> Self {
        Self {
            input_scale: [1.0; 3],
            input_shift: [0.0; 3],
            output_scale: vec![1.0; outputs],
        }
    }

    pub fn apply_input(&self, x: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|k| self.input_scale[k] * x[k] + self.input_shift[k])
    }

    /// A model on raw values equivalent to `model` composed with this normalization.
    pub fn fold(&self, model: &MlpModel) -> Result<MlpModel, MlpError> {
        if self.output_scale.len() != model.output_dim() {
            return Err(MlpError::Parts(format!(
                "normalization has {} output scales for {} outputs",
                self.output_scale.len(),
                model.output_dim()
            )));
        }
        let mut layers = model.layers().to_vec();
        let first = &mut layers[0];
        for o in 0..first.outputs {
            let row = &mut first.weights[o * 3..(o + 1) * 3];
            let shift: f64 = row.iter().zip(&self.input_shift).map(|(w, c)| w * c).sum();
            first.biases[o] += shift;
            row.iter_mut().zip(&self.input_scale).for_each(|(w, a)| *w *= a);
        }
        let last = layers.last_mut().expect("model has at least one layer");
        for (o, s) in self.output_scale.iter().enumerate() {
            last.weights[o * last.inputs..(o + 1) * last.inputs]
                .iter_mut()
                .for_each(|w| *w *= s);
            last.biases[o] *= s;
        }
        MlpModel::from_layers(layers)
    }
}

/// `(1/n) Σ ‖prediction − target‖²`.
pub fn mse_loss(predictions: &[Code], targets: &[Code]) -> Result<f64, MlpError> {
    if predictions.len() != targets.len() {
        return Err(MlpError::LengthMismatch {
            what: "predictions and targets",
            left: predictions.len(),
            right: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MlpError::NoSamples);
    }
    let mut total = 0.0;
    for (p, t) in predictions.iter().zip(targets) {
        if p.len() != t.len() {
            return Err(MlpError::LengthMismatch {
                what: "code dimensions",
                left: p.len(),
                right: t.len(),
            });
        }
        total += p
            .as_slice()
            .iter()
            .zip(t.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total / predictions.len() as f64)
}

impl MlpModel {
    /// Glorot-uniform weights from a seeded generator, zero biases.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self, MlpError> {
        if layer_sizes.len() < 2 || layer_sizes[0] != 3 || layer_sizes.contains(&0) {
            return Err(MlpError::LayerSizes(layer_sizes.to_vec()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let bound = (6.0 / (inputs + outputs) as f64).sqrt();
                Layer {
                    inputs,
                    outputs,
                    weights: (0..inputs * outputs)
                        .map(|_| rng.random_range(-bound..=bound))
                        .collect(),
                    biases: vec![0.0; outputs],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Builds the network `3 → hidden… → m`.
    pub fn with_hidden(hidden: &[usize], outputs: usize, seed: u64) -> Result<Self, MlpError> {
        let mut sizes = vec![3];
        sizes.extend_from_slice(hidden);
        sizes.push(outputs);
        Self::init(&sizes, seed)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, MlpError> {
        if layers.is_empty() || layers[0].inputs != 3 {
            return Err(MlpError::Parts("first layer must take 3 inputs".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.inputs == 0 || l.outputs == 0 {
                return Err(MlpError::Parts(format!("layer {i} has an empty dimension")));
            }
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(MlpError::Parts(format!("layer {i} parameter count mismatch")));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.inputs != l.outputs {
                    return Err(MlpError::Parts(format!(
                        "layer {i} outputs {} but layer {} takes {}",
                        l.outputs,
                        i + 1,
                        next.inputs
                    )));
                }
            }
            if !l.weights.iter().chain(&l.biases).all(|v| v.is_finite()) {
                return Err(MlpError::Parts(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].inputs];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Product of per-layer weight norm bounds: a Lipschitz constant of the network.
    pub fn lipschitz_bound(&self) -> f64 {
        self.layers.iter().map(Layer::weight_norm_bound).product()
    }

    pub fn forward(&self, r: Rgb) -> Code {
        Code(self.forward_raw(&r.to_array()))
    }

    pub fn forward_raw(&self, input: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut x = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.apply(&x);
            if i < last {
                x.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        x
    }

    /// Post-activation values of every layer, input first.
    fn activations(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.apply(acts.last().unwrap());
            if i < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }

    /// Jacobian of the output with respect to the 3 inputs, `outputs x 3` row-major.
    pub fn input_jacobian(&self, r: Rgb) -> Vec<Vec<f64>> {
        let acts = self.activations(&r.to_array());
        let last = self.layers.len() - 1;
        // Rows of d(output)/d(layer input), propagated backwards.
        let out_dim = self.output_dim();
        let mut jac: Vec<Vec<f64>> = (0..out_dim)
            .map(|k| {
                let mut e = vec![0.0; out_dim];
                e[k] = 1.0;
                e
            })
            .collect();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            for row in jac.iter_mut() {
                if i < last {
                    for (g, a) in row.iter_mut().zip(&acts[i + 1]) {
                        *g *= 1.0 - a * a;
                    }
                }
                let mut next = vec![0.0; layer.inputs];
                for (o, g) in row.iter().enumerate() {
                    let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    next.iter_mut().zip(w).for_each(|(n, w)| *n += g * w);
                }
                *row = next;
            }
        }
        jac
    }

    /// Loss and its parameter gradients over the whole batch.
    pub fn loss_and_gradients(
        &self,
        samples: &[(Rgb, Code)],
    ) -> Result<(f64, Gradients), MlpError> {
        let (inputs, targets) = split_samples(samples);
        self.batch_gradients(&inputs, &targets, None)
    }

    fn check_batch(&self, inputs: &[[f64; 3]], targets: &[Code]) -> Result<(), MlpError> {
        if inputs.is_empty() {
            return Err(MlpError::NoSamples);
        }
        let out_dim = self.output_dim();
        if let Some(c) = targets.iter().find(|c| c.len() != out_dim) {
            return Err(MlpError::CodeDim {
                expected: out_dim,
                actual: c.len(),
            });
        }
        Ok(())
    }

    /// With `loss_scale`, the reported loss measures residuals multiplied per output by
    /// these factors; gradients are always of the unscaled loss.
    fn batch_gradients(
        &self,
        inputs: &[[f64; 3]],
        targets: &[Code],
        loss_scale: Option<&[f64]>,
    ) -> Result<(f64, Gradients), MlpError> {
        self.check_batch(inputs, targets)?;
        let n = inputs.len() as f64;
        let last = self.layers.len() - 1;
        let mut grads = Gradients {
            weights: self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: self.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        };
        let mut loss = 0.0;
        for (input, target) in inputs.iter().zip(targets) {
            let acts = self.activations(input);
            let output = &acts[acts.len() - 1];
            loss += match loss_scale {
                None => output
                    .iter()
                    .zip(target.as_slice())
                    .map(|(y, t)| (y - t) * (y - t))
                    .sum::<f64>(),
                Some(scale) => output
                    .iter()
                    .zip(target.as_slice())
                    .zip(scale)
                    .map(|((y, t), s)| ((y - t) * s) * ((y - t) * s))
                    .sum::<f64>(),
            };
            let mut delta: Vec<f64> = output
                .iter()
                .zip(target.as_slice())
                .map(|(y, t)| 2.0 * (y - t) / n)
                .collect();
            for (i, layer) in self.layers.iter().enumerate().rev() {
                if i < last {
                    for (d, a) in delta.iter_mut().zip(&acts[i + 1]) {
                        *d *= 1.0 - a * a;
                    }
                }
                let input = &acts[i];
                let gw = &mut grads.weights[i];
                for (o, d) in delta.iter().enumerate() {
                    grads.biases[i][o] += d;
                    let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                    row.iter_mut().zip(input).for_each(|(g, x)| *g += d * x);
                }
                if i > 0 {
                    let mut back = vec![0.0; layer.inputs];
                    for (o, d) in delta.iter().enumerate() {
                        let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                        back.iter_mut().zip(w).for_each(|(b, w)| *b += d * w);
                    }
                    delta = back;
                }
            }
        }
        Ok((loss / n, grads))
    }

    pub fn loss(&self, samples: &[(Rgb, Code)]) -> Result<f64, MlpError> {
        let (inputs, targets) = split_samples(samples);
        self.batch_loss(&inputs, &targets)
    }

    fn batch_loss(&self, inputs: &[[f64; 3]], targets: &[Code]) -> Result<f64, MlpError> {
        let preds: Vec<Code> = inputs.iter().map(|x| Code(self.forward_raw(x))).collect();
        mse_loss(&preds, targets)
    }

    /// Full-batch Adam with bias-corrected moments. Returns the trained copy.
    pub fn train(
        &self,
        samples: &[(Rgb, Code)],
        config: &TrainConfig,
    ) -> Result<(MlpModel, TrainReport), MlpError> {
        let (inputs, targets) = split_samples(samples);
        self.train_batch(&inputs, &targets, config, None)
    }

    /// Trains in the normalized space of `norm` and folds the result back to raw inputs
    /// and outputs. Reported losses are in raw code units.
    pub fn train_normalized(
        &self,
        samples: &[(Rgb, Code)],
        config: &TrainConfig,
        norm: &Normalization,
    ) -> Result<(MlpModel, TrainReport), MlpError> {
        if norm.output_scale.len() != self.output_dim() {
            return Err(MlpError::Parts(format!(
                "normalization has {} output scales for {} outputs",
                norm.output_scale.len(),
                self.output_dim()
            )));
        }
        let inputs: Vec<[f64; 3]> = samples.iter().map(|(r, _)| norm.apply_input(r.to_array())).collect();
        let targets: Vec<Code> = samples
            .iter()
            .map(|(_, c)| Code(c.as_slice().iter().zip(&norm.output_scale).map(|(v, s)| v / s).collect()))
            .collect();
        let (trained, mut report) = self.train_batch(&inputs, &targets, config, Some(&norm.output_scale))?;
        let folded = norm.fold(&trained)?;
        report.final_loss = folded.loss(samples)?;
        Ok((folded, report))
    }

    fn train_batch(
        &self,
        inputs: &[[f64; 3]],
        targets: &[Code],
        config: &TrainConfig,
        loss_scale: Option<&[f64]>,
    ) -> Result<(MlpModel, TrainReport), MlpError> {
        config.validate()?;
        self.check_batch(inputs, targets)?;
        let mut model = self.clone();
        let mut m1: Vec<Vec<f64>> = Vec::new();
        let mut m2: Vec<Vec<f64>> = Vec::new();
        for l in &model.layers {
            m1.push(vec![0.0; l.weights.len()]);
            m1.push(vec![0.0; l.biases.len()]);
        }
        m2.clone_from(&m1);

        let mut history = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            let (loss, grads) = model.batch_gradients(inputs, targets, loss_scale)?;
            if !loss.is_finite() {
                return Err(MlpError::Diverged { epoch, loss });
            }
            history.push(loss);

            let step = (epoch + 1) as i32;
            let c1 = 1.0 - config.beta1.powi(step);
            let c2 = 1.0 - config.beta2.powi(step);
            let grad_slices = grads
                .weights
                .iter()
                .zip(&grads.biases)
                .flat_map(|(w, b)| [w, b]);
            let params = model
                .layers
                .iter_mut()
                .flat_map(|l| [&mut l.weights, &mut l.biases]);
            for (((param, grad), first), second) in
                params.zip(grad_slices).zip(m1.iter_mut()).zip(m2.iter_mut())
            {
                for i in 0..param.len() {
                    let g = grad[i];
                    first[i] = config.beta1 * first[i] + (1.0 - config.beta1) * g;
                    second[i] = config.beta2 * second[i] + (1.0 - config.beta2) * g * g;
                    let m_hat = first[i] / c1;
                    let v_hat = second[i] / c2;
                    param[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
                }
            }
        }
        let final_loss = model.batch_loss(inputs, targets)?;
        if !final_loss.is_finite() {
            return Err(MlpError::Diverged {
                epoch: config.epochs,
                loss: final_loss,
            });
        }
        Ok((
            model,
            TrainReport {
                loss_history: history,
                final_loss,
            },
        ))
    }
}
