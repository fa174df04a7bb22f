//! PCA compression of embeddings, fitted through the `n x n` Gram matrix.
//!
//! Calibration produces a few dozen embeddings in a space of ~59k dimensions, so the
//! principal directions are recovered from the eigenvectors of `Xc Xcᵀ` (with `Xc` the
//! centered sample matrix) and mapped back through `Xcᵀ`. Cost is `O(n² d)`; the `d x d`
//! covariance is never formed.

use crate::types::{Embedding, ValidationError};
use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

/// Singular values at or below `RANK_TOLERANCE * sigma_max` count as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PcaError {
    #[error("PCA needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("component count {requested} out of range 1..={max}")]
    ComponentsOutOfRange { requested: usize, max: usize },
    #[error("data has rank {achievable}, fewer than the {requested} requested components")]
    RankDeficient { requested: usize, achievable: usize },
    #[error("code length {actual} does not match model dimension {expected}")]
    CodeLength { expected: usize, actual: usize },
    #[error("embedding shape {actual:?} does not match model shape {expected:?}")]
    Shape {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("inconsistent PCA parameters: {0}")]
    Parts(String),
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

/// Coordinates of an embedding in the principal subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct Code(pub Vec<f64>);

impl Code {
    pub fn zeros(m: usize) -> Self {
        Code(vec![0.0; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    tokens: usize,
    channels: usize,
    mean: Vec<f64>,
    /// `m` rows of length `dim`, descending variance.
    basis: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Flips the row so its largest-magnitude entry (first on ties) is positive.
fn canonical_sign(row: &mut [f64]) {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if v.abs() > row[best].abs() {
            best = i;
        }
    }
    if row[best] < 0.0 {
        row.iter_mut().for_each(|v| *v = -*v);
    }
}

impl PcaModel {
    /// Fits `m` components to the samples.
    pub fn fit(samples: &[Embedding], m: usize) -> Result<Self, PcaError> {
        let n = samples.len();
        if n < 2 {
            return Err(PcaError::TooFewSamples(n));
        }
        let (tokens, channels) = samples[0].shape();
        for s in samples {
            samples[0].ensure_same_shape(s)?;
        }
        let d = tokens * channels;
        let max = (n - 1).min(d);
        if m == 0 || m > max {
            return Err(PcaError::ComponentsOutOfRange { requested: m, max });
        }

        let mut mean = vec![0.0; d];
        for s in samples {
            for (acc, v) in mean.iter_mut().zip(s.as_slice()) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);

        let centered: Vec<Vec<f64>> = samples
            .iter()
            .map(|s| s.as_slice().iter().zip(&mean).map(|(v, mu)| v - mu).collect())
            .collect();

        let mut gram = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let g = dot(&centered[i], &centered[j]);
                gram[(i, j)] = g;
                gram[(j, i)] = g;
            }
        }
        let eig = SymmetricEigen::new(gram);

        // Map each eigenvector back to data space. The norm of the mapped vector is the
        // singular value; computing it here instead of as sqrt(eigenvalue) keeps tiny
        // singular values accurate, which matters for rank detection.
        let mut directions: Vec<(f64, Vec<f64>)> = (0..n)
            .map(|k| {
                let v = eig.eigenvectors.column(k);
                let mut u = vec![0.0; d];
                for (i, row) in centered.iter().enumerate() {
                    let w = v[i];
                    if w != 0.0 {
                        for (acc, x) in u.iter_mut().zip(row) {
                            *acc += w * x;
                        }
                    }
                }
                (norm(&u), u)
            })
            .collect();
        directions.sort_by(|a, b| b.0.total_cmp(&a.0));

        let sigma_max = directions[0].0;
        let rank = if sigma_max > 0.0 {
            directions
                .iter()
                .take_while(|(s, _)| *s > RANK_TOLERANCE * sigma_max)
                .count()
        } else {
            0
        };
        if rank < m {
            return Err(PcaError::RankDeficient {
                requested: m,
                achievable: rank,
            });
        }

        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut variances = Vec::with_capacity(m);
        for (sigma, mut u) in directions.into_iter().take(m) {
            u.iter_mut().for_each(|x| *x /= sigma);
            // Re-orthogonalize against earlier rows; the Gram route loses a little
            // orthogonality for the smaller components.
            for prev in &basis {
                let c = dot(&u, prev);
                u.iter_mut().zip(prev).for_each(|(x, p)| *x -= c * p);
            }
            let len = norm(&u);
            u.iter_mut().for_each(|x| *x /= len);
            canonical_sign(&mut u);
            basis.push(u);
            variances.push(sigma * sigma / (n - 1) as f64);
        }

        Ok(Self {
            tokens,
            channels,
            mean,
            basis,
            variances,
        })
    }

    /// Rebuilds a model from stored parameters (used when loading model files).
    pub fn from_parts(
        tokens: usize,
        channels: usize,
        mean: Vec<f64>,
        basis: Vec<Vec<f64>>,
        variances: Vec<f64>,
    ) -> Result<Self, PcaError> {
        let d = tokens * channels;
        if d == 0 || mean.len() != d {
            return Err(PcaError::Parts(format!(
                "mean has {} entries, expected {d}",
                mean.len()
            )));
        }
        if basis.is_empty() || basis.len() != variances.len() {
            return Err(PcaError::Parts(format!(
                "{} basis rows but {} variances",
                basis.len(),
                variances.len()
            )));
        }
        if let Some(row) = basis.iter().find(|r| r.len() != d) {
            return Err(PcaError::Parts(format!(
                "basis row has {} entries, expected {d}",
                row.len()
            )));
        }
        let all_finite = mean
            .iter()
            .chain(basis.iter().flatten())
            .chain(&variances)
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(PcaError::Parts("non-finite parameter".into()));
        }
        Ok(Self {
            tokens,
            channels,
            mean,
            basis,
            variances,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn components(&self) -> usize {
        self.basis.len()
    }

    pub fn embedding_shape(&self) -> (usize, usize) {
        (self.tokens, self.channels)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// `basis · (e − mean)`.
    pub fn transform(&self, e: &Embedding) -> Result<Code, PcaError> {
        if e.shape() != self.embedding_shape() {
            return Err(PcaError::Shape {
                expected: self.embedding_shape(),
                actual: e.shape(),
            });
        }
        let centered: Vec<f64> = e
            .as_slice()
            .iter()
            .zip(&self.mean)
            .map(|(v, mu)| v - mu)
            .collect();
        Ok(Code(self.basis.iter().map(|row| dot(row, &centered)).collect()))
    }

    /// `basisᵀ · p + mean`, reshaped to the fitted embedding shape.
    pub fn inverse(&self, p: &Code) -> Result<Embedding, PcaError> {
        if p.len() != self.components() {
            return Err(PcaError::CodeLength {
                expected: self.components(),
                actual: p.len(),
            });
        }
        let mut out = self.mean.clone();
        for (row, &c) in self.basis.iter().zip(p.as_slice()) {
            for (acc, b) in out.iter_mut().zip(row) {
                *acc += c * b;
            }
        }
        Ok(Embedding::new(self.tokens, self.channels, out)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn emb(values: &[f64]) -> Embedding {
        Embedding::new(1, values.len(), values.to_vec()).unwrap()
    }

    fn random_samples(n: usize, d: usize, seed: u64) -> Vec<Embedding> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| emb(&(0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect()
    }

    #[test]
    fn four_points_on_axes() {
        let samples = [
            emb(&[1.0, 0.0, 0.0]),
            emb(&[0.0, 1.0, 0.0]),
            emb(&[-1.0, 0.0, 0.0]),
            emb(&[0.0, -1.0, 0.0]),
        ];
        let model = PcaModel::fit(&samples, 2).unwrap();
        assert_eq!(model.mean(), &[0.0, 0.0, 0.0]);
        // Covariance is diag(2/3, 2/3, 0): both retained variances are 2/3 and the
        // basis lies in the xy-plane.
        for v in model.variances() {
            assert!((v - 2.0 / 3.0).abs() < 1e-12, "variance {v}");
        }
        for row in model.basis() {
            assert!(row[2].abs() < 1e-12);
            assert!((norm(row) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_samples_are_rank_deficient() {
        let samples = vec![emb(&[0.5, 0.25]); 5];
        assert_eq!(
            PcaModel::fit(&samples, 1).unwrap_err(),
            PcaError::RankDeficient {
                requested: 1,
                achievable: 0
            }
        );
    }

    #[test]
    fn line_data_reports_rank_one() {
        let a = random_samples(1, 200, 1).pop().unwrap();
        let b = random_samples(1, 200, 2).pop().unwrap();
        let line: Vec<Embedding> = (0..30)
            .map(|i| crate::interpolation::lerp(&a, &b, i as f64 / 29.0).unwrap())
            .collect();
        assert_eq!(
            PcaModel::fit(&line, 15).unwrap_err(),
            PcaError::RankDeficient {
                requested: 15,
                achievable: 1
            }
        );
        assert!(PcaModel::fit(&line, 1).is_ok());
    }

    #[test]
    fn component_count_bounds() {
        let samples = random_samples(4, 10, 3);
        assert!(matches!(
            PcaModel::fit(&samples, 0),
            Err(PcaError::ComponentsOutOfRange { max: 3, .. })
        ));
        assert!(matches!(
            PcaModel::fit(&samples, 4),
            Err(PcaError::ComponentsOutOfRange { requested: 4, max: 3 })
        ));
        assert_eq!(PcaModel::fit(&samples[..1], 1).unwrap_err(), PcaError::TooFewSamples(1));
    }

    #[test]
    fn basis_is_orthonormal_with_sign_convention() {
        let samples = random_samples(30, 500, 4);
        let model = PcaModel::fit(&samples, 15).unwrap();
        for (i, a) in model.basis().iter().enumerate() {
            for (j, b) in model.basis().iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot(a, b) - expected).abs() < 1e-8, "({i},{j})");
            }
            let peak = a.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(peak > 0.0);
        }
        assert!(model.variances().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn transform_and_inverse_examples() {
        let samples = random_samples(8, 20, 5);
        let model = PcaModel::fit(&samples, 3).unwrap();
        let mean = emb(model.mean());
        assert!(model.transform(&mean).unwrap().as_slice().iter().all(|v| v.abs() < 1e-12));
        assert_eq!(model.inverse(&Code::zeros(3)).unwrap(), mean);

        let shifted: Vec<f64> = model.mean().iter().zip(&model.basis()[0]).map(|(m, b)| m + b).collect();
        let code = model.transform(&emb(&shifted)).unwrap();
        assert!((code.0[0] - 1.0).abs() < 1e-12 && code.0[1].abs() < 1e-12 && code.0[2].abs() < 1e-12);
        let back = model.inverse(&Code(vec![1.0, 0.0, 0.0])).unwrap();
        for (x, y) in back.as_slice().iter().zip(&shifted) {
            assert!((x - y).abs() < 1e-12);
        }

        assert!(matches!(model.inverse(&Code::zeros(2)), Err(PcaError::CodeLength { .. })));
        assert!(matches!(model.transform(&emb(&[0.0; 5])), Err(PcaError::Shape { .. })));
    }

    #[test]
    fn round_trip_on_low_rank_data() {
        // Samples built as mean + 3 random directions: rank 3 after centering.
        let dirs = random_samples(3, 300, 6);
        let offset = random_samples(1, 300, 7).pop().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let samples: Vec<Embedding> = (0..12)
            .map(|_| {
                let mut v = offset.as_slice().to_vec();
                for d in &dirs {
                    let c: f64 = rng.random_range(-2.0..2.0);
                    v.iter_mut().zip(d.as_slice()).for_each(|(x, y)| *x += c * y);
                }
                emb(&v)
            })
            .collect();
        let model = PcaModel::fit(&samples, 3).unwrap();
        for s in &samples {
            let back = model.inverse(&model.transform(s).unwrap()).unwrap();
            assert!(back.distance(s) / s.norm() < 1e-6);
        }
    }
}
