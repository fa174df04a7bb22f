//! PCA checked against a brute-force covariance eigendecomposition (Jacobi).

mod common;

use color_mapper::pca::PcaError;
use color_mapper::{Code, Embedding, PcaModel};
use common::{covariance, dot, jacobi_eigen, max_principal_angle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Random orthonormal rows (Gram–Schmidt on Gaussian vectors).
fn random_rotation(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    while rows.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for r in &rows {
            let c = dot(&v, r);
            v.iter_mut().zip(r).for_each(|(x, y)| *x -= c * y);
        }
        let len = dot(&v, &v).sqrt();
        if len > 1e-6 {
            rows.push(v.into_iter().map(|x| x / len).collect());
        }
    }
    rows
}

/// `n` samples in `tokens x channels` with geometrically decaying variance along a random
/// rotation, so consecutive eigenvalues are well separated.
fn anisotropic_samples(rng: &mut ChaCha8Rng, n: usize, tokens: usize, channels: usize) -> Vec<Embedding> {
    let d = tokens * channels;
    let rot = random_rotation(rng, d);
    let offset: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    (0..n)
        .map(|_| {
            let mut x = offset.clone();
            for (k, dir) in rot.iter().enumerate() {
                let z: f64 = StandardNormal.sample(rng);
                let a = z * 3.0 * 0.6f64.powi(k as i32);
                x.iter_mut().zip(dir).for_each(|(xi, di)| *xi += a * di);
            }
            Embedding::new(tokens, channels, x).unwrap()
        })
        .collect()
}

const SHAPES: [(usize, usize); 6] = [(1, 5), (2, 6), (4, 5), (5, 10), (1, 50), (7, 7)];

#[test]
fn gram_fit_matches_covariance_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..24 {
        let (tokens, channels) = SHAPES[trial % SHAPES.len()];
        let d = tokens * channels;
        let n = [6, 12, 30, 80][trial % 4];
        let max_m = (n - 1).min(d).min(6);
        let m = rng.random_range(1..=max_m);
        let samples = anisotropic_samples(&mut rng, n, tokens, channels);

        let pca = PcaModel::fit(&samples, m).unwrap();
        let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.as_slice().to_vec()).collect();
        let (mean, cov) = covariance(&rows);
        let (values, vectors) = jacobi_eigen(&cov);

        for (a, b) in pca.mean().iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
        let angle = max_principal_angle(pca.basis(), &vectors[..m]);
        assert!(angle < 1e-6, "trial {trial} (n={n}, d={d}, m={m}): principal angle {angle:e}");
        for k in 0..m {
            let rel = (pca.variances()[k] - values[k]).abs() / values[k];
            assert!(rel < 1e-9, "trial {trial}: variance {k} differs by {rel:e}");
            // Individual directions agree up to sign (eigenvalues are distinct here).
            assert!((dot(&pca.basis()[k], &vectors[k]).abs() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn reconstruction_error_equals_discarded_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..12 {
        let (tokens, channels) = SHAPES[trial % SHAPES.len()];
        let d = tokens * channels;
        let n = 20;
        let m = rng.random_range(1..=(n - 1).min(d).min(5));
        let samples = anisotropic_samples(&mut rng, n, tokens, channels);
        let pca = PcaModel::fit(&samples, m).unwrap();
        let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.as_slice().to_vec()).collect();
        let (values, _) = jacobi_eigen(&covariance(&rows).1);

        let residual: f64 = samples
            .iter()
            .map(|s| {
                let back = pca.inverse(&pca.transform(s).unwrap()).unwrap();
                s.distance(&back).powi(2)
            })
            .sum();
        let discarded: f64 = values[m..].iter().map(|v| v.max(0.0)).sum::<f64>() * (n - 1) as f64;
        let rel = (residual - discarded).abs() / discarded.max(1e-12);
        assert!(rel < 1e-8, "trial {trial}: residual {residual} vs discarded {discarded}");
    }
}

#[test]
fn exact_rank_data_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..20 {
        let (tokens, channels) = SHAPES[trial % SHAPES.len()];
        let d = tokens * channels;
        let rank = rng.random_range(1..=d.min(6));
        let n = rank + 1 + rng.random_range(0..10);
        let dirs = random_rotation(&mut rng, d);
        let offset: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let samples: Vec<Embedding> = (0..n)
            .map(|_| {
                let mut x = offset.clone();
                for dir in &dirs[..rank] {
                    let a: f64 = rng.random_range(-2.0..2.0);
                    x.iter_mut().zip(dir).for_each(|(xi, di)| *xi += a * di);
                }
                Embedding::new(tokens, channels, x).unwrap()
            })
            .collect();

        let pca = PcaModel::fit(&samples, rank).unwrap();
        for s in &samples {
            let back = pca.inverse(&pca.transform(s).unwrap()).unwrap();
            let rel = s.distance(&back) / s.norm();
            assert!(rel < 1e-6, "trial {trial}: relative round-trip error {rel:e}");
        }
        if rank < (n - 1).min(d) {
            assert!(matches!(
                PcaModel::fit(&samples, rank + 1),
                Err(PcaError::RankDeficient { achievable, .. }) if achievable == rank
            ));
        }
    }
}

#[test]
fn basis_is_orthonormal_and_sign_canonical() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples = anisotropic_samples(&mut rng, 40, 5, 10);
    let pca = PcaModel::fit(&samples, 6).unwrap();
    for (i, a) in pca.basis().iter().enumerate() {
        for (j, b) in pca.basis().iter().enumerate() {
            let expected = if i == j { 1.0 } else { 0.0 };
            assert!((dot(a, b) - expected).abs() < 1e-10);
        }
        let largest = a.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        assert!(largest > 0.0);
    }
    let v = pca.variances();
    assert!(v.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn codes_of_training_data_are_centered_with_fitted_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let samples = anisotropic_samples(&mut rng, 25, 3, 8);
    let pca = PcaModel::fit(&samples, 4).unwrap();
    let codes: Vec<Code> = samples.iter().map(|s| pca.transform(s).unwrap()).collect();
    for k in 0..4 {
        let mean: f64 = codes.iter().map(|c| c.as_slice()[k]).sum::<f64>() / 25.0;
        let var: f64 = codes.iter().map(|c| c.as_slice()[k].powi(2)).sum::<f64>() / 24.0;
        assert!(mean.abs() < 1e-10);
        assert!((var - pca.variances()[k]).abs() < 1e-9 * pca.variances()[k]);
    }
}
