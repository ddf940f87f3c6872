#![allow(dead_code)]

use collapse_core::classifier::{extend, ExtendedClassifier, ExtendedFeatures};
use collapse_core::model::{init_features, FeatureMatrix, ProblemDims};
use collapse_core::seed::stream_rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha20Rng {
    stream_rng(seed, 1000)
}

pub fn gaussian(rng: &mut ChaCha20Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn dims(c: usize, n: usize, p: usize) -> ProblemDims {
    ProblemDims::new(c, n, p).unwrap()
}

/// Gaussian features with a random nonzero global mean.
pub fn shifted_features(d: ProblemDims, seed: u64) -> FeatureMatrix {
    let h = init_features(d, seed, 1.0);
    let shift: DVector<f64> = gaussian(&mut rng(seed), d.feature_dim(), 1, 1.0).column(0).into_owned();
    let mut data = h.into_inner();
    for mut col in data.column_iter_mut() {
        col += &shift;
    }
    FeatureMatrix::new(d, data).unwrap()
}

pub fn random_classifier(rng: &mut ChaCha20Rng, c: usize, p: usize, scale: f64) -> ExtendedClassifier {
    ExtendedClassifier::from_stacked(&gaussian(rng, c, p + 1, scale)).unwrap()
}

/// Whether the extended λ = 0 system can be full rank.
pub fn extended_solvable(d: ProblemDims, lambda: f64) -> bool {
    lambda > 0.0 || d.num_examples() >= d.feature_dim() + 1
}

pub fn ext(h: &FeatureMatrix) -> ExtendedFeatures {
    extend(h)
}

/// Random symmetric positive-definite matrix with eigenvalues in [0.2, 5].
pub fn random_spd(rng: &mut ChaCha20Rng, p: usize) -> DMatrix<f64> {
    let q = gaussian(rng, p, p, 1.0).qr().q();
    let eig = DVector::from_fn(p, |_, _| 0.2 + 4.8 * rng.random::<f64>());
    let a = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    (&a + a.transpose()) * 0.5
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
