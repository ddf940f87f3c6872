//! Problem dimensions, feature matrices, labels and first/second-order
//! feature statistics.
//!
//! Columns of every `P × CN` feature matrix are ordered *i-then-c*: the
//! column index of example `i` of class `c` (both zero-based) is `c·N + i`,
//! so each class occupies one contiguous block of `N` columns.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CollapseError, Result};
use crate::linalg::symmetrize;
use crate::seed;

/// The triple `(C, N, P)`: classes, examples per class, feature dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProblemDims {
    num_classes: usize,
    examples_per_class: usize,
    feature_dim: usize,
}

impl ProblemDims {
    pub fn new(num_classes: usize, examples_per_class: usize, feature_dim: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(CollapseError::InvalidDims(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if examples_per_class < 1 || feature_dim < 1 {
            return Err(CollapseError::InvalidDims(format!(
                "examples per class ({examples_per_class}) and feature dimension ({feature_dim}) must be positive"
            )));
        }
        Ok(Self {
            num_classes,
            examples_per_class,
            feature_dim,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn examples_per_class(&self) -> usize {
        self.examples_per_class
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Total number of examples `C·N`.
    pub fn num_examples(&self) -> usize {
        self.num_classes * self.examples_per_class
    }

    /// Column index of example `i` in class `c` (zero-based).
    pub fn column(&self, class: usize, example: usize) -> usize {
        class * self.examples_per_class + example
    }

    /// Class of a column.
    pub fn class_of(&self, column: usize) -> usize {
        column / self.examples_per_class
    }

    /// Same classes and examples, different feature dimension.
    pub fn with_feature_dim(&self, feature_dim: usize) -> Result<Self> {
        Self::new(self.num_classes, self.examples_per_class, feature_dim)
    }
}

/// `P × CN` matrix of last-layer features in i-then-c column order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dims: ProblemDims,
    data: DMatrix<f64>,
}

impl FeatureMatrix {
    /// Wraps `data`, checking its shape against `dims` and that every entry
    /// is finite.
    pub fn new(dims: ProblemDims, data: DMatrix<f64>) -> Result<Self> {
        let expected = (dims.feature_dim(), dims.num_examples());
        if data.shape() != expected {
            return Err(CollapseError::ShapeMismatch {
                what: "feature matrix",
                expected,
                found: data.shape(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(CollapseError::InvalidInput(format!(
                "non-finite feature entry at flat index {pos}"
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> ProblemDims {
        self.dims
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }

    /// Feature vector `h_{i,c}`.
    pub fn example(&self, class: usize, example: usize) -> DVector<f64> {
        self.data.column(self.dims.column(class, example)).into_owned()
    }

    /// Global mean `μ_G`.
    pub fn global_mean(&self) -> DVector<f64> {
        self.data.column_mean()
    }

    /// `P × C` matrix of class means `M = [μ_1, …, μ_C]`.
    pub fn class_means(&self) -> DMatrix<f64> {
        let n = self.dims.examples_per_class();
        let mut means = DMatrix::zeros(self.dims.feature_dim(), self.dims.num_classes());
        for c in 0..self.dims.num_classes() {
            means.set_column(c, &self.data.columns(c * n, n).column_mean());
        }
        means
    }

    /// Globally-centered features `H̄ = H − μ_G 1ᵀ`.
    pub fn centered(&self) -> FeatureMatrix {
        let mu = self.global_mean();
        let mut data = self.data.clone();
        for mut col in data.column_iter_mut() {
            col -= &mu;
        }
        FeatureMatrix {
            dims: self.dims,
            data,
        }
    }

    /// Row transform `A·H`; the feature dimension becomes `A.nrows()`.
    pub fn transform(&self, a: &DMatrix<f64>) -> Result<FeatureMatrix> {
        if a.ncols() != self.dims.feature_dim() {
            return Err(CollapseError::ShapeMismatch {
                what: "row transform",
                expected: (a.nrows(), self.dims.feature_dim()),
                found: a.shape(),
            });
        }
        let dims = self.dims.with_feature_dim(a.nrows())?;
        FeatureMatrix::new(dims, a * &self.data)
    }

    /// Errors unless `‖μ_G‖ ≤ tol`.
    pub fn require_centered(&self, tol: f64) -> Result<()> {
        let norm = self.global_mean().norm();
        if norm > tol {
            return Err(CollapseError::NonzeroGlobalMean { norm });
        }
        Ok(())
    }
}

/// `C × CN` matrix of stacked one-hot labels, `Y = I_C ⊗ 1_Nᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    data: DMatrix<f64>,
}

impl LabelMatrix {
    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }
}

pub fn label_matrix(dims: ProblemDims) -> LabelMatrix {
    let mut data = DMatrix::zeros(dims.num_classes(), dims.num_examples());
    for col in 0..dims.num_examples() {
        data[(dims.class_of(col), col)] = 1.0;
    }
    LabelMatrix { data }
}

/// Class-centering matrix `(1/CN)(I_CN − (1/N) YᵀY)`.
///
/// `H C Hᵀ` is the within-class covariance of `H`.
pub fn centering_matrix(dims: ProblemDims) -> DMatrix<f64> {
    let cn = dims.num_examples();
    let n = dims.examples_per_class();
    let scale = 1.0 / cn as f64;
    DMatrix::from_fn(cn, cn, |r, c| {
        let same_class = if dims.class_of(r) == dims.class_of(c) {
            1.0 / n as f64
        } else {
            0.0
        };
        let identity = if r == c { 1.0 } else { 0.0 };
        scale * (identity - same_class)
    })
}

/// First- and second-order statistics of a feature matrix. All averages are
/// population averages (divide by `CN` or `C`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub class_means: DMatrix<f64>,
    pub global_mean: DVector<f64>,
    pub centered_means: DMatrix<f64>,
    pub sigma_w: DMatrix<f64>,
    pub sigma_b: DMatrix<f64>,
    pub sigma_t: DMatrix<f64>,
}

/// Within-class covariance `Σ_W = Ave_{i,c} (h_{i,c} − μ_c)(h_{i,c} − μ_c)ᵀ`.
pub fn within_class_covariance(h: &FeatureMatrix) -> DMatrix<f64> {
    let dims = h.dims();
    let n = dims.examples_per_class();
    let means = h.class_means();
    let mut dev = h.data().clone();
    for c in 0..dims.num_classes() {
        for i in 0..n {
            let mut col = dev.column_mut(c * n + i);
            col -= means.column(c);
        }
    }
    symmetrize(&(&dev * dev.transpose())) / dims.num_examples() as f64
}

pub fn compute_stats(h: &FeatureMatrix) -> FeatureStats {
    let dims = h.dims();
    let class_means = h.class_means();
    let global_mean = h.global_mean();
    let mut centered_means = class_means.clone();
    for mut col in centered_means.column_iter_mut() {
        col -= &global_mean;
    }
    let sigma_w = within_class_covariance(h);
    let sigma_b =
        symmetrize(&(&centered_means * centered_means.transpose())) / dims.num_classes() as f64;
    let hbar = h.centered();
    let sigma_t =
        symmetrize(&(hbar.data() * hbar.data().transpose())) / dims.num_examples() as f64;
    FeatureStats {
        class_means,
        global_mean,
        centered_means,
        sigma_w,
        sigma_b,
        sigma_t,
    }
}

/// I.i.d. standard normal features times `scale`, with the global mean
/// subtracted so `μ_G = 0`.
pub fn init_features(dims: ProblemDims, seed: u64, scale: f64) -> FeatureMatrix {
    let mut rng = seed::stream_rng(seed, seed::INIT_FEATURES);
    let data = DMatrix::from_fn(dims.feature_dim(), dims.num_examples(), |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        scale * z
    });
    FeatureMatrix { dims, data }.centered()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(c: usize, n: usize, p: usize) -> ProblemDims {
        ProblemDims::new(c, n, p).unwrap()
    }

    #[test]
    fn dims_validation() {
        assert!(ProblemDims::new(1, 3, 3).is_err());
        assert!(ProblemDims::new(2, 0, 3).is_err());
        assert!(ProblemDims::new(2, 1, 0).is_err());
        let d = dims(3, 4, 5);
        assert_eq!(d.num_examples(), 12);
        assert_eq!(d.column(2, 1), 9);
        assert_eq!(d.class_of(9), 2);
    }

    #[test]
    fn label_matrix_small_cases() {
        let y = label_matrix(dims(2, 2, 1));
        let expected = DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        assert_eq!(y.data(), &expected);
        assert_eq!(label_matrix(dims(3, 1, 1)).data(), &DMatrix::<f64>::identity(3, 3));
    }

    #[test]
    fn label_gram_is_n_identity() {
        for (c, n) in [(2, 1), (3, 4), (10, 7)] {
            let y = label_matrix(dims(c, n, 1));
            let gram = y.data() * y.data().transpose();
            assert_eq!(gram, DMatrix::identity(c, c) * n as f64);
            for col in y.data().column_iter() {
                assert_eq!(col.iter().filter(|v| **v == 1.0).count(), 1);
                assert_eq!(col.sum(), 1.0);
            }
        }
    }

    #[test]
    fn centering_matrix_single_class_pair() {
        // ProblemDims rejects C = 1; a diagonal block of the C = 2 matrix is
        // the C = 1, N = 2 matrix rescaled by 1/C.
        let d = dims(2, 2, 1);
        let cm = centering_matrix(d);
        let block = cm.view((0, 0), (2, 2)) * 2.0;
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]) * 0.5;
        assert!((block - expected).norm() < 1e-16);
        assert!(cm.view((0, 2), (2, 2)).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn centering_annihilates_labels() {
        let d = dims(4, 3, 2);
        let cm = centering_matrix(d);
        let y = label_matrix(d);
        let prod = &cm * y.data().transpose();
        assert!(prod.iter().all(|v| v.abs() <= 1e-15));
        assert_eq!(cm, cm.transpose());
    }

    #[test]
    fn feature_matrix_rejects_bad_input() {
        let d = dims(2, 2, 3);
        assert!(matches!(
            FeatureMatrix::new(d, DMatrix::zeros(3, 3)),
            Err(CollapseError::ShapeMismatch { .. })
        ));
        let mut bad = DMatrix::zeros(3, 4);
        bad[(1, 2)] = f64::NAN;
        assert!(matches!(
            FeatureMatrix::new(d, bad),
            Err(CollapseError::InvalidInput(_))
        ));
    }

    #[test]
    fn collapsed_features_have_zero_within_class_covariance() {
        let d = dims(3, 4, 2);
        let means = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, -1.0]);
        let data = DMatrix::from_fn(2, 12, |r, col| means[(r, d.class_of(col))]);
        let stats = compute_stats(&FeatureMatrix::new(d, data).unwrap());
        assert!(stats.sigma_w.norm() == 0.0);
    }

    #[test]
    fn identical_features_have_zero_between_class_covariance() {
        let d = dims(3, 2, 2);
        let data = DMatrix::from_fn(2, 6, |r, _| if r == 0 { 1.5 } else { -0.25 });
        let stats = compute_stats(&FeatureMatrix::new(d, data).unwrap());
        assert!(stats.sigma_b.norm() <= 1e-30);
        assert!(stats.centered_means.norm() <= 1e-15);
    }

    #[test]
    fn init_features_zero_mean_and_deterministic() {
        let d = dims(4, 8, 6);
        let a = init_features(d, 0, 3.0);
        let b = init_features(d, 0, 3.0);
        assert_eq!(a, b);
        assert!(a.global_mean().norm() <= 1e-14 * 3.0);
        assert_ne!(a, init_features(d, 1, 3.0));
    }

    #[test]
    fn init_features_full_rank_within_class() {
        let h = init_features(dims(4, 8, 6), 0, 1.0);
        let (min, _) = crate::linalg::eig_extremes(&compute_stats(&h).sigma_w);
        assert!(min > 0.0);
    }

    #[test]
    fn transform_changes_feature_dim() {
        let h = init_features(dims(2, 3, 4), 3, 1.0);
        let a = DMatrix::from_fn(2, 4, |r, c| (r + c) as f64);
        let t = h.transform(&a).unwrap();
        assert_eq!(t.dims().feature_dim(), 2);
        assert!(h.transform(&DMatrix::zeros(2, 3)).is_err());
    }
}
