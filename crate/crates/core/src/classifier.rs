//! MSE-optimal (ridge) classifiers in extended and unextended coordinates,
//! and the distance of an arbitrary classifier from the central path.

use nalgebra::{DMatrix, DVector};

use crate::error::{CollapseError, Result};
use crate::linalg::{check_full_rank, spd_solve, symmetrize};
use crate::model::{compute_stats, label_matrix, FeatureMatrix, ProblemDims};

/// Smallest-to-largest eigenvalue ratio below which a linear system is
/// reported as singular.
pub const RANK_TOL: f64 = 1e-10;

/// Tolerance on `‖μ_G‖` for inputs that must be globally centered.
pub const CENTERED_TOL: f64 = 1e-12;

/// Extended features `h̃_{i,c} = [h_{i,c}; 1]`, a `(P+1) × CN` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedFeatures {
    dims: ProblemDims,
    data: DMatrix<f64>,
}

impl ExtendedFeatures {
    pub fn dims(&self) -> ProblemDims {
        self.dims
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Drops the constant row, recovering the original features.
    pub fn unextend(&self) -> FeatureMatrix {
        let p = self.dims.feature_dim();
        FeatureMatrix::new(self.dims, self.data.rows(0, p).into_owned())
            .expect("extended features keep the feature block intact")
    }
}

pub fn extend(h: &FeatureMatrix) -> ExtendedFeatures {
    let dims = h.dims();
    let p = dims.feature_dim();
    let mut data = DMatrix::from_element(p + 1, dims.num_examples(), 1.0);
    data.rows_mut(0, p).copy_from(h.data());
    ExtendedFeatures { dims, data }
}

/// Statistics of extended features. The appended coordinate is constant, so
/// it has mean one and zero variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedStats {
    pub ext_means: DMatrix<f64>,
    pub ext_global_mean: DVector<f64>,
    pub ext_sigma_t: DMatrix<f64>,
    pub ext_sigma_w: DMatrix<f64>,
}

pub fn extended_stats(ext: &ExtendedFeatures) -> ExtendedStats {
    let p = ext.dims.feature_dim();
    let stats = compute_stats(&ext.unextend());
    let mut ext_means = DMatrix::from_element(p + 1, ext.dims.num_classes(), 1.0);
    ext_means.rows_mut(0, p).copy_from(&stats.class_means);
    let mut ext_global_mean = DVector::from_element(p + 1, 1.0);
    ext_global_mean.rows_mut(0, p).copy_from(&stats.global_mean);
    let pad = |m: &DMatrix<f64>| {
        let mut out = DMatrix::zeros(p + 1, p + 1);
        out.view_mut((0, 0), (p, p)).copy_from(m);
        out
    };
    ExtendedStats {
        ext_means,
        ext_global_mean,
        ext_sigma_t: pad(&stats.sigma_t),
        ext_sigma_w: pad(&stats.sigma_w),
    }
}

/// Linear classifier `W̃ = [W, b]` with `C × P` weights and a length-`C` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedClassifier {
    weights: DMatrix<f64>,
    bias: DVector<f64>,
}

impl ExtendedClassifier {
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(CollapseError::ShapeMismatch {
                what: "classifier bias",
                expected: (weights.nrows(), 1),
                found: (bias.len(), 1),
            });
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(CollapseError::InvalidInput(
                "non-finite classifier entry".into(),
            ));
        }
        Ok(Self { weights, bias })
    }

    /// Splits a `C × (P+1)` stacked matrix; the last column is the bias.
    pub fn from_stacked(stacked: &DMatrix<f64>) -> Result<Self> {
        if stacked.ncols() < 2 {
            return Err(CollapseError::InvalidInput(
                "stacked classifier needs at least one weight column and a bias column".into(),
            ));
        }
        let p = stacked.ncols() - 1;
        Self::new(
            stacked.columns(0, p).into_owned(),
            stacked.column(p).into_owned(),
        )
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.ncols()
    }

    /// `W̃ = [W, b]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (c, p) = self.weights.shape();
        let mut out = DMatrix::zeros(c, p + 1);
        out.columns_mut(0, p).copy_from(&self.weights);
        out.set_column(p, &self.bias);
        out
    }

    pub(crate) fn check_compatible(&self, dims: ProblemDims) -> Result<()> {
        let expected = (dims.num_classes(), dims.feature_dim());
        if self.weights.shape() != expected {
            return Err(CollapseError::ShapeMismatch {
                what: "classifier weights",
                expected,
                found: self.weights.shape(),
            });
        }
        Ok(())
    }
}

/// The system matrix `Σ̃_T + μ̃_G μ̃_Gᵀ + λI` shared by the optimal classifier
/// and the central-path distance.
pub fn ls_system(stats: &ExtendedStats, lambda: f64) -> DMatrix<f64> {
    let k = stats.ext_global_mean.len();
    let mu = &stats.ext_global_mean;
    symmetrize(&(&stats.ext_sigma_t + mu * mu.transpose() + DMatrix::identity(k, k) * lambda))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(CollapseError::InvalidInput(format!(
            "weight decay must be a finite nonnegative number, got {lambda}"
        )));
    }
    Ok(())
}

/// MSE-optimal classifier `W̃_LS = C⁻¹ M̃ᵀ (Σ̃_T + μ̃_G μ̃_Gᵀ + λI)⁻¹`.
///
/// The system is solved by Cholesky factorization; it is rejected as singular
/// when its eigenvalue ratio falls below [`RANK_TOL`].
pub fn ls_classifier_extended(ext: &ExtendedFeatures, lambda: f64) -> Result<ExtendedClassifier> {
    check_lambda(lambda)?;
    let stats = extended_stats(ext);
    let system = ls_system(&stats, lambda);
    check_full_rank(&system, RANK_TOL, "Σ̃_T + μ̃_G μ̃_Gᵀ + λI")?;
    let c = ext.dims.num_classes() as f64;
    // K W̃ᵀ = M̃ / C, K symmetric.
    let wt = spd_solve(&system, &(&stats.ext_means / c), "Σ̃_T + μ̃_G μ̃_Gᵀ + λI")?;
    ExtendedClassifier::from_stacked(&wt.transpose())
}

/// Unextended least-squares classifier for globally-centered features:
/// `W_LS = C⁻¹ M̄ᵀ Σ_T⁻¹`, `b_LS = C⁻¹ 1_C − W_LS μ_G`.
pub fn ls_classifier_centered(hbar: &FeatureMatrix) -> Result<ExtendedClassifier> {
    hbar.require_centered(CENTERED_TOL)?;
    let dims = hbar.dims();
    let stats = compute_stats(hbar);
    check_full_rank(&stats.sigma_t, RANK_TOL, "Σ_T")?;
    let c = dims.num_classes() as f64;
    let wt = spd_solve(&stats.sigma_t, &(&stats.centered_means / c), "Σ_T")?;
    let weights = wt.transpose();
    let bias = DVector::from_element(dims.num_classes(), 1.0 / c) - &weights * &stats.global_mean;
    ExtendedClassifier::new(weights, bias)
}

/// Scores `W H + b 1ᵀ`, a `C × CN` matrix.
pub fn predictions(clf: &ExtendedClassifier, h: &FeatureMatrix) -> Result<DMatrix<f64>> {
    clf.check_compatible(h.dims())?;
    let mut scores = clf.weights() * h.data();
    for mut col in scores.column_iter_mut() {
        col += clf.bias();
    }
    Ok(scores)
}

/// Central-path distance
/// `L_LS⊥ = ½ tr[(W̃ − W̃_LS)(Σ̃_T + μ̃_G μ̃_Gᵀ + λI)(W̃ − W̃_LS)ᵀ]`,
/// evaluated as a quadratic form rather than a difference of losses.
pub fn central_path_residual(
    clf: &ExtendedClassifier,
    ext: &ExtendedFeatures,
    lambda: f64,
) -> Result<f64> {
    clf.check_compatible(ext.dims())?;
    let optimal = ls_classifier_extended(ext, lambda)?;
    let system = ls_system(&extended_stats(ext), lambda);
    let delta = clf.stacked() - optimal.stacked();
    let quad = (&delta * &system).component_mul(&delta).sum();
    Ok(0.5 * quad.max(0.0))
}

/// Gradient of the MSE loss in `W̃`:
/// `Ave_{i,c} (W̃ h̃ − y) h̃ᵀ + λ W̃`. Zero at the optimal classifier.
pub fn stationarity_residual(
    clf: &ExtendedClassifier,
    ext: &ExtendedFeatures,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    clf.check_compatible(ext.dims())?;
    let y = label_matrix(ext.dims());
    let w = clf.stacked();
    let err = &w * ext.data() - y.data();
    Ok(&err * ext.data().transpose() / ext.dims().num_examples() as f64 + w * lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_features;

    fn dims(c: usize, n: usize, p: usize) -> ProblemDims {
        ProblemDims::new(c, n, p).unwrap()
    }

    #[test]
    fn extend_appends_ones_row() {
        let h = FeatureMatrix::new(dims(2, 1, 2), DMatrix::zeros(2, 2)).unwrap();
        let ext = extend(&h);
        assert_eq!(ext.data().row(2).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0]);
        assert_eq!(ext.unextend(), h);
        let stats = extended_stats(&ext);
        assert_eq!(stats.ext_global_mean[2], 1.0);
        assert!(stats.ext_means.row(2).iter().all(|v| *v == 1.0));
        assert!(stats.ext_sigma_t.row(2).iter().all(|v| *v == 0.0));
        assert!(stats.ext_sigma_w.column(2).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stacked_round_trip() {
        let w = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = DVector::from_vec(vec![-1.0, -2.0]);
        let clf = ExtendedClassifier::new(w.clone(), b.clone()).unwrap();
        let s = clf.stacked();
        assert_eq!(s.column(3).into_owned(), b);
        assert_eq!(ExtendedClassifier::from_stacked(&s).unwrap(), clf);
        assert!(ExtendedClassifier::new(w, DVector::zeros(3)).is_err());
    }

    #[test]
    fn heavy_ridge_shrinks_towards_zero() {
        let h = init_features(dims(3, 4, 5), 11, 1.0);
        let ext = extend(&h);
        let lambda = 1e12;
        let clf = ls_classifier_extended(&ext, lambda).unwrap();
        let bound = extended_stats(&ext).ext_means.norm() / 3.0 / lambda * (1.0 + 1e-6);
        assert!(clf.stacked().norm() <= bound);
    }

    #[test]
    fn singular_system_at_zero_decay() {
        // C·N = 4 examples cannot span P + 1 = 7 extended dimensions.
        let h = init_features(dims(2, 2, 6), 0, 1.0);
        let err = ls_classifier_extended(&extend(&h), 0.0).unwrap_err();
        assert!(matches!(err, CollapseError::RankDeficient { .. }));
        assert!(ls_classifier_extended(&extend(&h), 0.5).is_ok());
    }

    #[test]
    fn negative_decay_rejected() {
        let h = init_features(dims(2, 4, 2), 0, 1.0);
        assert!(ls_classifier_extended(&extend(&h), -1.0).is_err());
    }

    #[test]
    fn centered_classifier_bias_is_uniform() {
        let h = init_features(dims(3, 8, 4), 5, 1.0);
        let clf = ls_classifier_centered(&h).unwrap();
        for b in clf.bias().iter() {
            assert!((b - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn centered_classifier_rejects_offset_features() {
        let h = init_features(dims(3, 8, 4), 5, 1.0);
        let shifted = FeatureMatrix::new(h.dims(), h.data().add_scalar(0.1)).unwrap();
        assert!(matches!(
            ls_classifier_centered(&shifted),
            Err(CollapseError::NonzeroGlobalMean { .. })
        ));
    }

    #[test]
    fn prediction_error_splits_into_centered_terms() {
        let d = dims(3, 8, 4);
        let h = init_features(d, 9, 1.0);
        let clf = ls_classifier_centered(&h).unwrap();
        let scores = predictions(&clf, &h).unwrap();
        let y = label_matrix(d);
        let mu = h.global_mean();
        for col in 0..d.num_examples() {
            let lhs = scores.column(col) - y.data().column(col);
            let rhs = clf.weights() * (h.data().column(col) - &mu)
                - (y.data().column(col) - DVector::from_element(3, 1.0 / 3.0));
            assert!((lhs - rhs).amax() <= 1e-12);
        }
    }

    #[test]
    fn constant_bias_classifier_predicts_first_class() {
        let d = dims(3, 2, 2);
        let h = init_features(d, 1, 1.0);
        let mut bias = DVector::zeros(3);
        bias[0] = 1.0;
        let clf = ExtendedClassifier::new(DMatrix::zeros(3, 2), bias.clone()).unwrap();
        let scores = predictions(&clf, &h).unwrap();
        for col in scores.column_iter() {
            assert_eq!(col.into_owned(), bias);
        }
        let wrong = ExtendedClassifier::new(DMatrix::zeros(3, 5), bias).unwrap();
        assert!(predictions(&wrong, &h).is_err());
    }

    #[test]
    fn residual_vanishes_at_optimum_and_bounds_perturbations() {
        let h = init_features(dims(4, 8, 6), 2, 1.0);
        let ext = extend(&h);
        let opt = ls_classifier_extended(&ext, 1.0).unwrap();
        assert!(central_path_residual(&opt, &ext, 1.0).unwrap() <= 1e-14);
        let delta = DMatrix::from_fn(4, 7, |r, c| ((r * 7 + c) as f64).sin());
        let moved = ExtendedClassifier::from_stacked(&(opt.stacked() + &delta)).unwrap();
        let r = central_path_residual(&moved, &ext, 1.0).unwrap();
        assert!(r >= 0.5 * delta.norm_squared());
    }
}
