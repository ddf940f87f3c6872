//! NC1-NC4 measurements and the Simplex-ETF certificate.

use nalgebra::{DMatrix, DVector};

use crate::classifier::{extend, ls_classifier_extended, predictions, ExtendedClassifier};
use crate::error::{CollapseError, Result};
use crate::linalg::{pinv_sym, singular_values};
use crate::model::{compute_stats, FeatureMatrix};

/// Relative eigenvalue cutoff for `Σ_B†`.
pub const PINV_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NcReport {
    pub nc1_trace: f64,
    pub equinorm_cv: f64,
    pub angle_dev: f64,
    pub self_duality: f64,
    pub ncc_mismatch: f64,
}

/// `tr(Σ_B† Σ_W)` without normalization.
pub fn nc1_trace_raw(h: &FeatureMatrix) -> f64 {
    let stats = compute_stats(h);
    let pinv = pinv_sym(&stats.sigma_b, PINV_CUTOFF);
    (pinv * &stats.sigma_w).trace().max(0.0)
}

/// `tr(Σ_B† Σ_W) / C`. With whitened features this equals `Σ_j 1/ω_j²` over
/// the nonzero SNR singular values.
pub fn nc1_trace(h: &FeatureMatrix) -> f64 {
    nc1_trace_raw(h) / h.dims().num_classes() as f64
}

/// Coefficient of variation of `‖μ_c − μ_G‖` and mean `|cos + 1/(C−1)|` over
/// ordered pairs of distinct classes.
pub fn nc2_measures(h: &FeatureMatrix) -> Result<(f64, f64)> {
    let c = h.dims().num_classes();
    let means = compute_stats(h).centered_means;
    let norms: Vec<f64> = means.column_iter().map(|m| m.norm()).collect();
    let scale = norms.iter().fold(0.0_f64, |m, v| m.max(*v));
    if let Some(k) = norms.iter().position(|n| !(*n > 1e-12 * scale) || *n == 0.0) {
        return Err(CollapseError::DegenerateGeometry(format!(
            "centered mean of class {k} is zero"
        )));
    }
    let mean = norms.iter().sum::<f64>() / c as f64;
    let var = norms.iter().map(|n| (n - mean).powi(2)).sum::<f64>() / c as f64;
    let target = -1.0 / (c as f64 - 1.0);
    let mut dev = 0.0;
    for a in 0..c {
        for b in 0..c {
            if a != b {
                let cos = means.column(a).dot(&means.column(b)) / (norms[a] * norms[b]);
                dev += (cos - target).abs();
            }
        }
    }
    Ok((var.sqrt() / mean, dev / (c * (c - 1)) as f64))
}

/// `‖W/‖W‖_F − M̄ᵀ/‖M̄‖_F‖_F`.
pub fn nc3_self_duality(w: &DMatrix<f64>, mbar: &DMatrix<f64>) -> Result<f64> {
    if w.shape() != (mbar.ncols(), mbar.nrows()) {
        return Err(CollapseError::ShapeMismatch {
            what: "classifier weights vs transposed means",
            expected: (mbar.ncols(), mbar.nrows()),
            found: w.shape(),
        });
    }
    let (nw, nm) = (w.norm(), mbar.norm());
    if nw == 0.0 || nm == 0.0 {
        return Err(CollapseError::DegenerateGeometry(
            "self-duality needs nonzero weights and means".into(),
        ));
    }
    Ok((w / nw - mbar.transpose() / nm).norm())
}

fn first_max(v: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, x) in v.enumerate() {
        if x > best.1 {
            best = (k, x);
        }
    }
    best.0
}

/// Fraction of examples where `argmax_c (w_c·h + b_c)` differs from
/// `argmin_c ‖h − μ_c‖`. Ties go to the lowest class index in both rules.
pub fn nc4_mismatch(clf: &ExtendedClassifier, means: &DMatrix<f64>, h: &FeatureMatrix) -> Result<f64> {
    let dims = h.dims();
    if means.shape() != (dims.feature_dim(), dims.num_classes()) {
        return Err(CollapseError::ShapeMismatch {
            what: "class means",
            expected: (dims.feature_dim(), dims.num_classes()),
            found: means.shape(),
        });
    }
    let scores = predictions(clf, h)?;
    let mut mismatched = 0usize;
    for (col, x) in h.data().column_iter().enumerate() {
        let by_score = first_max(scores.column(col).iter().copied());
        let by_distance = first_max(means.column_iter().map(|m| -(x - m).norm_squared()));
        if by_score != by_distance {
            mismatched += 1;
        }
    }
    Ok(mismatched as f64 / dims.num_examples() as f64)
}

/// Residuals of the three Simplex-ETF conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtfCertificate {
    pub passed: bool,
    /// `(max − min)/max` over the top `C − 1` singular values.
    pub spread: f64,
    /// `ω_C / ω_max`.
    pub null_ratio: f64,
    /// `‖E 1‖ / ‖E‖_F`.
    pub ones_residual: f64,
}

/// Tests whether the columns of `E` form a Simplex ETF: `C − 1` equal
/// nonzero singular values, a vanishing `C`-th one, and `E 1 = 0`.
pub fn etf_certificate(e: &DMatrix<f64>, tol: f64) -> EtfCertificate {
    let c = e.ncols();
    let mut sv = singular_values(e);
    sv.resize(c.max(sv.len()), 0.0);
    let max = sv[0];
    if !(max > 0.0) || c < 2 {
        return EtfCertificate {
            passed: false,
            spread: f64::INFINITY,
            null_ratio: f64::INFINITY,
            ones_residual: f64::INFINITY,
        };
    }
    let spread = (max - sv[c - 2]) / max;
    let null_ratio = sv[c - 1] / max;
    let ones_residual = (e * DVector::from_element(c, 1.0)).norm() / e.norm();
    EtfCertificate {
        passed: spread <= tol && null_ratio <= tol && ones_residual <= tol,
        spread,
        null_ratio,
        ones_residual,
    }
}

/// Standard Simplex ETF `I − (1/C) 1 1ᵀ`.
pub fn simplex_etf(num_classes: usize) -> DMatrix<f64> {
    let c = num_classes;
    DMatrix::identity(c, c) - DMatrix::from_element(c, c, 1.0 / c as f64)
}

/// All four measurements, using the central-path classifier at `λ = 0`.
pub fn nc_report(h: &FeatureMatrix) -> Result<NcReport> {
    let clf = ls_classifier_extended(&extend(h), 0.0)?;
    let stats = compute_stats(h);
    let (equinorm_cv, angle_dev) = nc2_measures(h)?;
    Ok(NcReport {
        nc1_trace: nc1_trace(h),
        equinorm_cv,
        angle_dev,
        self_duality: nc3_self_duality(clf.weights(), &stats.centered_means)?,
        ncc_mismatch: nc4_mismatch(&clf, &stats.class_means, h)?,
    })
}
