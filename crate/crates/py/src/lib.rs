//! Python bindings. Matrices cross the boundary as lists of rows.

use collapse_core as core;
use core::{CollapseError, FlowConfig, FlowMethod};
use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

create_exception!(collapse_py, NumericalError, PyArithmeticError);

fn to_py(e: CollapseError) -> PyErr {
    match e {
        CollapseError::InvalidDims(_)
        | CollapseError::InvalidInput(_)
        | CollapseError::ShapeMismatch { .. }
        | CollapseError::Parse(_) => PyValueError::new_err(e.to_string()),
        other => NumericalError::new_err(other.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("expected a non-empty rectangular list of rows"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn dims(classes: usize, examples_per_class: usize, feature_dim: usize) -> PyResult<core::ProblemDims> {
    core::ProblemDims::new(classes, examples_per_class, feature_dim).map_err(to_py)
}

/// `P × CN` features; column `c·N + i` is example `i` of class `c`.
#[pyclass(name = "FeatureMatrix", frozen)]
struct PyFeatureMatrix(core::FeatureMatrix);

#[pymethods]
impl PyFeatureMatrix {
    #[new]
    fn new(data: Vec<Vec<f64>>, classes: usize, examples_per_class: usize) -> PyResult<Self> {
        let m = matrix(&data)?;
        let d = dims(classes, examples_per_class, m.nrows())?;
        Ok(Self(core::FeatureMatrix::new(d, m).map_err(to_py)?))
    }

    #[staticmethod]
    #[pyo3(signature = (classes, examples_per_class, feature_dim, seed, scale = 1.0))]
    fn random(classes: usize, examples_per_class: usize, feature_dim: usize, seed: u64, scale: f64) -> PyResult<Self> {
        Ok(Self(core::init_features(dims(classes, examples_per_class, feature_dim)?, seed, scale)))
    }

    /// Whitened features whose SNR matrix has the given singular values.
    #[staticmethod]
    fn with_spectrum(examples_per_class: usize, feature_dim: usize, omegas: Vec<f64>, seed: u64) -> PyResult<Self> {
        let d = dims(omegas.len() + 1, examples_per_class, feature_dim)?;
        Ok(Self(core::features_with_spectrum(d, &omegas, seed).map_err(to_py)?))
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        let d = self.0.dims();
        (d.num_classes(), d.examples_per_class(), d.feature_dim())
    }

    fn to_rows(&self) -> Vec<Vec<f64>> {
        rows(self.0.data())
    }

    fn centered(&self) -> Self {
        Self(self.0.centered())
    }

    fn transform(&self, a: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self(self.0.transform(&matrix(&a)?).map_err(to_py)?))
    }

    /// Nonzero singular values of `Σ_W^{-1/2} M̄`.
    fn snr_singular_values(&self) -> PyResult<Vec<f64>> {
        let snr = core::snr_matrix(&self.0).map_err(to_py)?;
        Ok(core::snr_svd(&snr).nonzero_omegas())
    }

    fn __repr__(&self) -> String {
        let (c, n, p) = self.shape();
        format!("FeatureMatrix(classes={c}, examples_per_class={n}, feature_dim={p})")
    }
}

#[pyclass(name = "LossBreakdown", frozen, get_all)]
struct PyLossBreakdown {
    total: f64,
    ls_part: f64,
    perp_part: f64,
    nc1_part: f64,
    nc23_part: f64,
}

impl From<core::LossBreakdown> for PyLossBreakdown {
    fn from(b: core::LossBreakdown) -> Self {
        Self {
            total: b.total,
            ls_part: b.ls_part,
            perp_part: b.perp_part,
            nc1_part: b.nc1_part,
            nc23_part: b.nc23_part,
        }
    }
}

#[pymethods]
impl PyLossBreakdown {
    fn identity_residual(&self) -> f64 {
        (self.total - (self.nc1_part + self.nc23_part + self.perp_part)).abs() / self.total.max(1.0)
    }

    fn __repr__(&self) -> String {
        format!(
            "LossBreakdown(total={}, nc1={}, nc23={}, perp={})",
            self.total, self.nc1_part, self.nc23_part, self.perp_part
        )
    }
}

#[pyclass(name = "NcReport", frozen, get_all)]
struct PyNcReport {
    nc1_trace: f64,
    equinorm_cv: f64,
    angle_dev: f64,
    self_duality: f64,
    ncc_mismatch: f64,
}

#[pyclass(name = "EtfCertificate", frozen, get_all)]
struct PyEtfCertificate {
    passed: bool,
    spread: f64,
    null_ratio: f64,
    ones_residual: f64,
}

/// Least-squares classifier `(W, b)` with ridge `lam`.
#[pyfunction]
#[pyo3(signature = (h, lam = 0.0))]
fn ls_classifier(h: &PyFeatureMatrix, lam: f64) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let clf = core::ls_classifier_extended(&core::extend(&h.0), lam).map_err(to_py)?;
    Ok((rows(clf.weights()), clf.bias().iter().copied().collect()))
}

/// Regularized MSE of `(W, b)` on `h`, split into its collapse terms.
#[pyfunction]
#[pyo3(signature = (weights, bias, h, lam = 0.0))]
fn decompose(weights: Vec<Vec<f64>>, bias: Vec<f64>, h: &PyFeatureMatrix, lam: f64) -> PyResult<PyLossBreakdown> {
    let clf = core::ExtendedClassifier::new(matrix(&weights)?, bias.into()).map_err(to_py)?;
    Ok(core::decompose(&clf, &core::extend(&h.0), lam).map_err(to_py)?.into())
}

#[pyfunction]
fn central_path_loss(h: &PyFeatureMatrix) -> PyResult<PyLossBreakdown> {
    Ok(core::central_path_loss(&h.0).map_err(to_py)?.into())
}

#[pyfunction]
fn spectral_loss(omegas: Vec<f64>, classes: usize) -> PyResult<PyLossBreakdown> {
    Ok(core::spectral_loss(&omegas, classes).map_err(to_py)?.into())
}

#[pyfunction]
fn nc_report(h: &PyFeatureMatrix) -> PyResult<PyNcReport> {
    let r = core::nc_report(&h.0).map_err(to_py)?;
    Ok(PyNcReport {
        nc1_trace: r.nc1_trace,
        equinorm_cv: r.equinorm_cv,
        angle_dev: r.angle_dev,
        self_duality: r.self_duality,
        ncc_mismatch: r.ncc_mismatch,
    })
}

#[pyfunction]
#[pyo3(signature = (e, tol = 1e-9))]
fn etf_certificate(e: Vec<Vec<f64>>, tol: f64) -> PyResult<PyEtfCertificate> {
    let c = core::etf_certificate(&matrix(&e)?, tol);
    Ok(PyEtfCertificate {
        passed: c.passed,
        spread: c.spread,
        null_ratio: c.null_ratio,
        ones_residual: c.ones_residual,
    })
}

/// Closed-form singular value at time `t` starting from `omega0`.
#[pyfunction]
fn omega_at(omega0: f64, classes: usize, examples_per_class: usize, t: f64) -> PyResult<f64> {
    let sol = core::integration_constant(omega0, classes, examples_per_class).map_err(to_py)?;
    core::omega_at(&sol, t).map_err(to_py)
}

#[pyfunction]
fn asymptote(t: f64, examples_per_class: usize) -> f64 {
    core::asymptote(t, examples_per_class)
}

/// `Û₀ V̂₀ᵀ` for the SNR matrix of `h`.
#[pyfunction]
fn limit_snr(h: &PyFeatureMatrix) -> PyResult<Vec<Vec<f64>>> {
    let snr = core::snr_matrix(&h.0).map_err(to_py)?;
    Ok(rows(&core::limit_snr(&core::snr_svd(&snr)).map_err(to_py)?))
}

#[pyclass(name = "Trajectory", frozen, get_all)]
struct PyTrajectory {
    times: Vec<f64>,
    omegas: Vec<Vec<f64>>,
    total_loss: Vec<f64>,
    nc1_loss: Vec<f64>,
    nc23_loss: Vec<f64>,
    drift: Vec<f64>,
    manifold_residuals: Vec<f64>,
}

/// Simulates the renormalized flow from the aligned coordinates of `h`.
#[pyfunction]
#[pyo3(signature = (h, step_size, horizon, method = "discrete_renorm", record_every = 100))]
fn simulate(h: &PyFeatureMatrix, step_size: f64, horizon: f64, method: &str, record_every: usize) -> PyResult<PyTrajectory> {
    let method = FlowMethod::parse(method).map_err(to_py)?;
    let mut cfg = FlowConfig::new(method, step_size, horizon);
    cfg.record_every = record_every;
    let x0 = core::align_features(&h.0).map_err(to_py)?;
    let traj = core::simulate(&x0, &cfg).map_err(to_py)?;
    Ok(PyTrajectory {
        total_loss: traj.losses.iter().map(|l| l.total).collect(),
        nc1_loss: traj.losses.iter().map(|l| l.nc1_part).collect(),
        nc23_loss: traj.losses.iter().map(|l| l.nc23_part).collect(),
        times: traj.times,
        omegas: traj.omegas,
        drift: traj.drift,
        manifold_residuals: traj.manifold_residuals,
    })
}

#[pymodule]
fn collapse_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_class::<PyFeatureMatrix>()?;
    m.add_class::<PyLossBreakdown>()?;
    m.add_class::<PyNcReport>()?;
    m.add_class::<PyEtfCertificate>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(ls_classifier, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(central_path_loss, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_loss, m)?)?;
    m.add_function(wrap_pyfunction!(nc_report, m)?)?;
    m.add_function(wrap_pyfunction!(etf_certificate, m)?)?;
    m.add_function(wrap_pyfunction!(omega_at, m)?)?;
    m.add_function(wrap_pyfunction!(asymptote, m)?)?;
    m.add_function(wrap_pyfunction!(limit_snr, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
