//! Continually renormalized gradient flow on the normalized-features
//! manifold, integrated either by gradient steps followed by renormalization
//! or row by row along the decoupled singular-value dynamics.

use nalgebra::DMatrix;

use crate::closed_form::rate_unchecked;
use crate::decomposition::{central_path_loss, LossBreakdown};
use crate::error::{CollapseError, Result};
use crate::snr::{
    renormalize, spectrum_drift, tangent_project, AlignedState, SnrSpectrum, ALIGNED_TOL,
    MANIFOLD_TOL,
};

/// Largest allowed relative singular-value increment per step.
pub const MAX_RELATIVE_INCREMENT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowMethod {
    /// Gradient step, then `X ↦ (X C Xᵀ)^{-1/2} X`.
    DiscreteRenorm,
    /// Each row `x_j` moves along `y_j` at the rate of its own singular
    /// value, integrated with classical RK4.
    AnalyticRows,
}

impl FlowMethod {
    pub fn name(&self) -> &'static str {
        match self {
            FlowMethod::DiscreteRenorm => "discrete_renorm",
            FlowMethod::AnalyticRows => "analytic_rows",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "discrete_renorm" => Ok(FlowMethod::DiscreteRenorm),
            "analytic_rows" => Ok(FlowMethod::AnalyticRows),
            other => Err(CollapseError::Parse(format!("unknown flow method {other:?}"))),
        }
    }

    pub fn default_realign_every(&self) -> usize {
        match self {
            FlowMethod::DiscreteRenorm => 100,
            FlowMethod::AnalyticRows => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub step_size: f64,
    pub horizon: f64,
    pub record_every: usize,
    /// Steps between realignments; 0 disables realignment.
    pub realign_every: usize,
    pub method: FlowMethod,
}

impl FlowConfig {
    pub fn new(method: FlowMethod, step_size: f64, horizon: f64) -> Self {
        Self {
            step_size,
            horizon,
            record_every: 100,
            realign_every: method.default_realign_every(),
            method,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(CollapseError::InvalidInput(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(CollapseError::InvalidInput(format!(
                "horizon must be finite and nonnegative, got {}",
                self.horizon
            )));
        }
        if self.record_every == 0 {
            return Err(CollapseError::InvalidInput("record_every must be positive".into()));
        }
        Ok(())
    }

    /// `ceil(T/η)`.
    pub fn num_steps(&self) -> usize {
        (self.horizon / self.step_size).ceil() as usize
    }
}

/// Snapshots of a simulated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<AlignedState>,
    /// The `C − 1` nonzero singular values at each snapshot.
    pub omegas: Vec<Vec<f64>>,
    pub losses: Vec<LossBreakdown>,
    /// Largest principal angle between the singular subspaces at `t` and at 0.
    pub drift: Vec<f64>,
    pub manifold_residuals: Vec<f64>,
}

impl FlowTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &AlignedState {
        self.states.last().expect("trajectory has at least one snapshot")
    }

    pub fn final_omegas(&self) -> &[f64] {
        self.omegas.last().expect("trajectory has at least one snapshot")
    }
}

fn require_on_manifold(state: &AlignedState) -> Result<()> {
    let residual = state.manifold_residual();
    if residual > MANIFOLD_TOL {
        return Err(CollapseError::OffManifold { residual });
    }
    Ok(())
}

fn require_aligned(state: &AlignedState) -> Result<()> {
    let off_diagonal = state.off_diagonal_mass();
    if off_diagonal > ALIGNED_TOL {
        return Err(CollapseError::NotAligned { off_diagonal });
    }
    Ok(())
}

/// Rejects step sizes whose Euler increment `η·rate(ω)` exceeds `0.1 ω` for
/// some nonzero singular value.
pub fn check_step_size(state: &AlignedState, step_size: f64) -> Result<()> {
    let dims = state.dims();
    let (c, n) = (dims.num_classes(), dims.examples_per_class());
    for w in state.nonzero_omegas() {
        if w > 0.0 {
            let increment = step_size * rate_unchecked(w, c, n) / w;
            if increment > MAX_RELATIVE_INCREMENT {
                return Err(CollapseError::StepTooLarge {
                    step_size,
                    increment,
                });
            }
        }
    }
    Ok(())
}

/// `∇_X L_LS = −(1/N) Σ_{j<C} ω_j/(C+ω_j²)² e_j y_jᵀ` in aligned coordinates.
pub fn ambient_gradient(state: &AlignedState) -> Result<DMatrix<f64>> {
    require_aligned(state)?;
    let dims = state.dims();
    let (c, n) = (dims.num_classes(), dims.examples_per_class());
    let mut grad = DMatrix::zeros(c, dims.num_examples());
    for (j, w) in state.nonzero_omegas().into_iter().enumerate() {
        let coef = -rate_unchecked(w, c, n);
        grad.view_mut((j, j * n), (1, n)).fill(coef);
    }
    Ok(grad)
}

/// Central-path loss of a matrix given in the state's aligned coordinates.
pub fn aligned_loss(state: &AlignedState, m: &DMatrix<f64>) -> Result<LossBreakdown> {
    central_path_loss(&state.to_label_coordinates(m)?)
}

/// `X' = (M C Mᵀ)^{-1/2} M` with `M = X − η ∇_X L_LS`.
pub fn discrete_step(state: &AlignedState, step_size: f64) -> Result<AlignedState> {
    require_on_manifold(state)?;
    let grad = ambient_gradient(state)?;
    let m = state.x() - grad * step_size;
    state.with_x(renormalize(&m, state.dims())?)
}

/// `X' = renormalize(X − η Π(∇_X L_LS))`.
pub fn projected_step(state: &AlignedState, step_size: f64) -> Result<AlignedState> {
    let grad = ambient_gradient(state)?;
    let m = state.x() - tangent_project(state, &grad)? * step_size;
    state.with_x(renormalize(&m, state.dims())?)
}

fn rk4(w: f64, h: f64, c: usize, n: usize) -> f64 {
    let f = |v: f64| rate_unchecked(v, c, n);
    let k1 = f(w);
    let k2 = f(w + 0.5 * h * k1);
    let k3 = f(w + 0.5 * h * k2);
    let k4 = f(w + h * k3);
    w + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Row-decoupled step: under the projected flow each row moves only along
/// its own label indicator, `ẋ_j = (1/N) ω_j/(C+ω_j²)² y_jᵀ`, so its
/// diagonal entry `ω_j` evolves independently. The row is shifted by the
/// RK4 increment of `ω_j` times `y_jᵀ`, which leaves `X C Xᵀ` unchanged.
pub fn analytic_rows_step(state: &AlignedState, step_size: f64) -> Result<AlignedState> {
    require_on_manifold(state)?;
    require_aligned(state)?;
    let dims = state.dims();
    let (c, n) = (dims.num_classes(), dims.examples_per_class());
    let mut x = state.x().clone();
    for (j, w) in state.nonzero_omegas().into_iter().enumerate() {
        let delta = rk4(w, step_size, c, n) - w;
        x.view_mut((j, j * n), (1, n)).add_scalar_mut(delta);
    }
    state.with_x(x)
}

/// `‖renormalize(X + ΔX) − (X + Π(ΔX))‖_F` with `ΔX = η Z`; second order
/// in `η`.
pub fn retraction_defect(state: &AlignedState, z: &DMatrix<f64>, step_size: f64) -> Result<f64> {
    let delta = z * step_size;
    let retracted = renormalize(&(state.x() + &delta), state.dims())?;
    let linear = state.x() + tangent_project(state, &delta)?;
    Ok((retracted - linear).norm())
}

fn step(state: &AlignedState, cfg: &FlowConfig, h: f64) -> Result<AlignedState> {
    match cfg.method {
        FlowMethod::DiscreteRenorm => discrete_step(state, h),
        FlowMethod::AnalyticRows => analytic_rows_step(state, h),
    }
}

struct Recorder {
    spec0: SnrSpectrum,
    traj: FlowTrajectory,
}

impl Recorder {
    fn record(&mut self, t: f64, state: &AlignedState) -> Result<()> {
        let loss = aligned_loss(state, state.x())?;
        self.traj.times.push(t);
        self.traj.omegas.push(state.nonzero_omegas());
        self.traj.losses.push(loss);
        self.traj.drift.push(spectrum_drift(&self.spec0, &state.spectrum()));
        self.traj.manifold_residuals.push(state.manifold_residual());
        self.traj.states.push(state.clone());
        Ok(())
    }
}

/// Integrates the flow from `x0` for `ceil(T/η)` steps; the last step is
/// shortened so the run ends exactly at `T`.
pub fn simulate(x0: &AlignedState, cfg: &FlowConfig) -> Result<FlowTrajectory> {
    cfg.validate()?;
    require_on_manifold(x0)?;
    require_aligned(x0)?;
    check_step_size(x0, cfg.step_size)?;

    let mut rec = Recorder {
        spec0: x0.spectrum(),
        traj: FlowTrajectory {
            times: Vec::new(),
            states: Vec::new(),
            omegas: Vec::new(),
            losses: Vec::new(),
            drift: Vec::new(),
            manifold_residuals: Vec::new(),
        },
    };
    rec.record(0.0, x0)?;

    let steps = cfg.num_steps();
    let mut state = x0.clone();
    for k in 1..=steps {
        let t_prev = (k - 1) as f64 * cfg.step_size;
        let t = if k == steps { cfg.horizon } else { k as f64 * cfg.step_size };
        let wrap = |e: CollapseError| CollapseError::StepFailed {
            t: t_prev,
            source: Box::new(e),
        };
        state = step(&state, cfg, t - t_prev).map_err(wrap)?;
        if cfg.realign_every > 0 && k % cfg.realign_every == 0 {
            state = state.realign().map_err(wrap)?;
        }
        if k % cfg.record_every == 0 || k == steps {
            rec.record(t, &state).map_err(wrap)?;
        }
    }
    Ok(rec.traj)
}

/// Largest principal angle between the leading left or right singular
/// subspaces at any snapshot and at the first one.
pub fn singular_vector_drift(traj: &FlowTrajectory) -> f64 {
    let Some(first) = traj.states.first() else {
        return 0.0;
    };
    let spec0 = first.spectrum();
    traj.states
        .iter()
        .skip(1)
        .map(|s| spectrum_drift(&spec0, &s.spectrum()))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::{integration_constant, omega_at};
    use crate::model::ProblemDims;
    use crate::snr::{align_features, cross_gram, features_with_spectrum};

    fn state(c: usize, n: usize, omegas: &[f64]) -> AlignedState {
        let d = ProblemDims::new(c, n, c).unwrap();
        align_features(&features_with_spectrum(d, omegas, 3).unwrap()).unwrap()
    }

    #[test]
    fn gradient_structure() {
        let s = state(4, 3, &[2.0, 1.5, 0.5]);
        let g = ambient_gradient(&s).unwrap();
        assert!(g.row(3).iter().all(|v| *v == 0.0));
        let expected = -rate_unchecked(s.omegas()[1], 4, 3);
        assert_eq!(g[(1, 3)], expected);
        assert_eq!(g[(1, 0)], 0.0);
        // Gradient rows lie in the label span, so the manifold is not left.
        let cross = cross_gram(s.x(), &g, s.dims());
        assert!(cross.norm() < 1e-14);
    }

    #[test]
    fn zero_step_is_identity() {
        let s = state(3, 4, &[1.0, 0.7]);
        for next in [discrete_step(&s, 0.0).unwrap(), projected_step(&s, 0.0).unwrap()] {
            assert!((next.x() - s.x()).norm() <= 1e-12);
        }
    }

    #[test]
    fn small_step_matches_rate() {
        let s = state(4, 5, &[1.8, 1.1, 0.6]);
        let eta = 1e-5;
        let next = discrete_step(&s, eta).unwrap();
        for (w0, w1) in s.nonzero_omegas().iter().zip(next.nonzero_omegas()) {
            let expected = eta * rate_unchecked(*w0, 4, 5);
            assert!(((w1 - w0) - expected).abs() <= 0.1 * expected);
        }
    }

    #[test]
    fn step_guard_rejects_huge_steps() {
        let s = state(3, 2, &[0.5, 0.2]);
        let cfg = FlowConfig::new(FlowMethod::DiscreteRenorm, 10.0, 20.0);
        let r = simulate(&s, &cfg);
        assert!(matches!(r, Err(CollapseError::StepTooLarge { .. })), "{r:?}");
    }

    #[test]
    fn zero_horizon_gives_single_snapshot() {
        let s = state(3, 4, &[1.0, 0.7]);
        let traj = simulate(&s, &FlowConfig::new(FlowMethod::DiscreteRenorm, 1e-2, 0.0)).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.states[0], s);
        assert_eq!(singular_vector_drift(&traj), 0.0);
    }

    #[test]
    fn step_count_and_final_time() {
        let s = state(3, 4, &[1.0, 0.7]);
        let mut cfg = FlowConfig::new(FlowMethod::AnalyticRows, 0.3, 1.0);
        cfg.record_every = 1;
        let traj = simulate(&s, &cfg).unwrap();
        assert_eq!(traj.times, vec![0.0, 0.3, 0.6, 0.8999999999999999, 1.0]);
    }

    #[test]
    fn rows_method_tracks_closed_form() {
        let s = state(3, 4, &[1.3, 0.6]);
        let mut cfg = FlowConfig::new(FlowMethod::AnalyticRows, 1e-2, 5.0);
        cfg.record_every = 50;
        let traj = simulate(&s, &cfg).unwrap();
        for (w0, w1) in s.nonzero_omegas().iter().zip(traj.final_omegas()) {
            let sol = integration_constant(*w0, 3, 4).unwrap();
            let exact = omega_at(&sol, 5.0).unwrap();
            assert!((w1 - exact).abs() <= 1e-10 * exact);
        }
    }

    #[test]
    fn step_failure_reports_time() {
        let s = state(3, 4, &[1.0, 0.7]);
        let broken = s.with_x(s.x() * 1.5).unwrap();
        let cfg = FlowConfig::new(FlowMethod::DiscreteRenorm, 1e-2, 1.0);
        assert!(matches!(simulate(&broken, &cfg), Err(CollapseError::OffManifold { .. })));
    }

    #[test]
    fn method_names_round_trip() {
        for m in [FlowMethod::DiscreteRenorm, FlowMethod::AnalyticRows] {
            assert_eq!(FlowMethod::parse(m.name()).unwrap(), m);
        }
        assert!(FlowMethod::parse("euler").is_err());
    }
}
