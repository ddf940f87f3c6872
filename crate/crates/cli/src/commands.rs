use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use collapse_core::classifier::{extend, ls_classifier_extended};
use collapse_core::io::{fmt_f64, loss_row, nc_row, write_trajectory, LOSS_HEADER, NC_HEADER};
use collapse_core::{
    align_features, asymptote, decompose, etf_certificate, features_with_spectrum, init_features,
    integration_constant, limit_snr, nc_report, omega_at, simulate, singular_vector_drift,
    snr_matrix, snr_svd, AlignedState, CollapseError, FeatureMatrix, FlowConfig, FlowTrajectory,
};
use serde_json::{json, Map, Value};

use crate::config::{ExperimentConfig, Init};

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical(CollapseError),
    Io(io::Error),
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

impl From<CollapseError> for Failure {
    fn from(e: CollapseError) -> Self {
        Failure::Numerical(e)
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "invalid config: {m}"),
            Failure::Numerical(e) => write!(f, "numerical failure: {e}"),
            Failure::Io(e) => write!(f, "cannot write output: {e}"),
        }
    }
}

/// Scalar diagnostics plus the list of tolerance checks that failed.
#[derive(Debug, Default)]
pub struct Outcome {
    pub summary: Map<String, Value>,
    pub violations: Vec<String>,
}

impl Outcome {
    fn put(&mut self, key: &str, value: impl Into<Value>) {
        self.summary.insert(key.to_string(), value.into());
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.violations.push(what.into());
        }
    }
}

/// Errors from building the initial features are blamed on the config when
/// they concern shapes or arguments.
fn setup<T>(r: Result<T, CollapseError>) -> Result<T, Failure> {
    r.map_err(|e| match e {
        CollapseError::InvalidDims(m) | CollapseError::InvalidInput(m) => Failure::Config(m),
        other => Failure::Numerical(other),
    })
}

fn initial_features(cfg: &ExperimentConfig) -> Result<FeatureMatrix, Failure> {
    match cfg.init {
        Init::Random => Ok(init_features(cfg.dims, cfg.seed, cfg.init_scale)),
        Init::Spectrum => setup(features_with_spectrum(cfg.dims, &cfg.omegas, cfg.seed)),
    }
}

fn initial_state(cfg: &ExperimentConfig) -> Result<AlignedState, Failure> {
    if cfg.dims.examples_per_class() < 2 {
        return Err(Failure::Config("flows need at least 2 examples per class".into()));
    }
    let h = initial_features(cfg)?;
    setup(align_features(&h))
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(out.join(name))?))
}

fn ratio(omegas: &[f64]) -> f64 {
    let max = omegas.iter().cloned().fold(0.0, f64::max);
    let min = omegas.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min
}

fn run_flow(x0: &AlignedState, flow: &FlowConfig) -> Result<FlowTrajectory, Failure> {
    simulate(x0, flow).map_err(|e| match e {
        CollapseError::StepTooLarge { .. } => Failure::Config(e.to_string()),
        other => Failure::Numerical(other),
    })
}

pub fn decompose_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, Failure> {
    let x0 = initial_state(cfg)?;
    let traj = run_flow(&x0, &cfg.flow)?;

    let mut rows = Vec::with_capacity(traj.len());
    for (t, state) in traj.times.iter().zip(&traj.states) {
        let ext = extend(&state.canonical_features());
        let clf = ls_classifier_extended(&ext, cfg.lambda)?;
        rows.push((*t, decompose(&clf, &ext, cfg.lambda)?));
    }

    let mut w = create(out, "decomposition.csv")?;
    writeln!(w, "{LOSS_HEADER}")?;
    for (t, b) in &rows {
        writeln!(w, "{}", loss_row(*t, b))?;
    }
    w.flush()?;

    let max_identity = rows.iter().map(|(_, b)| b.identity_residual()).fold(0.0, f64::max);
    let max_perp = rows.iter().map(|(_, b)| b.perp_part).fold(0.0, f64::max);
    println!("identity residual max: {}", fmt_f64(max_identity));

    let mut o = Outcome::default();
    o.put("snapshots", rows.len());
    o.put("identity_residual_max", max_identity);
    o.put("perp_max", max_perp);
    // Relative decay from the first to the second snapshot.
    if let [(_, first), (_, second), ..] = rows.as_slice() {
        let nc1 = second.nc1_part / first.nc1_part;
        let nc23 = second.nc23_part / first.nc23_part;
        o.put("nc1_early_decay", nc1);
        o.put("nc23_early_decay", nc23);
        o.put("nc23_decays_faster", nc23 < nc1);
    }
    o.check(
        max_identity <= cfg.tolerances.identity,
        format!("identity residual {max_identity:e} exceeds {:e}", cfg.tolerances.identity),
    );
    Ok(o)
}

pub fn flow_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, Failure> {
    let x0 = initial_state(cfg)?;
    let traj = run_flow(&x0, &cfg.flow)?;
    let reports = traj
        .states
        .iter()
        .map(|s| nc_report(&s.canonical_features()))
        .collect::<Result<Vec<_>, _>>()?;

    let mut w = create(out, "trajectory.csv")?;
    write_trajectory(&mut w, &traj)?;
    w.flush()?;
    let mut w = create(out, "nc_report.csv")?;
    writeln!(w, "{NC_HEADER}")?;
    for (t, r) in traj.times.iter().zip(&reports) {
        writeln!(w, "{}", nc_row(*t, r))?;
    }
    w.flush()?;

    let initial_ratio = ratio(&traj.omegas[0]);
    let final_ratio = ratio(traj.final_omegas());
    let drift = singular_vector_drift(&traj);
    let manifold = traj.manifold_residuals.iter().cloned().fold(0.0, f64::max);
    println!("omega ratio: {} -> {}", fmt_f64(initial_ratio), fmt_f64(final_ratio));
    println!("singular-vector drift: {}", fmt_f64(drift));

    let mut o = Outcome::default();
    o.put("method", cfg.flow.method.name());
    o.put("snapshots", traj.len());
    o.put("final_time", *traj.times.last().unwrap());
    o.put("initial_ratio", initial_ratio);
    o.put("final_ratio", final_ratio);
    o.put("ratio_decreased", final_ratio < initial_ratio);
    o.put("final_omegas", traj.final_omegas().to_vec());
    o.put("drift", drift);
    o.put("manifold_residual_max", manifold);
    let last = reports.last().unwrap();
    o.put("final_nc1", last.nc1_trace);
    o.put("final_equinorm_cv", last.equinorm_cv);
    o.put("final_angle_dev", last.angle_dev);
    o.put("final_self_duality", last.self_duality);
    o.put("final_ncc_mismatch", last.ncc_mismatch);
    o.check(
        drift <= cfg.tolerances.drift,
        format!("drift {drift:e} exceeds {:e}", cfg.tolerances.drift),
    );
    Ok(o)
}

pub fn closedform_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, Failure> {
    let (c, n) = (cfg.dims.num_classes(), cfg.dims.examples_per_class());
    let omegas0 = match cfg.init {
        Init::Spectrum => cfg.omegas.clone(),
        Init::Random => snr_svd(&snr_matrix(&initial_features(cfg)?)?).nonzero_omegas(),
    };
    let grid = cfg.time_grid();

    let mut w = create(out, "closedform.csv")?;
    writeln!(w, "omega0,t,omega_closed_form,asymptote,ratio,residual")?;
    let mut max_residual = 0.0_f64;
    let mut final_ratios = Vec::new();
    for &w0 in &omegas0 {
        let sol = integration_constant(w0, c, n)?;
        let mut last_ratio = f64::NAN;
        for &t in &grid {
            let omega = omega_at(&sol, t)?;
            let residual = sol.residual(omega, t);
            max_residual = max_residual.max(residual);
            let (asym, r) = if t > 0.0 {
                let a = asymptote(t, n);
                (a, omega / a)
            } else {
                (f64::NAN, f64::NAN)
            };
            last_ratio = r;
            let row = [w0, t, omega, asym, r, residual].map(fmt_f64).join(",");
            writeln!(w, "{row}")?;
        }
        final_ratios.push(last_ratio);
    }
    w.flush()?;
    println!("implicit-equation residual max: {}", fmt_f64(max_residual));

    let mut o = Outcome::default();
    o.put("omega0", omegas0);
    o.put("t_max", cfg.t_max);
    o.put("residual_max", max_residual);
    o.put("final_ratios", final_ratios);
    o.check(
        max_residual <= cfg.tolerances.residual,
        format!("residual {max_residual:e} exceeds {:e}", cfg.tolerances.residual),
    );
    Ok(o)
}

/// Largest relative error of the simulated singular values against the
/// closed form, per snapshot.
fn closed_form_errors(traj: &FlowTrajectory, c: usize, n: usize) -> Result<Vec<f64>, Failure> {
    let sols = traj.omegas[0]
        .iter()
        .map(|&w| integration_constant(w, c, n))
        .collect::<Result<Vec<_>, _>>()?;
    let mut errs = Vec::with_capacity(traj.len());
    for (t, omegas) in traj.times.iter().zip(&traj.omegas) {
        let mut e = 0.0_f64;
        for (sol, w) in sols.iter().zip(omegas) {
            let exact = omega_at(sol, *t)?;
            e = e.max((w - exact).abs() / exact);
        }
        errs.push(e);
    }
    Ok(errs)
}

pub fn compare_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, Failure> {
    let (c, n) = (cfg.dims.num_classes(), cfg.dims.examples_per_class());
    let x0 = initial_state(cfg)?;
    let coarse = cfg.flow;
    let mut fine = cfg.flow;
    fine.step_size = coarse.step_size / 2.0;
    fine.record_every = coarse.record_every * 2;
    fine.realign_every = coarse.realign_every * 2;

    let (a, b) = std::thread::scope(|s| {
        let ha = s.spawn(|| run_flow(&x0, &coarse));
        let hb = s.spawn(|| run_flow(&x0, &fine));
        (ha.join().expect("flow worker panicked"), hb.join().expect("flow worker panicked"))
    });
    let (a, b) = (a?, b?);

    let errs_a = closed_form_errors(&a, c, n)?;
    let errs_b = closed_form_errors(&b, c, n)?;
    let err_a = errs_a.iter().cloned().fold(0.0, f64::max);
    let err_b = errs_b.iter().cloned().fold(0.0, f64::max);
    let factor = err_a / err_b;

    let limit = limit_snr(&x0.spectrum())?;
    let distances: Vec<f64> = a
        .states
        .iter()
        .map(|s| {
            let spec = s.spectrum();
            (spec.reconstruct() / spec.singular_values[0] - &limit).norm()
        })
        .collect();
    let decreasing = distances.windows(2).all(|w| w[1] < w[0]);
    let limit_cert = etf_certificate(&limit, cfg.tolerances.etf);
    let final_spec = a.final_state().spectrum();
    let final_cert = etf_certificate(
        &(final_spec.reconstruct() / final_spec.singular_values[0]),
        cfg.tolerances.etf,
    );

    let mut w = create(out, "compare.csv")?;
    writeln!(w, "t,error_eta,error_half_eta,etf_distance")?;
    for k in 0..a.len() {
        // Snapshot times coincide: record_every doubles with the step count.
        let row = [a.times[k], errs_a[k], errs_b.get(k).copied().unwrap_or(f64::NAN), distances[k]]
            .map(fmt_f64)
            .join(",");
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    println!("max relative error: {} (eta), {} (eta/2)", fmt_f64(err_a), fmt_f64(err_b));
    println!("refinement factor: {}", fmt_f64(factor));

    let tol = &cfg.tolerances;
    let mut o = Outcome::default();
    o.put("method", cfg.flow.method.name());
    o.put("omega0", a.omegas[0].clone());
    o.put("max_relative_error", err_a);
    o.put("max_relative_error_half_step", err_b);
    o.put("convergence_factor", factor);
    o.put("drift", singular_vector_drift(&a));
    o.put("drift_half_step", singular_vector_drift(&b));
    o.put("etf_distance_initial", distances[0]);
    o.put("etf_distance_final", *distances.last().unwrap());
    o.put("etf_distance_decreasing", decreasing);
    o.put("limit_certificate_passed", limit_cert.passed);
    o.put("final_spread", final_cert.spread);
    o.put("final_null_ratio", final_cert.null_ratio);
    o.put("final_ones_residual", final_cert.ones_residual);
    o.check(
        err_a <= tol.flow_error,
        format!("relative error {err_a:e} exceeds {:e}", tol.flow_error),
    );
    o.check(
        (tol.convergence_low..=tol.convergence_high).contains(&factor),
        format!(
            "refinement factor {factor} outside [{}, {}]",
            tol.convergence_low, tol.convergence_high
        ),
    );
    o.check(limit_cert.passed, "limit SNR is not a certified simplex ETF");
    Ok(o)
}

pub fn config_summary(cfg: &ExperimentConfig) -> Value {
    json!({
        "classes": cfg.dims.num_classes(),
        "examples_per_class": cfg.dims.examples_per_class(),
        "feature_dim": cfg.dims.feature_dim(),
        "seed": cfg.seed,
        "lambda": cfg.lambda,
        "method": cfg.flow.method.name(),
        "step_size": cfg.flow.step_size,
        "horizon": cfg.flow.horizon,
        "record_every": cfg.flow.record_every,
        "realign_every": cfg.flow.realign_every,
    })
}
