//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use collapse_core::{FlowConfig, FlowMethod, ProblemDims};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Gaussian features.
    Random,
    /// Whitened features with the SNR singular values listed in `omegas`.
    Spectrum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tolerances {
    pub identity: f64,
    pub flow_error: f64,
    pub drift: f64,
    pub residual: f64,
    pub etf: f64,
    pub convergence_low: f64,
    pub convergence_high: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            identity: 1e-10,
            flow_error: 1e-2,
            drift: 1e-3,
            residual: 1e-12,
            etf: 1e-9,
            convergence_low: 1.7,
            convergence_high: 2.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dims: ProblemDims,
    pub seed: u64,
    pub lambda: f64,
    pub init: Init,
    pub init_scale: f64,
    pub omegas: Vec<f64>,
    pub flow: FlowConfig,
    pub t_min: f64,
    pub t_max: f64,
    pub t_points: usize,
    pub tolerances: Tolerances,
}

pub const KEYS: &[&str] = &[
    "classes",
    "examples_per_class",
    "feature_dim",
    "seed",
    "lambda",
    "init",
    "init_scale",
    "omegas",
    "method",
    "step_size",
    "horizon",
    "record_every",
    "realign_every",
    "t_min",
    "t_max",
    "t_points",
    "tol.identity",
    "tol.flow_error",
    "tol.drift",
    "tol.residual",
    "tol.etf",
    "tol.convergence_low",
    "tol.convergence_high",
];

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_entries(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = parse_assignment(line)
            .map_err(|e| err(format!("line {}: {}", k + 1, e.0)))?;
        out.insert(key, value);
    }
    Ok(out)
}

pub fn parse_assignment(s: &str) -> Result<(String, String), ConfigError> {
    let (key, value) = s
        .split_once('=')
        .ok_or_else(|| err(format!("expected key=value, got {s:?}")))?;
    let key = key.trim();
    if !KEYS.contains(&key) {
        return Err(err(format!("unknown key {key:?}")));
    }
    Ok((key.to_string(), value.trim().to_string()))
}

fn number<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse()
        .map_err(|_| err(format!("{key}: cannot parse {v:?}")))
}

fn positive(key: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(err(format!("{key} must be positive and finite, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path, overrides: &[String], env_seed: Option<&str>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text, overrides, env_seed)
    }

    /// Precedence, lowest first: file, `COLLAPSE_SEED`, `--set`.
    pub fn from_text(text: &str, overrides: &[String], env_seed: Option<&str>) -> Result<Self, ConfigError> {
        let mut entries = parse_entries(text)?;
        if let Some(seed) = env_seed {
            entries.insert("seed".into(), seed.trim().to_string());
        }
        for o in overrides {
            let (k, v) = parse_assignment(o)?;
            entries.insert(k, v);
        }
        Self::from_entries(&entries)
    }

    pub fn from_entries(e: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let get = |k: &str| e.get(k).map(String::as_str);
        let usize_or = |k: &str, d: usize| get(k).map_or(Ok(d), |v| number::<usize>(k, v));
        let f64_or = |k: &str, d: f64| get(k).map_or(Ok(d), |v| number::<f64>(k, v));

        let classes = usize_or("classes", 5)?;
        let n = usize_or("examples_per_class", 8)?;
        let p = usize_or("feature_dim", classes)?;
        let dims = ProblemDims::new(classes, n, p).map_err(|e| err(e.to_string()))?;

        let init = match get("init").unwrap_or("spectrum") {
            "random" => Init::Random,
            "spectrum" => Init::Spectrum,
            other => return Err(err(format!("init: unknown value {other:?}"))),
        };
        let omegas = match get("omegas") {
            Some(list) => list
                .split(',')
                .map(|s| number::<f64>("omegas", s.trim()).and_then(|w| positive("omegas", w)))
                .collect::<Result<Vec<_>, _>>()?,
            None => default_omegas(classes),
        };
        if init == Init::Spectrum && omegas.len() != classes - 1 {
            return Err(err(format!(
                "omegas: expected {} values, got {}",
                classes - 1,
                omegas.len()
            )));
        }

        let method = FlowMethod::parse(get("method").unwrap_or("discrete_renorm"))
            .map_err(|e| err(e.to_string()))?;
        let mut flow = FlowConfig::new(
            method,
            positive("step_size", f64_or("step_size", 1e-3)?)?,
            f64_or("horizon", 50.0)?,
        );
        flow.record_every = usize_or("record_every", 1000)?;
        flow.realign_every = usize_or("realign_every", method.default_realign_every())?;
        flow.validate().map_err(|e| err(e.to_string()))?;

        let t_min = positive("t_min", f64_or("t_min", 1e-2)?)?;
        let t_max = positive("t_max", f64_or("t_max", 1e7)?)?;
        if t_max <= t_min {
            return Err(err("t_max must exceed t_min"));
        }
        let t_points = usize_or("t_points", 40)?;
        if t_points < 2 {
            return Err(err("t_points must be at least 2"));
        }

        let tol = Tolerances::default();
        let tolerances = Tolerances {
            identity: positive("tol.identity", f64_or("tol.identity", tol.identity)?)?,
            flow_error: positive("tol.flow_error", f64_or("tol.flow_error", tol.flow_error)?)?,
            drift: positive("tol.drift", f64_or("tol.drift", tol.drift)?)?,
            residual: positive("tol.residual", f64_or("tol.residual", tol.residual)?)?,
            etf: positive("tol.etf", f64_or("tol.etf", tol.etf)?)?,
            convergence_low: positive(
                "tol.convergence_low",
                f64_or("tol.convergence_low", tol.convergence_low)?,
            )?,
            convergence_high: positive(
                "tol.convergence_high",
                f64_or("tol.convergence_high", tol.convergence_high)?,
            )?,
        };

        let lambda = f64_or("lambda", 0.0)?;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(err(format!("lambda must be nonnegative, got {lambda}")));
        }

        Ok(Self {
            dims,
            seed: get("seed").map_or(Ok(0), |v| number::<u64>("seed", v))?,
            lambda,
            init,
            init_scale: positive("init_scale", f64_or("init_scale", 1.0)?)?,
            omegas,
            flow,
            t_min,
            t_max,
            t_points,
            tolerances,
        })
    }

    /// `{0}` followed by `t_points` log-spaced times in `[t_min, t_max]`.
    pub fn time_grid(&self) -> Vec<f64> {
        let (a, b) = (self.t_min.ln(), self.t_max.ln());
        let k = self.t_points - 1;
        let mut grid = vec![0.0];
        grid.extend((0..=k).map(|i| {
            if i == k {
                self.t_max
            } else {
                (a + (b - a) * i as f64 / k as f64).exp()
            }
        }));
        grid
    }
}

/// `C − 1` evenly spaced values from 2 down to 0.5.
pub fn default_omegas(classes: usize) -> Vec<f64> {
    let k = classes.saturating_sub(1);
    if k == 1 {
        return vec![1.0];
    }
    (0..k).map(|j| 2.0 - 1.5 * j as f64 / (k - 1) as f64).collect()
}
