//! Closed-form dynamics of the SNR singular values under the renormalized
//! flow, and the limiting Simplex-ETF objects they converge to.
//!
//! Each nonzero singular value obeys `dω/dt = (1/N) ω/(C+ω²)²`, which
//! integrates to `c1 ln ω + c2 ω² + c3 ω⁴ = a + t` with `c1 = C²N`,
//! `c2 = CN`, `c3 = N/4`.

use nalgebra::DMatrix;

use crate::error::{CollapseError, Result};
use crate::linalg::leading_columns;
use crate::snr::SnrSpectrum;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl OdeConstants {
    pub fn new(num_classes: usize, examples_per_class: usize) -> Self {
        let c = num_classes as f64;
        let n = examples_per_class as f64;
        Self {
            c1: c * c * n,
            c2: c * n,
            c3: n / 4.0,
        }
    }

    /// `c1 ln ω + c2 ω² + c3 ω⁴`.
    pub fn potential(&self, omega: f64) -> f64 {
        let w2 = omega * omega;
        self.c1 * omega.ln() + self.c2 * w2 + self.c3 * w2 * w2
    }
}

/// One singular value's trajectory, identified by its starting value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImplicitSolution {
    pub constants: OdeConstants,
    pub omega0: f64,
    pub a: f64,
}

fn require_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(CollapseError::InvalidInput(format!(
            "{name} must be positive and finite, got {v}"
        )));
    }
    Ok(())
}

/// `(1/N) ω/(C+ω²)²`.
pub fn omega_rate(omega: f64, num_classes: usize, examples_per_class: usize) -> Result<f64> {
    require_positive("omega", omega)?;
    Ok(rate_unchecked(omega, num_classes, examples_per_class))
}

pub(crate) fn rate_unchecked(omega: f64, num_classes: usize, examples_per_class: usize) -> f64 {
    let denom = num_classes as f64 + omega * omega;
    omega / (examples_per_class as f64 * denom * denom)
}

pub fn integration_constant(
    omega0: f64,
    num_classes: usize,
    examples_per_class: usize,
) -> Result<ImplicitSolution> {
    require_positive("omega0", omega0)?;
    let constants = OdeConstants::new(num_classes, examples_per_class);
    Ok(ImplicitSolution {
        constants,
        omega0,
        a: constants.potential(omega0),
    })
}

impl ImplicitSolution {
    /// `|F(ω) − (a + t)| / max(1, |a| + t)` where `F` is the potential.
    pub fn residual(&self, omega: f64, t: f64) -> f64 {
        (self.constants.potential(omega) - (self.a + t)).abs() / (self.a.abs() + t).max(1.0)
    }
}

/// Solves `F(ω) = a + t` by bisection. The potential is strictly increasing,
/// `F(ω0) = a ≤ a + t`, and the upper end is doubled until it brackets the
/// root; bisection runs until the bracket is two adjacent floats.
pub fn omega_at(sol: &ImplicitSolution, t: f64) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(CollapseError::InvalidInput(format!(
            "time must be finite and nonnegative, got {t}"
        )));
    }
    if t == 0.0 {
        return Ok(sol.omega0);
    }
    let target = sol.a + t;
    let f = |w: f64| sol.constants.potential(w) - target;

    let mut lo = sol.omega0;
    let mut hi = sol.omega0.max((t / sol.constants.c3).powf(0.25));
    let mut doublings = 0;
    while f(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 2100 || !hi.is_finite() {
            return Err(CollapseError::RootFinding(format!(
                "no upper bracket for a = {}, t = {t}",
                sol.a
            )));
        }
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(if f(lo).abs() <= f(hi).abs() { lo } else { hi })
}

/// `(t/c3)^{1/4} = (4t/N)^{1/4}`.
pub fn asymptote(t: f64, examples_per_class: usize) -> f64 {
    (4.0 * t / examples_per_class as f64).powf(0.25)
}

fn require_rank(spec0: &SnrSpectrum) -> Result<usize> {
    let c = spec0.num_classes();
    let rank = spec0.rank();
    if rank < c - 1 || spec0.left_vectors.ncols() < c - 1 {
        let w = &spec0.singular_values;
        return Err(CollapseError::RankDeficient {
            matrix: "SNR",
            min_eig: w[(c - 2).min(w.len() - 1)],
            max_eig: w.max(),
        });
    }
    Ok(c - 1)
}

/// `Û₀ V̂₀ᵀ` over the `C − 1` nonzero singular directions.
pub fn limit_snr(spec0: &SnrSpectrum) -> Result<DMatrix<f64>> {
    let k = require_rank(spec0)?;
    Ok(leading_columns(&spec0.left_vectors, k) * leading_columns(&spec0.right_vectors, k).transpose())
}

/// `(Û₀ V̂₀ᵀ) ⊗ 1_Nᵀ`: every example of class `c` sits at column `c` of the
/// limiting SNR.
pub fn limit_features(spec0: &SnrSpectrum, examples_per_class: usize) -> Result<DMatrix<f64>> {
    let snr = limit_snr(spec0)?;
    let n = examples_per_class;
    Ok(DMatrix::from_fn(snr.nrows(), snr.ncols() * n, |r, col| snr[(r, col / n)]))
}
