//! SNR matrix, its SVD, SNR-aligned coordinates and the normalized-features
//! manifold `{X : X C Xᵀ = I}` with its tangent projection and retraction.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CollapseError, Result};
use crate::linalg::{max_principal_angle, leading_columns, sorted_sym_eigen, symmetrize};
use crate::model::{label_matrix, within_class_covariance, FeatureMatrix, ProblemDims};
use crate::seed;

/// Default relative eigenvalue floor for [`inv_sqrt_spd`].
pub const SPD_FLOOR: f64 = 1e-12;

/// Singular values at or below `SNR_RANK_TOL · ω_max` count as zero.
pub const SNR_RANK_TOL: f64 = 1e-10;

/// Largest allowed `‖X C Xᵀ − I‖_F` for a state treated as on the manifold.
pub const MANIFOLD_TOL: f64 = 1e-8;

/// Relative off-diagonal mass of `Ω` tolerated by aligned-coordinate
/// operations.
pub const ALIGNED_TOL: f64 = 1e-9;

const TIE_TOL: f64 = 1e-12;

/// Inverse square root `B = A^{-1/2}` of a symmetric positive-definite matrix.
///
/// Fails with `NearSingular` when the smallest eigenvalue is at or below
/// `floor · λ_max`.
pub fn inv_sqrt_spd(a: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(CollapseError::ShapeMismatch {
            what: "inv_sqrt_spd input",
            expected: (a.nrows(), a.nrows()),
            found: a.shape(),
        });
    }
    let asym = (a - a.transpose()).norm();
    if asym > 1e-10 * a.norm().max(f64::MIN_POSITIVE) {
        return Err(CollapseError::InvalidInput(format!(
            "matrix is not symmetric (asymmetry {asym:e})"
        )));
    }
    let (values, vectors) = sorted_sym_eigen(a);
    let n = values.len();
    let max = values[0];
    let min = values[n - 1];
    if !(max > 0.0) || min <= floor * max {
        return Err(CollapseError::NearSingular {
            eigenvalue: min,
            floor: floor * max.max(0.0),
        });
    }
    let scaled = DVector::from_iterator(n, values.iter().map(|v| 1.0 / v.sqrt()));
    Ok(symmetrize(&(&vectors * DMatrix::from_diagonal(&scaled) * vectors.transpose())))
}

/// `SNR = Σ_W^{-1/2} M̄`, a `P × C` matrix.
pub fn snr_matrix(hbar: &FeatureMatrix) -> Result<DMatrix<f64>> {
    hbar.require_centered(crate::classifier::CENTERED_TOL)?;
    let whitener = inv_sqrt_spd(&within_class_covariance(hbar), SPD_FLOOR)?;
    Ok(whitener * hbar.class_means())
}

/// SVD `SNR = U diag(ω) Vᵀ`.
///
/// `singular_values` always has `C` entries, sorted nonincreasing and padded
/// with zeros when `P < C`. `left_vectors` has `min(P, C)` orthonormal columns
/// and `right_vectors` is a full `C × C` orthogonal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrSpectrum {
    pub left_vectors: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub right_vectors: DMatrix<f64>,
}

impl SnrSpectrum {
    pub fn num_classes(&self) -> usize {
        self.right_vectors.nrows()
    }

    /// Number of singular values above `SNR_RANK_TOL · ω_max`.
    pub fn rank(&self) -> usize {
        let max = self.singular_values.max();
        if !(max > 0.0) {
            return 0;
        }
        self.singular_values
            .iter()
            .filter(|w| **w > SNR_RANK_TOL * max)
            .count()
    }

    /// The `C − 1` leading singular values.
    pub fn nonzero_omegas(&self) -> Vec<f64> {
        let c = self.num_classes();
        self.singular_values.rows(0, c - 1).iter().copied().collect()
    }

    /// `U diag(ω) Vᵀ` over the available left vectors.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let r = self.left_vectors.ncols();
        let s = DMatrix::from_diagonal(&self.singular_values.rows(0, r).into_owned());
        &self.left_vectors * s * leading_columns(&self.right_vectors, r).transpose()
    }
}

fn first_significant(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    v.iter()
        .copied()
        .find(|x| x.abs() > 1e-12 * scale)
        .unwrap_or(0.0)
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other.reverse(),
        }
    }
    Ordering::Equal
}

/// Extends the orthonormal columns of `q` to an orthonormal basis of
/// `ℝⁿ` by Gram-Schmidt against the standard basis.
fn complete_basis(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.nrows();
    let mut cols: Vec<DVector<f64>> = q.column_iter().map(|c| c.into_owned()).collect();
    for k in 0..n {
        if cols.len() == n {
            break;
        }
        let mut v = DVector::zeros(n);
        v[k] = 1.0;
        // Two passes keep the result orthogonal to working precision.
        for _ in 0..2 {
            for c in &cols {
                let d = c.dot(&v);
                v -= c * d;
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            cols.push(v / norm);
        }
    }
    DMatrix::from_columns(&cols)
}

/// SVD of a `P × C` SNR matrix with a deterministic convention: singular
/// values nonincreasing, ties within `1e-12` relative ordered by the
/// lexicographically larger left vector first, and the first significant
/// entry of every left vector positive.
pub fn snr_svd(snr: &DMatrix<f64>) -> SnrSpectrum {
    let (p, c) = snr.shape();
    let a = faer::Mat::<f64>::from_fn(p, c, |i, j| snr[(i, j)]);
    let svd = a.thin_svd().expect("SVD of a finite matrix converges");
    let r = p.min(c);
    let u = DMatrix::from_fn(p, r, |i, j| svd.U()[(i, j)]);
    let v = DMatrix::from_fn(c, r, |i, j| svd.V()[(i, j)]);
    let s = DVector::from_iterator(r, (0..r).map(|k| svd.S()[k]));

    let mut order: Vec<usize> = (0..r).collect();
    let max = s.iter().fold(0.0_f64, |m, x| m.max(*x));
    let signed: Vec<(DVector<f64>, DVector<f64>)> = (0..r)
        .map(|k| {
            let uk = u.column(k).into_owned();
            let vk = v.column(k).into_owned();
            if first_significant(uk.as_slice()) < 0.0 {
                (-uk, -vk)
            } else {
                (uk, vk)
            }
        })
        .collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    // Runs of tied values are reordered by their left vectors.
    let mut start = 0;
    while start < r {
        let mut end = start + 1;
        while end < r && s[order[start]] - s[order[end]] <= TIE_TOL * max {
            end += 1;
        }
        order[start..end]
            .sort_by(|&i, &j| lexicographic(signed[i].0.as_slice(), signed[j].0.as_slice()));
        start = end;
    }

    let left = DMatrix::from_columns(&order.iter().map(|&k| signed[k].0.clone()).collect::<Vec<_>>());
    let right_thin =
        DMatrix::from_columns(&order.iter().map(|&k| signed[k].1.clone()).collect::<Vec<_>>());
    let right = if r < c { complete_basis(&right_thin) } else { right_thin };
    let mut values = DVector::zeros(c);
    for (dst, &k) in order.iter().enumerate() {
        values[dst] = s[k];
    }
    SnrSpectrum {
        left_vectors: left,
        singular_values: values,
        right_vectors: right,
    }
}

/// Right-multiplication by `V ⊗ I_N`: block `k` of the output is
/// `Σ_c V[c, k] · block c` of the input.
pub fn mix_columns(m: &DMatrix<f64>, v: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let c = v.nrows();
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for k in 0..c {
        let mut block = out.columns_mut(k * n, n);
        for src in 0..c {
            let w = v[(src, k)];
            if w != 0.0 {
                block += m.columns(src * n, n) * w;
            }
        }
    }
    out
}

/// `X C Xᵀ`, the within-class covariance of the rows of `X`.
pub fn manifold_gram(x: &DMatrix<f64>, dims: ProblemDims) -> DMatrix<f64> {
    let fm = FeatureMatrix::new(dims.with_feature_dim(x.nrows()).expect("nonempty"), x.clone())
        .expect("finite state");
    within_class_covariance(&fm)
}

/// `‖X C Xᵀ − I‖_F`.
pub fn manifold_residual(x: &DMatrix<f64>, dims: ProblemDims) -> f64 {
    let k = x.nrows();
    (manifold_gram(x, dims) - DMatrix::identity(k, k)).norm()
}

fn off_diagonal_norm(m: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for ((r, c), v) in m.iter().enumerate().map(|(i, v)| ((i % m.nrows(), i / m.nrows()), v)) {
        if r != c {
            acc += v * v;
        }
    }
    acc.sqrt()
}

/// Features in SNR-aligned coordinates `X = Uᵀ Σ_W^{-1/2} H̄ (V ⊗ I_N)`.
///
/// The frames record how to map `X` back to label coordinates: the canonical
/// features `row_frame · X · (col_frameᵀ ⊗ I_N)` are whitened features whose
/// SNR matrix is `row_frame · Ω · col_frameᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedState {
    dims: ProblemDims,
    x: DMatrix<f64>,
    omega: DMatrix<f64>,
    row_frame: DMatrix<f64>,
    col_frame: DMatrix<f64>,
}

impl AlignedState {
    /// Wraps a state. `dims` must have `P = C` and `x` must be `C × CN`.
    pub fn new(
        dims: ProblemDims,
        x: DMatrix<f64>,
        row_frame: DMatrix<f64>,
        col_frame: DMatrix<f64>,
    ) -> Result<Self> {
        let c = dims.num_classes();
        let expected = (c, dims.num_examples());
        if x.shape() != expected {
            return Err(CollapseError::ShapeMismatch {
                what: "aligned state",
                expected,
                found: x.shape(),
            });
        }
        for (what, frame) in [("row frame", &row_frame), ("column frame", &col_frame)] {
            if frame.shape() != (c, c) {
                return Err(CollapseError::ShapeMismatch {
                    what,
                    expected: (c, c),
                    found: frame.shape(),
                });
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CollapseError::InvalidInput("state has non-finite entries".into()));
        }
        let dims = dims.with_feature_dim(c)?;
        let omega = label_matrix(dims).data().transpose();
        let omega = &x * omega / dims.examples_per_class() as f64;
        Ok(Self {
            dims,
            x,
            omega,
            row_frame,
            col_frame,
        })
    }

    pub fn dims(&self) -> ProblemDims {
        self.dims
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// `Ω(X) = (1/N) X Yᵀ`.
    pub fn omega_matrix(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn row_frame(&self) -> &DMatrix<f64> {
        &self.row_frame
    }

    pub fn col_frame(&self) -> &DMatrix<f64> {
        &self.col_frame
    }

    /// Diagonal of `Ω`; the last entry is the `ω_C = 0` slot.
    pub fn omegas(&self) -> Vec<f64> {
        self.omega.diagonal().iter().copied().collect()
    }

    /// The `C − 1` flow-relevant singular values.
    pub fn nonzero_omegas(&self) -> Vec<f64> {
        let c = self.dims.num_classes();
        self.omegas()[..c - 1].to_vec()
    }

    pub fn manifold_residual(&self) -> f64 {
        manifold_residual(&self.x, self.dims)
    }

    /// `‖offdiag(Ω)‖_F / ‖Ω‖_F`.
    pub fn off_diagonal_mass(&self) -> f64 {
        let total = self.omega.norm();
        if total == 0.0 {
            return 0.0;
        }
        off_diagonal_norm(&self.omega) / total
    }

    /// A matrix in this state's aligned coordinates, mapped to label
    /// coordinates.
    pub fn to_label_coordinates(&self, m: &DMatrix<f64>) -> Result<FeatureMatrix> {
        let n = self.dims.examples_per_class();
        let data = &self.row_frame * mix_columns(m, &self.col_frame.transpose(), n);
        FeatureMatrix::new(self.dims, data)
    }

    pub fn canonical_features(&self) -> FeatureMatrix {
        self.to_label_coordinates(&self.x)
            .expect("finite aligned state maps to finite features")
    }

    /// SNR spectrum of the canonical features.
    pub fn spectrum(&self) -> SnrSpectrum {
        snr_svd(&(&self.row_frame * &self.omega * self.col_frame.transpose()))
    }

    /// Same state with `X` replaced.
    pub fn with_x(&self, x: DMatrix<f64>) -> Result<Self> {
        Self::new(self.dims, x, self.row_frame.clone(), self.col_frame.clone())
    }

    /// Re-diagonalizes `Ω` by aligning the canonical features again. The
    /// canonical features, and therefore every loss, are unchanged.
    pub fn realign(&self) -> Result<Self> {
        let (x, u, v) = align_parts(&self.canonical_features().centered())?;
        Self::new(self.dims, x, u, v)
    }
}

/// `(X, U, V)` with `X = Uᵀ Σ_W^{-1/2} H̄ (V ⊗ I_N)`.
fn align_parts(hbar: &FeatureMatrix) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let dims = hbar.dims();
    let (c, p) = (dims.num_classes(), dims.feature_dim());
    if p < c {
        return Err(CollapseError::InvalidDims(format!(
            "aligned coordinates need P >= C, got P = {p}, C = {c}"
        )));
    }
    hbar.require_centered(crate::classifier::CENTERED_TOL)?;
    let whitener = inv_sqrt_spd(&within_class_covariance(hbar), SPD_FLOOR)?;
    let white = &whitener * hbar.data();
    let snr = &whitener * hbar.class_means();
    let spec = snr_svd(&snr);
    let rotated = spec.left_vectors.transpose() * white;
    let x = mix_columns(&rotated, &spec.right_vectors, dims.examples_per_class());
    Ok((x, spec.left_vectors, spec.right_vectors))
}

/// Maps centered features into SNR-aligned coordinates. Requires `P ≥ C`.
///
/// The row frame of the result is the identity: canonical features are the
/// whitened features expressed in the basis of left singular vectors.
pub fn align_features(hbar: &FeatureMatrix) -> Result<AlignedState> {
    let (x, _, v) = align_parts(hbar)?;
    let c = hbar.dims().num_classes();
    AlignedState::new(hbar.dims(), x, DMatrix::identity(c, c), v)
}

/// `Π(Z) = Z − ½ (X C Zᵀ + Z C Xᵀ) X`.
pub fn tangent_project(state: &AlignedState, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if z.shape() != state.x.shape() {
        return Err(CollapseError::ShapeMismatch {
            what: "tangent direction",
            expected: state.x.shape(),
            found: z.shape(),
        });
    }
    let residual = state.manifold_residual();
    if residual > MANIFOLD_TOL {
        return Err(CollapseError::OffManifold { residual });
    }
    let cross = cross_gram(&state.x, z, state.dims);
    let sym = (&cross + cross.transpose()) * 0.5;
    Ok(z - sym * &state.x)
}

/// `X C Zᵀ`, computed through class-mean subtraction.
pub fn cross_gram(x: &DMatrix<f64>, z: &DMatrix<f64>, dims: ProblemDims) -> DMatrix<f64> {
    let n = dims.examples_per_class();
    let dev = |m: &DMatrix<f64>| {
        let mut out = m.clone();
        for c in 0..dims.num_classes() {
            let mean = m.columns(c * n, n).column_mean();
            for mut col in out.columns_mut(c * n, n).column_iter_mut() {
                col -= &mean;
            }
        }
        out
    };
    dev(x) * dev(z).transpose() / dims.num_examples() as f64
}

/// Retraction `M ↦ (M C Mᵀ)^{-1/2} M` onto the manifold.
pub fn renormalize(m: &DMatrix<f64>, dims: ProblemDims) -> Result<DMatrix<f64>> {
    let whitener = inv_sqrt_spd(&manifold_gram(m, dims), SPD_FLOOR)?;
    Ok(whitener * m)
}

fn random_orthonormal<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q().columns(0, cols).into_owned()
}

/// Centered features with whitened within-class noise (`Σ_W = I`) whose SNR
/// matrix has the given `C − 1` singular values. Needs `N ≥ 2` and
/// `C(N − 1) ≥ P` so the noise can be whitened, and `P ≥ C − 1`.
pub fn features_with_spectrum(dims: ProblemDims, omegas: &[f64], seed: u64) -> Result<FeatureMatrix> {
    let (c, n, p) = (dims.num_classes(), dims.examples_per_class(), dims.feature_dim());
    if omegas.len() != c - 1 {
        return Err(CollapseError::InvalidInput(format!(
            "expected {} singular values, got {}",
            c - 1,
            omegas.len()
        )));
    }
    if omegas.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(CollapseError::InvalidInput(
            "prescribed singular values must be positive and finite".into(),
        ));
    }
    if p + 1 < c || n < 2 || c * (n - 1) < p {
        return Err(CollapseError::InvalidDims(format!(
            "need P >= C - 1, N >= 2 and C(N-1) >= P, got C = {c}, N = {n}, P = {p}"
        )));
    }

    let mut frame_rng = seed::stream_rng(seed, seed::SPECTRUM_FRAME);
    let u = random_orthonormal(&mut frame_rng, p, c - 1);
    let ones = DVector::from_element(c, 1.0 / (c as f64).sqrt());
    let g = DMatrix::from_fn(c, c - 1, |_, _| frame_rng.sample::<f64, _>(StandardNormal));
    let g = &g - &ones * (ones.transpose() * &g);
    let v = g.qr().q().columns(0, c - 1).into_owned();
    let means = &u * DMatrix::from_diagonal(&DVector::from_column_slice(omegas)) * v.transpose();

    let mut noise_rng = seed::stream_rng(seed, seed::WITHIN_CLASS_NOISE);
    let noise = DMatrix::from_fn(p, c * n, |_, _| noise_rng.sample::<f64, _>(StandardNormal));
    let mut noise = FeatureMatrix::new(dims, noise)?;
    let noise_means = noise.class_means();
    let mut centered = noise.into_inner();
    for k in 0..c {
        for mut col in centered.columns_mut(k * n, n).column_iter_mut() {
            col -= noise_means.column(k);
        }
    }
    noise = FeatureMatrix::new(dims, centered)?;
    let whitener = inv_sqrt_spd(&within_class_covariance(&noise), SPD_FLOOR)?;
    let mut data = whitener * noise.data();
    for k in 0..c {
        for mut col in data.columns_mut(k * n, n).column_iter_mut() {
            col += means.column(k);
        }
    }
    FeatureMatrix::new(dims, data)
}

/// Largest principal angle between the leading `C − 1` left (and right)
/// singular subspaces of two spectra.
pub fn spectrum_drift(a: &SnrSpectrum, b: &SnrSpectrum) -> f64 {
    let k = a.num_classes() - 1;
    let k = k.min(a.left_vectors.ncols()).min(b.left_vectors.ncols());
    let left = max_principal_angle(&leading_columns(&a.left_vectors, k), &leading_columns(&b.left_vectors, k));
    let right = max_principal_angle(
        &leading_columns(&a.right_vectors, k),
        &leading_columns(&b.right_vectors, k),
    );
    left.max(right)
}
