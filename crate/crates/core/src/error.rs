use thiserror::Error;

/// Errors produced by the collapse library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CollapseError {
    #[error("invalid problem dimensions: {0}")]
    InvalidDims(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch for {what}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("{matrix} is rank deficient (smallest eigenvalue {min_eig:e}, largest {max_eig:e})")]
    RankDeficient {
        matrix: &'static str,
        min_eig: f64,
        max_eig: f64,
    },

    #[error("features must have zero global mean (|mu_G| = {norm:e})")]
    NonzeroGlobalMean { norm: f64 },

    #[error("matrix is near-singular: eigenvalue {eigenvalue:e} below floor {floor:e}")]
    NearSingular { eigenvalue: f64, floor: f64 },

    #[error("state is off the normalized-features manifold (residual {residual:e})")]
    OffManifold { residual: f64 },

    #[error("state is not in aligned coordinates (off-diagonal mass {off_diagonal:e})")]
    NotAligned { off_diagonal: f64 },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("step size {step_size:e} too large: relative singular value increment {increment:e} exceeds 0.1")]
    StepTooLarge { step_size: f64, increment: f64 },

    #[error("flow step failed at t = {t}: {source}")]
    StepFailed {
        t: f64,
        #[source]
        source: Box<CollapseError>,
    },

    #[error("root finder failed: {0}")]
    RootFinding(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, CollapseError>;
