//! Neural collapse under MSE loss on the unconstrained-features model.
//!
//! The crate covers the least-squares classifier and the decomposition of the
//! MSE loss around it, SNR-aligned coordinates on the normalized-features
//! manifold, the continually renormalized gradient flow, the closed-form
//! dynamics of the SNR singular values, and the NC1-NC4 metrics.
//!
//! Features are stored as `P × CN` matrices whose column `c·N + i` holds
//! example `i` of class `c` (zero-based).

pub mod classifier;
pub mod closed_form;
pub mod decomposition;
pub mod error;
pub mod flow;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod snr;

pub use classifier::{
    extend, ls_classifier_centered, ls_classifier_extended, predictions, ExtendedClassifier,
    ExtendedFeatures,
};
pub use closed_form::{
    asymptote, integration_constant, limit_features, limit_snr, omega_at, omega_rate,
    ImplicitSolution, OdeConstants,
};
pub use decomposition::{
    central_path_loss, decompose, decompose_centered, mse_loss, spectral_loss, LossBreakdown,
};
pub use error::{CollapseError, Result};
pub use flow::{simulate, singular_vector_drift, FlowConfig, FlowMethod, FlowTrajectory};
pub use metrics::{etf_certificate, nc_report, EtfCertificate, NcReport};
pub use model::{compute_stats, init_features, FeatureMatrix, FeatureStats, ProblemDims};
pub use snr::{align_features, features_with_spectrum, snr_matrix, snr_svd, AlignedState, SnrSpectrum};
