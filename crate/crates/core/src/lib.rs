//! Regularized joint mixture models: latent groups, each with a sparse
//! Gaussian graphical model for the features and a sparse linear regression
//! for the response, fitted by an ECM algorithm.

pub mod baselines;
pub mod em;
pub mod error;
pub mod experiment;
pub mod glasso;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod par;
pub mod predict;
pub mod regression;
pub mod simgen;
pub mod types;

/// Library version recorded in run manifests and model files.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Result, RjmError};
pub use par::Exec;
pub use types::{
    from_scaled, to_scaled, ClusterParams, Dataset, FitConfig, FitResult, Psi, Responsibilities, ScaledRegression,
    Scheme,
};
