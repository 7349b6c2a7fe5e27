use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, RjmError>;

#[derive(Debug, Error)]
pub enum RjmError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular system: {0}")]
    Singular(String),

    /// The graphical lasso ran out of sweeps; the last iterate is kept so callers
    /// can decide whether it is usable.
    #[error("graphical lasso did not converge after {sweeps} sweeps (KKT residual {residual:.3e})")]
    GlassoNotConverged {
        sweeps: usize,
        residual: f64,
        omega: Box<DMatrix<f64>>,
    },

    #[error("lasso coordinate descent did not converge after {sweeps} sweeps (KKT violation {violation:.3e})")]
    LassoNotConverged {
        sweeps: usize,
        violation: f64,
        phi: Box<DVector<f64>>,
    },

    #[error("group {group}: {source}")]
    Group {
        group: usize,
        #[source]
        source: Box<RjmError>,
    },

    #[error("row {row}: every component log-density is -inf")]
    DegenerateRow { row: usize },

    #[error("all {starts} EM runs were discarded (collapsed groups or numerical failure); try a smaller K or a different seed")]
    AllRunsDiscarded { starts: usize },

    #[error("initialization failed: {0}")]
    Init(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("{context}: {message}")]
    Parse { context: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl RjmError {
    pub fn domain(msg: impl Into<String>) -> Self {
        RjmError::Domain(msg.into())
    }

    pub fn in_group(self, group: usize) -> Self {
        RjmError::Group {
            group,
            source: Box::new(self),
        }
    }

    /// True for the "data/usage" family of errors, as opposed to numerical failures.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            RjmError::Domain(_)
                | RjmError::Dimension(_)
                | RjmError::Parse { .. }
                | RjmError::Io(_)
                | RjmError::Json(_)
        )
    }
}
