use thiserror::Error;

#[derive(Debug, Error)]
pub enum FgsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quadrature grid too coarse on axis {axis}: spacing {spacing:.3e} exceeds required {required:.3e}")]
    UnresolvedGrid {
        axis: usize,
        spacing: f64,
        required: f64,
    },

    #[error("grid-based operation limited to dimension <= {max}, got {got}")]
    CostGuard { max: usize, got: usize },

    #[error("singular phase Hessian: |det| = {det:.3e}")]
    SingularHessian { det: f64 },

    #[error("Z matrix singular at t = {t}: condition estimate {condition:.3e}")]
    SingularZ { t: f64, condition: f64 },

    #[error("trajectory {index}: {source}")]
    Trajectory {
        index: usize,
        #[source]
        source: Box<FgsError>,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("symplecticity violated: residual {residual:.3e} exceeds {tolerance:.1e}")]
    Symplecticity { residual: f64, tolerance: f64 },

    #[error("norm estimate is not positive ({0:.3e})")]
    NonPositiveNorm(f64),

    #[error("spectral grid: {0}")]
    SpectralGrid(String),

    #[error("config: {0}")]
    Config(String),

    #[error("field file: {0}")]
    FieldFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FgsError>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(FgsError::DimensionMismatch { expected, got })
    }
}
