use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("support value {value:?} was not seen when the saturated basis was built")]
    UnseenLevel { value: Vec<f64> },

    #[error("singular system: numerical rank {rank} of {dim}")]
    Singular { rank: usize, dim: usize },

    #[error("all design columns are constant and there is no intercept")]
    NothingEstimable,

    #[error("identification failure: {0}")]
    Identification(String),

    #[error("absolute continuity violated: p(v={v}|x1) = 0 < p(v={v}|x2)")]
    AbsoluteContinuity { v: usize },

    #[error("range condition violated: residual {residual:e} outside operator range")]
    Range { residual: f64 },

    #[error("unbalanced panel: {0}")]
    UnbalancedPanel(String),

    #[error("{failed} of {draws} bootstrap draws failed (limit is 10%)")]
    BootstrapFailures { failed: usize, draws: usize },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) => ErrorClass::Usage,
            Error::Dimension(_)
            | Error::NonFinite(_)
            | Error::UnseenLevel { .. }
            | Error::UnbalancedPanel(_)
            | Error::NothingEstimable => ErrorClass::Data,
            Error::Singular { .. }
            | Error::Identification(_)
            | Error::AbsoluteContinuity { .. }
            | Error::Range { .. }
            | Error::BootstrapFailures { .. } => ErrorClass::Numerical,
        }
    }
}
