use thiserror::Error;

/// Errors produced by scenario construction, scheduling rules and the
/// simulation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid interval: lower bound {lower} exceeds upper bound {upper} (component {component})")]
    InvalidInterval {
        lower: f64,
        upper: f64,
        component: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported scheme: {0}")]
    UnsupportedScheme(String),

    #[error("certificate violation: {0}")]
    CertificateViolation(String),

    #[error("flow precondition violated: {0}")]
    FlowPrecondition(String),

    #[error("jump precondition violated: {0}")]
    JumpPrecondition(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("empty campaign: {0}")]
    EmptyCampaign(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors that stem from a bad scenario description rather than
    /// from the execution of a valid one.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidTopology(_)
                | Error::ShapeMismatch(_)
                | Error::InvalidInterval { .. }
                | Error::InvalidParameter(_)
                | Error::UnsupportedScheme(_)
                | Error::Config(_)
        )
    }
}
