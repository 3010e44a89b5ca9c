use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no admissible λ; enlarge Ω toward smaller values (threshold {threshold:.6e})")]
    EmptyLambdaSet { threshold: f64 },

    #[error("infinite KL divergence: {0}")]
    InfiniteKl(String),

    #[error("gain norm {norm} exceeds the bound {bound}")]
    GainNormExceeded { norm: f64, bound: f64 },

    #[error("ill-conditioned linear system: {0}")]
    Singular(String),

    #[error("controller space is unbounded")]
    UnboundedSpace,

    #[error("every one of the {0} iterations produced a non-finite gradient estimate")]
    NoProgress(usize),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable category used by the command line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::InvalidParameter(_) => "parameter",
            Error::EmptyLambdaSet { .. } => "empty-gamma",
            Error::InfiniteKl(_) => "infinite-kl",
            Error::GainNormExceeded { .. } => "gain-norm",
            Error::Singular(_) => "singular",
            Error::UnboundedSpace => "unbounded-space",
            Error::NoProgress(_) => "no-progress",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 3,
            Error::EmptyLambdaSet { .. } => 4,
            Error::Io(_) => 5,
            Error::Dimension(_) | Error::InvalidParameter(_) => 6,
            Error::InfiniteKl(_) | Error::GainNormExceeded { .. } => 7,
            Error::Singular(_) | Error::UnboundedSpace | Error::NoProgress(_) => 8,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(what: impl Into<String>) -> Error {
    Error::Dimension(what.into())
}

pub(crate) fn param_err(what: impl Into<String>) -> Error {
    Error::InvalidParameter(what.into())
}
