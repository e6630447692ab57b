use thiserror::Error;

/// Errors produced by the reenactment pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty audio")]
    EmptyAudio,
    #[error("non-finite audio")]
    NonFiniteAudio,
    #[error("config error in {component}: {message}")]
    Config { component: String, message: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate hull")]
    DegenerateHull,
    #[error("degenerate eye")]
    DegenerateEye,
    #[error("empty mask")]
    EmptyMask,
    #[error("empty landmarks")]
    EmptyLandmarks,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("asymmetric covariance (max deviation {0:e})")]
    AsymmetricCovariance(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged { epoch: usize, step: usize, detail: String },
    #[error("unknown identity {0:?}")]
    UnknownIdentity(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn config(component: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            component: component.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
