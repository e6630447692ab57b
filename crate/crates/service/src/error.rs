use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Request failures, each with a stable machine-readable code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServiceError {
    #[error("unknown identity {0:?}")]
    UnknownIdentity(String),
    #[error("model for identity {identity:?} is not loaded: {reason}")]
    ModelNotLoaded { identity: String, reason: String },
    #[error("malformed audio: {0}")]
    MalformedAudio(String),
    #[error("unknown sweep variable {0:?}, expected yaw, pitch, roll or blink")]
    UnknownVariable(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownIdentity(_) => "unknown_identity",
            ServiceError::ModelNotLoaded { .. } => "model_not_loaded",
            ServiceError::MalformedAudio(_) => "malformed_audio",
            ServiceError::UnknownVariable(_) => "unknown_variable",
            ServiceError::InvalidRequest(_) => "invalid_request",
            ServiceError::Config(_) => "config",
            ServiceError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownIdentity(_) => StatusCode::NOT_FOUND,
            ServiceError::ModelNotLoaded { .. } => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::MalformedAudio(_) | ServiceError::UnknownVariable(_) | ServiceError::InvalidRequest(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ServiceError::Config(_) | ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code().to_string(),
                message: self.to_string(),
            },
        };
        (self.status(), Json(body)).into_response()
    }
}
