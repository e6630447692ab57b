//! HTTP inference service for trained identity models.
//!
//! Endpoints: `POST /v1/reenact`, `POST /v1/sweep`, `GET /v1/stats` and
//! `GET /healthz`. Requests and responses are JSON with base64 PNG images.

pub mod api;
pub mod config;
pub mod engine;
pub mod error;
pub mod http;
pub mod stats;

pub use api::*;
pub use config::{CheckpointPair, ServiceConfig};
pub use engine::Service;
pub use error::{ErrorBody, ErrorDetail, ServiceError};
pub use http::{router, serve};
