//! Route tables, one module per subsystem.

pub mod embeddings;
pub mod feedback;
pub mod governance;
pub mod monitor;
pub mod pipeline;
pub mod registry;
pub mod serving;

use std::sync::Arc;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use saturn_core::platform::Platform;
use serde::Serialize;

use crate::error::ApiError;

pub type State = axum::extract::State<Arc<Platform>>;
pub type ApiResult = Result<Response, ApiError>;

/// Runs a core call on the blocking pool.
pub async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> saturn_core::Result<T> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError::internal(format!("handler panicked: {e}"))),
    }
}

pub fn ok<T: Serialize>(value: T) -> ApiResult {
    Ok(axum::Json(value).into_response())
}

pub fn created<T: Serialize>(value: T) -> ApiResult {
    Ok((StatusCode::CREATED, axum::Json(value)).into_response())
}
