//! HTTP/JSON front end for a [`Platform`].
//!
//! Every route except `GET /v1/health` needs `Authorization: Bearer <token>`
//! with a token from `serve.tokens`. Failures use one envelope,
//! `{"error": {"code": "...", "message": "..."}}`, whose codes match
//! [`saturn_core::Error::code`]. Core calls may block on storage or training
//! and run on the blocking pool.

pub mod error;
mod extract;
mod routes;
pub mod webhook;

use std::future::Future;
use std::sync::Arc;

use axum::extract::DefaultBodyLimit;
use axum::routing::get;
use axum::Router;
use saturn_core::platform::Platform;
use serde_json::json;
use tokio::net::TcpListener;

pub use error::ApiError;

/// Request bodies up to this size are accepted (blob uploads, imports).
pub const MAX_BODY_BYTES: usize = 256 * 1024 * 1024;

pub fn router(platform: Arc<Platform>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .merge(routes::registry::routes())
        .merge(routes::embeddings::routes())
        .merge(routes::monitor::routes())
        .merge(routes::pipeline::routes())
        .merge(routes::feedback::routes())
        .merge(routes::governance::routes())
        .merge(routes::serving::routes())
        .fallback(|| async { ApiError::new("not-found", "no such route") })
        .method_not_allowed_fallback(|| async { ApiError::new("method-not-allowed", "method not allowed") })
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(platform)
}

async fn health() -> axum::Json<serde_json::Value> {
    axum::Json(json!({"status": "ok", "version": env!("CARGO_PKG_VERSION")}))
}

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    platform: Arc<Platform>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(platform)).with_graceful_shutdown(shutdown).await
}
