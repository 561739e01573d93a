//! Pipeline triggers and runs.

use std::sync::Arc;

use axum::extract::{Path, Query};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::Router;
use saturn_core::orchestrator::TriggerRequest;
use saturn_core::platform::Platform;
use serde::Deserialize;

use super::{blocking, ok, ApiResult, State};
use crate::error::ApiError;
use crate::extract::{Caller, Json};

pub fn routes() -> Router<Arc<Platform>> {
    Router::new()
        .route("/v1/pipeline/triggers", post(trigger))
        .route("/v1/pipeline/runs", get(list_runs))
        .route("/v1/pipeline/runs/{id}", get(get_run))
}

/// 202 for a newly queued run, 200 when the trigger id was already seen.
async fn trigger(p: State, Caller(c): Caller, Json(req): Json<TriggerRequest>) -> ApiResult {
    let outcome = blocking(move || p.orchestrator.submit_trigger(&c, req)).await?;
    let status = if outcome.duplicate { StatusCode::OK } else { StatusCode::ACCEPTED };
    Ok((status, axum::Json(outcome)).into_response())
}

#[derive(Deserialize)]
struct RunFilter {
    kind: Option<String>,
    status: Option<String>,
}

async fn list_runs(p: State, Caller(c): Caller, filter: Result<Query<RunFilter>, axum::extract::rejection::QueryRejection>) -> ApiResult {
    let Query(f) = filter.map_err(|e| ApiError::invalid(e.body_text()))?;
    let kind = f.kind.as_deref().map(str::parse).transpose()?;
    let status = f.status.as_deref().map(str::parse).transpose()?;
    ok(blocking(move || p.orchestrator.list_runs(&c, kind, status)).await?)
}

async fn get_run(p: State, Caller(c): Caller, Path(id): Path<String>) -> ApiResult {
    ok(blocking(move || p.orchestrator.get_run(&c, &id)).await?)
}
