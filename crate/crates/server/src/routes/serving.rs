//! Endpoints and inference.

use std::sync::Arc;

use axum::extract::Path;
use axum::routing::{get, post};
use axum::Router;
use saturn_core::modelkit::ModelInput;
use saturn_core::platform::Platform;
use serde::Deserialize;

use super::{blocking, created, ok, ApiResult, State};
use crate::extract::{Caller, Json};

pub fn routes() -> Router<Arc<Platform>> {
    Router::new()
        .route("/v1/endpoints", post(create).get(list))
        .route("/v1/endpoints/{id}", get(get_endpoint))
        .route("/v1/endpoints/{id}/rebind", post(rebind))
        .route("/v1/endpoints/{id}/pause", post(pause))
        .route("/v1/endpoints/{id}/resume", post(resume))
        .route("/v1/endpoints/{id}/retire", post(retire))
        .route("/v1/infer/{route}", post(infer))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewEndpoint {
    version_id: String,
    route: String,
}

async fn create(p: State, Caller(c): Caller, Json(b): Json<NewEndpoint>) -> ApiResult {
    created(blocking(move || p.serving.create_endpoint(&c, &b.version_id, &b.route)).await?)
}

async fn list(p: State, Caller(c): Caller) -> ApiResult {
    ok(p.serving.list_endpoints(&c))
}

async fn get_endpoint(p: State, Caller(c): Caller, Path(id): Path<String>) -> ApiResult {
    ok(p.serving.get_endpoint(&c, &id)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RebindBody {
    version_id: String,
}

async fn rebind(p: State, Caller(c): Caller, Path(id): Path<String>, Json(b): Json<RebindBody>) -> ApiResult {
    ok(blocking(move || p.serving.rebind(&c, &id, &b.version_id)).await?)
}

async fn pause(p: State, Caller(c): Caller, Path(id): Path<String>) -> ApiResult {
    ok(blocking(move || p.serving.pause(&c, &id)).await?)
}

async fn resume(p: State, Caller(c): Caller, Path(id): Path<String>) -> ApiResult {
    ok(blocking(move || p.serving.resume(&c, &id)).await?)
}

async fn retire(p: State, Caller(c): Caller, Path(id): Path<String>) -> ApiResult {
    ok(blocking(move || p.serving.retire(&c, &id)).await?)
}

/// Body is `{"tokens": [...]}` or `{"features": [...]}`.
async fn infer(p: State, Caller(c): Caller, Path(route): Path<String>, Json(input): Json<ModelInput>) -> ApiResult {
    ok(blocking(move || p.serving.infer(&c, &route, &input)).await?)
}
