//! Models, versions, lifecycle transitions and artifact blobs.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::Path;
use axum::http::header::CONTENT_TYPE;
use axum::http::HeaderMap;
use axum::response::IntoResponse;
use axum::routing::{get, post, put};
use axum::Router;
use saturn_core::platform::Platform;
use saturn_core::registry::{LifecycleStage, Modality, NewVersion, ValidationReport};
use serde::Deserialize;

use super::{blocking, created, ok, ApiResult, State};
use crate::extract::{Caller, Json};

pub fn routes() -> Router<Arc<Platform>> {
    Router::new()
        .route("/v1/models", post(create_model).get(list_models))
        .route("/v1/models/{id}", get(get_model))
        .route("/v1/models/{id}/versions", post(create_version).get(list_versions))
        .route("/v1/versions/{id}", get(get_version))
        .route("/v1/versions/{id}/lineage", get(lineage))
        .route("/v1/versions/{id}/transition", post(transition))
        .route("/v1/blobs", put(put_blob))
        .route("/v1/blobs/{digest}", get(get_blob))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewModel {
    name: String,
    modality: Modality,
}

async fn create_model(p: State, Caller(c): Caller, Json(b): Json<NewModel>) -> ApiResult {
    created(blocking(move || p.registry.register_model(&c, &b.name, b.modality)).await?)
}

async fn list_models(p: State, Caller(c): Caller) -> ApiResult {
    ok(p.registry.list_models(&c))
}

async fn get_model(p: State, Caller(c): Caller, Path(id): Path<String>) -> ApiResult {
    ok(p.registry.get_model(&c, &id)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VersionBody {
    artifact_digest: String,
    #[serde(default)]
    parent_version: Option<String>,
    stage: LifecycleStage,
    #[serde(default)]
    usage_policy: Option<String>,
}

async fn create_version(p: State, Caller(c): Caller, Path(id): Path<String>, Json(b): Json<VersionBody>) -> ApiResult {
    let req = NewVersion {
        model_id: id,
        artifact_digest: b.artifact_digest,
        parent_version: b.parent_version,
        stage: b.stage,
        usage_policy: b.usage_policy,
    };
    created(blocking(move || p.registry.create_version(&c, req)).await?)
}

async fn list_versions(p: State, Caller(c): Caller, Path(id): Path<String>) -> ApiResult {
    ok(p.registry.list_versions(&c, &id)?)
}

async fn get_version(p: State, Caller(c): Caller, Path(id): Path<String>) -> ApiResult {
    ok(p.registry.get_version(&c, &id)?)
}

async fn lineage(p: State, Caller(c): Caller, Path(id): Path<String>) -> ApiResult {
    ok(p.registry.lineage(&c, &id)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionBody {
    to: LifecycleStage,
    #[serde(default)]
    report: Option<ValidationReport>,
}

async fn transition(p: State, Caller(c): Caller, Path(id): Path<String>, Json(b): Json<TransitionBody>) -> ApiResult {
    ok(blocking(move || p.registry.transition_stage(&c, &id, b.to, b.report)).await?)
}

async fn put_blob(p: State, Caller(c): Caller, headers: HeaderMap, body: Bytes) -> ApiResult {
    let media_type = headers
        .get(CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("application/octet-stream")
        .to_string();
    ok(blocking(move || p.registry.put_blob(&c, &body, &media_type)).await?)
}

async fn get_blob(p: State, Caller(c): Caller, Path(digest): Path<String>) -> ApiResult {
    let (meta, bytes) = blocking(move || p.registry.get_blob(&c, &digest)).await?;
    Ok(([(CONTENT_TYPE, meta.media_type)], bytes).into_response())
}
