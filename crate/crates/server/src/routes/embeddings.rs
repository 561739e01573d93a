//! Embedding collections: entries, search, index builds, SEF1 export and
//! import.

use std::collections::BTreeSet;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::Path;
use axum::http::header::CONTENT_TYPE;
use axum::response::IntoResponse;
use axum::routing::{get, post, put};
use axum::Router;
use saturn_core::embedfarm::{Metric, NewEntry, SearchMode};
use saturn_core::platform::Platform;
use serde::Deserialize;
use serde_json::json;

use super::{blocking, created, ok, ApiResult, State};
use crate::extract::{Caller, Json};

pub fn routes() -> Router<Arc<Platform>> {
    Router::new()
        .route("/v1/collections", post(create).get(list))
        .route("/v1/collections/{name}", get(info))
        .route("/v1/collections/{name}/embeddings", post(upsert_batch))
        .route("/v1/collections/{name}/embeddings/{key}", put(upsert).get(get_entry))
        .route("/v1/collections/{name}/batch-get", post(batch_get))
        .route("/v1/collections/{name}/search", post(search))
        .route("/v1/collections/{name}/index", post(build_index))
        .route("/v1/collections/{name}/export", get(export))
        .route("/v1/collections/{name}/import", put(import))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewCollection {
    name: String,
    dim: usize,
    metric: Metric,
}

async fn create(p: State, Caller(c): Caller, Json(b): Json<NewCollection>) -> ApiResult {
    created(blocking(move || p.embeddings.create_collection(&c, &b.name, b.dim, b.metric)).await?)
}

async fn list(p: State, Caller(c): Caller) -> ApiResult {
    ok(p.embeddings.list_collections(&c))
}

async fn info(p: State, Caller(c): Caller, Path(name): Path<String>) -> ApiResult {
    ok(p.embeddings.info(&c, &name)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryBody {
    vector: Vec<f32>,
    #[serde(default)]
    tags: BTreeSet<String>,
}

async fn upsert(p: State, Caller(c): Caller, Path((name, key)): Path<(String, String)>, Json(b): Json<EntryBody>) -> ApiResult {
    let entry = NewEntry {
        key,
        vector: b.vector,
        tags: b.tags,
    };
    ok(blocking(move || p.embeddings.upsert(&c, &name, entry)).await?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BatchBody {
    entries: Vec<NewEntry>,
}

async fn upsert_batch(p: State, Caller(c): Caller, Path(name): Path<String>, Json(b): Json<BatchBody>) -> ApiResult {
    let n = blocking(move || p.embeddings.upsert_batch(&c, &name, b.entries)).await?;
    ok(json!({ "upserted": n }))
}

async fn get_entry(p: State, Caller(c): Caller, Path((name, key)): Path<(String, String)>) -> ApiResult {
    ok(p.embeddings.get(&c, &name, &key)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KeysBody {
    keys: Vec<String>,
}

async fn batch_get(p: State, Caller(c): Caller, Path(name): Path<String>, Json(b): Json<KeysBody>) -> ApiResult {
    ok(p.embeddings.batch_get(&c, &name, &b.keys)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SearchBody {
    vector: Vec<f32>,
    k: usize,
    #[serde(default)]
    tags: Vec<String>,
    #[serde(default)]
    mode: SearchMode,
}

async fn search(p: State, Caller(c): Caller, Path(name): Path<String>, Json(b): Json<SearchBody>) -> ApiResult {
    ok(blocking(move || p.embeddings.search(&c, &name, &b.vector, b.k, &b.tags, b.mode)).await?)
}

async fn build_index(p: State, Caller(c): Caller, Path(name): Path<String>) -> ApiResult {
    ok(blocking(move || p.embeddings.build_index(&c, &name)).await?)
}

async fn export(p: State, Caller(c): Caller, Path(name): Path<String>) -> ApiResult {
    let bytes = blocking(move || p.embeddings.export_bytes(&c, &name)).await?;
    Ok(([(CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

async fn import(p: State, Caller(c): Caller, Path(name): Path<String>, body: Bytes) -> ApiResult {
    created(blocking(move || p.embeddings.import_bytes(&c, &name, &body)).await?)
}
