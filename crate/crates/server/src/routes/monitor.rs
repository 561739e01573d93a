//! Inference logs, reference freezes, drift reports and events.
//!
//! The monitor itself has no notion of callers, so access is checked here
//! against the endpoint the data belongs to: writes need write on
//! `endpoint:<id>`, reads need read.

use std::sync::Arc;

use axum::extract::Path;
use axum::routing::{get, post};
use axum::Router;
use chrono::{DateTime, Utc};
use saturn_core::governance::{Action, Principal, Resource};
use saturn_core::monitor::InferenceLog;
use saturn_core::platform::Platform;
use serde::Deserialize;

use super::{blocking, ok, ApiResult, State};
use crate::extract::{Caller, Json, OptionalJson};

pub fn routes() -> Router<Arc<Platform>> {
    Router::new()
        .route("/v1/monitor/logs", post(ingest))
        .route("/v1/monitor/events", get(events))
        .route("/v1/monitor/{endpoint}/freeze", post(freeze))
        .route("/v1/monitor/{endpoint}/reports", get(reports))
}

fn authorize(p: &Platform, caller: &Principal, action: Action, endpoint_id: &str) -> saturn_core::Result<()> {
    p.serving.get_endpoint(caller, endpoint_id)?;
    p.acl.require(caller, action, &Resource::endpoint(endpoint_id))
}

/// A log as posted. Without a timestamp the server stamps it on arrival.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LogBody {
    endpoint_id: String,
    feature_vector: Vec<f64>,
    prediction: f64,
    #[serde(default)]
    latency_ms: f64,
    #[serde(default)]
    timestamp: Option<DateTime<Utc>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LogsBody {
    One(LogBody),
    Many(Vec<LogBody>),
}

async fn ingest(p: State, Caller(c): Caller, Json(b): Json<LogsBody>) -> ApiResult {
    let (logs, single) = match b {
        LogsBody::One(l) => (vec![l], true),
        LogsBody::Many(v) => (v, false),
    };
    let mut acks = blocking(move || {
        let mut checked = std::collections::BTreeSet::new();
        for l in &logs {
            if checked.insert(l.endpoint_id.clone()) {
                authorize(&p, &c, Action::Write, &l.endpoint_id)?;
            }
        }
        logs.into_iter()
            .map(|l| match l.timestamp {
                Some(timestamp) => p.monitor.ingest(InferenceLog {
                    endpoint_id: l.endpoint_id,
                    feature_vector: l.feature_vector,
                    prediction: l.prediction,
                    latency_ms: l.latency_ms,
                    timestamp,
                }),
                None => p.monitor.record(&l.endpoint_id, l.feature_vector, l.prediction, l.latency_ms),
            })
            .collect::<saturn_core::Result<Vec<_>>>()
    })
    .await?;
    if single {
        ok(acks.remove(0))
    } else {
        ok(acks)
    }
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FreezeBody {
    force: bool,
}

async fn freeze(p: State, Caller(c): Caller, Path(endpoint): Path<String>, OptionalJson(b): OptionalJson<FreezeBody>) -> ApiResult {
    ok(blocking(move || {
        authorize(&p, &c, Action::Write, &endpoint)?;
        p.monitor.freeze_reference(&endpoint, b.force)
    })
    .await?)
}

async fn reports(p: State, Caller(c): Caller, Path(endpoint): Path<String>) -> ApiResult {
    ok(blocking(move || {
        authorize(&p, &c, Action::Read, &endpoint)?;
        p.monitor.reports(&endpoint)
    })
    .await?)
}

/// Every drift event on an endpoint the caller may read, oldest first.
async fn events(p: State, Caller(c): Caller) -> ApiResult {
    ok(blocking(move || {
        let events = p.monitor.events()?;
        Ok(events
            .into_iter()
            .filter(|e| p.acl.allows(&c, Action::Read, &Resource::endpoint(&e.endpoint_id)))
            .collect::<Vec<_>>())
    })
    .await?)
}
