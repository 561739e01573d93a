//! Access grants and standalone fairness evaluation.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::routing::post;
use axum::Router;
use saturn_core::governance::{compute_fairness, compute_fairness_scored, mitigate_by_threshold, Action, Grant};
use saturn_core::platform::Platform;
use serde::Deserialize;

use super::{blocking, created, ok, ApiResult, State};
use crate::error::ApiError;
use crate::extract::{Caller, Json};

pub fn routes() -> Router<Arc<Platform>> {
    Router::new()
        .route("/v1/grants", post(grant).get(grants))
        .route("/v1/fairness/evaluate", post(evaluate))
        .route("/v1/fairness/mitigate", post(mitigate))
}

/// Granting a role needs admin on the resource being shared.
async fn grant(p: State, Caller(c): Caller, Json(g): Json<Grant>) -> ApiResult {
    p.acl.require(&c, Action::Admin, &g.resource)?;
    let echo = g.clone();
    blocking(move || p.acl.grant(g)).await?;
    created(echo)
}

/// The caller's own grants plus every grant on a resource the caller
/// administers.
async fn grants(p: State, Caller(c): Caller) -> ApiResult {
    let visible: Vec<Grant> = p
        .acl
        .grants()
        .into_iter()
        .filter(|g| g.principal == c || p.acl.allows(&c, Action::Admin, &g.resource))
        .collect();
    ok(visible)
}

/// Either hard `predictions`, or `scores` with optional per-group
/// `thresholds` (default 0.5).
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateBody {
    labels: Vec<bool>,
    groups: Vec<String>,
    #[serde(default)]
    predictions: Option<Vec<bool>>,
    #[serde(default)]
    scores: Option<Vec<f64>>,
    #[serde(default)]
    thresholds: BTreeMap<String, f64>,
}

async fn evaluate(_p: State, Caller(_c): Caller, Json(b): Json<EvaluateBody>) -> ApiResult {
    let report = match (&b.predictions, &b.scores) {
        (Some(preds), None) if b.thresholds.is_empty() => compute_fairness(preds, &b.labels, &b.groups)?,
        (None, Some(scores)) => compute_fairness_scored(scores, &b.labels, &b.groups, &b.thresholds)?,
        _ => {
            return Err(ApiError::invalid(
                "give either predictions, or scores with optional thresholds",
            ))
        }
    };
    ok(report)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MitigateBody {
    scores: Vec<f64>,
    labels: Vec<bool>,
    groups: Vec<String>,
    max_accuracy_drop: f64,
}

async fn mitigate(_p: State, Caller(_c): Caller, Json(b): Json<MitigateBody>) -> ApiResult {
    ok(blocking(move || mitigate_by_threshold(&b.scores, &b.labels, &b.groups, b.max_accuracy_drop)).await?)
}
