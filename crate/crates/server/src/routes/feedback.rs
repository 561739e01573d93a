//! Human rankings and reward models.

use std::sync::Arc;

use axum::extract::Path;
use axum::routing::{get, post};
use axum::Router;
use saturn_core::feedback::{NewRanking, RewardFitParams};
use saturn_core::platform::Platform;
use serde::Deserialize;
use serde_json::json;

use super::{blocking, created, ok, ApiResult, State};
use crate::extract::{Caller, Json};

pub fn routes() -> Router<Arc<Platform>> {
    Router::new()
        .route("/v1/feedback/rankings", post(submit).get(records))
        .route("/v1/feedback/reward-models", post(fit).get(reward_models))
        .route("/v1/feedback/reward-models/{id}", get(reward_model))
        .route("/v1/feedback/reward-models/{id}/score", post(score))
}

async fn submit(p: State, Caller(c): Caller, Json(b): Json<NewRanking>) -> ApiResult {
    created(blocking(move || p.feedback.submit_ranking(&c, b)).await?)
}

async fn records(p: State, Caller(c): Caller) -> ApiResult {
    ok(blocking(move || p.feedback.records(&c)).await?)
}

/// Per-key overrides of the default fit hyperparameters.
#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Hyperparameters {
    l2_lambda: Option<f64>,
    learning_rate: Option<f64>,
    max_iters: Option<usize>,
    tol: Option<f64>,
}

impl Hyperparameters {
    fn resolve(self) -> RewardFitParams {
        let d = RewardFitParams::default();
        RewardFitParams {
            l2_lambda: self.l2_lambda.unwrap_or(d.l2_lambda),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            tol: self.tol.unwrap_or(d.tol),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FitBody {
    #[serde(default)]
    prompt_prefix: String,
    #[serde(default)]
    hyperparameters: Hyperparameters,
}

async fn fit(p: State, Caller(c): Caller, Json(b): Json<FitBody>) -> ApiResult {
    let params = b.hyperparameters.resolve();
    created(blocking(move || p.feedback.fit(&c, &b.prompt_prefix, params)).await?)
}

async fn reward_models(p: State, Caller(c): Caller) -> ApiResult {
    ok(blocking(move || p.feedback.reward_models(&c)).await?)
}

async fn reward_model(p: State, Caller(c): Caller, Path(id): Path<String>) -> ApiResult {
    ok(blocking(move || p.feedback.reward_model(&c, &id)).await?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreBody {
    features: Vec<f64>,
}

async fn score(p: State, Caller(c): Caller, Path(id): Path<String>, Json(b): Json<ScoreBody>) -> ApiResult {
    let (id, score) = blocking(move || {
        let model = p.feedback.reward_model(&c, &id)?;
        Ok((model.reward_model_id.clone(), model.score(&b.features)?))
    })
    .await?;
    ok(json!({ "reward_model_id": id, "score": score }))
}
