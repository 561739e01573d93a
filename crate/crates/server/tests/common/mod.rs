//! Replays the shared contract fixtures against an in-process router.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use saturn_core::platform::{Background, Platform, PlatformConfig};
use serde::Deserialize;
use serde_json::Value;
use tower::ServiceExt;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/contract")
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub setup: Setup,
    pub steps: Vec<Step>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Setup {
    /// principal → bearer token.
    pub tokens: BTreeMap<String, String>,
    /// Merged into the default platform configuration.
    pub config: Option<Value>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub name: String,
    /// Principal whose token is sent; `null` sends no Authorization header.
    #[serde(default, rename = "as")]
    pub principal: Option<String>,
    /// A literal token, overriding `as`.
    #[serde(default)]
    pub token: Option<String>,
    pub request: StepRequest,
    pub response: StepResponse,
    /// variable → JSON pointer into the response body.
    #[serde(default)]
    pub capture: BTreeMap<String, String>,
    /// Stores the raw response body, base64-encoded, under this variable.
    #[serde(default)]
    pub capture_body: Option<String>,
    #[serde(default)]
    pub retry: Option<Retry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRequest {
    pub method: String,
    pub path: String,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    #[serde(default)]
    pub body: Option<Value>,
    #[serde(default)]
    pub body_text: Option<String>,
    #[serde(default)]
    pub body_base64: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepResponse {
    pub status: u16,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    #[serde(default)]
    pub body: Option<Value>,
    #[serde(default)]
    pub body_text: Option<String>,
    #[serde(default)]
    pub body_base64: Option<String>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Retry {
    pub attempts: u32,
    pub delay_ms: u64,
}

pub fn load_all() -> Vec<(PathBuf, Fixture)> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(fixtures_dir())
        .expect("fixture directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).unwrap();
            let f: Fixture = serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            (p, f)
        })
        .collect()
}

/// A platform configured from a fixture's setup block, with background
/// workers running so queued pipeline runs make progress.
pub struct Server {
    pub platform: Arc<Platform>,
    pub router: Router,
    _background: Background,
}

impl Server {
    pub fn new(setup: &Setup) -> Self {
        let mut config = serde_json::to_value(PlatformConfig::default()).unwrap();
        if let Some(overrides) = &setup.config {
            merge(&mut config, overrides);
        }
        let mut config: PlatformConfig = serde_json::from_value(config).expect("fixture config");
        config.data_dir = None;
        config.serve.tokens = setup.tokens.iter().map(|(p, t)| format!("{p}={t}")).collect();
        let platform = Platform::open(config).unwrap();
        let background = platform.start();
        Self {
            router: saturn_server::router(platform.clone()),
            platform,
            _background: background,
        }
    }
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o.clone(),
    }
}

pub struct Replay<'a> {
    pub fixture: &'a Fixture,
    pub server: Server,
    pub vars: BTreeMap<String, Value>,
}

pub struct Exchange {
    pub status: StatusCode,
    pub headers: axum::http::HeaderMap,
    pub body: Vec<u8>,
}

impl<'a> Replay<'a> {
    pub fn new(fixture: &'a Fixture) -> Self {
        Self {
            fixture,
            server: Server::new(&fixture.setup),
            vars: BTreeMap::new(),
        }
    }

    pub async fn run(&mut self) -> Result<(), String> {
        for (i, step) in self.fixture.steps.iter().enumerate() {
            self.step(step).await.map_err(|e| format!("step {i} ({}): {e}", step.name))?;
        }
        Ok(())
    }

    async fn step(&mut self, step: &Step) -> Result<(), String> {
        let retry = step.retry.unwrap_or(Retry {
            attempts: 1,
            delay_ms: 0,
        });
        let mut last = String::new();
        for attempt in 0..retry.attempts.max(1) {
            if attempt > 0 {
                tokio::time::sleep(Duration::from_millis(retry.delay_ms)).await;
            }
            let ex = self.send(step).await?;
            match self.check(&step.response, &ex) {
                Ok(()) => {
                    self.capture(step, &ex)?;
                    return Ok(());
                }
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    pub async fn send(&self, step: &Step) -> Result<Exchange, String> {
        let req = &step.request;
        let mut builder = Request::builder()
            .method(req.method.as_str())
            .uri(subst_str(&req.path, &self.vars)?);
        let token = match (&step.token, &step.principal) {
            (Some(t), _) => Some(t.clone()),
            (None, Some(p)) => Some(
                self.fixture
                    .setup
                    .tokens
                    .get(p)
                    .ok_or_else(|| format!("no token for {p}"))?
                    .clone(),
            ),
            (None, None) => None,
        };
        if let Some(t) = token {
            builder = builder.header("authorization", format!("Bearer {t}"));
        }
        for (k, v) in &req.headers {
            builder = builder.header(k.as_str(), subst_str(v, &self.vars)?);
        }
        let body = match (&req.body, &req.body_text, &req.body_base64) {
            (Some(v), None, None) => {
                builder = builder.header("content-type", "application/json");
                serde_json::to_vec(&subst(v, &self.vars)?).unwrap()
            }
            (None, Some(t), None) => subst_str(t, &self.vars)?.into_bytes(),
            (None, None, Some(b)) => B64.decode(subst_str(b, &self.vars)?).map_err(|e| e.to_string())?,
            (None, None, None) => Vec::new(),
            _ => return Err("request has more than one body form".into()),
        };
        let resp = self
            .server
            .router
            .clone()
            .oneshot(builder.body(Body::from(body)).map_err(|e| e.to_string())?)
            .await
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        let headers = resp.headers().clone();
        let body = axum::body::to_bytes(resp.into_body(), usize::MAX)
            .await
            .map_err(|e| e.to_string())?
            .to_vec();
        Ok(Exchange { status, headers, body })
    }

    fn check(&self, want: &StepResponse, ex: &Exchange) -> Result<(), String> {
        let text = String::from_utf8_lossy(&ex.body);
        if ex.status.as_u16() != want.status {
            return Err(format!("status {} (wanted {}): {text}", ex.status.as_u16(), want.status));
        }
        for (k, v) in &want.headers {
            let got = ex.headers.get(k.as_str()).and_then(|h| h.to_str().ok()).unwrap_or("");
            if got != subst_str(v, &self.vars)? {
                return Err(format!("header {k}: {got:?}"));
            }
        }
        if let Some(expected) = &want.body {
            let actual: Value = serde_json::from_slice(&ex.body).map_err(|e| format!("body is not JSON ({e}): {text}"))?;
            matches(expected, &actual, &self.vars, "$").map_err(|e| format!("{e}\nbody: {text}"))?;
        }
        if let Some(t) = &want.body_text {
            if text != subst_str(t, &self.vars)? {
                return Err(format!("body text {text:?}"));
            }
        }
        if let Some(b) = &want.body_base64 {
            if B64.encode(&ex.body) != subst_str(b, &self.vars)? {
                return Err("raw body differs".into());
            }
        }
        Ok(())
    }

    fn capture(&mut self, step: &Step, ex: &Exchange) -> Result<(), String> {
        if let Some(var) = &step.capture_body {
            self.vars.insert(var.clone(), Value::String(B64.encode(&ex.body)));
        }
        if step.capture.is_empty() {
            return Ok(());
        }
        let body: Value = serde_json::from_slice(&ex.body).map_err(|e| e.to_string())?;
        for (var, pointer) in &step.capture {
            let v = body
                .pointer(pointer)
                .ok_or_else(|| format!("capture {var}: nothing at {pointer}"))?;
            self.vars.insert(var.clone(), v.clone());
        }
        Ok(())
    }
}

/// Replaces `{var}` in a string. A string that is exactly `{var}` inside a
/// JSON body takes the captured value with its JSON type.
pub fn subst(v: &Value, vars: &BTreeMap<String, Value>) -> Result<Value, String> {
    Ok(match v {
        Value::String(s) => match whole_var(s).and_then(|name| vars.get(name)) {
            Some(val) => val.clone(),
            None => Value::String(subst_str(s, vars)?),
        },
        Value::Array(a) => Value::Array(a.iter().map(|x| subst(x, vars)).collect::<Result<_, _>>()?),
        Value::Object(o) => Value::Object(
            o.iter()
                .map(|(k, x)| Ok((k.clone(), subst(x, vars)?)))
                .collect::<Result<_, String>>()?,
        ),
        other => other.clone(),
    })
}

fn whole_var(s: &str) -> Option<&str> {
    let name = s.strip_prefix('{')?.strip_suffix('}')?;
    is_var_name(name).then_some(name)
}

fn is_var_name(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_lowercase() || c == '_')
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

pub fn subst_str(s: &str, vars: &BTreeMap<String, Value>) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_var_name(&after[..close]) => {
                let name = &after[..close];
                match vars.get(name) {
                    Some(Value::String(v)) => out.push_str(v),
                    Some(other) => out.push_str(&other.to_string()),
                    None => return Err(format!("unbound variable {name}")),
                }
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Partial structural match of `actual` against `expected`.
pub fn matches(expected: &Value, actual: &Value, vars: &BTreeMap<String, Value>, at: &str) -> Result<(), String> {
    match expected {
        Value::String(s) if s.starts_with('@') => match_placeholder(s, actual, at),
        Value::String(_) => {
            let want = subst(expected, vars)?;
            if &want == actual {
                Ok(())
            } else {
                Err(format!("{at}: expected {want}, got {actual}"))
            }
        }
        Value::Number(n) => match actual.as_f64() {
            Some(a) if Some(a) == n.as_f64() => Ok(()),
            _ => Err(format!("{at}: expected {n}, got {actual}")),
        },
        Value::Object(want) => {
            let got = actual.as_object().ok_or_else(|| format!("{at}: expected an object, got {actual}"))?;
            for (k, w) in want {
                let here = format!("{at}.{k}");
                match got.get(k) {
                    None if w == "@absent" => {}
                    None => return Err(format!("{here}: missing")),
                    Some(a) => matches(w, a, vars, &here)?,
                }
            }
            Ok(())
        }
        Value::Array(want) => {
            let got = actual.as_array().ok_or_else(|| format!("{at}: expected an array, got {actual}"))?;
            if got.len() != want.len() {
                return Err(format!("{at}: expected {} items, got {}", want.len(), got.len()));
            }
            for (i, (w, a)) in want.iter().zip(got).enumerate() {
                matches(w, a, vars, &format!("{at}[{i}]"))?;
            }
            Ok(())
        }
        other => {
            if other == actual {
                Ok(())
            } else {
                Err(format!("{at}: expected {other}, got {actual}"))
            }
        }
    }
}

fn match_placeholder(p: &str, actual: &Value, at: &str) -> Result<(), String> {
    let ok = match p {
        "@any" => true,
        "@absent" => false,
        "@string" => actual.is_string(),
        "@number" => actual.is_number(),
        "@timestamp" => actual
            .as_str()
            .is_some_and(|s| chrono::DateTime::parse_from_rfc3339(s).is_ok()),
        "@digest" => actual
            .as_str()
            .is_some_and(|s| s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))),
        _ => match p.strip_prefix("@approx:") {
            Some(spec) => {
                let (v, tol) = spec.split_once(':').ok_or_else(|| format!("bad placeholder {p}"))?;
                let v: f64 = v.parse().map_err(|_| format!("bad placeholder {p}"))?;
                let tol: f64 = tol.parse().map_err(|_| format!("bad placeholder {p}"))?;
                actual.as_f64().is_some_and(|a| (a - v).abs() <= tol)
            }
            None => return Err(format!("{at}: unknown placeholder {p}")),
        },
    };
    if ok {
        Ok(())
    } else {
        Err(format!("{at}: {actual} does not match {p}"))
    }
}
