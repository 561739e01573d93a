//! Blocking HTTP client for the API.

use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder};
use reqwest::Method;
use serde::Deserialize;

use crate::config::CliConfig;
use crate::error::CliError;

pub struct Api {
    http: Client,
    config: CliConfig,
}

pub enum Body {
    None,
    Json(serde_json::Value),
    Raw(Vec<u8>, &'static str),
}

#[derive(Deserialize)]
struct Envelope {
    error: ErrorBody,
}

#[derive(Deserialize)]
struct ErrorBody {
    code: String,
    message: String,
}

impl Api {
    pub fn new(config: CliConfig) -> Result<Self, CliError> {
        let http = Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| CliError::Transport(e.to_string()))?;
        Ok(Self { http, config })
    }

    pub fn config(&self) -> &CliConfig {
        &self.config
    }

    /// Sends one request and returns the raw body of a 2xx response.
    pub fn call(&self, method: Method, path: &str, body: Body) -> Result<Vec<u8>, CliError> {
        let token = self
            .config
            .token
            .as_ref()
            .ok_or_else(|| CliError::Usage("no token configured; use --token, SATURN_TOKEN or the config file".into()))?;
        let url = format!("{}{path}", self.config.server_url);
        let req: RequestBuilder = self.http.request(method, url).bearer_auth(token.expose());
        let req = match body {
            Body::None => req,
            Body::Json(v) => req.json(&v),
            Body::Raw(bytes, content_type) => req.header("content-type", content_type).body(bytes),
        };
        // reqwest errors carry the URL but never headers, so the token stays out.
        let resp = req.send().map_err(|e| CliError::Transport(e.without_url().to_string()))?;
        let status = resp.status();
        let bytes = resp.bytes().map_err(|e| CliError::Transport(e.to_string()))?.to_vec();
        if status.is_success() {
            return Ok(bytes);
        }
        match serde_json::from_slice::<Envelope>(&bytes) {
            Ok(env) => Err(CliError::Api {
                code: env.error.code,
                message: env.error.message,
            }),
            Err(_) => Err(CliError::Transport(format!("HTTP {status} without an error envelope"))),
        }
    }

    pub fn get(&self, path: &str) -> Result<Vec<u8>, CliError> {
        self.call(Method::GET, path, Body::None)
    }

    pub fn post(&self, path: &str, body: serde_json::Value) -> Result<Vec<u8>, CliError> {
        self.call(Method::POST, path, Body::Json(body))
    }
}

/// Percent-encodes one path segment.
pub fn segment(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}
