//! Mirrors drift events to `monitor.webhook_url` as JSON POSTs.
//!
//! Delivery runs on its own thread so a slow receiver never holds the
//! monitor's listener callback. Failed deliveries are logged and dropped;
//! the in-process queue to the orchestrator is the source of truth.

use std::sync::mpsc;
use std::thread::JoinHandle;
use std::time::Duration;

use saturn_core::monitor::{DriftEvent, Monitor, Verdict};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WebhookPayload {
    pub event_id: String,
    pub endpoint_id: String,
    pub verdict: Verdict,
    pub max_psi: f64,
}

impl From<&DriftEvent> for WebhookPayload {
    fn from(e: &DriftEvent) -> Self {
        Self {
            event_id: e.event_id.clone(),
            endpoint_id: e.endpoint_id.clone(),
            verdict: e.verdict,
            max_psi: e.max_psi,
        }
    }
}

/// Subscribes to `monitor` and starts the delivery thread.
pub fn spawn(monitor: &Monitor, url: String) -> std::io::Result<JoinHandle<()>> {
    let (tx, rx) = mpsc::channel::<WebhookPayload>();
    let tx = std::sync::Mutex::new(tx);
    monitor.subscribe(move |event| {
        if let Ok(tx) = tx.lock() {
            let _ = tx.send(event.into());
        }
    });
    std::thread::Builder::new().name("drift-webhook".into()).spawn(move || {
        let client = match reqwest::blocking::Client::builder().timeout(Duration::from_secs(5)).build() {
            Ok(c) => c,
            Err(e) => {
                tracing::error!(error = %e, "webhook client unavailable");
                return;
            }
        };
        for payload in rx {
            match client.post(&url).json(&payload).send() {
                Ok(resp) if resp.status().is_success() => {
                    tracing::debug!(event_id = %payload.event_id, "webhook delivered");
                }
                Ok(resp) => {
                    tracing::warn!(event_id = %payload.event_id, status = %resp.status(), "webhook rejected");
                }
                Err(e) => tracing::warn!(event_id = %payload.event_id, error = %e, "webhook failed"),
            }
        }
    })
}
