//! Continuous monitoring: per-endpoint live windows of inference logs,
//! frozen reference distributions, PSI/KS drift reports and drift events.

pub mod stats;

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

pub use stats::{compute_ks, compute_psi, ks_critical, KS_ALPHA_05, PSI_EPSILON};

use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::registry::sha256_hex;
use crate::store::{seq_key, Store, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    /// Live ring-buffer capacity.
    pub window: usize,
    /// Ingests between automatic evaluations.
    pub cadence: usize,
    pub bins: usize,
    pub min_samples: usize,
    pub psi_moderate: f64,
    pub psi_drift: f64,
    /// How far behind the newest log a late log may be and still be kept.
    pub reorder_tolerance_ms: i64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            window: 500,
            cadence: 100,
            bins: 10,
            min_samples: 100,
            psi_moderate: 0.1,
            psi_drift: 0.2,
            reorder_tolerance_ms: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceLog {
    pub endpoint_id: String,
    pub feature_vector: Vec<f64>,
    pub prediction: f64,
    pub latency_ms: f64,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureHistogram {
    /// `bins − 1` interior edges; bin `i` holds values with exactly `i`
    /// edges at or below them.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSnapshot {
    pub endpoint_id: String,
    pub features: Vec<FeatureHistogram>,
    pub sample_count: usize,
    pub frozen_at: DateTime<Utc>,
    /// Ascending reference values per feature, kept for KS.
    pub samples: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowBounds {
    pub first: DateTime<Utc>,
    pub last: DateTime<Utc>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDrift {
    pub feature: usize,
    pub psi: f64,
    pub ks_stat: f64,
    pub ks_critical: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    None,
    Moderate,
    Drift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub report_id: String,
    pub endpoint_id: String,
    pub window: WindowBounds,
    pub per_feature: Vec<FeatureDrift>,
    pub max_psi: f64,
    pub verdict: Verdict,
    pub threshold_psi: f64,
    pub event_id: Option<String>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEvent {
    pub event_id: String,
    pub endpoint_id: String,
    pub report_id: String,
    pub verdict: Verdict,
    pub max_psi: f64,
    pub window: WindowBounds,
    /// The live window the report was computed on, oldest first.
    pub live_window: Vec<InferenceLog>,
    pub emitted_at: DateTime<Utc>,
}

/// Deterministic event id for a window of one endpoint.
pub fn event_id(endpoint_id: &str, window: &WindowBounds) -> String {
    let material = format!(
        "{endpoint_id}|{}|{}|{}",
        window.first.to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
        window.last.to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
        window.count
    );
    format!("evt-{}", &sha256_hex(material.as_bytes())[..32])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestAck {
    pub endpoint_id: String,
    pub buffered: usize,
    /// Set when this ingest froze the reference automatically.
    pub froze_reference: bool,
    /// Set when this ingest completed an evaluation cycle.
    pub report: Option<DriftReport>,
}

#[derive(Debug, Default)]
struct EndpointState {
    buffer: VecDeque<InferenceLog>,
    newest: Option<DateTime<Utc>>,
    dim: Option<usize>,
    since_eval: usize,
    reference: Option<Arc<ReferenceSnapshot>>,
    auto_freeze: bool,
    cooldown: u32,
    outstanding: Option<String>,
}

type Listener = Box<dyn Fn(&DriftEvent) + Send + Sync>;

pub struct Monitor {
    store: Arc<Store>,
    clock: Arc<dyn Clock>,
    config: MonitorConfig,
    endpoints: RwLock<HashMap<String, Arc<Mutex<EndpointState>>>>,
    queue: Mutex<VecDeque<DriftEvent>>,
    listeners: RwLock<Vec<Listener>>,
}

impl fmt::Debug for Monitor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Monitor").field("config", &self.config).finish_non_exhaustive()
    }
}

fn report_key(endpoint_id: &str, seq: u64) -> String {
    format!("{endpoint_id}\u{0}{}", seq_key(seq))
}

impl Monitor {
    pub fn open(store: Arc<Store>, clock: Arc<dyn Clock>, config: MonitorConfig) -> Result<Self> {
        if config.bins < 2 || config.cadence == 0 || config.window < config.min_samples || config.min_samples < config.bins {
            return Err(Error::invalid("inconsistent monitor configuration"));
        }
        let mut endpoints = HashMap::new();
        for (id, reference) in store.scan::<ReferenceSnapshot>(Table::References)? {
            let state = EndpointState {
                dim: Some(reference.features.len()),
                reference: Some(Arc::new(reference)),
                ..Default::default()
            };
            endpoints.insert(id, Arc::new(Mutex::new(state)));
        }
        Ok(Self {
            store,
            clock,
            config,
            endpoints: RwLock::new(endpoints),
            queue: Mutex::new(VecDeque::new()),
            listeners: RwLock::new(Vec::new()),
        })
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    /// Starts tracking an endpoint. With `auto_freeze` the reference is
    /// frozen as soon as the live buffer first fills up.
    pub fn register_endpoint(&self, endpoint_id: &str, auto_freeze: bool) {
        let mut map = self.endpoints.write();
        let state = map.entry(endpoint_id.to_string()).or_default();
        let mut s = state.lock();
        if s.reference.is_none() {
            s.auto_freeze = auto_freeze;
        }
    }

    /// Forgets the reference and live buffer, e.g. after the endpoint was
    /// rebound to a different model.
    pub fn reset_endpoint(&self, endpoint_id: &str, auto_freeze: bool) -> Result<()> {
        let state = self.state(endpoint_id)?;
        let mut s = state.lock();
        *s = EndpointState {
            auto_freeze,
            ..Default::default()
        };
        self.store.delete(Table::References, endpoint_id)?;
        Ok(())
    }

    /// Clears the "drift event awaiting retraining" marker so that future
    /// windows may raise events again.
    pub fn resolve_outstanding(&self, endpoint_id: &str) -> Result<()> {
        self.state(endpoint_id)?.lock().outstanding = None;
        Ok(())
    }

    pub fn outstanding_event(&self, endpoint_id: &str) -> Result<Option<String>> {
        Ok(self.state(endpoint_id)?.lock().outstanding.clone())
    }

    pub fn subscribe(&self, listener: impl Fn(&DriftEvent) + Send + Sync + 'static) {
        self.listeners.write().push(Box::new(listener));
    }

    fn state(&self, endpoint_id: &str) -> Result<Arc<Mutex<EndpointState>>> {
        self.endpoints
            .read()
            .get(endpoint_id)
            .cloned()
            .ok_or_else(|| Error::not_found(format!("endpoint {endpoint_id}")))
    }

    fn validate(&self, s: &EndpointState, log: &InferenceLog) -> Result<()> {
        if log.feature_vector.is_empty() {
            return Err(Error::invalid("feature vector is empty"));
        }
        if log.feature_vector.iter().any(|v| !v.is_finite()) || !log.prediction.is_finite() {
            return Err(Error::invalid("inference log has non-finite values"));
        }
        if !log.latency_ms.is_finite() || log.latency_ms < 0.0 {
            return Err(Error::invalid("latency must be finite and nonnegative"));
        }
        if let Some(dim) = s.dim {
            if dim != log.feature_vector.len() {
                return Err(Error::invalid(format!(
                    "feature vector has {} components, endpoint logs have {dim}",
                    log.feature_vector.len()
                )));
            }
        }
        if let Some(newest) = s.newest {
            if log.timestamp < newest - Duration::milliseconds(self.config.reorder_tolerance_ms) {
                return Err(Error::invalid(format!(
                    "log at {} is more than {} ms older than the newest log",
                    log.timestamp, self.config.reorder_tolerance_ms
                )));
            }
        }
        Ok(())
    }

    pub fn ingest(&self, log: InferenceLog) -> Result<IngestAck> {
        let state = self.state(&log.endpoint_id)?;
        let mut s = state.lock();
        self.ingest_locked(&mut s, log)
    }

    /// Ingests a log stamped with the monitor clock while the endpoint is
    /// locked, so concurrent callers always arrive in timestamp order.
    pub fn record(&self, endpoint_id: &str, feature_vector: Vec<f64>, prediction: f64, latency_ms: f64) -> Result<IngestAck> {
        let state = self.state(endpoint_id)?;
        let mut s = state.lock();
        let log = InferenceLog {
            endpoint_id: endpoint_id.to_string(),
            feature_vector,
            prediction,
            latency_ms,
            timestamp: self.clock.now(),
        };
        self.ingest_locked(&mut s, log)
    }

    fn ingest_locked(&self, s: &mut EndpointState, log: InferenceLog) -> Result<IngestAck> {
        self.validate(s, &log)?;
        let endpoint_id = log.endpoint_id.clone();
        s.dim = Some(log.feature_vector.len());
        s.newest = Some(s.newest.map_or(log.timestamp, |n| n.max(log.timestamp)));
        s.buffer.push_back(log);
        while s.buffer.len() > self.config.window {
            s.buffer.pop_front();
        }
        let mut ack = IngestAck {
            endpoint_id: endpoint_id.clone(),
            buffered: s.buffer.len(),
            froze_reference: false,
            report: None,
        };
        if s.reference.is_some() {
            s.since_eval += 1;
            if s.since_eval >= self.config.cadence {
                s.since_eval = 0;
                ack.report = Some(self.evaluate_locked(&endpoint_id, s)?);
            }
        } else if s.auto_freeze && s.buffer.len() >= self.config.window {
            self.freeze_locked(&endpoint_id, s)?;
            ack.froze_reference = true;
        }
        ack.buffered = s.buffer.len();
        Ok(ack)
    }

    /// Ingests logs in order, stopping at the first invalid one.
    pub fn ingest_batch(&self, logs: Vec<InferenceLog>) -> Result<Vec<IngestAck>> {
        logs.into_iter().map(|l| self.ingest(l)).collect()
    }

    /// Freezes the current live buffer as the endpoint's reference. An
    /// existing reference is only replaced when `force` is set.
    pub fn freeze_reference(&self, endpoint_id: &str, force: bool) -> Result<ReferenceSnapshot> {
        let state = self.state(endpoint_id)?;
        let mut s = state.lock();
        if s.reference.is_some() && !force {
            return Err(Error::Conflict(format!(
                "endpoint {endpoint_id} already has a frozen reference"
            )));
        }
        self.freeze_locked(endpoint_id, &mut s)
    }

    fn freeze_locked(&self, endpoint_id: &str, s: &mut EndpointState) -> Result<ReferenceSnapshot> {
        let n = s.buffer.len();
        if n < self.config.min_samples {
            return Err(Error::NotReady(format!(
                "{n} logs buffered, {} needed to freeze a reference",
                self.config.min_samples
            )));
        }
        let dim = s.dim.expect("nonempty buffer has a dimension");
        let mut features = Vec::with_capacity(dim);
        let mut samples = Vec::with_capacity(dim);
        for f in 0..dim {
            let mut col: Vec<f64> = s.buffer.iter().map(|l| l.feature_vector[f]).collect();
            col.sort_by(f64::total_cmp);
            let edges = stats::equal_frequency_edges(&col, self.config.bins);
            let counts = stats::bin_counts(&edges, &col);
            features.push(FeatureHistogram { edges, counts });
            samples.push(col);
        }
        let snap = ReferenceSnapshot {
            endpoint_id: endpoint_id.to_string(),
            features,
            sample_count: n,
            frozen_at: self.clock.now(),
            samples,
        };
        self.store.put(Table::References, endpoint_id, &snap)?;
        s.reference = Some(Arc::new(snap.clone()));
        s.buffer.clear();
        s.since_eval = 0;
        s.auto_freeze = false;
        s.cooldown = 0;
        tracing::info!(endpoint_id, samples = n, "reference frozen");
        Ok(snap)
    }

    pub fn reference(&self, endpoint_id: &str) -> Result<Option<ReferenceSnapshot>> {
        Ok(self.state(endpoint_id)?.lock().reference.as_deref().cloned())
    }

    pub fn buffered(&self, endpoint_id: &str) -> Result<usize> {
        Ok(self.state(endpoint_id)?.lock().buffer.len())
    }

    /// Evaluates the current live window now, outside the regular cadence.
    pub fn evaluate_drift(&self, endpoint_id: &str) -> Result<DriftReport> {
        let state = self.state(endpoint_id)?;
        let mut s = state.lock();
        self.evaluate_locked(endpoint_id, &mut s)
    }

    fn evaluate_locked(&self, endpoint_id: &str, s: &mut EndpointState) -> Result<DriftReport> {
        let Some(reference) = s.reference.clone() else {
            return Err(Error::NotReady(format!("endpoint {endpoint_id} has no frozen reference")));
        };
        if s.buffer.len() < self.config.min_samples {
            return Err(Error::NotReady(format!(
                "{} live logs, {} needed",
                s.buffer.len(),
                self.config.min_samples
            )));
        }
        let mut live: Vec<InferenceLog> = s.buffer.iter().cloned().collect();
        live.sort_by_key(|l| l.timestamp);
        let window = WindowBounds {
            first: live[0].timestamp,
            last: live[live.len() - 1].timestamp,
            count: live.len(),
        };
        let mut per_feature = Vec::with_capacity(reference.features.len());
        for (f, hist) in reference.features.iter().enumerate() {
            let col: Vec<f64> = live.iter().map(|l| l.feature_vector[f]).collect();
            let psi = compute_psi(
                &stats::proportions(&hist.counts),
                &stats::proportions(&stats::bin_counts(&hist.edges, &col)),
            )?;
            let (ks_stat, ks_critical) = compute_ks(&reference.samples[f], &col)?;
            per_feature.push(FeatureDrift {
                feature: f,
                psi,
                ks_stat,
                ks_critical,
            });
        }
        let max_psi = per_feature.iter().map(|f| f.psi).fold(0.0, f64::max);
        let verdict = if max_psi > self.config.psi_drift {
            Verdict::Drift
        } else if max_psi > self.config.psi_moderate {
            Verdict::Moderate
        } else {
            Verdict::None
        };
        let seq = self.store.next_seq("report")?;
        let mut report = DriftReport {
            report_id: format!("rpt-{seq:06}"),
            endpoint_id: endpoint_id.to_string(),
            window,
            per_feature,
            max_psi,
            verdict,
            threshold_psi: self.config.psi_drift,
            event_id: None,
            created_at: self.clock.now(),
        };
        let in_cooldown = s.cooldown > 0;
        s.cooldown = s.cooldown.saturating_sub(1);
        let mut event = None;
        if verdict == Verdict::Drift && !in_cooldown && s.outstanding.is_none() {
            let id = event_id(endpoint_id, &report.window);
            if self.store.get_raw(Table::Events, &id)?.is_none() {
                report.event_id = Some(id.clone());
                event = Some(DriftEvent {
                    event_id: id,
                    endpoint_id: endpoint_id.to_string(),
                    report_id: report.report_id.clone(),
                    verdict,
                    max_psi,
                    window: report.window.clone(),
                    live_window: live,
                    emitted_at: report.created_at,
                });
            }
        }
        let mut rows = vec![(Table::Reports, report_key(endpoint_id, seq), crate::store::json(&report)?)];
        if let Some(e) = &event {
            rows.push((Table::Events, e.event_id.clone(), crate::store::json(e)?));
        }
        self.store.write_batch(&rows)?;
        if let Some(e) = event {
            tracing::warn!(endpoint_id, event_id = %e.event_id, max_psi, "drift detected");
            s.cooldown = 1;
            s.outstanding = Some(e.event_id.clone());
            self.queue.lock().push_back(e.clone());
            for l in self.listeners.read().iter() {
                l(&e);
            }
        }
        Ok(report)
    }

    /// Reports for one endpoint, oldest first.
    pub fn reports(&self, endpoint_id: &str) -> Result<Vec<DriftReport>> {
        self.state(endpoint_id)?;
        let prefix = format!("{endpoint_id}\u{0}");
        Ok(self
            .store
            .scan::<DriftReport>(Table::Reports)?
            .into_iter()
            .filter(|(k, _)| k.starts_with(&prefix))
            .map(|(_, r)| r)
            .collect())
    }

    pub fn events(&self) -> Result<Vec<DriftEvent>> {
        let mut all: Vec<DriftEvent> = self
            .store
            .scan::<DriftEvent>(Table::Events)?
            .into_iter()
            .map(|(_, e)| e)
            .collect();
        all.sort_by(|a, b| a.emitted_at.cmp(&b.emitted_at).then(a.event_id.cmp(&b.event_id)));
        Ok(all)
    }

    pub fn event(&self, event_id: &str) -> Result<DriftEvent> {
        self.store
            .get(Table::Events, event_id)?
            .ok_or_else(|| Error::not_found(format!("drift event {event_id}")))
    }

    /// Takes all events emitted since the last drain, in emission order.
    pub fn drain_events(&self) -> Vec<DriftEvent> {
        self.queue.lock().drain(..).collect()
    }
}
