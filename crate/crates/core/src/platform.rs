//! One handle over every subsystem, plus the glue that turns drift events
//! into retraining triggers.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clock::{Clock, SystemClock};
use crate::embedfarm::EmbeddingFarm;
use crate::error::{Error, Result};
use crate::feedback::FeedbackHub;
use crate::governance::{AccessControl, Grant, Principal, Resource, Role};
use crate::monitor::{Monitor, MonitorConfig};
use crate::orchestrator::{GateConfig, Orchestrator, OrchestratorConfig, SubmitOutcome, TriggerRequest};
use crate::registry::{BlobStore, Registry};
use crate::serving::{Serving, ServingConfig};
use crate::store::Store;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlatformConfig {
    /// Directory for the database and blobs. Unset means in-memory.
    pub data_dir: Option<PathBuf>,
    pub monitor: MonitorSection,
    pub pipeline: PipelineSection,
    pub serve: ServeSection,
    pub governance: GovernanceSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorSection {
    /// Drift events are mirrored here as JSON POSTs.
    pub webhook_url: Option<String>,
    pub window: usize,
    pub cadence: usize,
    pub bins: usize,
    pub min_samples: usize,
    pub psi_moderate: f64,
    pub psi_drift: f64,
    pub reorder_tolerance_ms: i64,
}

impl Default for MonitorSection {
    fn default() -> Self {
        let d = MonitorConfig::default();
        Self {
            webhook_url: None,
            window: d.window,
            cadence: d.cadence,
            bins: d.bins,
            min_samples: d.min_samples,
            psi_moderate: d.psi_moderate,
            psi_drift: d.psi_drift,
            reorder_tolerance_ms: d.reorder_tolerance_ms,
        }
    }
}

impl MonitorSection {
    pub fn drift(&self) -> MonitorConfig {
        MonitorConfig {
            window: self.window,
            cadence: self.cadence,
            bins: self.bins,
            min_samples: self.min_samples,
            psi_moderate: self.psi_moderate,
            psi_drift: self.psi_drift,
            reorder_tolerance_ms: self.reorder_tolerance_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    /// Background worker threads. Zero runs pipelines only from [`Platform::pump`].
    pub workers: usize,
    pub gate: GateConfig,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            workers: 1,
            gate: GateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub host: String,
    pub port: u16,
    /// `principal=token` lines.
    pub tokens: Vec<String>,
    pub refreeze_on_rebind: bool,
    pub cache_capacity: usize,
}

impl Default for ServeSection {
    fn default() -> Self {
        let d = ServingConfig::default();
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            tokens: Vec::new(),
            refreeze_on_rebind: d.refreeze_on_rebind,
            cache_capacity: d.cache_capacity,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GovernanceSection {
    /// Principals granted admin on everything at startup.
    pub admins: Vec<String>,
}

impl PlatformConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(dir), Some(base)) = (&cfg.data_dir, path.parent()) {
            if dir.is_relative() {
                cfg.data_dir = Some(base.join(dir));
            }
        }
        Ok(cfg)
    }
}

pub struct Platform {
    pub config: PlatformConfig,
    pub store: Arc<Store>,
    pub acl: Arc<AccessControl>,
    pub registry: Arc<Registry>,
    pub embeddings: Arc<EmbeddingFarm>,
    pub monitor: Arc<Monitor>,
    pub serving: Arc<Serving>,
    pub feedback: Arc<FeedbackHub>,
    pub orchestrator: Arc<Orchestrator>,
    pub clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Platform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Platform").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Platform {
    pub fn open(config: PlatformConfig) -> Result<Arc<Self>> {
        Self::open_with_clock(config, Arc::new(SystemClock))
    }

    pub fn open_with_clock(config: PlatformConfig, clock: Arc<dyn Clock>) -> Result<Arc<Self>> {
        let (store, blobs) = match &config.data_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                (Store::open(dir.join("saturn.redb"))?, BlobStore::open(dir.join("blobs"))?)
            }
            None => (Store::in_memory()?, BlobStore::in_memory()),
        };
        let store = Arc::new(store);
        let acl = Arc::new(AccessControl::with_store(store.clone())?);
        for admin in &config.governance.admins {
            acl.grant(Grant {
                principal: Principal::new(admin.as_str())?,
                role: Role::Admin,
                resource: Resource::Any,
            })?;
        }
        let registry = Arc::new(Registry::open(store.clone(), blobs, acl.clone(), clock.clone())?);
        let embeddings = Arc::new(EmbeddingFarm::open(store.clone(), acl.clone(), clock.clone())?);
        let monitor = Arc::new(Monitor::open(store.clone(), clock.clone(), config.monitor.drift())?);
        let serving = Arc::new(Serving::open(
            store.clone(),
            registry.clone(),
            monitor.clone(),
            acl.clone(),
            clock.clone(),
            ServingConfig {
                refreeze_on_rebind: config.serve.refreeze_on_rebind,
                cache_capacity: config.serve.cache_capacity,
            },
        )?);
        for line in &config.serve.tokens {
            serving.tokens().insert_line(line)?;
        }
        let feedback = Arc::new(FeedbackHub::new(store.clone(), registry.clone(), acl.clone(), clock.clone()));
        let orchestrator = Arc::new(Orchestrator::open(
            store.clone(),
            registry.clone(),
            serving.clone(),
            monitor.clone(),
            acl.clone(),
            clock.clone(),
            OrchestratorConfig {
                gate: config.pipeline.gate,
            },
        )?);
        Ok(Arc::new(Self {
            config,
            store,
            acl,
            registry,
            embeddings,
            monitor,
            serving,
            feedback,
            orchestrator,
            clock,
        }))
    }

    /// Turns queued drift events into drift triggers. Events that cannot be
    /// traced back to a pipeline-produced version are logged and dropped.
    pub fn forward_drift_events(&self) -> Vec<SubmitOutcome> {
        let mut out = Vec::new();
        for event in self.monitor.drain_events() {
            match self
                .orchestrator
                .submit_trigger(&Principal::system(), TriggerRequest::drift(&event.event_id))
            {
                Ok(o) => out.push(o),
                Err(e) => {
                    tracing::warn!(event_id = %event.event_id, error = %e, "drift event not retrainable");
                    let _ = self.monitor.resolve_outstanding(&event.endpoint_id);
                }
            }
        }
        out
    }

    /// Synchronous step for embedders and tests: forwards drift events and
    /// executes every runnable run on the calling thread.
    pub fn pump(&self) -> Result<Vec<SubmitOutcome>> {
        let submitted = self.forward_drift_events();
        self.orchestrator.run_pending()?;
        Ok(submitted)
    }

    /// Starts pipeline workers and the drift forwarder. Everything stops when
    /// the returned handle is dropped.
    pub fn start(self: &Arc<Self>) -> Background {
        let stop = Arc::new(AtomicBool::new(false));
        let mut threads = self.orchestrator.spawn_workers(self.config.pipeline.workers, stop.clone());
        let (tx, rx) = mpsc::channel::<()>();
        let tx = parking_lot::Mutex::new(tx);
        self.monitor.subscribe(move |_| {
            let _ = tx.lock().send(());
        });
        let platform = self.clone();
        let flag = stop.clone();
        threads.push(
            std::thread::Builder::new()
                .name("drift-forwarder".into())
                .spawn(move || {
                    while !flag.load(Ordering::Relaxed) {
                        if matches!(rx.recv_timeout(Duration::from_millis(50)), Err(mpsc::RecvTimeoutError::Disconnected)) {
                            break;
                        }
                        platform.forward_drift_events();
                    }
                })
                .expect("spawn drift forwarder"),
        );
        Background {
            stop,
            threads,
            orchestrator: self.orchestrator.clone(),
        }
    }
}

pub struct Background {
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
    orchestrator: Arc<Orchestrator>,
}

impl Drop for Background {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        self.orchestrator.notify_workers();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}
