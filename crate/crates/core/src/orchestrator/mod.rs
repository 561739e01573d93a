//! Continuous-training orchestrator.
//!
//! Triggers (commit, drift, manual) become pipeline runs that move through
//! TRAIN, VALIDATE, REGISTER and DEPLOY. Runs are persisted after every stage
//! change and resumed from their first unfinished stage after a restart.
//! Every stage is idempotent: artifacts are content-addressed and version
//! registration is keyed by the trigger id.

mod spec;

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use chrono::{DateTime, Utc};
use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

pub use spec::{DatasetRef, GateConfig, GateOverrides, Hyperparameters, Task, TrainingSpec};

use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::governance::{compute_fairness, AccessControl, Action, Principal, Resource, ResourceKind};
use crate::modelkit::dataset::{format_labeled, parse_labeled};
use crate::modelkit::{
    finetune_classifier_with, metrics_from_scores, pretrain_embedder_with, Artifact, ClassifierArtifact, Corpus,
    EmbedderArtifact, LabeledExample, ModelInput,
};
use crate::monitor::Monitor;
use crate::registry::{LifecycleStage, NewVersion, Registry, ValidationReport};
use crate::serving::Serving;
use crate::store::{Store, Table};

pub const LIVE_WINDOW_MEDIA_TYPE: &str = "text/tab-separated-values";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerKind {
    Commit,
    Drift,
    Manual,
}

impl fmt::Display for TriggerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TriggerKind::Commit => "commit",
            TriggerKind::Drift => "drift",
            TriggerKind::Manual => "manual",
        })
    }
}

impl FromStr for TriggerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "commit" => Ok(TriggerKind::Commit),
            "drift" => Ok(TriggerKind::Drift),
            "manual" => Ok(TriggerKind::Manual),
            _ => Err(Error::invalid(format!("unknown trigger kind {s:?}"))),
        }
    }
}

/// What a client submits. Commit and manual triggers carry a spec, either
/// inline or as a path on the platform host; drift triggers name an event.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TriggerRequest {
    pub kind: Option<TriggerKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commit_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_id: Option<String>,
    /// Manual triggers may pick their own id; otherwise a UUID is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger_id: Option<String>,
}

impl TriggerRequest {
    pub fn commit(commit_ref: impl Into<String>, spec_path: impl Into<String>) -> Self {
        Self {
            kind: Some(TriggerKind::Commit),
            commit_ref: Some(commit_ref.into()),
            spec_path: Some(spec_path.into()),
            ..Default::default()
        }
    }

    pub fn drift(event_id: impl Into<String>) -> Self {
        Self {
            kind: Some(TriggerKind::Drift),
            event_id: Some(event_id.into()),
            ..Default::default()
        }
    }

    pub fn manual_inline(spec: impl Into<String>) -> Self {
        Self {
            kind: Some(TriggerKind::Manual),
            spec: Some(spec.into()),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub trigger_id: String,
    pub kind: TriggerKind,
    #[serde(default)]
    pub commit_ref: Option<String>,
    #[serde(default)]
    pub event_id: Option<String>,
    #[serde(default)]
    pub endpoint_id: Option<String>,
    #[serde(default)]
    pub spec_source: Option<String>,
    pub received_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub run_id: String,
    pub trigger_id: String,
    pub duplicate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Stage {
    Train,
    Validate,
    Register,
    Deploy,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Train, Stage::Validate, Stage::Register, Stage::Deploy];
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Train => "TRAIN",
            Stage::Validate => "VALIDATE",
            Stage::Register => "REGISTER",
            Stage::Deploy => "DEPLOY",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Pending,
    Running,
    Succeeded,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Queued,
    Running,
    Succeeded,
    Failed,
}

impl RunStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunStatus::Succeeded | RunStatus::Failed)
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::Queued => "queued",
            RunStatus::Running => "running",
            RunStatus::Succeeded => "succeeded",
            RunStatus::Failed => "failed",
        })
    }
}

impl FromStr for RunStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "queued" => Ok(RunStatus::Queued),
            "running" => Ok(RunStatus::Running),
            "succeeded" => Ok(RunStatus::Succeeded),
            "failed" => Ok(RunStatus::Failed),
            _ => Err(Error::invalid(format!("unknown run status {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub run_id: String,
    pub trigger: Trigger,
    pub spec: TrainingSpec,
    pub gate: GateConfig,
    pub stages: Vec<StageRecord>,
    pub status: RunStatus,
    /// Set when the version was registered but failed the release gate.
    pub rejected: bool,
    pub artifact_digest: Option<String>,
    pub validation: Option<ValidationReport>,
    pub produced_version: Option<String>,
    pub endpoint_id: Option<String>,
    pub logs: Vec<String>,
    pub received_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
}

impl PipelineRun {
    pub fn stage(&self, stage: Stage) -> &StageRecord {
        &self.stages[stage as usize]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OrchestratorConfig {
    pub gate: GateConfig,
}

#[derive(Default)]
struct Queue {
    /// `(run_id, model_id)` in submission order.
    pending: VecDeque<(String, String)>,
    /// Models with a run currently executing.
    busy: HashSet<String>,
}

pub struct Orchestrator {
    store: Arc<Store>,
    registry: Arc<Registry>,
    serving: Arc<Serving>,
    monitor: Arc<Monitor>,
    acl: Arc<AccessControl>,
    clock: Arc<dyn Clock>,
    config: OrchestratorConfig,
    submit: Mutex<()>,
    queue: Mutex<Queue>,
    ready: Condvar,
}

impl fmt::Debug for Orchestrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Orchestrator").field("config", &self.config).finish_non_exhaustive()
    }
}

enum Outcome {
    Done(String),
    Skipped(String),
}

/// Releases a model slot in the queue when a run finishes or panics.
struct BusyGuard<'a> {
    orch: &'a Orchestrator,
    model_id: String,
}

impl Drop for BusyGuard<'_> {
    fn drop(&mut self) {
        self.orch.queue.lock().busy.remove(&self.model_id);
        self.orch.ready.notify_all();
    }
}

fn pipeline_resource() -> Resource {
    Resource::AllOf(ResourceKind::Pipeline)
}

fn as_invalid(e: Error) -> Error {
    match e {
        Error::NotFound(m) => Error::InvalidInput(format!("unresolvable trigger payload: {m} not found")),
        other => other,
    }
}

impl Orchestrator {
    /// Opens the orchestrator and re-queues every run that had not reached a
    /// terminal state, resuming at its first unfinished stage.
    pub fn open(
        store: Arc<Store>,
        registry: Arc<Registry>,
        serving: Arc<Serving>,
        monitor: Arc<Monitor>,
        acl: Arc<AccessControl>,
        clock: Arc<dyn Clock>,
        config: OrchestratorConfig,
    ) -> Result<Self> {
        config.gate.validate()?;
        let orch = Self {
            store,
            registry,
            serving,
            monitor,
            acl,
            clock,
            config,
            submit: Mutex::new(()),
            queue: Mutex::new(Queue::default()),
            ready: Condvar::new(),
        };
        let mut resumable: Vec<PipelineRun> = orch
            .all_runs()?
            .into_iter()
            .filter(|r| !r.status.is_terminal())
            .collect();
        resumable.sort_by(|a, b| (a.received_at, &a.run_id).cmp(&(b.received_at, &b.run_id)));
        for mut run in resumable {
            for s in run.stages.iter_mut().filter(|s| s.status == StageStatus::Running) {
                s.status = StageStatus::Pending;
                s.started_at = None;
            }
            if run.status == RunStatus::Running {
                run.status = RunStatus::Queued;
                run.logs.push("resumed after restart".into());
                orch.save(&run)?;
            }
            tracing::info!(run_id = %run.run_id, "re-queued unfinished run");
            orch.queue.lock().pending.push_back((run.run_id, run.spec.model_id));
        }
        Ok(orch)
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    /// Registers a trigger. Exactly one run exists per trigger id; a replayed
    /// trigger returns the original run with `duplicate` set.
    pub fn submit_trigger(&self, caller: &Principal, req: TriggerRequest) -> Result<SubmitOutcome> {
        self.acl.require(caller, Action::Write, &pipeline_resource())?;
        let kind = req.kind.ok_or_else(|| Error::invalid("trigger kind is required"))?;
        let trigger_id = match kind {
            TriggerKind::Commit => {
                let r = req
                    .commit_ref
                    .as_deref()
                    .filter(|r| !r.is_empty() && !r.chars().any(char::is_whitespace))
                    .ok_or_else(|| Error::invalid("commit trigger needs a commit ref without whitespace"))?;
                format!("commit:{r}")
            }
            TriggerKind::Drift => {
                let e = req
                    .event_id
                    .as_deref()
                    .filter(|e| !e.is_empty())
                    .ok_or_else(|| Error::invalid("drift trigger needs an event_id"))?;
                format!("drift:{e}")
            }
            TriggerKind::Manual => match req.trigger_id.as_deref() {
                Some(id) if !id.is_empty() && !id.chars().any(char::is_whitespace) => format!("manual:{id}"),
                Some(_) => return Err(Error::invalid("manual trigger id must be non-empty without whitespace")),
                None => format!("manual:{}", uuid::Uuid::new_v4()),
            },
        };

        let _serial = self.submit.lock();
        if let Some(run_id) = self.store.get::<String>(Table::Triggers, &trigger_id)? {
            tracing::debug!(%trigger_id, %run_id, "duplicate trigger");
            return Ok(SubmitOutcome {
                run_id,
                trigger_id,
                duplicate: true,
            });
        }

        let now = self.clock.now();
        let mut trigger = Trigger {
            trigger_id: trigger_id.clone(),
            kind,
            commit_ref: req.commit_ref.clone(),
            event_id: req.event_id.clone(),
            endpoint_id: None,
            spec_source: None,
            received_at: now,
        };
        let spec = match kind {
            TriggerKind::Commit | TriggerKind::Manual => match (&req.spec, &req.spec_path) {
                (Some(text), None) => {
                    trigger.spec_source = Some("inline".into());
                    TrainingSpec::parse(text, None)?
                }
                (None, Some(path)) => {
                    trigger.spec_source = Some(path.clone());
                    TrainingSpec::from_file(path)?
                }
                _ => return Err(Error::invalid("trigger needs exactly one of spec or spec_path")),
            },
            TriggerKind::Drift => {
                let (endpoint_id, spec) = self.drift_spec(req.event_id.as_deref().unwrap_or_default())?;
                trigger.endpoint_id = Some(endpoint_id);
                spec
            }
        };
        self.check_resolvable(caller, &spec)?;

        let run_id = format!("run-{:06}", self.store.next_seq("run")?);
        let run = PipelineRun {
            run_id: run_id.clone(),
            trigger,
            gate: self.config.gate.with(&spec.gate),
            spec,
            stages: Stage::ALL
                .iter()
                .map(|&stage| StageRecord {
                    stage,
                    status: StageStatus::Pending,
                    started_at: None,
                    finished_at: None,
                    message: None,
                })
                .collect(),
            status: RunStatus::Queued,
            rejected: false,
            artifact_digest: None,
            validation: None,
            produced_version: None,
            endpoint_id: None,
            logs: vec![format!("received {trigger_id}")],
            received_at: now,
            finished_at: None,
        };
        self.store.write_batch(&[
            (Table::Runs, run_id.clone(), crate::store::json(&run)?),
            (Table::Triggers, trigger_id.clone(), crate::store::json(&run_id)?),
        ])?;
        self.queue.lock().pending.push_back((run_id.clone(), run.spec.model_id.clone()));
        self.ready.notify_all();
        tracing::info!(%trigger_id, %run_id, "trigger accepted");
        Ok(SubmitOutcome {
            run_id,
            trigger_id,
            duplicate: false,
        })
    }

    fn check_resolvable(&self, caller: &Principal, spec: &TrainingSpec) -> Result<()> {
        self.registry
            .get_model(&Principal::system(), &spec.model_id)
            .map_err(as_invalid)?;
        self.acl.require(caller, Action::Write, &Resource::model(&spec.model_id))?;
        if let Some(parent) = &spec.parent_version {
            self.registry.version_unchecked(parent).map_err(as_invalid)?;
        }
        Ok(())
    }

    /// Builds the retraining spec for a drift event: the spec of the run that
    /// produced the endpoint's current version, fine-tuned from that version
    /// with the live window appended to its training data.
    fn drift_spec(&self, event_id: &str) -> Result<(String, TrainingSpec)> {
        let event = self.monitor.event(event_id).map_err(as_invalid)?;
        let ep = self
            .serving
            .get_endpoint(&Principal::system(), &event.endpoint_id)
            .map_err(as_invalid)?;
        let producer = self
            .all_runs()?
            .into_iter()
            .filter(|r| r.produced_version.as_deref() == Some(ep.bound_version.as_str()))
            .max_by(|a, b| (a.received_at, &a.run_id).cmp(&(b.received_at, &b.run_id)))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "version {} bound to {} was not produced by a pipeline run",
                    ep.bound_version, ep.endpoint_id
                ))
            })?;
        if producer.spec.task != Task::Finetune {
            return Err(Error::invalid(format!(
                "version {} is not a fine-tuned classifier",
                ep.bound_version
            )));
        }
        let window: Vec<LabeledExample> = event
            .live_window
            .iter()
            .map(|log| LabeledExample {
                input: ModelInput::Features(log.feature_vector.clone()),
                label: log.prediction >= 0.5,
                group: "live".into(),
            })
            .collect();
        let blob = self
            .registry
            .store_blob(format_labeled(&window).as_bytes(), LIVE_WINDOW_MEDIA_TYPE)?;
        let mut spec = producer.spec;
        spec.parent_version = Some(ep.bound_version.clone());
        spec.dataset.push(DatasetRef::Blob(blob.digest));
        spec.deploy = Some(ep.route.clone());
        Ok((ep.endpoint_id, spec))
    }

    pub fn get_run(&self, caller: &Principal, run_id: &str) -> Result<PipelineRun> {
        self.acl.require(caller, Action::Read, &pipeline_resource())?;
        self.load_run(run_id)
    }

    /// Runs ordered by arrival, optionally filtered.
    pub fn list_runs(
        &self,
        caller: &Principal,
        kind: Option<TriggerKind>,
        status: Option<RunStatus>,
    ) -> Result<Vec<PipelineRun>> {
        self.acl.require(caller, Action::Read, &pipeline_resource())?;
        let mut runs: Vec<PipelineRun> = self
            .all_runs()?
            .into_iter()
            .filter(|r| kind.is_none_or(|k| r.trigger.kind == k) && status.is_none_or(|s| r.status == s))
            .collect();
        runs.sort_by(|a, b| (a.received_at, &a.run_id).cmp(&(b.received_at, &b.run_id)));
        Ok(runs)
    }

    pub fn trigger_run(&self, trigger_id: &str) -> Result<Option<String>> {
        self.store.get(Table::Triggers, trigger_id)
    }

    pub fn pending_count(&self) -> usize {
        self.queue.lock().pending.len()
    }

    fn all_runs(&self) -> Result<Vec<PipelineRun>> {
        Ok(self.store.scan::<PipelineRun>(Table::Runs)?.into_iter().map(|(_, r)| r).collect())
    }

    fn load_run(&self, run_id: &str) -> Result<PipelineRun> {
        self.store
            .get(Table::Runs, run_id)?
            .ok_or_else(|| Error::not_found(format!("run {run_id}")))
    }

    fn save(&self, run: &PipelineRun) -> Result<()> {
        self.store.put(Table::Runs, &run.run_id, run)
    }

    /// Executes one run to completion, waiting while another run for the
    /// same model is in flight. Terminal runs are returned unchanged.
    pub fn execute_run(&self, run_id: &str) -> Result<PipelineRun> {
        let model_id = self.load_run(run_id)?.spec.model_id;
        {
            let mut q = self.queue.lock();
            while q.busy.contains(&model_id) {
                self.ready.wait(&mut q);
            }
            q.pending.retain(|(id, _)| id != run_id);
            q.busy.insert(model_id.clone());
        }
        let _guard = BusyGuard { orch: self, model_id };
        self.drive(run_id)
    }

    /// Executes queued runs on the calling thread until none is runnable.
    pub fn run_pending(&self) -> Result<Vec<PipelineRun>> {
        let mut done = Vec::new();
        while let Some((run_id, model_id)) = self.claim(None) {
            let _guard = BusyGuard { orch: self, model_id };
            done.push(self.drive(&run_id)?);
        }
        Ok(done)
    }

    /// Takes the oldest queued run whose model is idle, optionally waiting up
    /// to `wait` for one to become available.
    fn claim(&self, wait: Option<Duration>) -> Option<(String, String)> {
        let mut q = self.queue.lock();
        loop {
            let busy = &q.busy;
            if let Some(pos) = q.pending.iter().position(|(_, m)| !busy.contains(m)) {
                let item = q.pending.remove(pos)?;
                q.busy.insert(item.1.clone());
                return Some(item);
            }
            let d = wait?;
            if self.ready.wait_for(&mut q, d).timed_out() {
                return None;
            }
        }
    }

    /// Starts `n` worker threads that execute queued runs until `stop` is set.
    pub fn spawn_workers(self: &Arc<Self>, n: usize, stop: Arc<AtomicBool>) -> Vec<JoinHandle<()>> {
        (0..n)
            .map(|i| {
                let orch = self.clone();
                let stop = stop.clone();
                std::thread::Builder::new()
                    .name(format!("pipeline-{i}"))
                    .spawn(move || {
                        while !stop.load(Ordering::Relaxed) {
                            if let Some((run_id, model_id)) = orch.claim(Some(Duration::from_millis(50))) {
                                let _guard = BusyGuard { orch: &orch, model_id };
                                if let Err(e) = orch.drive(&run_id) {
                                    tracing::error!(%run_id, error = %e, "run could not be executed");
                                }
                            }
                        }
                    })
                    .expect("spawn pipeline worker")
            })
            .collect()
    }

    /// Wakes idle workers so they notice a stop request promptly.
    pub fn notify_workers(&self) {
        self.ready.notify_all();
    }

    fn drive(&self, run_id: &str) -> Result<PipelineRun> {
        let mut run = self.load_run(run_id)?;
        if run.status.is_terminal() {
            return Ok(run);
        }
        run.status = RunStatus::Running;
        self.save(&run)?;
        let span = tracing::info_span!("run", run_id = %run.run_id);
        let _enter = span.enter();

        for i in 0..run.stages.len() {
            if run.stages[i].status == StageStatus::Succeeded || run.stages[i].status == StageStatus::Skipped {
                continue;
            }
            let stage = run.stages[i].stage;
            run.stages[i].status = StageStatus::Running;
            run.stages[i].started_at = Some(self.clock.now());
            self.save(&run)?;

            let result = match stage {
                Stage::Train => self.train(&mut run),
                Stage::Validate => self.validate(&mut run),
                Stage::Register => self.register(&mut run),
                Stage::Deploy => self.deploy(&mut run),
            };
            let now = self.clock.now();
            let rec = &mut run.stages[i];
            rec.finished_at = Some(now);
            match result {
                Ok(Outcome::Done(msg)) => {
                    rec.status = StageStatus::Succeeded;
                    run.logs.push(format!("{stage}: {msg}"));
                    rec.message = Some(msg);
                }
                Ok(Outcome::Skipped(msg)) => {
                    rec.status = StageStatus::Skipped;
                    run.logs.push(format!("{stage}: skipped, {msg}"));
                    rec.message = Some(msg);
                }
                Err(e) => {
                    tracing::warn!(%stage, error = %e, "stage failed");
                    rec.status = StageStatus::Failed;
                    rec.message = Some(e.to_string());
                    run.logs.push(format!("{stage}: failed, {e}"));
                    for later in run.stages.iter_mut().skip(i + 1) {
                        later.status = StageStatus::Skipped;
                        later.message = Some(format!("{stage} failed"));
                    }
                    break;
                }
            }
            if run.stages.iter().all(|s| s.status != StageStatus::Pending) {
                break;
            }
            self.save(&run)?;
        }

        run.status = if run.stages.iter().any(|s| s.status == StageStatus::Failed) {
            RunStatus::Failed
        } else {
            RunStatus::Succeeded
        };
        run.finished_at = Some(self.clock.now());
        self.save(&run)?;
        if run.trigger.kind == TriggerKind::Drift {
            if let Some(ep) = &run.trigger.endpoint_id {
                // Either the endpoint was rebound (which already reset its
                // monitor state) or retraining gave up; both re-arm detection.
                if let Err(e) = self.monitor.resolve_outstanding(ep) {
                    tracing::debug!(endpoint = %ep, error = %e, "could not resolve outstanding drift event");
                }
            }
        }
        tracing::info!(status = %run.status, rejected = run.rejected, "run finished");
        Ok(run)
    }

    fn read_dataset(&self, r: &DatasetRef) -> Result<String> {
        match r {
            DatasetRef::Path(p) => std::fs::read_to_string(p).map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    Error::not_found(format!("dataset {}", p.display()))
                } else {
                    Error::Io(e)
                }
            }),
            DatasetRef::Blob(d) => String::from_utf8(self.registry.read_blob(d)?)
                .map_err(|_| Error::invalid(format!("dataset blob {d} is not UTF-8"))),
        }
    }

    fn labeled(&self, refs: &[DatasetRef]) -> Result<Vec<LabeledExample>> {
        let mut out = Vec::new();
        for r in refs {
            out.extend(parse_labeled(&self.read_dataset(r)?)?);
        }
        Ok(out)
    }

    fn artifact(&self, digest: &str) -> Result<Artifact> {
        Artifact::from_bytes(&self.registry.read_blob(digest)?)
    }

    /// The embedder behind an artifact: itself, or a classifier's parent.
    fn embedder_of(&self, artifact: &Artifact) -> Result<EmbedderArtifact> {
        match artifact {
            Artifact::Embedder(e) => Ok(e.clone()),
            Artifact::Classifier(c) => match self.artifact(&c.parent)? {
                Artifact::Embedder(e) => Ok(e),
                Artifact::Classifier(_) => Err(Error::invalid("classifier parent is not an embedder")),
            },
        }
    }

    fn train(&self, run: &mut PipelineRun) -> Result<Outcome> {
        let spec = &run.spec;
        let artifact = match spec.task {
            Task::Pretrain => {
                let mut text = String::new();
                for r in &spec.dataset {
                    text.push_str(&self.read_dataset(r)?);
                    text.push('\n');
                }
                let corpus = Corpus::from_text(&text);
                Artifact::Embedder(pretrain_embedder_with(&corpus, &spec.hyperparameters.pretrain())?)
            }
            Task::Finetune => {
                let parent = spec
                    .parent_version
                    .as_deref()
                    .ok_or_else(|| Error::invalid("finetune requires parent_version"))?;
                let parent = self.registry.version_unchecked(parent)?;
                let embedder = self.embedder_of(&self.artifact(&parent.artifact_digest)?)?;
                let examples: Vec<(ModelInput, bool)> =
                    self.labeled(&spec.dataset)?.into_iter().map(|e| (e.input, e.label)).collect();
                Artifact::Classifier(finetune_classifier_with(
                    &embedder,
                    &examples,
                    &spec.hyperparameters.finetune(),
                )?)
            }
        };
        let blob = self.registry.store_blob(&artifact.to_bytes(), artifact.media_type())?;
        let msg = format!("stored {} artifact {}", spec.task, blob.digest);
        run.artifact_digest = Some(blob.digest);
        Ok(Outcome::Done(msg))
    }

    fn validate(&self, run: &mut PipelineRun) -> Result<Outcome> {
        let digest = run
            .artifact_digest
            .clone()
            .ok_or_else(|| Error::InvalidState("no artifact to validate".into()))?;
        let validation = run
            .spec
            .validation
            .clone()
            .ok_or_else(|| Error::invalid("spec has no validation set"))?;
        let examples = self.labeled(std::slice::from_ref(&validation))?;
        let artifact = self.artifact(&digest)?;
        let embedder = self.embedder_of(&artifact)?;

        // A bare embedder is judged by a linear probe: fit on the even rows
        // of the validation set, score the odd rows.
        let (classifier, held_out): (ClassifierArtifact, Vec<&LabeledExample>) = match artifact {
            Artifact::Classifier(c) => (c, examples.iter().collect()),
            Artifact::Embedder(_) => {
                let train: Vec<(ModelInput, bool)> = examples
                    .iter()
                    .step_by(2)
                    .map(|e| (e.input.clone(), e.label))
                    .collect();
                let probe = finetune_classifier_with(&embedder, &train, &run.spec.hyperparameters.finetune())?;
                (probe, examples.iter().skip(1).step_by(2).collect())
            }
        };
        if held_out.is_empty() {
            return Err(Error::invalid("validation set is empty"));
        }
        let mut scores = Vec::with_capacity(held_out.len());
        for e in &held_out {
            scores.push(classifier.predict_proba(&e.input.features(&embedder)?));
        }
        let labels: Vec<bool> = held_out.iter().map(|e| e.label).collect();
        let metrics = metrics_from_scores(&scores, &labels);
        let groups: Vec<&str> = held_out.iter().map(|e| e.group.as_str()).collect();
        let distinct: HashSet<&str> = groups.iter().copied().collect();
        let fairness = if distinct.len() >= 2 {
            let preds: Vec<bool> = scores.iter().map(|s| *s >= 0.5).collect();
            Some(compute_fairness(&preds, &labels, &groups)?)
        } else {
            None
        };
        let passed = run
            .gate
            .passes(metrics.accuracy, metrics.auc, fairness.as_ref().map(|f| f.dpd));
        let msg = format!(
            "accuracy {:.4}, auc {:.4}, dpd {}, gate {}",
            metrics.accuracy,
            metrics.auc,
            fairness.as_ref().map_or("n/a".into(), |f| format!("{:.4}", f.dpd)),
            if passed { "passed" } else { "failed" }
        );
        run.validation = Some(ValidationReport {
            metrics,
            fairness,
            passed,
            gate_config_digest: run.gate.digest(),
            evaluated_at: self.clock.now(),
        });
        Ok(Outcome::Done(msg))
    }

    fn register(&self, run: &mut PipelineRun) -> Result<Outcome> {
        let system = Principal::system();
        let digest = run
            .artifact_digest
            .clone()
            .ok_or_else(|| Error::InvalidState("no artifact to register".into()))?;
        let report = run
            .validation
            .clone()
            .ok_or_else(|| Error::InvalidState("no validation report".into()))?;
        let initial = match run.spec.task {
            Task::Pretrain => LifecycleStage::Pretraining,
            Task::Finetune => LifecycleStage::FineTuning,
        };
        let mut v = self.registry.create_version_keyed(
            &system,
            NewVersion {
                model_id: run.spec.model_id.clone(),
                artifact_digest: digest,
                parent_version: run.spec.parent_version.clone(),
                stage: initial,
                usage_policy: None,
            },
            &run.trigger.trigger_id,
        )?;
        run.produced_version = Some(v.version_id.clone());
        if v.stage.is_initial() {
            v = self
                .registry
                .transition_stage(&system, &v.version_id, LifecycleStage::Testing, Some(report.clone()))?;
        }
        if v.stage == LifecycleStage::Testing {
            let to = if report.passed {
                LifecycleStage::Released
            } else {
                LifecycleStage::Rejected
            };
            v = self.registry.transition_stage(&system, &v.version_id, to, None)?;
        }
        run.rejected = v.stage == LifecycleStage::Rejected;
        Ok(Outcome::Done(format!("{} at {}", v.version_id, v.stage)))
    }

    fn deploy(&self, run: &mut PipelineRun) -> Result<Outcome> {
        if run.rejected {
            return Ok(Outcome::Skipped("version rejected by the release gate".into()));
        }
        let Some(route) = run.spec.deploy.clone() else {
            return Ok(Outcome::Skipped("no deploy target".into()));
        };
        let version = run
            .produced_version
            .clone()
            .ok_or_else(|| Error::InvalidState("no version to deploy".into()))?;
        let system = Principal::system();
        let ep = match self.serving.endpoint_by_route(&route) {
            Ok(ep) if ep.bound_version == version => ep,
            Ok(ep) => self.serving.rebind(&system, &ep.endpoint_id, &version)?,
            Err(Error::NotFound(_)) => self.serving.create_endpoint(&system, &version, &route)?,
            Err(e) => return Err(e),
        };
        let msg = format!("{} /{} bound to {}", ep.endpoint_id, ep.route, version);
        run.endpoint_id = Some(ep.endpoint_id);
        Ok(Outcome::Done(msg))
    }
}
