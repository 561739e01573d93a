//! Training specs and release gates.
//!
//! A spec is flat `key = value` text. Blank lines and lines starting with
//! `#` are ignored; unknown or repeated keys are rejected.
//!
//! ```text
//! task = finetune
//! model_id = mdl-000001
//! parent_version = ver-000001
//! dataset = train.tsv
//! validation = holdout.tsv
//! deploy = credit
//! gate.min_accuracy = 0.9
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modelkit::{FinetuneParams, PretrainParams};
use crate::registry::{sha256_hex, validate_digest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Pretrain,
    Finetune,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Pretrain => "pretrain",
            Task::Finetune => "finetune",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Task::Pretrain),
            "finetune" => Ok(Task::Finetune),
            _ => Err(Error::invalid(format!("unknown task {s:?}"))),
        }
    }
}

/// Where training or validation data comes from: a file on the platform
/// host or a blob already in the artifact store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetRef {
    Path(PathBuf),
    Blob(String),
}

impl DatasetRef {
    fn parse(raw: &str, base: Option<&Path>) -> Result<Self> {
        if let Some(digest) = raw.strip_prefix("blob:") {
            validate_digest(digest)?;
            return Ok(DatasetRef::Blob(digest.to_string()));
        }
        if raw.is_empty() {
            return Err(Error::invalid("empty dataset reference"));
        }
        let p = PathBuf::from(raw);
        Ok(DatasetRef::Path(match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p,
        }))
    }
}

impl fmt::Display for DatasetRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetRef::Path(p) => write!(f, "{}", p.display()),
            DatasetRef::Blob(d) => write!(f, "blob:{d}"),
        }
    }
}

/// Per-key overrides of the trainer defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub k: Option<usize>,
    pub window: Option<usize>,
    pub seed: Option<u64>,
    pub learning_rate: Option<f64>,
    pub iterations: Option<usize>,
    pub l2: Option<f64>,
}

impl Hyperparameters {
    pub fn pretrain(&self) -> PretrainParams {
        let d = PretrainParams::default();
        PretrainParams {
            dim: self.k.unwrap_or(d.dim),
            window: self.window.unwrap_or(d.window),
            seed: self.seed.unwrap_or(d.seed),
            ..d
        }
    }

    pub fn finetune(&self) -> FinetuneParams {
        let d = FinetuneParams::default();
        FinetuneParams {
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            iterations: self.iterations.unwrap_or(d.iterations),
            l2: self.l2.unwrap_or(d.l2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub min_accuracy: f64,
    pub min_auc: f64,
    pub max_fairness_dpd: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            min_accuracy: 0.8,
            min_auc: 0.8,
            max_fairness_dpd: 0.1,
        }
    }
}

impl GateConfig {
    /// Thresholds must be finite and non-negative. Values above one are
    /// allowed so that a deliberately unsatisfiable gate can be expressed.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("min_accuracy", self.min_accuracy),
            ("min_auc", self.min_auc),
            ("max_fairness_dpd", self.max_fairness_dpd),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("gate threshold {name} must be a finite value >= 0")));
            }
        }
        Ok(())
    }

    pub fn with(&self, overrides: &GateOverrides) -> GateConfig {
        GateConfig {
            min_accuracy: overrides.min_accuracy.unwrap_or(self.min_accuracy),
            min_auc: overrides.min_auc.unwrap_or(self.min_auc),
            max_fairness_dpd: overrides.max_fairness_dpd.unwrap_or(self.max_fairness_dpd),
        }
    }

    /// SHA-256 of the canonical rendering; stored in every validation report.
    pub fn digest(&self) -> String {
        sha256_hex(
            format!(
                "min_accuracy={:?};min_auc={:?};max_fairness_dpd={:?}",
                self.min_accuracy, self.min_auc, self.max_fairness_dpd
            )
            .as_bytes(),
        )
    }

    /// A missing fairness report (fewer than two groups) does not block.
    pub fn passes(&self, accuracy: f64, auc: f64, dpd: Option<f64>) -> bool {
        accuracy >= self.min_accuracy && auc >= self.min_auc && dpd.is_none_or(|d| d <= self.max_fairness_dpd)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GateOverrides {
    pub min_accuracy: Option<f64>,
    pub min_auc: Option<f64>,
    pub max_fairness_dpd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSpec {
    pub task: Task,
    pub model_id: String,
    #[serde(default)]
    pub parent_version: Option<String>,
    pub dataset: Vec<DatasetRef>,
    #[serde(default)]
    pub validation: Option<DatasetRef>,
    /// Serving route to create or rebind when the version is released.
    #[serde(default)]
    pub deploy: Option<String>,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default)]
    pub gate: GateOverrides,
}

fn number<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("{key}: {value:?} is not a valid number")))
}

impl TrainingSpec {
    /// Parses spec text; relative dataset paths resolve against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut fields: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("spec line {}: expected key = value", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if fields.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::invalid(format!("spec line {}: duplicate key {k}", lineno + 1)));
            }
        }

        let mut take = |k: &str| fields.remove(k).filter(|v| !v.is_empty());
        let task: Task = take("task").ok_or_else(|| Error::invalid("spec is missing task"))?.parse()?;
        let model_id = take("model_id").ok_or_else(|| Error::invalid("spec is missing model_id"))?;
        let parent_version = take("parent_version");
        let dataset = take("dataset")
            .ok_or_else(|| Error::invalid("spec is missing dataset"))?
            .split(',')
            .map(|d| DatasetRef::parse(d.trim(), base))
            .collect::<Result<Vec<_>>>()?;
        let validation = take("validation").map(|v| DatasetRef::parse(&v, base)).transpose()?;
        let deploy = take("deploy");
        let hyperparameters = Hyperparameters {
            k: take("k").map(|v| number("k", &v)).transpose()?,
            window: take("window").map(|v| number("window", &v)).transpose()?,
            seed: take("seed").map(|v| number("seed", &v)).transpose()?,
            learning_rate: take("learning_rate").map(|v| number("learning_rate", &v)).transpose()?,
            iterations: take("iterations").map(|v| number("iterations", &v)).transpose()?,
            l2: take("l2").map(|v| number("l2", &v)).transpose()?,
        };
        let gate = GateOverrides {
            min_accuracy: take("gate.min_accuracy").map(|v| number("gate.min_accuracy", &v)).transpose()?,
            min_auc: take("gate.min_auc").map(|v| number("gate.min_auc", &v)).transpose()?,
            max_fairness_dpd: take("gate.max_fairness_dpd")
                .map(|v| number("gate.max_fairness_dpd", &v))
                .transpose()?,
        };
        if let Some(unknown) = fields.keys().next() {
            return Err(Error::invalid(format!("unknown spec key {unknown}")));
        }
        let spec = TrainingSpec {
            task,
            model_id,
            parent_version,
            dataset,
            validation,
            deploy,
            hyperparameters,
            gate,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::invalid(format!("spec file {} does not exist", path.display()))
            } else {
                Error::Io(e)
            }
        })?;
        Self::parse(&text, path.parent())
    }

    pub fn validate(&self) -> Result<()> {
        if self.task == Task::Finetune && self.parent_version.is_none() {
            return Err(Error::invalid("finetune spec requires parent_version"));
        }
        if self.dataset.is_empty() {
            return Err(Error::invalid("spec needs at least one dataset"));
        }
        if self.validation.is_none() {
            return Err(Error::invalid("spec is missing validation"));
        }
        if let Some(route) = &self.deploy {
            crate::serving::validate_route(route)?;
        }
        GateConfig::default().with(&self.gate).validate()
    }

    /// Canonical `key = value` rendering; parses back to an equal spec.
    pub fn to_text(&self) -> String {
        let mut lines = vec![format!("task = {}", self.task), format!("model_id = {}", self.model_id)];
        if let Some(p) = &self.parent_version {
            lines.push(format!("parent_version = {p}"));
        }
        let ds: Vec<String> = self.dataset.iter().map(ToString::to_string).collect();
        lines.push(format!("dataset = {}", ds.join(",")));
        if let Some(v) = &self.validation {
            lines.push(format!("validation = {v}"));
        }
        if let Some(d) = &self.deploy {
            lines.push(format!("deploy = {d}"));
        }
        let h = &self.hyperparameters;
        let opt = |k: &str, v: Option<String>| v.map(|v| format!("{k} = {v}"));
        lines.extend(
            [
                opt("k", h.k.map(|v| v.to_string())),
                opt("window", h.window.map(|v| v.to_string())),
                opt("seed", h.seed.map(|v| v.to_string())),
                opt("learning_rate", h.learning_rate.map(|v| format!("{v:?}"))),
                opt("iterations", h.iterations.map(|v| v.to_string())),
                opt("l2", h.l2.map(|v| format!("{v:?}"))),
                opt("gate.min_accuracy", self.gate.min_accuracy.map(|v| format!("{v:?}"))),
                opt("gate.min_auc", self.gate.min_auc.map(|v| format!("{v:?}"))),
                opt("gate.max_fairness_dpd", self.gate.max_fairness_dpd.map(|v| format!("{v:?}"))),
            ]
            .into_iter()
            .flatten(),
        );
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }
}
