//! Command grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use saturn_core::embedfarm::Metric;
use saturn_core::orchestrator::{RunStatus, TriggerKind};
use saturn_core::registry::{LifecycleStage, Modality};

use crate::config::OutputFormat;

#[derive(Debug, Parser)]
#[command(name = "saturn", version, about = "Operate a Saturn control plane from the shell")]
pub struct Cli {
    /// Server base URL.
    #[arg(long, global = true, env = "SATURN_URL")]
    pub url: Option<String>,
    /// Bearer token.
    #[arg(long, global = true, env = "SATURN_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    /// Output format; `json` prints API bodies unchanged.
    #[arg(long, global = true, value_enum)]
    pub output: Option<OutputFormat>,
    /// Config file; defaults to `<config dir>/saturn/config.toml`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Models and versions.
    #[command(subcommand)]
    Model(ModelCmd),
    /// Embedding collections.
    #[command(subcommand)]
    Emb(EmbCmd),
    /// Training pipeline triggers and runs.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
    /// Drift monitoring.
    #[command(subcommand)]
    Monitor(MonitorCmd),
    /// Preference rankings and reward models.
    #[command(subcommand)]
    Feedback(FeedbackCmd),
    /// Serving endpoints and inference.
    #[command(subcommand)]
    Serve(ServeCmd),
}

#[derive(Debug, Subcommand)]
pub enum ModelCmd {
    /// Register a new model.
    Register {
        #[arg(long)]
        name: String,
        #[arg(long)]
        modality: Modality,
    },
    /// List models visible to the caller.
    List,
    /// Move a version to another lifecycle stage.
    Promote {
        version: String,
        #[arg(long)]
        to: LifecycleStage,
        /// Validation report (JSON) to attach with the transition.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Show a version's ancestry, root first.
    Lineage { version: String },
}

#[derive(Debug, Subcommand)]
pub enum EmbCmd {
    /// Create a collection.
    Create {
        name: String,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        metric: Metric,
    },
    /// Store one vector under a key.
    Put {
        collection: String,
        key: String,
        #[command(flatten)]
        vector: VectorArg,
        #[arg(long = "tag")]
        tags: Vec<String>,
    },
    /// Print the vector stored under a key.
    Get { collection: String, key: String },
    /// Nearest neighbours of a query vector.
    Search {
        collection: String,
        #[command(flatten)]
        vector: VectorArg,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Only entries carrying every listed tag.
        #[arg(long = "tag")]
        tags: Vec<String>,
        #[arg(long, value_enum, default_value_t = SearchModeArg::Exact)]
        mode: SearchModeArg,
    },
    /// Write a collection to a portable file.
    Export {
        collection: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Load a collection from an exported file.
    Import {
        collection: String,
        #[arg(long)]
        file: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct VectorArg {
    /// Comma-separated components, e.g. `0.5,-1,2`.
    #[arg(long, allow_hyphen_values = true)]
    pub vector: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SearchModeArg {
    Exact,
    Ann,
}

#[derive(Debug, Subcommand)]
pub enum PipelineCmd {
    /// Submit a trigger and print the run it maps to.
    Trigger {
        #[arg(long)]
        kind: TriggerKind,
        /// Commit hash for commit triggers.
        #[arg(long = "ref")]
        commit_ref: Option<String>,
        /// Training spec file.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Send the spec text instead of its path.
        #[arg(long)]
        inline: bool,
        /// Trigger id for manual triggers.
        #[arg(long)]
        id: Option<String>,
        /// Drift event for drift triggers.
        #[arg(long)]
        event: Option<String>,
    },
    /// List runs.
    Runs {
        #[arg(long)]
        kind: Option<TriggerKind>,
        #[arg(long)]
        status: Option<RunStatus>,
    },
    /// Show one run with its stages.
    Show { run: String },
}

#[derive(Debug, Subcommand)]
pub enum MonitorCmd {
    /// Freeze the current buffer as the drift reference.
    Freeze {
        endpoint: String,
        /// Replace an existing reference.
        #[arg(long)]
        force: bool,
    },
    /// List drift reports for an endpoint.
    Reports { endpoint: String },
}

#[derive(Debug, Subcommand)]
pub enum FeedbackCmd {
    /// Submit a ranking of candidates for one prompt.
    Rank {
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        labeler: String,
        /// `ID:f1,f2,...`, repeated once per candidate.
        #[arg(long = "candidate", required = true, allow_hyphen_values = true)]
        candidates: Vec<String>,
        /// Candidate indices, best first, e.g. `2,0,1`.
        #[arg(long)]
        order: String,
    },
    /// Fit a reward model on the stored rankings.
    Fit {
        /// Only prompts whose id starts with this prefix.
        #[arg(long, default_value = "")]
        prefix: String,
        #[arg(long)]
        l2: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ServeCmd {
    /// Expose a version under a route.
    Create {
        #[arg(long)]
        version: String,
        #[arg(long)]
        route: String,
    },
    /// Run one inference through a route.
    Infer {
        route: String,
        /// Comma-separated feature values.
        #[arg(long, allow_hyphen_values = true, conflicts_with = "tokens", required_unless_present = "tokens")]
        features: Option<String>,
        /// Whitespace-separated tokens.
        #[arg(long)]
        tokens: Option<String>,
    },
    /// Point an endpoint at another version.
    Rebind {
        endpoint: String,
        #[arg(long)]
        version: String,
    },
}
