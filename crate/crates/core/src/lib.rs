//! Core of the Saturn FMOps control plane.
//!
//! The crate is organised by subsystem:
//!
//! * [`modelkit`]: deterministic toy trainers (PPMI embedder, logistic head).
//! * [`registry`]: content-addressed artifacts, versions, lifecycle, lineage.
//! * [`embedfarm`]: embedding collections with exact and graph-based search.
//! * [`monitor`]: inference logging, PSI / KS drift statistics, drift events.
//! * [`orchestrator`]: trigger-driven train → validate → register → deploy runs.
//! * [`feedback`]: human rankings and pairwise reward-model fitting.
//! * [`governance`]: access control, fairness metrics and mitigation.
//! * [`serving`]: endpoints bound to released versions.
//! * [`platform`]: wiring of all of the above behind one handle.

pub mod clock;
pub mod embedfarm;
pub mod error;
pub mod feedback;
pub mod governance;
pub mod modelkit;
pub mod monitor;
pub mod orchestrator;
pub mod platform;
pub mod registry;
pub mod serving;
pub mod store;

pub use error::{Error, Result};
