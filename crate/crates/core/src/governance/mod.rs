//! Access control and bias detection / mitigation.

mod acl;
mod fairness;
mod mitigation;

pub use acl::{AccessControl, Action, Decision, Denial, Grant, Principal, Resource, ResourceKind, Role};
pub use fairness::{compute_fairness, compute_fairness_scored, FairnessReport, Ratio};
pub use mitigation::{grid_threshold, min_correct, mitigate_by_threshold, MitigationOutcome, BASELINE_STEP, GRID_STEPS};
