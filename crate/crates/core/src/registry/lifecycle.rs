use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Lifecycle stage of a model version.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LifecycleStage {
    #[serde(rename = "S1_PRETRAINING")]
    Pretraining,
    #[serde(rename = "S2_FINE_TUNING")]
    FineTuning,
    #[serde(rename = "S3_TESTING")]
    Testing,
    #[serde(rename = "S4_RELEASED")]
    Released,
    #[serde(rename = "S5_MONITORED")]
    Monitored,
    #[serde(rename = "REJECTED")]
    Rejected,
    #[serde(rename = "DEPRECATED")]
    Deprecated,
}

use LifecycleStage::*;

impl LifecycleStage {
    pub const ALL: [LifecycleStage; 7] = [
        Pretraining,
        FineTuning,
        Testing,
        Released,
        Monitored,
        Rejected,
        Deprecated,
    ];

    /// The legal transition relation.
    pub fn can_transition_to(self, to: LifecycleStage) -> bool {
        matches!(
            (self, to),
            (Pretraining, FineTuning)
                | (Pretraining, Testing)
                | (FineTuning, Testing)
                | (Testing, Released)
                | (Testing, Rejected)
                | (Released, Monitored)
                | (Released, Deprecated)
                | (Monitored, Deprecated)
        )
    }

    pub fn is_initial(self) -> bool {
        matches!(self, Pretraining | FineTuning)
    }

    pub fn is_released(self) -> bool {
        matches!(self, Released | Monitored)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Pretraining => "S1_PRETRAINING",
            FineTuning => "S2_FINE_TUNING",
            Testing => "S3_TESTING",
            Released => "S4_RELEASED",
            Monitored => "S5_MONITORED",
            Rejected => "REJECTED",
            Deprecated => "DEPRECATED",
        }
    }
}

impl fmt::Display for LifecycleStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LifecycleStage {
    type Err = Error;

    /// Accepts the canonical names and the short forms `S1`..`S5`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.trim().to_ascii_uppercase();
        let stage = match up.as_str() {
            "S1" | "S1_PRETRAINING" => Pretraining,
            "S2" | "S2_FINE_TUNING" => FineTuning,
            "S3" | "S3_TESTING" => Testing,
            "S4" | "S4_RELEASED" => Released,
            "S5" | "S5_MONITORED" => Monitored,
            "REJECTED" => Rejected,
            "DEPRECATED" => Deprecated,
            _ => return Err(Error::invalid(format!("unknown lifecycle stage {s:?}"))),
        };
        Ok(stage)
    }
}
