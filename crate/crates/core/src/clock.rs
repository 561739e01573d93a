//! Wall-clock abstraction so that end-to-end scenarios can run on a
//! deterministic timeline.

use std::sync::atomic::{AtomicI64, Ordering};

use chrono::{DateTime, TimeZone, Utc};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that advances by a fixed step on every read.
#[derive(Debug)]
pub struct SteppingClock {
    micros: AtomicI64,
    step_micros: i64,
}

impl SteppingClock {
    pub fn new(start: DateTime<Utc>, step_micros: i64) -> Self {
        Self {
            micros: AtomicI64::new(start.timestamp_micros()),
            step_micros,
        }
    }

    /// 2024-01-01T00:00:00Z, one millisecond per tick.
    pub fn fixed() -> Self {
        Self::new(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(), 1_000)
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> DateTime<Utc> {
        let t = self.micros.fetch_add(self.step_micros, Ordering::SeqCst);
        Utc.timestamp_micros(t).unwrap()
    }
}
