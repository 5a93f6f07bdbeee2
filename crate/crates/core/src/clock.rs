//! Time sources for engagements.
//!
//! All timing that ends up in a transcript (event timestamps, tool latency,
//! budget checks) flows through a [`Clock`] so deterministic runs can use a
//! [`ManualClock`] and produce byte-identical transcripts, while live runs
//! use the [`SystemClock`].

use std::cell::Cell;
use std::rc::Rc;
use std::time::Instant;

/// Millisecond time source.
pub trait Clock {
    /// Milliseconds since the start of the run.
    fn now_ms(&self) -> u64;
}

/// Wall-clock time relative to construction.
pub struct SystemClock {
    start: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            start: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }
}

/// Deterministic clock that advances by a fixed tick on every read.
///
/// Each observation moves time forward, so a run with a deterministic
/// control flow stamps the same timestamps every time it is executed.
pub struct ManualClock {
    now: Cell<u64>,
    tick: u64,
}

impl ManualClock {
    /// Clock starting at zero advancing `tick` ms per read.
    pub fn with_tick(tick: u64) -> Self {
        Self {
            now: Cell::new(0),
            tick,
        }
    }

    /// Jump the clock forward without a read.
    pub fn advance(&self, ms: u64) {
        self.now.set(self.now.get() + ms);
    }
}

impl Default for ManualClock {
    fn default() -> Self {
        Self::with_tick(1)
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        let t = self.now.get();
        self.now.set(t + self.tick);
        t
    }
}

/// Shared clock handle used across the engine, toolkit, and recorder.
pub type SharedClock = Rc<dyn Clock>;
