use std::time::Instant;

use dsse_core::clock::{Clock, NoClock};

/// Monotonic wall clock measured from construction.
#[derive(Debug, Clone, Copy)]
pub struct StdClock {
    origin: Instant,
}

impl StdClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for StdClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for StdClock {
    fn seconds(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }
}

/// A real clock, or one stuck at zero for byte-reproducible outputs.
pub fn pick(timing: bool) -> Box<dyn Clock + Sync> {
    if timing {
        Box::new(StdClock::new())
    } else {
        Box::new(NoClock)
    }
}
