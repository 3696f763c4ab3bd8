//! Wall-clock abstraction so solvers can record timings without `std`.

/// A monotonic clock reporting seconds since an arbitrary origin.
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// Clock that always reads zero. Traces produced with it carry no timing.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoClock;

impl Clock for NoClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}
