//! Gradient-based multi-area weighted-least-squares state estimation for
//! radial distribution feeders.
//!
//! The crate is `no_std` (with `alloc`) and contains only the numerical
//! core: feeder topology and partitioning, the linearized voltage
//! sensitivities, a backward/forward sweep power flow used as ground truth
//! and feedback oracle, measurement synthesis, the centralized projected
//! gradient and Gauss-Newton estimators, the DSO/AMS multi-area protocol,
//! and observability analysis. File formats, timing and the command line
//! live in the `dsse` crate.
//!
//! All quantities are per-unit. Power injections are positive for
//! generation and negative for consumption.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod clock;
pub mod error;
pub mod estimator;
pub mod generate;
pub mod grid;
pub mod measurements;
pub mod multiarea;
pub mod observability;
pub mod phase;
pub mod powerflow;
pub mod sensitivity;

pub use error::{DsseError, Result};
pub use grid::{AreaPartition, FeederModel, InjectionBox, LineRecord, NodeId, NodeKind, NodeRecord};
pub use phase::{Phase, PhaseMatrix, PhaseSet};
pub use sensitivity::{Injections, SensitivityModel, StateIndex};
