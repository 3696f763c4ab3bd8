use alloc::vec::Vec;

use crate::phase::Phase;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// AMS to DSO.
    Uplink,
    /// DSO to AMS.
    Downlink,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    /// Step 1: `Σ ν_j` over the area's meters, one entry per metered phase.
    NuSum(Vec<(Phase, f64)>),
    /// Step 2: `(α_k^out, β_k^out)` per phase at the area root.
    Coupling(Vec<(Phase, f64, f64)>),
    /// Step 5: updated in-area `(p, q)` in slot order.
    StateSlice { p: Vec<f64>, q: Vec<f64> },
    /// Model voltages at the area's meters after the grid simulation.
    VoltageFeedback(Vec<f64>),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::NuSum(_) => "nu_sum",
            Payload::Coupling(_) => "coupling",
            Payload::StateSlice { .. } => "state_slice",
            Payload::VoltageFeedback(_) => "voltage_feedback",
        }
    }

    /// Number of scalars carried.
    pub fn scalars(&self) -> usize {
        match self {
            Payload::NuSum(v) => v.len(),
            Payload::Coupling(v) => 2 * v.len(),
            Payload::StateSlice { p, q } => p.len() + q.len(),
            Payload::VoltageFeedback(v) => v.len(),
        }
    }

    /// Canonical encoding: a phase is one byte, every scalar is an `f64` in
    /// little-endian order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let put = |out: &mut Vec<u8>, x: f64| out.extend_from_slice(&x.to_le_bytes());
        match self {
            Payload::NuSum(v) => {
                for &(ph, s) in v {
                    out.push(ph.index() as u8);
                    put(&mut out, s);
                }
            }
            Payload::Coupling(v) => {
                for &(ph, a, b) in v {
                    out.push(ph.index() as u8);
                    put(&mut out, a);
                    put(&mut out, b);
                }
            }
            Payload::StateSlice { p, q } => {
                for (&a, &b) in p.iter().zip(q) {
                    put(&mut out, a);
                    put(&mut out, b);
                }
            }
            Payload::VoltageFeedback(v) => {
                for &x in v {
                    put(&mut out, x);
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundMessage {
    pub round: usize,
    pub direction: Direction,
    /// One-based area id.
    pub area: usize,
    pub payload: Payload,
}

impl RoundMessage {
    pub fn size(&self) -> usize {
        self.payload.to_bytes().len()
    }
}
