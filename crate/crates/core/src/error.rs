use alloc::string::String;
use alloc::vec::Vec;

use crate::grid::NodeId;
use crate::phase::Phase;

pub type Result<T> = core::result::Result<T, DsseError>;

/// Errors raised by the estimation core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DsseError {
    // Feeder validation.
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("feeder must contain exactly one slack node, found {0}")]
    SlackCount(usize),
    #[error("line {from}->{to} references unknown node {missing}")]
    DanglingLine { from: NodeId, to: NodeId, missing: NodeId },
    #[error("cycle detected: line {from}->{to} closes a loop")]
    CycleDetected { from: NodeId, to: NodeId },
    #[error("orphan nodes not connected to the slack: {0:?}")]
    OrphanNodes(Vec<NodeId>),
    #[error("duplicate line between {0} and {1}")]
    DuplicateLine(NodeId, NodeId),
    #[error("phase set violation at node {node}: {reason}")]
    PhaseViolation { node: NodeId, reason: &'static str },
    #[error("invalid feasible box at node {node}: {reason}")]
    InvalidBounds { node: NodeId, reason: &'static str },
    #[error("invalid impedance on line {from}->{to}: {reason}")]
    InvalidImpedance { from: NodeId, to: NodeId, reason: &'static str },
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),

    // Generation and partitioning.
    #[error("infeasible generator spec: {0}")]
    InvalidGeneratorSpec(&'static str),
    #[error("area root {0} is the slack node")]
    RootIsSlack(NodeId),
    #[error("duplicate area root {0}")]
    DuplicateRoot(NodeId),
    #[error("area {area} (root {root}) contains nested areas and is not a subtree")]
    NestedArea { area: usize, root: NodeId },

    // Sensitivities and power flow.
    #[error("operation requires a single-phase feeder")]
    NotSinglePhase,
    #[error("line into node {node} lacks phase {phase} required downstream")]
    MissingLinePhase { node: NodeId, phase: Phase },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("injection at node {node} exceeds the {limit} pu guard")]
    InjectionOutOfRange { node: NodeId, limit: f64 },
    #[error("power flow did not converge in {iterations} sweeps (last update {update:e})")]
    PowerFlowNotConverged { iterations: usize, update: f64 },
    #[error("voltage collapse at node {node}: |V| = {magnitude}")]
    VoltageCollapse { node: NodeId, magnitude: f64 },
    #[error("singular line impedance into node {0}")]
    SingularImpedance(NodeId),

    // Measurements.
    #[error("meter placement requests phase {phase} at node {node}, which does not carry it")]
    MeterPhaseMissing { node: NodeId, phase: Phase },
    #[error("invalid measurement set: {0}")]
    InvalidMeasurements(String),
    #[error("invalid noise policy: {0}")]
    InvalidNoise(&'static str),
    #[error("ticks must be strictly increasing: {next} follows {previous}")]
    NonMonotonicTicks { previous: u64, next: u64 },

    // Estimation.
    #[error("step size {step} outside the admissible interval (0, {max})")]
    StepSizeOutOfRange { step: f64, max: f64 },
    #[error("objective increased for {0} consecutive iterations")]
    Diverged(usize),
    #[error("power iteration did not converge in {0} iterations")]
    PowerIterationFailed(usize),
    #[error("WLS Hessian is not positive definite on the free coordinates")]
    NotStronglyConvex,
    #[error("normal matrix is singular or ill-conditioned (condition estimate {condition:e})")]
    SingularNormalMatrix { condition: f64 },
    #[error("Gauss-Newton hit the iteration cap of {0}")]
    IterationCap(usize),

    // Multi-area protocol.
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("area {area} did not report for round {round}")]
    MissingAreaReport { area: usize, round: usize },
    #[error("area {area} reports phase {phase} absent at its root")]
    PhaseAbsentAtRoot { area: usize, phase: Phase },
    #[error("protocol did not stop within {0} rounds")]
    MaxRoundsExceeded(usize),
}
