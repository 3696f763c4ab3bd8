//! Hierarchical multi-area implementation of the projected gradient solver.
//!
//! Each area monitoring system (AMS) owns the state, pseudo-measurements
//! and voltage meters of one subtree area. The distribution system operator
//! (DSO) owns the unclustered nodes, the inter-area sensitivities and the
//! grid simulator. A round exchanges three messages per area (aggregated
//! `ν`, coupling terms, state slice) plus the voltage feedback that lets
//! each AMS evaluate its `ν` in the next round. The iterates equal those of
//! [`solve_gradient`](crate::estimator::solve_gradient) up to summation
//! order.

mod messages;
mod transport;

pub use messages::{Direction, Payload, RoundMessage};
pub use transport::{Endpoint, InProcessTransport, Transport};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::clock::{Clock, NoClock};
use crate::error::{DsseError, Result};
use crate::estimator::{objective_at, resolve_step, EstimateState, Feedback, StepSize, TraceRow};
use crate::grid::{AreaPartition, InjectionBox};
use crate::measurements::{MeasurementSet, VoltageMeter};
use crate::phase::{Phase, PhaseSet};
use crate::sensitivity::{BlockForm, Injections, SensitivityModel};

fn violation(msg: &RoundMessage, what: &str) -> DsseError {
    DsseError::ProtocolViolation(format!(
        "{} {} message for area {} in round {}",
        what,
        msg.payload.kind(),
        msg.area,
        msg.round
    ))
}

/// Local view and state of one area monitoring system.
#[derive(Clone, Debug)]
pub struct AmsState {
    id: usize,
    root_phases: PhaseSet,
    slots: Vec<usize>,
    phases: Vec<Phase>,
    meter_slots: Vec<usize>,
    meter_phases: Vec<Phase>,
    v_hat: Vec<f64>,
    sigma_v: Vec<f64>,
    /// In-area sensitivities, `[meter][local slot]`.
    r_in: Vec<Vec<f64>>,
    x_in: Vec<Vec<f64>>,
    p_hat: Vec<f64>,
    q_hat: Vec<f64>,
    sigma_p: Vec<Option<f64>>,
    sigma_q: Vec<Option<f64>>,
    omega: Vec<InjectionBox>,
    z: Injections,
    v_meter: Vec<f64>,
    nu: Vec<f64>,
    out: [(f64, f64); 3],
    round: usize,
}

impl AmsState {
    fn new(id: usize, root_phases: PhaseSet, slots: Vec<usize>, sm: &SensitivityModel, ms: &MeasurementSet) -> Self {
        let index = sm.state_index();
        let local: Vec<VoltageMeter> =
            ms.meters.iter().filter(|m| slots.binary_search(&m.slot).is_ok()).cloned().collect();
        let r_in = local.iter().map(|m| slots.iter().map(|&k| sm.r()[(m.slot, k)]).collect()).collect();
        let x_in = local.iter().map(|m| slots.iter().map(|&k| sm.x()[(m.slot, k)]).collect()).collect();
        let pick = |v: &[f64]| slots.iter().map(|&k| v[k]).collect::<Vec<_>>();
        let mut z = Injections::new(pick(&ms.p_hat), pick(&ms.q_hat)).unwrap_or_else(|_| Injections::zeros(0));
        let omega: Vec<InjectionBox> = slots.iter().map(|&k| ms.omega[k]).collect();
        for (k, b) in omega.iter().enumerate() {
            z.p[k] = b.project_p(z.p[k]);
            z.q[k] = b.project_q(z.q[k]);
        }
        Self {
            id,
            root_phases,
            phases: slots.iter().map(|&k| index.slot(k).1).collect(),
            meter_slots: local.iter().map(|m| m.slot).collect(),
            meter_phases: local.iter().map(|m| index.slot(m.slot).1).collect(),
            v_hat: local.iter().map(|m| m.v_hat).collect(),
            sigma_v: local.iter().map(|m| m.sigma_v).collect(),
            r_in,
            x_in,
            p_hat: pick(&ms.p_hat),
            q_hat: pick(&ms.q_hat),
            sigma_p: slots.iter().map(|&k| ms.sigma_p[k]).collect(),
            sigma_q: slots.iter().map(|&k| ms.sigma_q[k]).collect(),
            omega,
            z,
            v_meter: vec![0.0; local.len()],
            nu: vec![0.0; local.len()],
            out: [(0.0, 0.0); 3],
            slots,
            round: 0,
        }
    }

    /// One-based area id.
    pub fn id(&self) -> usize {
        self.id
    }

    /// Global state slots owned by this area, ascending.
    pub fn slots(&self) -> &[usize] {
        &self.slots
    }

    pub fn z(&self) -> &Injections {
        &self.z
    }

    pub fn num_meters(&self) -> usize {
        self.meter_slots.len()
    }

    fn state_message(&self, round: usize) -> RoundMessage {
        RoundMessage {
            round,
            direction: Direction::Uplink,
            area: self.id,
            payload: Payload::StateSlice { p: self.z.p.clone(), q: self.z.q.clone() },
        }
    }

    /// Step 1: `ν_j` at the local meters, summed per phase.
    fn nu_message(&mut self, round: usize) -> RoundMessage {
        self.round = round;
        let mut sums = [0.0; 3];
        for (j, nu) in self.nu.iter_mut().enumerate() {
            *nu = (self.v_meter[j] - self.v_hat[j]) / (self.sigma_v[j] * self.sigma_v[j]);
            sums[self.meter_phases[j].index()] += *nu;
        }
        let payload = Payload::NuSum(self.root_phases.iter().map(|ph| (ph, sums[ph.index()])).collect());
        RoundMessage { round, direction: Direction::Uplink, area: self.id, payload }
    }

    fn accept(&mut self, msg: &RoundMessage) -> Result<()> {
        if msg.round != self.round || msg.area != self.id || msg.direction != Direction::Downlink {
            return Err(violation(msg, "unexpected"));
        }
        match &msg.payload {
            Payload::Coupling(terms) => {
                self.out = [(0.0, 0.0); 3];
                for &(ph, a, b) in terms {
                    if !self.root_phases.contains(ph) {
                        return Err(DsseError::PhaseAbsentAtRoot { area: self.id, phase: ph });
                    }
                    self.out[ph.index()] = (a, b);
                }
            }
            Payload::VoltageFeedback(v) if v.len() == self.v_meter.len() => self.v_meter.clone_from(v),
            _ => return Err(violation(msg, "malformed")),
        }
        Ok(())
    }

    /// Steps 3 and 4: in-area coupling terms and the projected step.
    fn gradient_step(&mut self, eps: f64) {
        for k in 0..self.slots.len() {
            let mut alpha = 0.0;
            let mut beta = 0.0;
            for (j, nu) in self.nu.iter().enumerate() {
                alpha += self.r_in[j][k] * nu;
                beta += self.x_in[j][k] * nu;
            }
            let (a_out, b_out) = self.out[self.phases[k].index()];
            alpha += a_out;
            beta += b_out;
            let gp = alpha + self.sigma_p[k].map_or(0.0, |s| (self.z.p[k] - self.p_hat[k]) / (s * s));
            let gq = beta + self.sigma_q[k].map_or(0.0, |s| (self.z.q[k] - self.q_hat[k]) / (s * s));
            let b = self.omega[k];
            self.z.p[k] = b.project_p(self.z.p[k] - eps * gp);
            self.z.q[k] = b.project_q(self.z.q[k] - eps * gq);
        }
    }
}

/// Coupling terms for one round.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingTerms {
    /// `α_k^out` (or `β_k^out`) per area, indexed by phase at the root.
    pub area_out: Vec<[f64; 3]>,
    /// Full coupling sum for each unclustered slot, aligned with
    /// [`DsoState::unclustered_slots`].
    pub unclustered: Vec<f64>,
}

/// Where a coupling term is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CouplingTarget {
    /// Root of the area at this zero-based position; only contributions from
    /// outside the area are counted.
    AreaRoot(usize),
    /// An unclustered global slot; all meters contribute.
    Slot(usize),
}

/// The coordinator: unclustered nodes, inter-area sensitivities and the
/// grid simulator.
#[derive(Clone, Debug)]
pub struct DsoState<'a> {
    sm: &'a SensitivityModel,
    feedback: Feedback<'a>,
    blocks: BlockForm,
    area_ids: Vec<usize>,
    area_root_phases: Vec<PhaseSet>,
    area_slots: Vec<Vec<usize>>,
    area_meter_slots: Vec<Vec<usize>>,
    unclustered: Vec<usize>,
    meters: Vec<VoltageMeter>,
    p_hat: Vec<f64>,
    q_hat: Vec<f64>,
    sigma_p: Vec<Option<f64>>,
    sigma_q: Vec<Option<f64>>,
    omega: Vec<InjectionBox>,
    z: Injections,
    v: Vec<f64>,
    nu: Vec<f64>,
    sums: Vec<Option<[f64; 3]>>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    received: Vec<bool>,
}

impl<'a> DsoState<'a> {
    pub fn blocks(&self) -> &BlockForm {
        &self.blocks
    }

    /// Mutable access to the inter-area sensitivities, for fault injection.
    pub fn blocks_mut(&mut self) -> &mut BlockForm {
        &mut self.blocks
    }

    pub fn unclustered_slots(&self) -> &[usize] {
        &self.unclustered
    }

    /// Meters owned directly by the DSO (those at unclustered nodes).
    pub fn meters(&self) -> &[VoltageMeter] {
        &self.meters
    }

    pub fn num_areas(&self) -> usize {
        self.area_ids.len()
    }

    pub fn z(&self) -> &Injections {
        &self.z
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    /// `ν_j` at the unclustered meters for the current voltages.
    pub fn unclustered_nu(&self) -> Vec<f64> {
        self.meters.iter().map(|m| (self.v[m.slot] - m.v_hat) / (m.sigma_v * m.sigma_v)).collect()
    }

    fn coupling(
        &self,
        sums: &[[f64; 3]],
        nu: &[f64],
        target: CouplingTarget,
        psi: Phase,
        reactive: bool,
    ) -> Result<f64> {
        let (node, slot, exclude) = match target {
            CouplingTarget::AreaRoot(a) => {
                let root = self.blocks.roots()[a];
                let slot = self
                    .sm
                    .state_index()
                    .get(root, psi)
                    .ok_or(DsseError::PhaseAbsentAtRoot { area: self.area_ids[a], phase: psi })?;
                (root, slot, Some(a))
            }
            CouplingTarget::Slot(k) => {
                if k >= self.sm.dim() {
                    return Err(DsseError::DimensionMismatch { expected: self.sm.dim(), found: k });
                }
                (self.sm.state_index().slot(k).0, k, None)
            }
        };
        let mut acc = 0.0;
        for (h, s) in sums.iter().enumerate() {
            if exclude == Some(h) {
                continue;
            }
            let b = match exclude {
                Some(a) => self.blocks.area_pair[h][a],
                None => self.blocks.root_vs_node[h][node],
            };
            let m = if reactive { &b.x } else { &b.r };
            for phi in self.area_root_phases[h].iter() {
                acc += m[phi.index()][psi.index()] * s[phi.index()];
            }
        }
        let mat = if reactive { self.sm.x() } else { self.sm.r() };
        for (m, nu) in self.meters.iter().zip(nu) {
            acc += mat[(m.slot, slot)] * nu;
        }
        Ok(acc)
    }

    fn check_sums(&self, sums: &[[f64; 3]], nu: &[f64]) -> Result<()> {
        if sums.len() < self.num_areas() {
            return Err(DsseError::MissingAreaReport { area: self.area_ids[sums.len()], round: 0 });
        }
        if sums.len() > self.num_areas() || nu.len() != self.meters.len() {
            return Err(DsseError::DimensionMismatch { expected: self.meters.len(), found: nu.len() });
        }
        for (a, s) in sums.iter().enumerate() {
            for ph in Phase::ALL {
                if s[ph.index()] != 0.0 && !self.area_root_phases[a].contains(ph) {
                    return Err(DsseError::PhaseAbsentAtRoot { area: self.area_ids[a], phase: ph });
                }
            }
        }
        Ok(())
    }

    fn decompose(&self, sums: &[[f64; 3]], nu: &[f64], reactive: bool) -> Result<CouplingTerms> {
        self.check_sums(sums, nu)?;
        let mut area_out = vec![[0.0; 3]; self.num_areas()];
        for (a, out) in area_out.iter_mut().enumerate() {
            for psi in self.area_root_phases[a].iter() {
                out[psi.index()] = self.coupling(sums, nu, CouplingTarget::AreaRoot(a), psi, reactive)?;
            }
        }
        let unclustered = self
            .unclustered
            .iter()
            .map(|&k| self.coupling(sums, nu, CouplingTarget::Slot(k), self.sm.state_index().slot(k).1, reactive))
            .collect::<Result<_>>()?;
        Ok(CouplingTerms { area_out, unclustered })
    }

    fn accept_nu(&mut self, msg: &RoundMessage, round: usize) -> Result<()> {
        let a = self.area_position(msg)?;
        if msg.round != round || self.sums[a].is_some() {
            return Err(violation(msg, "unexpected"));
        }
        let Payload::NuSum(terms) = &msg.payload else {
            return Err(violation(msg, "unexpected"));
        };
        let mut s = [0.0; 3];
        for &(ph, x) in terms {
            if !self.area_root_phases[a].contains(ph) {
                return Err(DsseError::PhaseAbsentAtRoot { area: msg.area, phase: ph });
            }
            s[ph.index()] = x;
        }
        self.sums[a] = Some(s);
        Ok(())
    }

    fn accept_state(&mut self, msg: &RoundMessage, round: usize) -> Result<()> {
        let a = self.area_position(msg)?;
        if msg.round != round || self.received[a] {
            return Err(violation(msg, "unexpected"));
        }
        match &msg.payload {
            Payload::StateSlice { p, q } if p.len() == self.area_slots[a].len() && q.len() == p.len() => {
                for (j, &k) in self.area_slots[a].iter().enumerate() {
                    self.z.p[k] = p[j];
                    self.z.q[k] = q[j];
                }
                self.received[a] = true;
                Ok(())
            }
            _ => Err(violation(msg, "malformed")),
        }
    }

    fn area_position(&self, msg: &RoundMessage) -> Result<usize> {
        if msg.direction != Direction::Uplink {
            return Err(violation(msg, "misrouted"));
        }
        self.area_ids.iter().position(|&id| id == msg.area).ok_or_else(|| violation(msg, "unknown-area"))
    }

    /// Step 2: coupling terms for every area and for the unclustered slots.
    fn couple(&mut self, round: usize) -> Result<Vec<RoundMessage>> {
        let mut sums = Vec::with_capacity(self.num_areas());
        for (a, s) in self.sums.iter().enumerate() {
            sums.push(s.ok_or(DsseError::MissingAreaReport { area: self.area_ids[a], round })?);
        }
        let nu = core::mem::take(&mut self.nu);
        let alpha = self.decompose(&sums, &nu, false)?;
        let beta = self.decompose(&sums, &nu, true)?;
        self.alpha = alpha.unclustered;
        self.beta = beta.unclustered;
        let msgs = (0..self.num_areas())
            .map(|a| RoundMessage {
                round,
                direction: Direction::Downlink,
                area: self.area_ids[a],
                payload: Payload::Coupling(
                    self.area_root_phases[a]
                        .iter()
                        .map(|ph| (ph, alpha.area_out[a][ph.index()], beta.area_out[a][ph.index()]))
                        .collect(),
                ),
            })
            .collect();
        self.nu = nu;
        Ok(msgs)
    }

    fn gradient_step(&mut self, eps: f64) {
        for (u, &k) in self.unclustered.iter().enumerate() {
            let gp = self.alpha[u] + self.sigma_p[u].map_or(0.0, |s| (self.z.p[k] - self.p_hat[u]) / (s * s));
            let gq = self.beta[u] + self.sigma_q[u].map_or(0.0, |s| (self.z.q[k] - self.q_hat[u]) / (s * s));
            let b = self.omega[u];
            self.z.p[k] = b.project_p(self.z.p[k] - eps * gp);
            self.z.q[k] = b.project_q(self.z.q[k] - eps * gq);
        }
    }

    /// Step 5: grid simulation on the assembled state, then voltage feedback
    /// to every area. Returns `‖v(s+1) - v(s)‖∞`.
    fn simulate(&mut self, round: usize) -> Result<(f64, Vec<RoundMessage>)> {
        if let Some(a) = self.received.iter().position(|r| !r) {
            return Err(DsseError::MissingAreaReport { area: self.area_ids[a], round });
        }
        let v = self.feedback.voltages(self.sm, &self.z)?;
        let dv = v.iter().zip(&self.v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        self.v = v;
        let msgs = (0..self.num_areas())
            .map(|a| RoundMessage {
                round,
                direction: Direction::Downlink,
                area: self.area_ids[a],
                payload: Payload::VoltageFeedback(self.area_meter_slots[a].iter().map(|&k| self.v[k]).collect()),
            })
            .collect();
        Ok((dv, msgs))
    }

    fn reset_round(&mut self) {
        self.sums.iter_mut().for_each(|s| *s = None);
        self.received.iter_mut().for_each(|r| *r = false);
    }
}

/// `α` coupling terms from per-area `ν` sums (indexed by phase) and the
/// DSO's own meter `ν` values.
pub fn decompose_alpha(dso: &DsoState<'_>, sums: &[[f64; 3]], unclustered_nu: &[f64]) -> Result<CouplingTerms> {
    dso.decompose(sums, unclustered_nu, false)
}

/// `β` counterpart of [`decompose_alpha`].
pub fn decompose_beta(dso: &DsoState<'_>, sums: &[[f64; 3]], unclustered_nu: &[f64]) -> Result<CouplingTerms> {
    dso.decompose(sums, unclustered_nu, true)
}

/// A single coupling scalar at `target` on phase `psi`: the `p` sensitivity
/// sum, or the `q` one when `reactive`.
pub fn decompose_multiphase(
    dso: &DsoState<'_>,
    sums: &[[f64; 3]],
    unclustered_nu: &[f64],
    target: CouplingTarget,
    psi: Phase,
    reactive: bool,
) -> Result<f64> {
    dso.check_sums(sums, unclustered_nu)?;
    dso.coupling(sums, unclustered_nu, target, psi, reactive)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundStats {
    pub round: usize,
    pub dz_norm: f64,
    pub dv_inf: f64,
}

/// DSO, AMS agents and the transport between them.
pub struct MultiAreaSystem<'a, T: Transport = InProcessTransport> {
    pub dso: DsoState<'a>,
    pub ams: Vec<AmsState>,
    pub transport: T,
    step: f64,
    round: usize,
    /// Global measurements, kept only to report the objective.
    reference: MeasurementSet,
}

impl<'a, T: Transport> MultiAreaSystem<'a, T> {
    /// Distributes the problem over the partition and runs the
    /// initialization exchange (round 0): every AMS projects its
    /// pseudo-measurements, uplinks its slice and receives the voltages at
    /// its meters.
    pub fn new(
        sm: &'a SensitivityModel,
        ms: &MeasurementSet,
        partition: &AreaPartition,
        feedback: Feedback<'a>,
        step: StepSize,
        transport: T,
    ) -> Result<Self> {
        let n = sm.dim();
        if ms.dim() != n {
            return Err(DsseError::DimensionMismatch { expected: n, found: ms.dim() });
        }
        ms.validate()?;
        let blocks = sm.compress(partition)?;
        let step = resolve_step(ms, sm, step)?;
        let index = sm.state_index();
        let mut area_slots = vec![Vec::new(); partition.num_areas()];
        let mut unclustered = Vec::new();
        for (k, &(node, _)) in index.slots().iter().enumerate() {
            match partition.region(node) {
                crate::grid::Region::Area(a) => area_slots[a].push(k),
                crate::grid::Region::Unclustered => unclustered.push(k),
            }
        }
        let root_phases =
            |root: usize| PhaseSet::from_phases(index.slots().iter().filter(|s| s.0 == root).map(|s| s.1));
        let areas = partition.areas();
        let ams: Vec<AmsState> = areas
            .iter()
            .zip(&area_slots)
            .map(|(a, slots)| AmsState::new(a.id, root_phases(a.root), slots.clone(), sm, ms))
            .collect();
        let mut z = Injections::zeros(n);
        let owned = |v: &[f64]| unclustered.iter().map(|&k| v[k]).collect::<Vec<_>>();
        let omega: Vec<InjectionBox> = unclustered.iter().map(|&k| ms.omega[k]).collect();
        for (u, &k) in unclustered.iter().enumerate() {
            z.p[k] = omega[u].project_p(ms.p_hat[k]);
            z.q[k] = omega[u].project_q(ms.q_hat[k]);
        }
        let dso = DsoState {
            sm,
            feedback,
            blocks,
            area_ids: areas.iter().map(|a| a.id).collect(),
            area_root_phases: areas.iter().map(|a| root_phases(a.root)).collect(),
            area_meter_slots: ams.iter().map(|s| s.meter_slots.clone()).collect(),
            area_slots,
            meters: ms.meters.iter().filter(|m| unclustered.binary_search(&m.slot).is_ok()).cloned().collect(),
            p_hat: owned(&ms.p_hat),
            q_hat: owned(&ms.q_hat),
            sigma_p: unclustered.iter().map(|&k| ms.sigma_p[k]).collect(),
            sigma_q: unclustered.iter().map(|&k| ms.sigma_q[k]).collect(),
            omega,
            unclustered,
            z,
            v: vec![0.0; n],
            nu: Vec::new(),
            sums: vec![None; areas.len()],
            alpha: Vec::new(),
            beta: Vec::new(),
            received: vec![false; areas.len()],
        };
        let mut sys = Self { dso, ams, transport, step, round: 0, reference: ms.clone() };
        sys.exchange_state()?;
        Ok(sys)
    }

    pub fn step_size(&self) -> f64 {
        self.step
    }

    /// Number of completed rounds.
    pub fn round(&self) -> usize {
        self.round
    }

    /// Step 5 and the voltage feedback, shared by initialization and rounds.
    fn exchange_state(&mut self) -> Result<f64> {
        let s = self.round;
        for a in &self.ams {
            self.transport.send(a.state_message(s));
        }
        for msg in self.transport.deliver(Endpoint::Dso) {
            self.dso.accept_state(&msg, s)?;
        }
        let (dv, msgs) = self.dso.simulate(s)?;
        for m in msgs {
            self.transport.send(m);
        }
        for a in &mut self.ams {
            a.round = s;
            for msg in self.transport.deliver(Endpoint::Ams(a.id)) {
                a.accept(&msg)?;
            }
        }
        self.dso.reset_round();
        Ok(dv)
    }

    /// Global `(z, v)` as assembled at the DSO.
    pub fn assembled(&self) -> (&Injections, &[f64]) {
        (&self.dso.z, &self.dso.v)
    }

    pub fn objective(&self) -> f64 {
        objective_at(&self.reference, &self.dso.z, &self.dso.v)
    }
}

/// One synchronous round of the protocol.
pub fn run_round<T: Transport>(sys: &mut MultiAreaSystem<'_, T>) -> Result<RoundStats> {
    let s = sys.round + 1;
    // Step 1.
    for a in &mut sys.ams {
        let msg = a.nu_message(s);
        sys.transport.send(msg);
    }
    sys.dso.nu = sys.dso.unclustered_nu();
    for msg in sys.transport.deliver(Endpoint::Dso) {
        sys.dso.accept_nu(&msg, s)?;
    }
    // Step 2.
    for msg in sys.dso.couple(s)? {
        sys.transport.send(msg);
    }
    // Steps 3 and 4.
    for a in &mut sys.ams {
        let msgs = sys.transport.deliver(Endpoint::Ams(a.id));
        if msgs.len() != 1 {
            return Err(DsseError::ProtocolViolation(format!(
                "area {} received {} coupling messages in round {}",
                a.id,
                msgs.len(),
                s
            )));
        }
        a.accept(&msgs[0])?;
        a.gradient_step(sys.step);
    }
    let before = sys.dso.z.clone();
    sys.dso.gradient_step(sys.step);
    // Step 5.
    sys.round = s;
    let dv_inf = sys.exchange_state()?;
    // The DSO copy of the in-area slices is refreshed only in step 5, so
    // `before` is the full previous iterate.
    let dz_norm = libm::sqrt(sys.dso.z.dist_sq(&before));
    Ok(RoundStats { round: s, dz_norm, dv_inf })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProtocolOptions {
    /// Stop once `‖v(s+1) - v(s)‖∞ < delta`.
    pub delta: f64,
    pub max_rounds: usize,
    /// Report [`DsseError::MaxRoundsExceeded`] instead of returning an
    /// unconverged state.
    pub fail_on_cap: bool,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self { delta: 1e-6, max_rounds: 500, fail_on_cap: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolOutcome {
    pub state: EstimateState,
    pub rounds: usize,
    pub messages: usize,
    pub bytes: usize,
}

pub fn run_protocol<T: Transport>(sys: &mut MultiAreaSystem<'_, T>, opts: &ProtocolOptions) -> Result<ProtocolOutcome> {
    run_protocol_timed(sys, opts, &NoClock)
}

/// Repeats [`run_round`] until the voltage change falls below `delta`.
pub fn run_protocol_timed<T: Transport>(
    sys: &mut MultiAreaSystem<'_, T>,
    opts: &ProtocolOptions,
    clock: &dyn Clock,
) -> Result<ProtocolOutcome> {
    let start = clock.seconds();
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_rounds.max(1) {
        let st = run_round(sys)?;
        trace.push(TraceRow {
            iteration: st.round,
            objective: sys.objective(),
            dz_norm: st.dz_norm,
            dv_inf: st.dv_inf,
            time: clock.seconds() - start,
        });
        if st.dv_inf < opts.delta {
            converged = true;
            break;
        }
    }
    if !converged && opts.fail_on_cap {
        return Err(DsseError::MaxRoundsExceeded(opts.max_rounds));
    }
    let (z, v) = sys.assembled();
    Ok(ProtocolOutcome {
        state: EstimateState {
            z: z.clone(),
            v: v.to_vec(),
            iterations: sys.round(),
            objective: sys.objective(),
            step_size: sys.step_size(),
            converged,
            trace,
        },
        rounds: sys.round(),
        messages: sys.transport.messages_sent(),
        bytes: sys.transport.bytes_sent(),
    })
}
