//! Pseudo-measurements, voltage meters and time-series scenarios.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{DsseError, Result};
use crate::grid::{FeederModel, InjectionBox, NodeId, NodeKind};
use crate::phase::Phase;
use crate::powerflow::{solve_nonlinear, PowerFlowOptions, PowerFlowSolution};
use crate::sensitivity::Injections;

/// One squared-magnitude voltage reading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoltageMeter {
    /// State slot of the metered `(node, phase)`.
    pub slot: usize,
    pub v_hat: f64,
    pub sigma_v: f64,
}

/// Measurements over a feeder's state index. Slots without a pseudo channel
/// (zero-injection nodes) carry `None` and contribute no objective term.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSet {
    pub p_hat: Vec<f64>,
    pub q_hat: Vec<f64>,
    pub sigma_p: Vec<Option<f64>>,
    pub sigma_q: Vec<Option<f64>>,
    /// Sorted by slot, at most one per slot.
    pub meters: Vec<VoltageMeter>,
    pub omega: Vec<InjectionBox>,
}

impl MeasurementSet {
    pub fn dim(&self) -> usize {
        self.p_hat.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        for len in [self.q_hat.len(), self.sigma_p.len(), self.sigma_q.len(), self.omega.len()] {
            if len != n {
                return Err(DsseError::DimensionMismatch { expected: n, found: len });
            }
        }
        for s in self.sigma_p.iter().chain(&self.sigma_q).flatten() {
            if !(*s > 0.0 && s.is_finite()) {
                return Err(DsseError::InvalidMeasurements(format!("non-positive pseudo sigma {s}")));
            }
        }
        let mut last = None;
        for m in &self.meters {
            if m.slot >= n {
                return Err(DsseError::InvalidMeasurements(format!("meter slot {} out of range", m.slot)));
            }
            if last.is_some_and(|l| l >= m.slot) {
                return Err(DsseError::InvalidMeasurements(format!(
                    "meter slots not strictly increasing at {}",
                    m.slot
                )));
            }
            if !(m.sigma_v > 0.0 && m.sigma_v.is_finite()) {
                return Err(DsseError::InvalidMeasurements(format!("non-positive voltage sigma at slot {}", m.slot)));
            }
            last = Some(m.slot);
        }
        if let Some(k) = self.omega.iter().position(|b| !b.is_valid()) {
            return Err(DsseError::InvalidMeasurements(format!("empty feasible box at slot {k}")));
        }
        Ok(())
    }

    /// Pseudo-measurement vector `ẑ`.
    pub fn z_hat(&self) -> Injections {
        Injections { p: self.p_hat.clone(), q: self.q_hat.clone() }
    }

    /// Projection onto the feasible boxes.
    pub fn project(&self, z: &mut Injections) {
        for (k, b) in self.omega.iter().enumerate() {
            z.p[k] = b.project_p(z.p[k]);
            z.q[k] = b.project_q(z.q[k]);
        }
    }

    /// Pseudo weights `1/σ²`, zero where no channel exists.
    pub fn weights(&self) -> (Vec<f64>, Vec<f64>) {
        let w = |s: &Option<f64>| s.map_or(0.0, |s| 1.0 / (s * s));
        (self.sigma_p.iter().map(w).collect(), self.sigma_q.iter().map(w).collect())
    }

    /// Canonical little-endian byte encoding, used for digests.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut put = |x: f64| out.extend_from_slice(&x.to_le_bytes());
        put(self.dim() as f64);
        for k in 0..self.dim() {
            put(self.p_hat[k]);
            put(self.q_hat[k]);
            put(self.sigma_p[k].unwrap_or(0.0));
            put(self.sigma_q[k].unwrap_or(0.0));
            let b = self.omega[k];
            for x in [b.p_min, b.p_max, b.q_min, b.q_max] {
                put(x);
            }
        }
        put(self.meters.len() as f64);
        for m in &self.meters {
            put(m.slot as f64);
            put(m.v_hat);
            put(m.sigma_v);
        }
        out
    }
}

/// How noise is applied and how channel σ are set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoisePolicy {
    /// Relative σ on voltage magnitude.
    pub sigma_mag: f64,
    /// Relative σ on pseudo-measured injections.
    pub sigma_rel: f64,
    /// When false the readings are exact but σ channels are still set.
    pub apply_noise: bool,
    /// Lower bound on `|p̂|` when forming `σ_p`.
    pub p_floor: f64,
}

impl Default for NoisePolicy {
    fn default() -> Self {
        Self { sigma_mag: 0.01, sigma_rel: 0.5, apply_noise: true, p_floor: 1e-4 }
    }
}

impl NoisePolicy {
    pub fn exact(self) -> Self {
        Self { apply_noise: false, ..self }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma_mag > 0.0 && self.sigma_mag.is_finite()) {
            return Err(DsseError::InvalidNoise("sigma_mag must be positive"));
        }
        if !(self.sigma_rel > 0.0 && self.sigma_rel.is_finite()) {
            return Err(DsseError::InvalidNoise("sigma_rel must be positive"));
        }
        if !(self.p_floor > 0.0) {
            return Err(DsseError::InvalidNoise("p_floor must be positive"));
        }
        Ok(())
    }
}

/// Voltage meter selector.
#[derive(Clone, Debug, PartialEq)]
pub enum MeterPlacement {
    /// Uniformly random fraction of non-slack nodes (all phases of each
    /// chosen node). Any positive fraction yields at least one meter.
    Fraction(f64),
    /// Explicit nodes; `None` meters every phase the node carries.
    Nodes(Vec<(NodeId, Option<Phase>)>),
    /// Explicit state slots.
    Slots(Vec<usize>),
}

impl MeterPlacement {
    /// Resolves to sorted, de-duplicated state slots.
    pub fn resolve(&self, model: &FeederModel, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        let idx = model.state_index();
        let mut slots = Vec::new();
        match self {
            MeterPlacement::Fraction(f) => {
                if !(0.0..=1.0).contains(f) {
                    return Err(DsseError::InvalidMeasurements(format!("meter fraction {f} outside [0, 1]")));
                }
                let mut nodes: Vec<usize> = (1..model.num_nodes()).collect();
                let count = if *f == 0.0 { 0 } else { (libm::round(f * nodes.len() as f64) as usize).max(1) };
                nodes.shuffle(rng);
                for &i in &nodes[..count.min(nodes.len())] {
                    for ph in model.node(i).phases.iter() {
                        slots.extend(idx.get(i, ph));
                    }
                }
            }
            MeterPlacement::Nodes(list) => {
                for &(id, phase) in list {
                    let i = model.index_of(id)?;
                    if i == 0 {
                        return Err(DsseError::InvalidMeasurements(format!("node {id} is the slack")));
                    }
                    match phase {
                        Some(ph) => {
                            slots.push(idx.get(i, ph).ok_or(DsseError::MeterPhaseMissing { node: id, phase: ph })?)
                        }
                        None => slots.extend(model.node(i).phases.iter().filter_map(|ph| idx.get(i, ph))),
                    }
                }
            }
            MeterPlacement::Slots(list) => {
                for &k in list {
                    if k >= idx.len() {
                        return Err(DsseError::InvalidMeasurements(format!("meter slot {k} out of range")));
                    }
                    slots.push(k);
                }
            }
        }
        slots.sort_unstable();
        slots.dedup();
        Ok(slots)
    }
}

const PLACEMENT_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

/// Synthesizes pseudo-measurements for every load slot and voltage readings
/// at the placed meters. Returns the truth power flow alongside.
pub fn synthesize(
    model: &FeederModel,
    truth: &Injections,
    noise: &NoisePolicy,
    placement: &MeterPlacement,
    seed: u64,
) -> Result<(MeasurementSet, PowerFlowSolution)> {
    noise.validate()?;
    let sol = solve_nonlinear(model, truth, &PowerFlowOptions::default())?;
    let meters = placement.resolve(model, &mut stream(seed, PLACEMENT_STREAM))?;
    let ms = synthesize_readings(model, truth, &sol.v, &meters, noise, &mut stream(seed, NOISE_STREAM))?;
    Ok((ms, sol))
}

/// Same as [`synthesize`] with known true squared voltages and resolved
/// meter slots. Noise is drawn from `rng` in slot order: `p`, `q` per load
/// slot, then one draw per meter.
pub fn synthesize_readings(
    model: &FeederModel,
    truth: &Injections,
    v_true: &[f64],
    meter_slots: &[usize],
    noise: &NoisePolicy,
    rng: &mut ChaCha8Rng,
) -> Result<MeasurementSet> {
    noise.validate()?;
    let idx = model.state_index();
    let n = idx.len();
    if truth.p.len() != n || truth.q.len() != n || v_true.len() != n {
        return Err(DsseError::DimensionMismatch { expected: n, found: truth.p.len().min(v_true.len()) });
    }
    let mut normal = || -> f64 {
        if noise.apply_noise {
            rng.sample(StandardNormal)
        } else {
            0.0
        }
    };
    let mut p_hat = vec![0.0; n];
    let mut q_hat = vec![0.0; n];
    let mut sigma_p = vec![None; n];
    let mut sigma_q = vec![None; n];
    for (k, &(node, _)) in idx.slots().iter().enumerate() {
        if model.node(node).kind != NodeKind::Load {
            continue;
        }
        let ep = normal();
        let eq = normal();
        p_hat[k] = truth.p[k] * (1.0 + noise.sigma_rel * ep);
        q_hat[k] = truth.q[k] * (1.0 + noise.sigma_rel * eq);
        sigma_p[k] = Some(noise.sigma_rel * p_hat[k].abs().max(noise.p_floor));
        sigma_q[k] = Some(noise.sigma_rel * q_hat[k].abs().max(noise.p_floor));
    }
    let mut meters = Vec::with_capacity(meter_slots.len());
    for &slot in meter_slots {
        let e = normal();
        let mag = libm::sqrt(v_true[slot]) * (1.0 + noise.sigma_mag * e);
        let v_hat = mag * mag;
        meters.push(VoltageMeter { slot, v_hat, sigma_v: 2.0 * noise.sigma_mag * v_hat });
    }
    let ms = MeasurementSet { p_hat, q_hat, sigma_p, sigma_q, meters, omega: model.slot_bounds() };
    ms.validate()?;
    Ok(ms)
}

/// One tick of a time series.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    /// Seconds since the start of the series.
    pub tick: u64,
    pub truth: Injections,
    /// Optional recorded squared-magnitude meter readings `(slot, v)`.
    pub readings: Option<Vec<(usize, f64)>>,
    /// Optional feasible-box override for this tick.
    pub omega: Option<Vec<InjectionBox>>,
    pub seed: u64,
}

impl Scenario {
    /// Measurements for this tick: recorded readings when present,
    /// otherwise synthesized from the truth at `meter_slots`.
    pub fn measurements(
        &self,
        model: &FeederModel,
        v_true: &[f64],
        meter_slots: &[usize],
        noise: &NoisePolicy,
    ) -> Result<MeasurementSet> {
        let mut rng = stream(self.seed, NOISE_STREAM);
        let mut ms = synthesize_readings(model, &self.truth, v_true, meter_slots, noise, &mut rng)?;
        if let Some(readings) = &self.readings {
            let mut sorted = readings.clone();
            sorted.sort_by_key(|r| r.0);
            ms.meters = sorted
                .iter()
                .map(|&(slot, v_hat)| VoltageMeter { slot, v_hat, sigma_v: 2.0 * noise.sigma_mag * v_hat })
                .collect();
        }
        if let Some(omega) = &self.omega {
            ms.omega = omega.clone();
        }
        ms.validate()?;
        Ok(ms)
    }
}

/// Checks that ticks are strictly increasing.
pub fn check_ticks(scenarios: &[Scenario]) -> Result<()> {
    for w in scenarios.windows(2) {
        if w[1].tick <= w[0].tick {
            return Err(DsseError::NonMonotonicTicks { previous: w[0].tick, next: w[1].tick });
        }
    }
    Ok(())
}

/// Largest change of the true state between consecutive ticks (Euclidean
/// norm over `(p, q)`).
pub fn empirical_delta1(scenarios: &[Scenario]) -> f64 {
    scenarios.windows(2).map(|w| libm::sqrt(w[1].truth.dist_sq(&w[0].truth))).fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiurnalSpec {
    pub ticks: usize,
    /// Hour of day of the first tick.
    pub start_hour: f64,
    /// Seconds between ticks.
    pub step_seconds: u64,
    /// Fraction of load slots with rooftop PV.
    pub pv_fraction: f64,
    /// PV peak as a fraction of the slot's nominal consumption.
    pub pv_peak: f64,
    /// Relative σ of the per-slot AR(1) load fluctuation.
    pub fluctuation: f64,
    pub seed: u64,
}

impl Default for DiurnalSpec {
    fn default() -> Self {
        Self {
            ticks: 3600,
            start_hour: 6.0,
            step_seconds: 1,
            pv_fraction: 0.3,
            pv_peak: 0.6,
            fluctuation: 0.02,
            seed: 0,
        }
    }
}

/// Aggregate load shape in `[0.5, 1.0]`, with morning and evening peaks.
pub fn load_shape(hour: f64) -> f64 {
    let two_pi = 2.0 * core::f64::consts::PI;
    let morning = libm::exp(-0.5 * ((hour - 8.0) / 1.5) * ((hour - 8.0) / 1.5));
    let evening = libm::exp(-0.5 * ((hour - 19.0) / 2.0) * ((hour - 19.0) / 2.0));
    let base = 0.65 + 0.05 * libm::cos(two_pi * (hour - 15.0) / 24.0);
    (base + 0.2 * morning + 0.3 * evening).clamp(0.5, 1.0)
}

/// Clear-sky PV shape in `[0, 1]` between 6 a.m. and 6 p.m.
pub fn pv_shape(hour: f64) -> f64 {
    if (6.0..=18.0).contains(&hour) {
        libm::sin(core::f64::consts::PI * (hour - 6.0) / 12.0).max(0.0)
    } else {
        0.0
    }
}

/// Synthetic load and PV time series around the feeder's nominal
/// injections. True injections are kept inside the nominal boxes.
pub fn diurnal_profile(model: &FeederModel, spec: &DiurnalSpec) -> Vec<Scenario> {
    let nominal = model.nominal_injections();
    let bounds = model.slot_bounds();
    let idx = model.state_index();
    let n = idx.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let has_pv: Vec<bool> = (0..n).map(|k| nominal.p[k] != 0.0 && rng.random_bool(spec.pv_fraction)).collect();
    let mut ar = vec![0.0; n];
    let mut cloud = 0.0;
    let rho: f64 = 0.995;
    let innov = libm::sqrt(1.0 - rho * rho);
    let mut out = Vec::with_capacity(spec.ticks);
    for t in 0..spec.ticks {
        let hour = spec.start_hour + (t as u64 * spec.step_seconds) as f64 / 3600.0;
        let shape = load_shape(hour % 24.0);
        let e: f64 = rng.sample(StandardNormal);
        cloud = rho * cloud + innov * 0.1 * e;
        let sun = (pv_shape(hour % 24.0) * (1.0 + cloud)).clamp(0.0, 1.0);
        let mut truth = Injections::zeros(n);
        for k in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            ar[k] = rho * ar[k] + innov * spec.fluctuation * e;
            let f = shape * (1.0 + ar[k]);
            let mut p = nominal.p[k] * f;
            if has_pv[k] {
                p -= nominal.p[k] * spec.pv_peak * sun;
            }
            truth.p[k] = bounds[k].project_p(p);
            truth.q[k] = bounds[k].project_q(nominal.q[k] * f);
        }
        out.push(Scenario {
            tick: t as u64 * spec.step_seconds,
            truth,
            readings: None,
            omega: None,
            seed: spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(t as u64),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{fig2_feeder, FIG2_METERS};

    fn fig2_meters() -> MeterPlacement {
        MeterPlacement::Nodes(FIG2_METERS.iter().map(|&n| (NodeId(n), None)).collect())
    }

    #[test]
    fn exact_readings_without_noise() {
        let m = fig2_feeder(1).unwrap();
        let truth = m.nominal_injections();
        let noise = NoisePolicy::default().exact();
        let (ms, sol) = synthesize(&m, &truth, &noise, &fig2_meters(), 5).unwrap();
        assert_eq!(ms.p_hat, truth.p);
        assert_eq!(ms.q_hat, truth.q);
        assert_eq!(ms.meters.len(), 3);
        for meter in &ms.meters {
            assert!((meter.v_hat - sol.v[meter.slot]).abs() < 1e-15);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let m = fig2_feeder(1).unwrap();
        let truth = m.nominal_injections();
        let noise = NoisePolicy::default();
        let a = synthesize(&m, &truth, &noise, &MeterPlacement::Fraction(0.1), 9).unwrap().0;
        let b = synthesize(&m, &truth, &noise, &MeterPlacement::Fraction(0.1), 9).unwrap().0;
        assert_eq!(a.canonical_bytes(), b.canonical_bytes());
        let c = synthesize(&m, &truth, &noise, &MeterPlacement::Fraction(0.1), 10).unwrap().0;
        assert_ne!(a.canonical_bytes(), c.canonical_bytes());
    }

    #[test]
    fn zero_injection_slots_have_no_channel() {
        let m = fig2_feeder(1).unwrap();
        let (ms, _) = synthesize(&m, &m.nominal_injections(), &NoisePolicy::default(), &fig2_meters(), 1).unwrap();
        for (k, &(node, _)) in m.state_index().slots().iter().enumerate() {
            let load = m.node(node).kind == NodeKind::Load;
            assert_eq!(ms.sigma_p[k].is_some(), load);
            assert_eq!(ms.sigma_q[k].is_some(), load);
        }
    }

    #[test]
    fn missing_phase_is_rejected() {
        let m = fig2_feeder(1).unwrap();
        let placement = MeterPlacement::Nodes(vec![(NodeId(6), Some(Phase::B))]);
        let err = synthesize(&m, &m.nominal_injections(), &NoisePolicy::default(), &placement, 1).unwrap_err();
        assert_eq!(err, DsseError::MeterPhaseMissing { node: NodeId(6), phase: Phase::B });
    }

    #[test]
    fn ticks_and_delta1() {
        let m = fig2_feeder(1).unwrap();
        let z = m.nominal_injections();
        let s = |tick| Scenario { tick, truth: z.clone(), readings: None, omega: None, seed: 0 };
        assert_eq!(empirical_delta1(&[s(0), s(1)]), 0.0);
        assert_eq!(check_ticks(&[s(5), s(3)]), Err(DsseError::NonMonotonicTicks { previous: 5, next: 3 }));
    }

    #[test]
    fn diurnal_profile_stays_in_boxes() {
        let m = fig2_feeder(2).unwrap();
        let spec = DiurnalSpec { ticks: 200, ..Default::default() };
        let series = diurnal_profile(&m, &spec);
        check_ticks(&series).unwrap();
        let bounds = m.slot_bounds();
        for s in &series {
            for k in 0..bounds.len() {
                assert!(bounds[k].contains(s.truth.p[k], s.truth.q[k]));
            }
        }
        assert!(empirical_delta1(&series) > 0.0);
    }
}
