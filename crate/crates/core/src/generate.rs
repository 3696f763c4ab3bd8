//! Synthetic radial feeders.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DsseError, Result};
use crate::grid::{FeederModel, LineRecord, NodeId, NodeKind, NodeRecord};
use crate::phase::{Phase, PhaseSet, ZERO_PHASE_MATRIX};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PhaseMix {
    SinglePhase,
    /// Three-phase trunk; each node branches off to a single-phase lateral
    /// with probability `lateral_fraction`. Off-diagonal impedances are
    /// `mutual_ratio` times the self impedance.
    ThreePhase {
        lateral_fraction: f64,
        mutual_ratio: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSpec {
    /// Number of non-slack nodes.
    pub size: usize,
    /// Maximum children per node.
    pub branching: usize,
    pub r_range: (f64, f64),
    pub x_range: (f64, f64),
    pub phase_mix: PhaseMix,
    pub load_fraction: f64,
    /// Consumption magnitude range for load nodes (per-unit, per phase).
    pub load_p_range: (f64, f64),
    /// Reactive consumption as a fraction of active consumption.
    pub q_ratio_range: (f64, f64),
    /// Probability that a new node extends the most recent one instead of
    /// attaching to a random earlier node.
    pub chain_bias: f64,
    /// When set, impedances are rescaled so the lowest linear-model voltage
    /// magnitude at nominal load equals this value.
    pub target_min_voltage: Option<f64>,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            size: 36,
            branching: 3,
            r_range: (0.005, 0.015),
            x_range: (0.003, 0.010),
            phase_mix: PhaseMix::SinglePhase,
            load_fraction: 0.7,
            load_p_range: (0.01, 0.04),
            q_ratio_range: (0.3, 0.5),
            chain_bias: 0.6,
            target_min_voltage: Some(0.95),
            seed: 0,
        }
    }
}

fn valid_range(r: (f64, f64)) -> bool {
    r.0 > 0.0 && r.0 <= r.1 && r.1.is_finite()
}

fn draw(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.random_range(r.0..r.1)
    }
}

impl GeneratorSpec {
    fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(DsseError::InvalidGeneratorSpec("size must be at least 1"));
        }
        if self.branching == 0 {
            return Err(DsseError::InvalidGeneratorSpec("branching factor must be at least 1"));
        }
        if !valid_range(self.r_range) || !valid_range(self.x_range) {
            return Err(DsseError::InvalidGeneratorSpec("impedance ranges must be positive and ordered"));
        }
        if !(0.0..=1.0).contains(&self.load_fraction) {
            return Err(DsseError::InvalidGeneratorSpec("load fraction outside [0, 1]"));
        }
        if !valid_range(self.load_p_range) {
            return Err(DsseError::InvalidGeneratorSpec("load range must be positive and ordered"));
        }
        if !(self.q_ratio_range.0 >= 0.0 && self.q_ratio_range.0 <= self.q_ratio_range.1) {
            return Err(DsseError::InvalidGeneratorSpec("reactive ratio range must be nonnegative and ordered"));
        }
        if !(0.0..=1.0).contains(&self.chain_bias) {
            return Err(DsseError::InvalidGeneratorSpec("chain bias outside [0, 1]"));
        }
        if let PhaseMix::ThreePhase { lateral_fraction, mutual_ratio } = self.phase_mix {
            if !(0.0..=1.0).contains(&lateral_fraction) || !(0.0..1.0).contains(&mutual_ratio) {
                return Err(DsseError::InvalidGeneratorSpec("three-phase mix parameters out of range"));
            }
        }
        if let Some(t) = self.target_min_voltage {
            if !(t > 0.5 && t < 1.0) {
                return Err(DsseError::InvalidGeneratorSpec("target voltage must lie in (0.5, 1)"));
            }
        }
        Ok(())
    }
}

/// Builds a feeder with slack id 0 and nodes `1..=size`. Pure in `spec`.
pub fn generate_feeder(spec: &GeneratorSpec) -> Result<FeederModel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.size;

    let mut parent = vec![0usize; n + 1];
    let mut child_count = vec![0usize; n + 1];
    for k in 1..=n {
        let last = k - 1;
        let p = if child_count[last] < spec.branching && rng.random_bool(spec.chain_bias) {
            last
        } else {
            let open: Vec<usize> = (0..k).filter(|&c| child_count[c] < spec.branching).collect();
            open[rng.random_range(0..open.len())]
        };
        parent[k] = p;
        child_count[p] += 1;
    }

    let mut phases = vec![PhaseSet::ABC; n + 1];
    let mut mutual = 0.0;
    match spec.phase_mix {
        PhaseMix::SinglePhase => phases.iter_mut().for_each(|s| *s = PhaseSet::single(Phase::A)),
        PhaseMix::ThreePhase { lateral_fraction, mutual_ratio } => {
            mutual = mutual_ratio;
            for k in 1..=n {
                let ps = phases[parent[k]];
                phases[k] = if ps.len() > 1 && rng.random_bool(lateral_fraction) {
                    let choices: Vec<Phase> = ps.iter().collect();
                    PhaseSet::single(choices[rng.random_range(0..choices.len())])
                } else {
                    ps
                };
            }
        }
    }

    let mut imp = vec![(0.0, 0.0); n + 1];
    for k in 1..=n {
        imp[k] = (draw(&mut rng, spec.r_range), draw(&mut rng, spec.x_range));
    }

    let mut order: Vec<usize> = (1..=n).collect();
    order.shuffle(&mut rng);
    let num_loads = (libm::round(spec.load_fraction * n as f64) as usize).min(n);
    let mut is_load = vec![false; n + 1];
    for &k in &order[..num_loads] {
        is_load[k] = true;
    }
    let mut loads = vec![[(0.0, 0.0); 3]; n + 1];
    for k in 1..=n {
        if is_load[k] {
            for ph in phases[k].iter() {
                let p = draw(&mut rng, spec.load_p_range);
                let ratio = if spec.q_ratio_range.0 == spec.q_ratio_range.1 {
                    spec.q_ratio_range.0
                } else {
                    rng.random_range(spec.q_ratio_range.0..spec.q_ratio_range.1)
                };
                loads[k][ph.index()] = (-p, -p * ratio);
            }
        }
    }

    let scale = match spec.target_min_voltage {
        Some(t) => impedance_scale(&parent, &phases, &imp, &loads, t),
        None => 1.0,
    };

    let mut nodes = vec![NodeRecord::slack(NodeId(0), phases[0])];
    let mut lines = Vec::with_capacity(n);
    for k in 1..=n {
        let id = NodeId(k as u32);
        let mut node = NodeRecord::zero_injection(id, phases[k]);
        if is_load[k] {
            node.kind = NodeKind::Load;
            for ph in phases[k].iter() {
                let (p, q) = loads[k][ph.index()];
                node.nominal[ph.index()] = (p, q);
                node.bounds[ph.index()] = crate::grid::InjectionBox::for_peak_load(p, q);
            }
        }
        nodes.push(node);
        let (r, x) = (imp[k].0 * scale, imp[k].1 * scale);
        lines.push(coupled_line(NodeId(parent[k] as u32), id, phases[k], r, x, mutual));
    }
    FeederModel::new(nodes, lines, 4160.0 / libm::sqrt(3.0), 1.0e6, 1.0)
}

fn coupled_line(from: NodeId, to: NodeId, phases: PhaseSet, r: f64, x: f64, mutual: f64) -> LineRecord {
    let mut impedance = ZERO_PHASE_MATRIX;
    for a in phases.iter() {
        for b in phases.iter() {
            let f = if a == b { 1.0 } else { mutual };
            impedance[a.index()][b.index()] = Complex64::new(r * f, x * f);
        }
    }
    LineRecord { from, to, phases, impedance }
}

/// Factor applied to all impedances so the deepest linearized squared
/// voltage drop hits `1 - target^2`. Uses the per-phase decoupled drop,
/// which is what sets the scale on lightly coupled feeders.
fn impedance_scale(
    parent: &[usize],
    phases: &[PhaseSet],
    imp: &[(f64, f64)],
    loads: &[[(f64, f64); 3]],
    target: f64,
) -> f64 {
    let n = parent.len() - 1;
    // Downstream consumption per node and phase; children have larger ids.
    let mut down = vec![[(0.0, 0.0); 3]; n + 1];
    for k in (1..=n).rev() {
        for a in 0..3 {
            down[k][a].0 += -loads[k][a].0;
            down[k][a].1 += -loads[k][a].1;
            let (p, q) = down[k][a];
            down[parent[k]][a].0 += p;
            down[parent[k]][a].1 += q;
        }
    }
    let mut drop = vec![[0.0; 3]; n + 1];
    let mut worst: f64 = 0.0;
    for k in 1..=n {
        for ph in phases[k].iter() {
            let a = ph.index();
            let (p, q) = down[k][a];
            drop[k][a] = drop[parent[k]][a] + 2.0 * (imp[k].0 * p + imp[k].1 * q);
            worst = worst.max(drop[k][a]);
        }
    }
    if worst <= 0.0 {
        1.0
    } else {
        (1.0 - target * target) / worst
    }
}

/// Edges of the 37-node layout with three subtree areas used throughout the
/// tests. Node 1 is the substation.
pub const FIG2_EDGES: [(u32, u32); 36] = [
    (1, 2),
    (2, 3),
    (3, 5),
    (5, 6),
    (5, 7),
    (7, 8),
    (8, 9),
    (3, 10),
    (2, 4),
    (4, 11),
    (11, 12),
    (12, 13),
    (12, 14),
    (14, 15),
    (11, 16),
    (16, 17),
    (17, 18),
    (17, 19),
    (4, 20),
    (20, 21),
    (21, 22),
    (22, 23),
    (21, 24),
    (24, 25),
    (20, 26),
    (26, 27),
    (4, 28),
    (28, 29),
    (29, 30),
    (30, 31),
    (29, 32),
    (32, 33),
    (33, 34),
    (28, 35),
    (35, 36),
    (36, 37),
];

/// Roots of Areas 1-3; the rest forms the remaining area.
pub const FIG2_ROOTS: [u32; 3] = [3, 11, 20];

/// Voltage meter locations.
pub const FIG2_METERS: [u32; 3] = [6, 12, 34];

const FIG2_JUNCTIONS: [u32; 4] = [2, 4, 28, 29];

/// Single-phase 37-node feeder on the [`FIG2_EDGES`] layout. Junction nodes
/// are zero-injection; impedances and loads are drawn from `seed` and
/// scaled so the lowest voltage is about 0.95 pu.
pub fn fig2_feeder(seed: u64) -> Result<FeederModel> {
    let spec = GeneratorSpec { seed, ..GeneratorSpec::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 37usize;
    let mut parent = vec![0usize; n + 1];
    let mut imp = vec![(0.0, 0.0); n + 1];
    let mut loads = vec![[(0.0, 0.0); 3]; n + 1];
    // Node ids map to positions directly; position 0 is unused, node 1 is the
    // slack and acts as the root for the scale computation.
    for &(f, t) in FIG2_EDGES.iter() {
        parent[t as usize] = f as usize;
        imp[t as usize] = (draw(&mut rng, spec.r_range), draw(&mut rng, spec.x_range));
    }
    for k in 2..=n {
        if !FIG2_JUNCTIONS.contains(&(k as u32)) {
            let p = draw(&mut rng, spec.load_p_range);
            let ratio = rng.random_range(spec.q_ratio_range.0..spec.q_ratio_range.1);
            loads[k][0] = (-p, -p * ratio);
        }
    }
    // Edges are listed parent-first but ids are not topologically sorted,
    // so shift to a sorted frame for the scale pass.
    let order = topo_order(&parent, 1);
    let mut pos = vec![0usize; n + 1];
    for (i, &k) in order.iter().enumerate() {
        pos[k] = i;
    }
    let m = order.len() - 1;
    let mut sp = vec![0usize; m + 1];
    let mut si = vec![(0.0, 0.0); m + 1];
    let mut sl = vec![[(0.0, 0.0); 3]; m + 1];
    for (i, &k) in order.iter().enumerate().skip(1) {
        sp[i] = pos[parent[k]];
        si[i] = imp[k];
        sl[i] = loads[k];
    }
    let scale = impedance_scale(&sp, &vec![PhaseSet::single(Phase::A); m + 1], &si, &sl, 0.95);

    let a = PhaseSet::single(Phase::A);
    let mut nodes = vec![NodeRecord::slack(NodeId(1), a)];
    let mut lines = Vec::new();
    for k in 2..=n {
        let id = NodeId(k as u32);
        nodes.push(if loads[k][0] == (0.0, 0.0) {
            NodeRecord::zero_injection(id, a)
        } else {
            NodeRecord::load(id, a, loads[k][0].0, loads[k][0].1)
        });
        lines.push(coupled_line(NodeId(parent[k] as u32), id, a, imp[k].0 * scale, imp[k].1 * scale, 0.0));
    }
    FeederModel::new(nodes, lines, 4800.0 / libm::sqrt(3.0), 1.0e6, 1.0)
}

fn topo_order(parent: &[usize], root: usize) -> Vec<usize> {
    let n = parent.len();
    let mut children = vec![Vec::new(); n];
    for k in 0..n {
        if k != root && parent[k] != 0 {
            children[parent[k]].push(k);
        }
    }
    let mut order = vec![root];
    let mut head = 0;
    while head < order.len() {
        let u = order[head];
        head += 1;
        order.extend(children[u].iter().copied());
    }
    order
}
