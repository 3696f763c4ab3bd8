//! Linear voltage-to-injection model `v = R p + X q + ṽ`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{DsseError, Result};
use crate::grid::{AreaPartition, FeederModel, Region};
use crate::phase::{omega_pow, Phase, PhaseMatrix, ZERO_PHASE_MATRIX};

/// Bijection between `(node, phase)` slots and state columns. Slots cover
/// the non-slack nodes in canonical order with phases ascending.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct StateIndex {
    slots: Vec<(usize, Phase)>,
    /// `lookup[node][phase]`, `usize::MAX` when absent.
    lookup: Vec<[usize; 3]>,
}

impl StateIndex {
    pub(crate) fn empty() -> Self {
        Self::default()
    }

    pub(crate) fn from_model(model: &FeederModel) -> Self {
        let mut slots = Vec::new();
        let mut lookup = vec![[usize::MAX; 3]; model.num_nodes()];
        for i in 1..model.num_nodes() {
            for ph in model.node(i).phases.iter() {
                lookup[i][ph.index()] = slots.len();
                slots.push((i, ph));
            }
        }
        Self { slots, lookup }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[(usize, Phase)] {
        &self.slots
    }

    pub fn slot(&self, k: usize) -> (usize, Phase) {
        self.slots[k]
    }

    pub fn get(&self, node: usize, phase: Phase) -> Option<usize> {
        self.lookup.get(node).map(|row| row[phase.index()]).filter(|&k| k != usize::MAX)
    }
}

/// State vector `z = (p, q)` over a [`StateIndex`].
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Injections {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl Injections {
    pub fn zeros(n: usize) -> Self {
        Self { p: vec![0.0; n], q: vec![0.0; n] }
    }

    pub fn new(p: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if p.len() != q.len() {
            return Err(DsseError::DimensionMismatch { expected: p.len(), found: q.len() });
        }
        Ok(Self { p, q })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self { p: self.p.iter().map(|x| a * x).collect(), q: self.q.iter().map(|x| a * x).collect() }
    }

    /// Squared Euclidean distance over both halves.
    pub fn dist_sq(&self, other: &Injections) -> f64 {
        let dp: f64 = self.p.iter().zip(&other.p).map(|(a, b)| (a - b) * (a - b)).sum();
        let dq: f64 = self.q.iter().zip(&other.q).map(|(a, b)| (a - b) * (a - b)).sum();
        dp + dq
    }

    /// Stacked `[p; q]` copy.
    pub fn stacked(&self) -> Vec<f64> {
        let mut out = self.p.clone();
        out.extend_from_slice(&self.q);
        out
    }

    pub fn from_stacked(z: &[f64]) -> Self {
        let n = z.len() / 2;
        Self { p: z[..n].to_vec(), q: z[n..].to_vec() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SensitivityMode {
    SinglePhase,
    MultiPhase,
}

#[derive(Clone, Debug)]
pub struct SensitivityModel {
    mode: SensitivityMode,
    r: DMatrix<f64>,
    x: DMatrix<f64>,
    v_tilde: Vec<f64>,
    index: StateIndex,
    /// Cumulative impedance from the slack to each node.
    zpath: Vec<PhaseMatrix>,
    parent: Vec<Option<usize>>,
    depth: Vec<usize>,
}

fn cumulative_paths(model: &FeederModel) -> Vec<PhaseMatrix> {
    let mut zpath = vec![ZERO_PHASE_MATRIX; model.num_nodes()];
    for i in 1..model.num_nodes() {
        let p = model.parent(i).unwrap_or(0);
        let z = &model.line_into(i).expect("non-slack node has a line").impedance;
        let mut acc = zpath[p];
        for a in 0..3 {
            for b in 0..3 {
                acc[a][b] += z[a][b];
            }
        }
        zpath[i] = acc;
    }
    zpath
}

impl SensitivityModel {
    /// `R_ij = 2 Σ r` and `X_ij = 2 Σ x` over the common path of `i` and `j`.
    pub fn build_single_phase(model: &FeederModel) -> Result<Self> {
        if !model.is_single_phase() {
            return Err(DsseError::NotSinglePhase);
        }
        Ok(Self::build(model, SensitivityMode::SinglePhase))
    }

    /// Multi-phase sensitivities: for row `(i, φ)` and column `(j, ψ)`,
    /// `R = 2 Re{Z̄ ω^{φ-ψ}}` and `X = -2 Im{Z̄ ω^{φ-ψ}}` where `Z̄` is the
    /// conjugated common-path impedance.
    pub fn build_multi_phase(model: &FeederModel) -> Result<Self> {
        Ok(Self::build(model, SensitivityMode::MultiPhase))
    }

    /// Single-phase mode when every node carries one phase, multi-phase
    /// otherwise.
    pub fn build_auto(model: &FeederModel) -> Self {
        let mode = if model.is_single_phase() { SensitivityMode::SinglePhase } else { SensitivityMode::MultiPhase };
        Self::build(model, mode)
    }

    fn build(model: &FeederModel, mode: SensitivityMode) -> Self {
        let index = model.state_index().clone();
        let zpath = cumulative_paths(model);
        let parent: Vec<Option<usize>> = (0..model.num_nodes()).map(|i| model.parent(i)).collect();
        let depth: Vec<usize> = (0..model.num_nodes()).map(|i| model.depth(i)).collect();
        let n = index.len();
        let mut r = DMatrix::zeros(n, n);
        let mut x = DMatrix::zeros(n, n);
        for (a, &(i, phi)) in index.slots().iter().enumerate() {
            for (b, &(j, psi)) in index.slots().iter().enumerate().skip(a) {
                let l = model.lca(i, j);
                let (rv, xv) = entry(&zpath[l], phi, psi);
                r[(a, b)] = rv;
                x[(a, b)] = xv;
                if a != b {
                    let (rt, xt) = entry(&zpath[l], psi, phi);
                    r[(b, a)] = rt;
                    x[(b, a)] = xt;
                }
            }
        }
        let v0 = model.slack_voltage() * model.slack_voltage();
        Self { mode, r, x, v_tilde: vec![v0; n], index, zpath, parent, depth }
    }

    pub fn mode(&self) -> SensitivityMode {
        self.mode
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn v_tilde(&self) -> &[f64] {
        &self.v_tilde
    }

    pub fn state_index(&self) -> &StateIndex {
        &self.index
    }

    pub fn dim(&self) -> usize {
        self.index.len()
    }

    fn lca(&self, mut i: usize, mut j: usize) -> usize {
        while self.depth[i] > self.depth[j] {
            i = self.parent[i].unwrap_or(0);
        }
        while self.depth[j] > self.depth[i] {
            j = self.parent[j].unwrap_or(0);
        }
        while i != j {
            i = self.parent[i].unwrap_or(0);
            j = self.parent[j].unwrap_or(0);
        }
        i
    }

    /// Aggregated conjugated common-path impedance `Z̄_ij` (canonical node
    /// indices; the slack is index 0).
    pub fn z_agg(&self, i: usize, j: usize) -> PhaseMatrix {
        let z = &self.zpath[self.lca(i, j)];
        let mut out = ZERO_PHASE_MATRIX;
        for a in 0..3 {
            for b in 0..3 {
                out[a][b] = z[a][b].conj();
            }
        }
        out
    }

    /// `v = R p + X q + ṽ`, squared magnitudes in per-unit.
    pub fn predict_voltage(&self, z: &Injections) -> Result<Vec<f64>> {
        let n = self.dim();
        for len in [z.p.len(), z.q.len()] {
            if len != n {
                return Err(DsseError::DimensionMismatch { expected: n, found: len });
            }
        }
        let mut v = self.v_tilde.clone();
        for (a, va) in v.iter_mut().enumerate() {
            let mut acc = 0.0;
            for b in 0..n {
                acc += self.r[(a, b)] * z.p[b] + self.x[(a, b)] * z.q[b];
            }
            *va += acc;
        }
        Ok(v)
    }

    /// Model voltage at a single slot.
    pub fn predict_slot(&self, a: usize, z: &Injections) -> f64 {
        let mut acc = 0.0;
        for b in 0..self.dim() {
            acc += self.r[(a, b)] * z.p[b] + self.x[(a, b)] * z.q[b];
        }
        self.v_tilde[a] + acc
    }

    /// Area-block-compressed view of the matrices for a partition.
    pub fn compress(&self, partition: &AreaPartition) -> Result<BlockForm> {
        BlockForm::new(self, partition)
    }
}

fn entry(zpath: &PhaseMatrix, phi: Phase, psi: Phase) -> (f64, f64) {
    let zbar = zpath[phi.index()][psi.index()].conj();
    let w = if phi == psi { zbar } else { zbar * omega_pow(phi.index() as i32 - psi.index() as i32) };
    (2.0 * w.re, -2.0 * w.im)
}

/// Sensitivity entry for row phase `phi`, column phase `psi` given an
/// aggregated conjugated impedance `Z̄`.
pub fn entry_from_zbar(zbar: Complex64, phi: Phase, psi: Phase) -> (f64, f64) {
    let w = if phi == psi { zbar } else { zbar * omega_pow(phi.index() as i32 - psi.index() as i32) };
    (2.0 * w.re, -2.0 * w.im)
}

/// One `3 x 3` phase block of `R` and `X` between two nodes.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct PhaseBlock {
    pub r: [[f64; 3]; 3],
    pub x: [[f64; 3]; 3],
}

/// `R`, `X` stored once per area pair plus full rows for the unclustered
/// nodes. Lookups agree exactly with the dense matrices whenever every area
/// is a subtree.
#[derive(Clone, Debug)]
pub struct BlockForm {
    /// `area_pair[h][k]`: block between roots of areas `h` and `k` (`h != k`).
    pub area_pair: Vec<Vec<PhaseBlock>>,
    /// `root_vs_node[k][i]`: rows at the root of area `k`, columns at
    /// canonical node `i` (used for unclustered nodes).
    pub root_vs_node: Vec<Vec<PhaseBlock>>,
    /// `node_vs_root[k][i]`: rows at node `i`, columns at the root of area
    /// `k`. Differs from the transpose of `root_vs_node` in multi-phase
    /// mode, where the phase rotation is not symmetric.
    pub node_vs_root: Vec<Vec<PhaseBlock>>,
    region: Vec<Region>,
    roots: Vec<usize>,
}

impl BlockForm {
    fn new(sm: &SensitivityModel, partition: &AreaPartition) -> Result<Self> {
        if let Some(a) = partition.areas().iter().find(|a| !a.is_subtree) {
            return Err(DsseError::NestedArea { area: a.id, root: a.root_id });
        }
        let roots: Vec<usize> = partition.areas().iter().map(|a| a.root).collect();
        let num_nodes = sm.zpath.len();
        let block = |i: usize, j: usize| {
            let z = sm.z_agg(i, j);
            let mut b = PhaseBlock::default();
            for phi in Phase::ALL {
                for psi in Phase::ALL {
                    let (r, x) = entry_from_zbar(z[phi.index()][psi.index()], phi, psi);
                    b.r[phi.index()][psi.index()] = r;
                    b.x[phi.index()][psi.index()] = x;
                }
            }
            b
        };
        let area_pair = roots.iter().map(|&h| roots.iter().map(|&k| block(h, k)).collect()).collect();
        let root_vs_node = roots.iter().map(|&k| (0..num_nodes).map(|i| block(k, i)).collect()).collect();
        let node_vs_root = roots.iter().map(|&k| (0..num_nodes).map(|i| block(i, k)).collect()).collect();
        let region = (0..num_nodes).map(|i| partition.region(i)).collect();
        Ok(Self { area_pair, root_vs_node, node_vs_root, region, roots })
    }

    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    /// Block between nodes `i` and `j` when they lie in different regions,
    /// `None` when both are in the same area or both unclustered (those
    /// entries are not compressed).
    pub fn lookup(&self, i: usize, j: usize) -> Option<PhaseBlock> {
        match (self.region[i], self.region[j]) {
            (Region::Area(h), Region::Area(k)) if h != k => Some(self.area_pair[h][k]),
            (Region::Area(h), Region::Unclustered) => Some(self.root_vs_node[h][j]),
            (Region::Unclustered, Region::Area(k)) => Some(self.node_vs_root[k][i]),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{partition, LineRecord, NodeId, NodeRecord};
    use crate::phase::PhaseSet;

    fn chain(rs: &[(f64, f64)]) -> FeederModel {
        let a = PhaseSet::single(Phase::A);
        let mut nodes = vec![NodeRecord::slack(NodeId(0), a)];
        let mut lines = Vec::new();
        for (k, &(r, x)) in rs.iter().enumerate() {
            let id = NodeId(k as u32 + 1);
            nodes.push(NodeRecord::load(id, a, -0.01, -0.005));
            lines.push(LineRecord::decoupled(NodeId(k as u32), id, a, r, x));
        }
        FeederModel::new(nodes, lines, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn one_line() {
        let sm = SensitivityModel::build_single_phase(&chain(&[(0.1, 0.05)])).unwrap();
        assert_eq!(sm.r()[(0, 0)], 0.2);
        assert_eq!(sm.x()[(0, 0)], 0.1);
    }

    #[test]
    fn two_line_chain() {
        let sm = SensitivityModel::build_single_phase(&chain(&[(0.1, 0.0), (0.2, 0.0)])).unwrap();
        let expect = [[0.2, 0.2], [0.2, 0.6]];
        for a in 0..2 {
            for b in 0..2 {
                assert!((sm.r()[(a, b)] - expect[a][b]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn predict_two_node() {
        let sm = SensitivityModel::build_single_phase(&chain(&[(0.1, 0.05)])).unwrap();
        let v = sm.predict_voltage(&Injections::new(vec![-0.01], vec![0.0]).unwrap()).unwrap();
        assert!((v[0] - (1.0 - 0.002)).abs() < 1e-15);
        let v0 = sm.predict_voltage(&Injections::zeros(1)).unwrap();
        assert_eq!(v0, vec![1.0]);
        assert!(matches!(sm.predict_voltage(&Injections::zeros(2)), Err(DsseError::DimensionMismatch { .. })));
    }

    #[test]
    fn balanced_single_three_phase_line() {
        let nodes =
            vec![NodeRecord::slack(NodeId(0), PhaseSet::ABC), NodeRecord::load(NodeId(1), PhaseSet::ABC, -0.01, 0.0)];
        let lines = vec![LineRecord::decoupled(NodeId(0), NodeId(1), PhaseSet::ABC, 0.1, 0.05)];
        let m = FeederModel::new(nodes, lines, 1.0, 1.0, 1.0).unwrap();
        assert!(SensitivityModel::build_single_phase(&m).is_err());
        let sm = SensitivityModel::build_multi_phase(&m).unwrap();
        for a in 0..3 {
            assert_eq!(sm.r()[(a, a)], 0.2);
            assert_eq!(sm.x()[(a, a)], 0.1);
        }
        // Off-diagonal phase entries vanish because the line has no mutual
        // impedance; the rotation only matters for coupled lines.
        assert_eq!(sm.r()[(0, 1)], 0.0);
    }

    #[test]
    fn coupled_line_cross_phase_entries() {
        let mut line = LineRecord::decoupled(NodeId(0), NodeId(1), PhaseSet::ABC, 0.1, 0.05);
        let zm = Complex64::new(0.03, 0.02);
        for a in 0..3 {
            for b in 0..3 {
                if a != b {
                    line.impedance[a][b] = zm;
                }
            }
        }
        let nodes =
            vec![NodeRecord::slack(NodeId(0), PhaseSet::ABC), NodeRecord::load(NodeId(1), PhaseSet::ABC, -0.01, 0.0)];
        let m = FeederModel::new(nodes, vec![line], 1.0, 1.0, 1.0).unwrap();
        let sm = SensitivityModel::build_multi_phase(&m).unwrap();
        // a row, b column: φ - ψ = -1.
        let w = zm.conj() * omega_pow(-1);
        assert!((sm.r()[(0, 1)] - 2.0 * w.re).abs() < 1e-15);
        assert!((sm.x()[(0, 1)] + 2.0 * w.im).abs() < 1e-15);
        assert!(sm.r()[(0, 1)] != sm.r()[(1, 0)]);
    }

    #[test]
    fn block_form_matches_dense() {
        let m = chain(&[(0.1, 0.05), (0.2, 0.1), (0.3, 0.1)]);
        let sm = SensitivityModel::build_single_phase(&m).unwrap();
        let part = partition(&m, &[NodeId(2)]).unwrap();
        let bf = sm.compress(&part).unwrap();
        let b = bf.lookup(1, 3).unwrap();
        assert_eq!(b.r[0][0], sm.r()[(0, 2)]);
        assert_eq!(bf.lookup(2, 3), None);
    }
}
