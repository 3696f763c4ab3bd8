//! Radial multi-phase feeder model, topology queries and subtree partitions.
//!
//! Nodes are stored in a canonical topological order: the slack is index 0
//! and every other node appears after its parent (breadth-first from the
//! slack, siblings by ascending id). All per-node and per-slot orderings in
//! the crate follow this canonical order, so sums taken "in node order" are
//! reproducible across the centralized and distributed code paths.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_complex::Complex64;

use crate::error::{DsseError, Result};
use crate::phase::{Phase, PhaseMatrix, PhaseSet};
use crate::sensitivity::StateIndex;

/// External node identifier as it appears in feeder documents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Slack,
    ZeroInjection,
    Load,
}

/// Box of reasonable injections `[p_min, p_max] x [q_min, q_max]` for one
/// node phase, in per-unit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InjectionBox {
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
}

impl InjectionBox {
    /// The singleton `{(0, 0)}` used for zero-injection nodes.
    pub const ZERO: InjectionBox = InjectionBox { p_min: 0.0, p_max: 0.0, q_min: 0.0, q_max: 0.0 };

    pub fn new(p_min: f64, p_max: f64, q_min: f64, q_max: f64) -> Self {
        Self { p_min, p_max, q_min, q_max }
    }

    /// Default box for a load with nominal (peak) injection `(p, q)`:
    /// `p ∈ [-2|p|, 0]`, `q ∈ [-2|q|, 2|q|]`.
    pub fn for_peak_load(p: f64, q: f64) -> Self {
        let p = p.abs();
        let q = q.abs();
        Self { p_min: -2.0 * p, p_max: 0.0, q_min: -2.0 * q, q_max: 2.0 * q }
    }

    pub fn is_valid(&self) -> bool {
        self.p_min <= self.p_max && self.q_min <= self.q_max
    }

    pub fn is_singleton(&self) -> bool {
        self.p_min == self.p_max && self.q_min == self.q_max
    }

    pub fn p_fixed(&self) -> bool {
        self.p_min == self.p_max
    }

    pub fn q_fixed(&self) -> bool {
        self.q_min == self.q_max
    }

    pub fn contains(&self, p: f64, q: f64) -> bool {
        (self.p_min..=self.p_max).contains(&p) && (self.q_min..=self.q_max).contains(&q)
    }

    pub fn project_p(&self, p: f64) -> f64 {
        p.clamp(self.p_min, self.p_max)
    }

    pub fn project_q(&self, q: f64) -> f64 {
        q.clamp(self.q_min, self.q_max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeRecord {
    pub id: NodeId,
    pub phases: PhaseSet,
    pub kind: NodeKind,
    /// Feasible box per phase, indexed by phase numeral.
    pub bounds: [InjectionBox; 3],
    /// Nominal (peak) injection per phase `(p, q)`; zero when unknown.
    pub nominal: [(f64, f64); 3],
}

impl NodeRecord {
    pub fn slack(id: NodeId, phases: PhaseSet) -> Self {
        Self { id, phases, kind: NodeKind::Slack, bounds: [InjectionBox::ZERO; 3], nominal: [(0.0, 0.0); 3] }
    }

    pub fn zero_injection(id: NodeId, phases: PhaseSet) -> Self {
        Self { id, phases, kind: NodeKind::ZeroInjection, bounds: [InjectionBox::ZERO; 3], nominal: [(0.0, 0.0); 3] }
    }

    /// Load node with the given nominal injection on every phase and the
    /// default feasible box derived from it.
    pub fn load(id: NodeId, phases: PhaseSet, p: f64, q: f64) -> Self {
        let mut node = Self::zero_injection(id, phases);
        node.kind = NodeKind::Load;
        for ph in phases.iter() {
            node.nominal[ph.index()] = (p, q);
            node.bounds[ph.index()] = InjectionBox::for_peak_load(p, q);
        }
        node
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineRecord {
    pub from: NodeId,
    pub to: NodeId,
    pub phases: PhaseSet,
    /// Series impedance in per-unit over the line's phases.
    pub impedance: PhaseMatrix,
}

impl LineRecord {
    /// Line with the same self impedance on every phase and no coupling.
    pub fn decoupled(from: NodeId, to: NodeId, phases: PhaseSet, r: f64, x: f64) -> Self {
        let mut impedance = crate::phase::ZERO_PHASE_MATRIX;
        for ph in phases.iter() {
            impedance[ph.index()][ph.index()] = Complex64::new(r, x);
        }
        Self { from, to, phases, impedance }
    }
}

/// Validated radial feeder in per-unit. Immutable after construction.
#[derive(Clone, Debug)]
pub struct FeederModel {
    nodes: Vec<NodeRecord>,
    /// `lines[i - 1]` feeds node `i`.
    lines: Vec<LineRecord>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    index: BTreeMap<NodeId, usize>,
    base_voltage: f64,
    base_power: f64,
    slack_voltage: f64,
    state_index: StateIndex,
}

const SYMMETRY_TOL: f64 = 1e-12;

impl FeederModel {
    /// Validates and builds a feeder. Line orientation in `lines` is not
    /// trusted; every line is re-oriented away from the slack.
    pub fn new(
        nodes: Vec<NodeRecord>,
        lines: Vec<LineRecord>,
        base_voltage: f64,
        base_power: f64,
        slack_voltage: f64,
    ) -> Result<Self> {
        let mut by_id: BTreeMap<NodeId, usize> = BTreeMap::new();
        for (k, n) in nodes.iter().enumerate() {
            if by_id.insert(n.id, k).is_some() {
                return Err(DsseError::DuplicateNode(n.id));
            }
        }
        let slacks: Vec<usize> = (0..nodes.len()).filter(|&k| nodes[k].kind == NodeKind::Slack).collect();
        if slacks.len() != 1 {
            return Err(DsseError::SlackCount(slacks.len()));
        }
        let slack = slacks[0];

        // Undirected adjacency over input positions.
        let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nodes.len()];
        let mut seen_pairs = BTreeSet::new();
        for (e, line) in lines.iter().enumerate() {
            let a = *by_id.get(&line.from).ok_or(DsseError::DanglingLine {
                from: line.from,
                to: line.to,
                missing: line.from,
            })?;
            let b = *by_id.get(&line.to).ok_or(DsseError::DanglingLine {
                from: line.from,
                to: line.to,
                missing: line.to,
            })?;
            if a == b {
                return Err(DsseError::CycleDetected { from: line.from, to: line.to });
            }
            let key = (line.from.min(line.to), line.from.max(line.to));
            if !seen_pairs.insert(key) {
                return Err(DsseError::DuplicateLine(key.0, key.1));
            }
            adjacency[a].push((b, e));
            adjacency[b].push((a, e));
        }
        for adj in adjacency.iter_mut() {
            adj.sort_by_key(|&(n, _)| nodes[n].id);
        }

        // Breadth-first orientation from the slack.
        let mut order = Vec::with_capacity(nodes.len());
        let mut parent_of: Vec<Option<(usize, usize)>> = vec![None; nodes.len()];
        let mut visited = vec![false; nodes.len()];
        let mut used_line = vec![false; lines.len()];
        let mut queue = VecDeque::from([slack]);
        visited[slack] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(w, e) in &adjacency[u] {
                if used_line[e] {
                    continue;
                }
                used_line[e] = true;
                if visited[w] {
                    return Err(DsseError::CycleDetected { from: lines[e].from, to: lines[e].to });
                }
                visited[w] = true;
                parent_of[w] = Some((u, e));
                queue.push_back(w);
            }
        }
        if order.len() != nodes.len() {
            let orphans = (0..nodes.len()).filter(|&k| !visited[k]).map(|k| nodes[k].id).collect();
            return Err(DsseError::OrphanNodes(orphans));
        }

        let mut canonical = vec![0usize; nodes.len()];
        for (c, &k) in order.iter().enumerate() {
            canonical[k] = c;
        }
        let mut parent = vec![None; nodes.len()];
        let mut depth = vec![0usize; nodes.len()];
        let mut children = vec![Vec::new(); nodes.len()];
        let mut ordered_lines = Vec::with_capacity(nodes.len().saturating_sub(1));
        for (c, &k) in order.iter().enumerate().skip(1) {
            let (pk, e) = parent_of[k].expect("non-slack node has a parent after BFS");
            let pc = canonical[pk];
            parent[c] = Some(pc);
            depth[c] = depth[pc] + 1;
            children[pc].push(c);
            let mut line = lines[e].clone();
            line.from = nodes[pk].id;
            line.to = nodes[k].id;
            ordered_lines.push(line);
        }
        let ordered_nodes: Vec<NodeRecord> = order.iter().map(|&k| nodes[k].clone()).collect();
        let index = ordered_nodes.iter().enumerate().map(|(c, n)| (n.id, c)).collect();

        let model = FeederModel {
            state_index: StateIndex::empty(),
            nodes: ordered_nodes,
            lines: ordered_lines,
            parent,
            children,
            depth,
            index,
            base_voltage,
            base_power,
            slack_voltage,
        };
        model.check_records()?;
        let state_index = StateIndex::from_model(&model);
        Ok(FeederModel { state_index, ..model })
    }

    fn check_records(&self) -> Result<()> {
        let slack_phases = self.nodes[0].phases;
        for (i, node) in self.nodes.iter().enumerate() {
            if node.phases.is_empty() {
                return Err(DsseError::PhaseViolation { node: node.id, reason: "empty phase set" });
            }
            if !node.phases.is_subset(slack_phases) {
                return Err(DsseError::PhaseViolation { node: node.id, reason: "phases not carried by the slack" });
            }
            if let Some(p) = self.parent[i] {
                if !node.phases.is_subset(self.nodes[p].phases) {
                    return Err(DsseError::PhaseViolation {
                        node: node.id,
                        reason: "phases not carried by the parent",
                    });
                }
            }
            for ph in node.phases.iter() {
                let b = &node.bounds[ph.index()];
                if !b.is_valid() {
                    return Err(DsseError::InvalidBounds { node: node.id, reason: "lower bound above upper bound" });
                }
                if node.kind == NodeKind::ZeroInjection && *b != InjectionBox::ZERO {
                    return Err(DsseError::InvalidBounds {
                        node: node.id,
                        reason: "zero-injection node must have the singleton box {(0,0)}",
                    });
                }
            }
        }
        for (k, line) in self.lines.iter().enumerate() {
            let node = &self.nodes[k + 1];
            if !node.phases.is_subset(line.phases) {
                let phase = node.phases.iter().find(|&ph| !line.phases.contains(ph)).unwrap_or(Phase::A);
                return Err(DsseError::MissingLinePhase { node: node.id, phase });
            }
            for a in Phase::ALL {
                for b in Phase::ALL {
                    let z = line.impedance[a.index()][b.index()];
                    let carried = line.phases.contains(a) && line.phases.contains(b);
                    if !z.re.is_finite() || !z.im.is_finite() {
                        return Err(DsseError::InvalidImpedance {
                            from: line.from,
                            to: line.to,
                            reason: "non-finite entry",
                        });
                    }
                    if !carried && z != Complex64::new(0.0, 0.0) {
                        return Err(DsseError::InvalidImpedance {
                            from: line.from,
                            to: line.to,
                            reason: "entry for a phase the line does not carry",
                        });
                    }
                    let zt = line.impedance[b.index()][a.index()];
                    let scale = z.norm().max(zt.norm()).max(1.0);
                    if (z - zt).norm() > SYMMETRY_TOL * scale {
                        return Err(DsseError::InvalidImpedance {
                            from: line.from,
                            to: line.to,
                            reason: "matrix not symmetric",
                        });
                    }
                }
                if line.phases.contains(a) && line.impedance[a.index()][a.index()].re < 0.0 {
                    return Err(DsseError::InvalidImpedance {
                        from: line.from,
                        to: line.to,
                        reason: "negative self resistance",
                    });
                }
            }
        }
        Ok(())
    }

    /// Number of nodes including the slack (N + 1).
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Number of non-slack nodes (N).
    pub fn num_buses(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &NodeRecord {
        &self.nodes[i]
    }

    /// Lines in canonical order; `lines()[i - 1]` feeds node `i`.
    pub fn lines(&self) -> &[LineRecord] {
        &self.lines
    }

    pub fn line_into(&self, i: usize) -> Option<&LineRecord> {
        i.checked_sub(1).map(|k| &self.lines[k])
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn depth(&self, i: usize) -> usize {
        self.depth[i]
    }

    pub fn id(&self, i: usize) -> NodeId {
        self.nodes[i].id
    }

    pub fn index_of(&self, id: NodeId) -> Result<usize> {
        self.index.get(&id).copied().ok_or(DsseError::UnknownNode(id))
    }

    pub fn slack_id(&self) -> NodeId {
        self.nodes[0].id
    }

    pub fn slack_phases(&self) -> PhaseSet {
        self.nodes[0].phases
    }

    pub fn base_voltage(&self) -> f64 {
        self.base_voltage
    }

    pub fn base_power(&self) -> f64 {
        self.base_power
    }

    /// Slack voltage magnitude in per-unit.
    pub fn slack_voltage(&self) -> f64 {
        self.slack_voltage
    }

    pub fn state_index(&self) -> &StateIndex {
        &self.state_index
    }

    /// True when every node carries exactly one phase.
    pub fn is_single_phase(&self) -> bool {
        self.nodes.iter().all(|n| n.phases.len() == 1)
    }

    /// Lowest common ancestor of two canonical node indices.
    pub fn lca(&self, mut i: usize, mut j: usize) -> usize {
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

    /// Lines from the slack to node `i`, identified by their downstream
    /// node, ordered from the slack outward.
    pub fn path_to(&self, i: usize) -> Vec<usize> {
        let mut path = Vec::with_capacity(self.depth[i]);
        let mut n = i;
        while let Some(p) = self.parent[n] {
            path.push(n);
            n = p;
        }
        path.reverse();
        path
    }

    /// `E_i ∩ E_j` as canonical downstream-node indices, slack outward.
    pub fn common_path_indices(&self, i: usize, j: usize) -> Vec<usize> {
        self.path_to(self.lca(i, j))
    }

    /// The lines shared by the slack-to-`i` and slack-to-`j` paths, as
    /// `(from, to)` pairs ordered from the slack outward. Empty when the
    /// two nodes hang off different slack branches.
    pub fn common_path(&self, i: NodeId, j: NodeId) -> Result<Vec<(NodeId, NodeId)>> {
        let a = self.index_of(i)?;
        let b = self.index_of(j)?;
        Ok(self
            .common_path_indices(a, b)
            .into_iter()
            .map(|n| (self.id(self.parent[n].unwrap_or(0)), self.id(n)))
            .collect())
    }

    /// Whether `ancestor` lies on the path from the slack to `node`
    /// (inclusive).
    pub fn is_ancestor(&self, ancestor: usize, mut node: usize) -> bool {
        loop {
            if node == ancestor {
                return true;
            }
            match self.parent[node] {
                Some(p) => node = p,
                None => return false,
            }
        }
    }

    /// The sub-feeder of nodes carrying `phase`, with single-phase lines
    /// holding that phase's self impedance only.
    pub fn restrict_to_phase(&self, phase: Phase) -> Result<FeederModel> {
        let single = PhaseSet::single(phase);
        let p = phase.index();
        let mut nodes = Vec::new();
        let mut lines = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.phases.contains(phase) {
                continue;
            }
            let mut n = node.clone();
            n.phases = single;
            for k in 0..3 {
                if k != p {
                    n.bounds[k] = InjectionBox::ZERO;
                    n.nominal[k] = (0.0, 0.0);
                }
            }
            nodes.push(n);
            if let Some(line) = self.line_into(i) {
                let mut impedance = crate::phase::ZERO_PHASE_MATRIX;
                impedance[p][p] = line.impedance[p][p];
                lines.push(LineRecord { from: line.from, to: line.to, phases: single, impedance });
            }
        }
        FeederModel::new(nodes, lines, self.base_voltage, self.base_power, self.slack_voltage)
    }

    /// Nominal injections of every node phase over the state index.
    pub fn nominal_injections(&self) -> crate::sensitivity::Injections {
        let idx = &self.state_index;
        let mut z = crate::sensitivity::Injections::zeros(idx.len());
        for (k, &(node, phase)) in idx.slots().iter().enumerate() {
            let (p, q) = self.nodes[node].nominal[phase.index()];
            z.p[k] = p;
            z.q[k] = q;
        }
        z
    }

    /// Feasible boxes over the state index.
    pub fn slot_bounds(&self) -> Vec<InjectionBox> {
        self.state_index.slots().iter().map(|&(node, phase)| self.nodes[node].bounds[phase.index()]).collect()
    }
}

/// Where a node ended up in an [`AreaPartition`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Unclustered,
    /// Zero-based position in [`AreaPartition::areas`].
    Area(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Area {
    /// One-based area identifier `k`.
    pub id: usize,
    /// Canonical index of the root `n_k^0`.
    pub root: usize,
    pub root_id: NodeId,
    /// Canonical node indices, ascending.
    pub nodes: Vec<usize>,
    /// False when another area is nested inside this one, in which case the
    /// node set is not a subtree.
    pub is_subtree: bool,
}

/// Non-overlapping subtree areas plus the unclustered remainder (which
/// always contains the slack).
#[derive(Clone, Debug, PartialEq)]
pub struct AreaPartition {
    areas: Vec<Area>,
    unclustered: Vec<usize>,
    region: Vec<Region>,
}

impl AreaPartition {
    pub fn areas(&self) -> &[Area] {
        &self.areas
    }

    pub fn unclustered(&self) -> &[usize] {
        &self.unclustered
    }

    pub fn region(&self, node: usize) -> Region {
        self.region[node]
    }

    pub fn num_areas(&self) -> usize {
        self.areas.len()
    }

    /// True when every area is a subtree (no nesting).
    pub fn is_subtree_partition(&self) -> bool {
        self.areas.iter().all(|a| a.is_subtree)
    }
}

/// Splits the feeder into subtree areas rooted at `roots` (in the given
/// order, area ids 1..=K) and an unclustered remainder.
///
/// A root below another root carves its subtree out of the outer area; the
/// outer area is then flagged `is_subtree = false`.
pub fn partition(model: &FeederModel, roots: &[NodeId]) -> Result<AreaPartition> {
    let mut root_area: BTreeMap<usize, usize> = BTreeMap::new();
    for (k, &id) in roots.iter().enumerate() {
        let idx = model.index_of(id)?;
        if idx == 0 {
            return Err(DsseError::RootIsSlack(id));
        }
        if root_area.insert(idx, k).is_some() {
            return Err(DsseError::DuplicateRoot(id));
        }
    }
    let mut region = vec![Region::Unclustered; model.num_nodes()];
    // Parents precede children, so the innermost root wins.
    for i in 1..model.num_nodes() {
        region[i] = match root_area.get(&i) {
            Some(&k) => Region::Area(k),
            None => region[model.parent(i).unwrap_or(0)],
        };
    }
    let mut areas: Vec<Area> = roots
        .iter()
        .enumerate()
        .map(|(k, &id)| Area {
            id: k + 1,
            root: model.index_of(id).unwrap_or(0),
            root_id: id,
            nodes: Vec::new(),
            is_subtree: true,
        })
        .collect();
    let mut unclustered = Vec::new();
    for (i, r) in region.iter().enumerate() {
        match *r {
            Region::Area(k) => areas[k].nodes.push(i),
            Region::Unclustered => unclustered.push(i),
        }
    }
    for &idx in root_area.keys() {
        if let Some(p) = model.parent(idx) {
            if let Region::Area(outer) = region[p] {
                areas[outer].is_subtree = false;
            }
        }
    }
    Ok(AreaPartition { areas, unclustered, region })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(n: u32) -> NodeId {
        NodeId(n)
    }

    fn chain(r: &[(u32, u32)]) -> Result<FeederModel> {
        let a = PhaseSet::single(Phase::A);
        let mut ids: BTreeSet<u32> = BTreeSet::new();
        for &(f, t) in r {
            ids.insert(f);
            ids.insert(t);
        }
        let nodes = ids
            .iter()
            .map(|&n| if n == 0 { NodeRecord::slack(id(0), a) } else { NodeRecord::load(id(n), a, -0.01, -0.005) })
            .collect();
        let lines = r.iter().map(|&(f, t)| LineRecord::decoupled(id(f), id(t), a, 0.1, 0.05)).collect();
        FeederModel::new(nodes, lines, 1.0, 1.0, 1.0)
    }

    #[test]
    fn smallest_feeder() {
        let m = chain(&[(0, 1)]).unwrap();
        assert_eq!(m.num_buses(), 1);
        assert_eq!(m.lines().len(), 1);
    }

    #[test]
    fn cycle_is_rejected() {
        let err = chain(&[(0, 1), (1, 2), (2, 0)]).unwrap_err();
        assert!(matches!(err, DsseError::CycleDetected { .. }), "{err:?}");
    }

    #[test]
    fn orphan_and_duplicate() {
        let a = PhaseSet::single(Phase::A);
        let nodes = vec![
            NodeRecord::slack(id(0), a),
            NodeRecord::zero_injection(id(1), a),
            NodeRecord::zero_injection(id(2), a),
        ];
        let lines = vec![LineRecord::decoupled(id(0), id(1), a, 0.1, 0.1)];
        assert_eq!(
            FeederModel::new(nodes.clone(), lines.clone(), 1.0, 1.0, 1.0).unwrap_err(),
            DsseError::OrphanNodes(vec![id(2)])
        );
        let mut dup = lines.clone();
        dup.push(LineRecord::decoupled(id(1), id(0), a, 0.1, 0.1));
        assert!(matches!(FeederModel::new(nodes, dup, 1.0, 1.0, 1.0), Err(DsseError::DuplicateLine(..))));
    }

    #[test]
    fn phase_violation_child_not_subset() {
        let nodes = vec![
            NodeRecord::slack(id(0), PhaseSet::ABC),
            NodeRecord::zero_injection(id(1), PhaseSet::single(Phase::B)),
            NodeRecord::zero_injection(id(2), PhaseSet::parse("ab").unwrap()),
        ];
        let lines = vec![
            LineRecord::decoupled(id(0), id(1), PhaseSet::single(Phase::B), 0.1, 0.1),
            LineRecord::decoupled(id(1), id(2), PhaseSet::parse("ab").unwrap(), 0.1, 0.1),
        ];
        let err = FeederModel::new(nodes, lines, 1.0, 1.0, 1.0).unwrap_err();
        assert!(matches!(err, DsseError::PhaseViolation { node: NodeId(2), .. }), "{err:?}");
    }

    #[test]
    fn zero_injection_box_must_be_singleton() {
        let a = PhaseSet::single(Phase::A);
        let mut z = NodeRecord::zero_injection(id(1), a);
        z.bounds[0] = InjectionBox::new(-1.0, 0.0, 0.0, 0.0);
        let lines = vec![LineRecord::decoupled(id(0), id(1), a, 0.1, 0.1)];
        let err = FeederModel::new(vec![NodeRecord::slack(id(0), a), z], lines, 1.0, 1.0, 1.0).unwrap_err();
        assert!(matches!(err, DsseError::InvalidBounds { .. }));
    }

    #[test]
    fn reversed_lines_are_reoriented() {
        let m = chain(&[(1, 0), (2, 1)]).unwrap();
        assert_eq!(m.lines()[1].from, id(1));
        assert_eq!(m.lines()[1].to, id(2));
    }

    #[test]
    fn common_path_examples() {
        let m = chain(&[(0, 1), (1, 2)]).unwrap();
        assert_eq!(m.common_path(id(2), id(2)).unwrap(), vec![(id(0), id(1)), (id(1), id(2))]);
        let star = chain(&[(0, 1), (0, 2)]).unwrap();
        assert!(star.common_path(id(1), id(2)).unwrap().is_empty());
        assert_eq!(star.common_path(id(1), id(9)), Err(DsseError::UnknownNode(id(9))));
    }

    #[test]
    fn partition_errors_and_degenerate_case() {
        let m = chain(&[(0, 1), (1, 2), (1, 3)]).unwrap();
        let p = partition(&m, &[]).unwrap();
        assert_eq!(p.num_areas(), 0);
        assert_eq!(p.unclustered().len(), 4);
        assert_eq!(partition(&m, &[id(0)]), Err(DsseError::RootIsSlack(id(0))));
        assert_eq!(partition(&m, &[id(2), id(2)]), Err(DsseError::DuplicateRoot(id(2))));
    }

    #[test]
    fn nested_roots_resolve_innermost_first() {
        let m = chain(&[(0, 1), (1, 2), (2, 3), (1, 4)]).unwrap();
        let p = partition(&m, &[id(1), id(3)]).unwrap();
        let outer: Vec<NodeId> = p.areas()[0].nodes.iter().map(|&i| m.id(i)).collect();
        let inner: Vec<NodeId> = p.areas()[1].nodes.iter().map(|&i| m.id(i)).collect();
        assert_eq!(inner, vec![id(3)]);
        assert!(outer.contains(&id(1)) && outer.contains(&id(2)) && outer.contains(&id(4)));
        assert!(!p.areas()[0].is_subtree);
        assert!(p.areas()[1].is_subtree);
        assert!(!p.is_subtree_partition());
    }
}
