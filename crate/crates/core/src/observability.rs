//! Linearized measurement matrix, rank and observability index.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DsseError, Result};
use crate::generate::{generate_feeder, GeneratorSpec};
use crate::grid::{FeederModel, NodeId, NodeKind};
use crate::measurements::MeasurementSet;

/// Relative singular value cutoff for the rank.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Origin of one row of `H`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    PseudoP(NodeId),
    PseudoQ(NodeId),
    /// Exact zero-injection constraint.
    VirtualP(NodeId),
    VirtualQ(NodeId),
    Voltage(NodeId),
    /// Active flow on the line into the node.
    BranchP(NodeId),
    BranchQ(NodeId),
    SlackP,
    SlackQ,
}

#[derive(Clone, Debug)]
pub struct ObservabilityReport {
    pub h: DMatrix<f64>,
    pub rows: Vec<RowKind>,
    pub rank: usize,
    /// `rank / 2N · 100`.
    pub index_percent: f64,
    pub singular_values: Vec<f64>,
    /// Orthonormal basis of the null space of `H`, one `2N` vector each.
    pub unobservable_basis: Vec<Vec<f64>>,
    /// `B`, `(N+1) x N`: `+1` at the sending node of each line, `-1` at the
    /// receiving node. Line `e` feeds canonical node `e + 1`.
    pub incidence: DMatrix<f64>,
    /// `B` without the slack row.
    pub reduced_incidence: DMatrix<f64>,
}

impl ObservabilityReport {
    pub fn is_fully_observable(&self) -> bool {
        self.unobservable_basis.is_empty()
    }
}

/// Extra measurement types beyond the estimator's `p`, `q`, `v` channels.
#[cfg(feature = "flow-measurements")]
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowRows {
    /// Nodes whose incoming line carries an active flow measurement.
    pub branch_p: Vec<NodeId>,
    pub branch_q: Vec<NodeId>,
    pub slack_p: bool,
    pub slack_q: bool,
}

fn incidence(model: &FeederModel) -> DMatrix<f64> {
    let n = model.num_buses();
    let mut b = DMatrix::zeros(n + 1, n);
    for e in 0..n {
        let to = e + 1;
        let from = model.parent(to).unwrap_or(0);
        b[(from, e)] = 1.0;
        b[(to, e)] = -1.0;
    }
    b
}

/// `B̃^{-1}` by LU. For a tree in canonical order `B̃` is triangular with
/// unit-magnitude entries, so the inverse is exact.
fn reduced_inverse(bt: &DMatrix<f64>) -> DMatrix<f64> {
    bt.clone().lu().try_inverse().expect("reduced incidence of a tree is nonsingular")
}

/// `B̃^{-T} D B̃^{-1}` summed over lines in ascending order, `D` diagonal.
fn path_product(binv: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let n = d.len();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for e in 0..n {
                let w = binv[(e, i)] * binv[(e, j)];
                if w != 0.0 {
                    acc += w * d[e];
                }
            }
            out[(i, j)] = acc;
        }
    }
    out
}

/// Builds `H` for the pseudo-measurement and voltage channels of `ms`.
/// Zero-injection nodes contribute exact virtual `p` and `q` rows.
pub fn build_h(model: &FeederModel, ms: &MeasurementSet) -> Result<ObservabilityReport> {
    build(model, ms, &[])
}

/// [`build_h`] plus branch flow and slack injection rows.
#[cfg(feature = "flow-measurements")]
pub fn build_h_with_flows(model: &FeederModel, ms: &MeasurementSet, flows: &FlowRows) -> Result<ObservabilityReport> {
    let mut extra = Vec::new();
    extra.extend(flows.branch_p.iter().map(|&n| RowKind::BranchP(n)));
    extra.extend(flows.branch_q.iter().map(|&n| RowKind::BranchQ(n)));
    if flows.slack_p {
        extra.push(RowKind::SlackP);
    }
    if flows.slack_q {
        extra.push(RowKind::SlackQ);
    }
    build(model, ms, &extra)
}

fn build(model: &FeederModel, ms: &MeasurementSet, extra: &[RowKind]) -> Result<ObservabilityReport> {
    if !model.is_single_phase() {
        return Err(DsseError::NotSinglePhase);
    }
    let n = model.num_buses();
    if ms.dim() != n {
        return Err(DsseError::DimensionMismatch { expected: n, found: ms.dim() });
    }
    let b = incidence(model);
    let bt = b.rows(1, n).into_owned();
    let binv = reduced_inverse(&bt);
    // Diagonal line resistances and reactances, doubled to match the
    // sensitivity convention.
    let mut r = vec![0.0; n];
    let mut x = vec![0.0; n];
    for (e, line) in model.lines().iter().enumerate() {
        let ph = model.node(e + 1).phases.iter().next().map_or(0, |p| p.index());
        r[e] = 2.0 * line.impedance[ph][ph].re;
        x[e] = 2.0 * line.impedance[ph][ph].im;
    }
    let rr = path_product(&binv, &r);
    let xx = path_product(&binv, &x);

    let mut rows: Vec<RowKind> = Vec::new();
    let mut data: Vec<Vec<f64>> = Vec::new();
    let unit = |k: usize| {
        let mut row = vec![0.0; 2 * n];
        row[k] = 1.0;
        row
    };
    for k in 0..n {
        let node = k + 1;
        let id = model.id(node);
        if model.node(node).kind == NodeKind::ZeroInjection {
            rows.push(RowKind::VirtualP(id));
            data.push(unit(k));
        } else if ms.sigma_p[k].is_some() {
            rows.push(RowKind::PseudoP(id));
            data.push(unit(k));
        }
    }
    for k in 0..n {
        let node = k + 1;
        let id = model.id(node);
        if model.node(node).kind == NodeKind::ZeroInjection {
            rows.push(RowKind::VirtualQ(id));
            data.push(unit(n + k));
        } else if ms.sigma_q[k].is_some() {
            rows.push(RowKind::PseudoQ(id));
            data.push(unit(n + k));
        }
    }
    for m in &ms.meters {
        let mut row = vec![0.0; 2 * n];
        for k in 0..n {
            row[k] = rr[(m.slot, k)];
            row[n + k] = xx[(m.slot, k)];
        }
        rows.push(RowKind::Voltage(model.id(m.slot + 1)));
        data.push(row);
    }
    for &kind in extra {
        let mut row = vec![0.0; 2 * n];
        match kind {
            RowKind::BranchP(id) | RowKind::BranchQ(id) => {
                let node = model.index_of(id)?;
                if node == 0 {
                    return Err(DsseError::UnknownNode(id));
                }
                let off = if matches!(kind, RowKind::BranchP(_)) { 0 } else { n };
                for k in 0..n {
                    row[off + k] = binv[(node - 1, k)];
                }
            }
            RowKind::SlackP => row[..n].iter_mut().for_each(|a| *a = -1.0),
            RowKind::SlackQ => row[n..].iter_mut().for_each(|a| *a = -1.0),
            _ => continue,
        }
        rows.push(kind);
        data.push(row);
    }

    let mut h = DMatrix::zeros(data.len(), 2 * n);
    for (i, row) in data.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            h[(i, j)] = v;
        }
    }
    let (rank, singular_values, unobservable_basis) = rank_and_null_space(&h);
    Ok(ObservabilityReport {
        index_percent: if n == 0 { 100.0 } else { 100.0 * rank as f64 / (2 * n) as f64 },
        h,
        rows,
        rank,
        singular_values,
        unobservable_basis,
        incidence: b,
        reduced_incidence: bt,
    })
}

/// Rank with a relative cutoff, plus an orthonormal null-space basis.
pub fn rank_and_null_space(h: &DMatrix<f64>) -> (usize, Vec<f64>, Vec<Vec<f64>>) {
    let cols = h.ncols();
    if cols == 0 {
        return (0, Vec::new(), Vec::new());
    }
    // Pad to at least `cols` rows so the SVD returns a full right basis.
    let rows = h.nrows().max(cols);
    let mut padded = DMatrix::zeros(rows, cols);
    padded.rows_mut(0, h.nrows()).copy_from(h);
    let svd = SVD::new(padded, false, true);
    let sv: Vec<f64> = svd.singular_values.iter().cloned().collect();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    let tol = RANK_TOLERANCE * top;
    let rank = sv.iter().filter(|&&s| s > tol && s > 0.0).count();
    let vt = svd.v_t.expect("right singular vectors requested");
    let null =
        (0..sv.len()).filter(|&i| !(sv[i] > tol && sv[i] > 0.0)).map(|i| vt.row(i).iter().cloned().collect()).collect();
    let mut singular: Vec<f64> = sv;
    singular.sort_by(|a, b| b.total_cmp(a));
    (rank, singular, null)
}

/// Pseudo-measurements on every load slot, no voltage meters.
pub fn pseudo_only(model: &FeederModel) -> MeasurementSet {
    let z = model.nominal_injections();
    let n = z.len();
    let idx = model.state_index();
    let channel = |k: usize| {
        let (node, _) = idx.slot(k);
        (model.node(node).kind == NodeKind::Load).then_some(1.0)
    };
    MeasurementSet {
        p_hat: z.p,
        q_hat: z.q,
        sigma_p: (0..n).map(channel).collect(),
        sigma_q: (0..n).map(channel).collect(),
        meters: Vec::new(),
        omega: model.slot_bounds(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Theorem1Report {
    pub trials: usize,
    /// Observability index per trial feeder.
    pub indices: Vec<f64>,
    /// `Hz = 0` has only the trivial solution on every trial.
    pub trivial_null_space: bool,
    /// Smallest `‖Hz‖ / ‖z‖` over random probes; positive when observable.
    pub min_gain: f64,
}

impl Theorem1Report {
    pub fn holds(&self) -> bool {
        self.trivial_null_space && self.indices.iter().all(|&i| i == 100.0) && self.min_gain > 0.0
    }
}

/// Checks full observability with pseudo-measurements on every load node
/// on `trials` random single-phase feeders of up to 30 buses.
pub fn verify_theorem1(trials: usize, seed: u64) -> Result<Theorem1Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Theorem1Report { trials, indices: Vec::new(), trivial_null_space: true, min_gain: f64::INFINITY };
    for _ in 0..trials.max(1) {
        let spec = GeneratorSpec {
            size: rng.random_range(2..=30),
            load_fraction: rng.random_range(0.2..=1.0),
            seed: rng.random(),
            ..GeneratorSpec::default()
        };
        let model = generate_feeder(&spec)?;
        let ms = pseudo_only(&model);
        let rep = build_h(&model, &ms)?;
        report.indices.push(rep.index_percent);
        report.trivial_null_space &= rep.unobservable_basis.is_empty();
        for _ in 0..4 {
            let z = DVector::from_fn(rep.h.ncols(), |_, _| rng.random_range(-1.0..1.0));
            let gain = (&rep.h * &z).norm() / z.norm();
            report.min_gain = report.min_gain.min(gain);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::fig2_feeder;
    use crate::grid::{LineRecord, NodeRecord};
    use crate::measurements::VoltageMeter;
    use crate::phase::{Phase, PhaseSet};
    use crate::sensitivity::SensitivityModel;

    fn all_loads(size: usize, seed: u64) -> FeederModel {
        generate_feeder(&GeneratorSpec { size, load_fraction: 1.0, seed, ..GeneratorSpec::default() }).unwrap()
    }

    #[test]
    fn pseudo_on_every_load_is_fully_observable() {
        let m = fig2_feeder(1).unwrap();
        let rep = build_h(&m, &pseudo_only(&m)).unwrap();
        assert_eq!(rep.rank, 2 * m.num_buses());
        assert_eq!(rep.index_percent, 100.0);
        assert!(rep.is_fully_observable());
    }

    #[test]
    fn dropping_one_pseudo_channel_loses_one_direction() {
        let m = all_loads(12, 2);
        let mut ms = pseudo_only(&m);
        ms.sigma_p[4] = None;
        let rep = build_h(&m, &ms).unwrap();
        assert_eq!(rep.rank, 2 * 12 - 1);
        assert_eq!(rep.unobservable_basis.len(), 1);
        let basis = &rep.unobservable_basis[0];
        for (k, &b) in basis.iter().enumerate() {
            let expect = if k == 4 { 1.0 } else { 0.0 };
            assert!((b.abs() - expect).abs() < 1e-12, "{k}: {b}");
        }
    }

    #[test]
    fn single_voltage_row() {
        let a = PhaseSet::single(Phase::A);
        let nodes = vec![NodeRecord::slack(NodeId(0), a), NodeRecord::load(NodeId(1), a, -0.01, -0.005)];
        let lines = vec![LineRecord::decoupled(NodeId(0), NodeId(1), a, 0.1, 0.05)];
        let m = FeederModel::new(nodes, lines, 1.0, 1.0, 1.0).unwrap();
        let mut ms = pseudo_only(&m);
        ms.sigma_p[0] = None;
        ms.sigma_q[0] = None;
        ms.meters = vec![VoltageMeter { slot: 0, v_hat: 1.0, sigma_v: 0.02 }];
        let rep = build_h(&m, &ms).unwrap();
        assert_eq!(rep.rank, 1);
        assert_eq!(rep.index_percent, 50.0);
    }

    #[test]
    fn missing_reactive_channels_halve_the_index() {
        let m = all_loads(15, 3);
        let mut ms = pseudo_only(&m);
        ms.sigma_q.iter_mut().for_each(|s| *s = None);
        let rep = build_h(&m, &ms).unwrap();
        assert_eq!(rep.index_percent, 50.0);
    }

    #[test]
    fn voltage_rows_equal_sensitivities_bitwise() {
        let m = fig2_feeder(4).unwrap();
        let sm = SensitivityModel::build_single_phase(&m).unwrap();
        let mut ms = pseudo_only(&m);
        ms.meters = (0..m.num_buses()).map(|slot| VoltageMeter { slot, v_hat: 1.0, sigma_v: 0.02 }).collect();
        let rep = build_h(&m, &ms).unwrap();
        let n = m.num_buses();
        let first = rep.rows.iter().position(|r| matches!(r, RowKind::Voltage(_))).unwrap();
        for i in 0..n {
            for k in 0..n {
                assert_eq!(rep.h[(first + i, k)], sm.r()[(i, k)]);
                assert_eq!(rep.h[(first + i, n + k)], sm.x()[(i, k)]);
            }
        }
    }

    #[test]
    fn reduced_incidence_is_invertible() {
        let m = all_loads(25, 5);
        let rep = build_h(&m, &pseudo_only(&m)).unwrap();
        let bt = &rep.reduced_incidence;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let e = DVector::from_fn(bt.nrows(), |_, _| rng.random_range(-1.0..1.0));
        let x = bt.clone().lu().solve(&e).unwrap();
        assert!((bt * x - e).amax() < 1e-12);
        // Column sums of B vanish: every line leaves one node and enters another.
        for c in 0..rep.incidence.ncols() {
            assert_eq!(rep.incidence.column(c).sum(), 0.0);
        }
    }

    #[test]
    fn all_zero_injection_feeder_is_observable() {
        let a = PhaseSet::single(Phase::A);
        let nodes = vec![
            NodeRecord::slack(NodeId(0), a),
            NodeRecord::zero_injection(NodeId(1), a),
            NodeRecord::zero_injection(NodeId(2), a),
        ];
        let lines = vec![
            LineRecord::decoupled(NodeId(0), NodeId(1), a, 0.1, 0.05),
            LineRecord::decoupled(NodeId(1), NodeId(2), a, 0.1, 0.05),
        ];
        let m = FeederModel::new(nodes, lines, 1.0, 1.0, 1.0).unwrap();
        let rep = build_h(&m, &pseudo_only(&m)).unwrap();
        assert_eq!(rep.index_percent, 100.0);
    }

    #[test]
    fn theorem1_on_random_feeders() {
        let rep = verify_theorem1(10, 7).unwrap();
        assert!(rep.holds(), "{rep:?}");
    }

    #[cfg(feature = "flow-measurements")]
    #[test]
    fn flow_rows_restore_rank() {
        let m = all_loads(6, 8);
        let mut ms = pseudo_only(&m);
        ms.sigma_p[5] = None;
        let before = build_h(&m, &ms).unwrap().rank;
        let flows = FlowRows { slack_p: true, ..Default::default() };
        let after = build_h_with_flows(&m, &ms, &flows).unwrap().rank;
        assert_eq!(after, before + 1);
    }
}
