//! Nonlinear radial power flow by backward/forward sweep, plus independent
//! residual validators.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{DsseError, Result};
use crate::grid::FeederModel;
use crate::phase::{slack_phasor, Phase};
use crate::sensitivity::{Injections, SensitivityModel};

pub const INJECTION_GUARD: f64 = 10.0;
pub const COLLAPSE_LIMIT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerFlowOptions {
    /// Stop when the largest phasor update falls below this (per-unit).
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_sweeps: 100 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerFlowSolution {
    /// Phasors per canonical node, indexed by phase numeral; zero on absent
    /// phases.
    pub phasors: Vec<[Complex64; 3]>,
    /// Squared magnitudes over the state index.
    pub v: Vec<f64>,
    /// Branch current into each node, per phase (slack entry unused).
    pub current: Vec<[Complex64; 3]>,
    /// Sending-end power on the line into each node, per phase.
    pub p_flow: Vec<[f64; 3]>,
    pub q_flow: Vec<[f64; 3]>,
    /// Squared branch current magnitudes.
    pub ell: Vec<[f64; 3]>,
    pub sweeps: usize,
    /// Largest phasor change in the last sweep.
    pub update: f64,
}

impl PowerFlowSolution {
    /// Voltage magnitude at a state slot.
    pub fn magnitude(&self, node: usize, phase: Phase) -> f64 {
        self.phasors[node][phase.index()].norm()
    }

    /// Total complex power delivered by the slack, per phase.
    pub fn slack_power(&self, model: &FeederModel) -> [Complex64; 3] {
        let mut s = [Complex64::new(0.0, 0.0); 3];
        for &c in model.children(0) {
            for ph in model.node(c).phases.iter() {
                let k = ph.index();
                s[k] += Complex64::new(self.p_flow[c][k], self.q_flow[c][k]);
            }
        }
        s
    }
}

fn check_injections(model: &FeederModel, z: &Injections) -> Result<()> {
    let n = model.state_index().len();
    for len in [z.p.len(), z.q.len()] {
        if len != n {
            return Err(DsseError::DimensionMismatch { expected: n, found: len });
        }
    }
    for (k, &(node, _)) in model.state_index().slots().iter().enumerate() {
        let s = Complex64::new(z.p[k], z.q[k]);
        if !(s.norm() <= INJECTION_GUARD) {
            return Err(DsseError::InjectionOutOfRange { node: model.id(node), limit: INJECTION_GUARD });
        }
    }
    Ok(())
}

/// Constant-power backward/forward sweep. The slack holds balanced phasors
/// of magnitude `model.slack_voltage()`.
pub fn solve_nonlinear(model: &FeederModel, z: &Injections, opts: &PowerFlowOptions) -> Result<PowerFlowSolution> {
    check_injections(model, z)?;
    let nn = model.num_nodes();
    let idx = model.state_index();
    let zero = Complex64::new(0.0, 0.0);
    let v0 = model.slack_voltage();

    let mut s_inj = vec![[zero; 3]; nn];
    for (k, &(node, ph)) in idx.slots().iter().enumerate() {
        s_inj[node][ph.index()] = Complex64::new(z.p[k], z.q[k]);
    }
    let mut phasors = vec![[zero; 3]; nn];
    for i in 0..nn {
        for ph in model.node(i).phases.iter() {
            phasors[i][ph.index()] = slack_phasor(v0, ph);
        }
    }
    let mut current = vec![[zero; 3]; nn];
    let mut update = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        // Backward: branch current into i = load current drawn at i plus
        // currents feeding the children.
        for i in (1..nn).rev() {
            let mut j = [zero; 3];
            for ph in model.node(i).phases.iter() {
                let k = ph.index();
                j[k] = -(s_inj[i][k] / phasors[i][k]).conj();
            }
            for &c in model.children(i) {
                for k in 0..3 {
                    j[k] += current[c][k];
                }
            }
            current[i] = j;
        }
        // Forward: drop across each line.
        update = 0.0;
        for i in 1..nn {
            let p = model.parent(i).unwrap_or(0);
            let zl = &model.line_into(i).expect("line").impedance;
            for phi in model.node(i).phases.iter() {
                let a = phi.index();
                let mut drop = zero;
                for psi in model.node(i).phases.iter() {
                    drop += zl[a][psi.index()] * current[i][psi.index()];
                }
                let next = phasors[p][a] - drop;
                update = update.max((next - phasors[i][a]).norm());
                phasors[i][a] = next;
            }
        }
        for i in 1..nn {
            for ph in model.node(i).phases.iter() {
                let m = phasors[i][ph.index()].norm();
                if !(m >= COLLAPSE_LIMIT) {
                    return Err(DsseError::VoltageCollapse { node: model.id(i), magnitude: m });
                }
            }
        }
        if update < opts.tolerance {
            break;
        }
    }
    if !(update < opts.tolerance) {
        return Err(DsseError::PowerFlowNotConverged { iterations: sweeps, update });
    }
    // Final backward pass so branch currents match the converged voltages.
    for i in (1..nn).rev() {
        let mut j = [zero; 3];
        for ph in model.node(i).phases.iter() {
            let k = ph.index();
            j[k] = -(s_inj[i][k] / phasors[i][k]).conj();
        }
        for &c in model.children(i) {
            for k in 0..3 {
                j[k] += current[c][k];
            }
        }
        current[i] = j;
    }

    let mut p_flow = vec![[0.0; 3]; nn];
    let mut q_flow = vec![[0.0; 3]; nn];
    let mut ell = vec![[0.0; 3]; nn];
    for i in 1..nn {
        let p = model.parent(i).unwrap_or(0);
        for ph in model.node(i).phases.iter() {
            let k = ph.index();
            let s = phasors[p][k] * current[i][k].conj();
            p_flow[i][k] = s.re;
            q_flow[i][k] = s.im;
            ell[i][k] = current[i][k].norm_sqr();
        }
    }
    let v = idx.slots().iter().map(|&(node, ph)| phasors[node][ph.index()].norm_sqr()).collect();
    Ok(PowerFlowSolution { phasors, v, current, p_flow, q_flow, ell, sweeps, update })
}

/// Linear model voltages; same as [`SensitivityModel::predict_voltage`].
pub fn solve_linear(sm: &SensitivityModel, z: &Injections) -> Result<Vec<f64>> {
    sm.predict_voltage(z)
}

/// Largest residual of the single-phase DistFlow equations (power balance,
/// voltage drop, current definition) evaluated on a solution.
pub fn distflow_residual(model: &FeederModel, z: &Injections, sol: &PowerFlowSolution) -> Result<f64> {
    if !model.is_single_phase() {
        return Err(DsseError::NotSinglePhase);
    }
    let idx = model.state_index();
    let mut worst: f64 = 0.0;
    for j in 1..model.num_nodes() {
        let ph = model.node(j).phases.iter().next().expect("phase");
        let k = ph.index();
        let slot = idx.get(j, ph).expect("slot");
        let i = model.parent(j).unwrap_or(0);
        let zl = model.line_into(j).expect("line").impedance[k][k];
        let (r, x) = (zl.re, zl.im);
        let (pij, qij, l) = (sol.p_flow[j][k], sol.q_flow[j][k], sol.ell[j][k]);
        let (mut pd, mut qd) = (0.0, 0.0);
        for &c in model.children(j) {
            pd += sol.p_flow[c][k];
            qd += sol.q_flow[c][k];
        }
        let vi = sol.phasors[i][k].norm_sqr();
        let vj = sol.phasors[j][k].norm_sqr();
        let res = [
            pij - (-z.p[slot] + pd + r * l),
            qij - (-z.q[slot] + qd + x * l),
            vj - (vi - 2.0 * (r * pij + x * qij) + (r * r + x * x) * l),
            l * vi - (pij * pij + qij * qij),
        ];
        for e in res {
            worst = worst.max(e.abs());
        }
    }
    Ok(worst)
}

fn solve_small(mut a: [[Complex64; 3]; 3], mut b: [Complex64; 3], n: usize) -> Option<[Complex64; 3]> {
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].norm().total_cmp(&a[y][col].norm()))?;
        if a[piv][col].norm() == 0.0 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                let t = a[col][c];
                a[row][c] -= f * t;
            }
            let t = b[col];
            b[row] -= f * t;
        }
    }
    let mut x = [Complex64::new(0.0, 0.0); 3];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for c in row + 1..n {
            acc -= a[row][c] * x[c];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// Largest complex nodal power mismatch `|s_i - V_i conj(I_i)|` where the
/// branch currents are recovered from the phasors through `Z^{-1}` rather
/// than taken from the solver.
pub fn nodal_mismatch(model: &FeederModel, z: &Injections, sol: &PowerFlowSolution) -> Result<f64> {
    let nn = model.num_nodes();
    let zero = Complex64::new(0.0, 0.0);
    let mut branch = vec![[zero; 3]; nn];
    for i in 1..nn {
        let p = model.parent(i).unwrap_or(0);
        let phases: Vec<Phase> = model.node(i).phases.iter().collect();
        let zl = &model.line_into(i).expect("line").impedance;
        let mut a = [[zero; 3]; 3];
        let mut b = [zero; 3];
        for (r, &phi) in phases.iter().enumerate() {
            for (c, &psi) in phases.iter().enumerate() {
                a[r][c] = zl[phi.index()][psi.index()];
            }
            b[r] = sol.phasors[p][phi.index()] - sol.phasors[i][phi.index()];
        }
        let x = solve_small(a, b, phases.len()).ok_or(DsseError::SingularImpedance(model.id(i)))?;
        for (r, &phi) in phases.iter().enumerate() {
            branch[i][phi.index()] = x[r];
        }
    }
    let mut worst: f64 = 0.0;
    for (k, &(node, ph)) in model.state_index().slots().iter().enumerate() {
        let a = ph.index();
        // Current injected into the network at `node`.
        let mut inj = -branch[node][a];
        for &c in model.children(node) {
            inj += branch[c][a];
        }
        let s = sol.phasors[node][a] * inj.conj();
        worst = worst.max((s - Complex64::new(z.p[k], z.q[k])).norm());
    }
    Ok(worst)
}
