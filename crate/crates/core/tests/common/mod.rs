//! Independent oracles shared by the integration tests. Nothing here calls
//! into the sensitivity, LCA or solver code it is used to check.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use dsse_core::generate::{generate_feeder, GeneratorSpec, PhaseMix};
use dsse_core::measurements::MeasurementSet;
use dsse_core::measurements::{synthesize, MeterPlacement, NoisePolicy};
use dsse_core::{FeederModel, InjectionBox, Injections, NodeId, SensitivityModel};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Parent map and line impedances read straight from the line records.
pub struct Tree {
    pub parent: HashMap<u32, u32>,
    pub line: HashMap<u32, dsse_core::PhaseMatrix>,
    pub slack: u32,
}

pub fn tree(model: &FeederModel) -> Tree {
    let mut parent = HashMap::new();
    let mut line = HashMap::new();
    for l in model.lines() {
        parent.insert(l.to.0, l.from.0);
        line.insert(l.to.0, l.impedance);
    }
    Tree { parent, line, slack: model.slack_id().0 }
}

/// Nodes on the path from `id` up to (excluding) the slack. Each node
/// stands for the line feeding it.
pub fn path(t: &Tree, mut id: u32) -> Vec<u32> {
    let mut out = Vec::new();
    while id != t.slack {
        out.push(id);
        id = t.parent[&id];
    }
    out
}

pub fn common_lines(t: &Tree, a: u32, b: u32) -> BTreeSet<u32> {
    let pa: BTreeSet<u32> = path(t, a).into_iter().collect();
    path(t, b).into_iter().filter(|x| pa.contains(x)).collect()
}

/// Deepest node shared by both root paths.
pub fn lca(t: &Tree, a: u32, b: u32) -> u32 {
    let mut pa = path(t, a);
    pa.push(t.slack);
    let mut pb = path(t, b);
    pb.push(t.slack);
    let sb: BTreeSet<u32> = pb.into_iter().collect();
    pa.into_iter().find(|x| sb.contains(x)).unwrap()
}

fn omega(k: i64) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * (k.rem_euclid(3)) as f64 / 3.0)
}

/// `R`, `X` by enumerating every common-path line and summing the
/// per-line rotated contributions.
pub fn sensitivity_oracle(model: &FeederModel) -> (DMatrix<f64>, DMatrix<f64>) {
    let t = tree(model);
    let idx = model.state_index();
    let n = idx.len();
    let mut r = DMatrix::zeros(n, n);
    let mut x = DMatrix::zeros(n, n);
    for a in 0..n {
        let (i, phi) = idx.slot(a);
        for b in 0..n {
            let (j, psi) = idx.slot(b);
            let (mut rs, mut xs) = (0.0, 0.0);
            for e in common_lines(&t, model.id(i).0, model.id(j).0) {
                let z = t.line[&e][phi.index()][psi.index()].conj();
                let w = z * omega(phi.index() as i64 - psi.index() as i64);
                rs += 2.0 * w.re;
                xs += -2.0 * w.im;
            }
            r[(a, b)] = rs;
            x[(a, b)] = xs;
        }
    }
    (r, x)
}

/// Free coordinates of the stacked state: boxes that are not points.
pub fn free_coords(ms: &MeasurementSet) -> Vec<usize> {
    let n = ms.dim();
    let mut out = Vec::new();
    for k in 0..n {
        if !ms.omega[k].p_fixed() {
            out.push(k);
        }
    }
    for k in 0..n {
        if !ms.omega[k].q_fixed() {
            out.push(n + k);
        }
    }
    out
}

/// Dense quadratic `½ xᵀ H x - bᵀ x` over the free coordinates, with the
/// fixed coordinates held at their box value. Returns `(H, b, free, fixed)`.
pub fn dense_problem(ms: &MeasurementSet, sm: &SensitivityModel) -> (DMatrix<f64>, DVector<f64>, Vec<usize>, Vec<f64>) {
    let n = ms.dim();
    let free = free_coords(ms);
    let mut fixed = vec![0.0; 2 * n];
    for k in 0..n {
        fixed[k] = ms.omega[k].p_min;
        fixed[n + k] = ms.omega[k].q_min;
    }
    let d = free.len();
    // Columns of [R X] at the meters.
    let g = |row: usize, col: usize| if col < n { sm.r()[(row, col)] } else { sm.x()[(row, col - n)] };
    let mut h = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    for (a, &ca) in free.iter().enumerate() {
        let (s, y) = if ca < n { (ms.sigma_p[ca], ms.p_hat[ca]) } else { (ms.sigma_q[ca - n], ms.q_hat[ca - n]) };
        if let Some(s) = s {
            h[(a, a)] += 1.0 / (s * s);
            rhs[a] += y / (s * s);
        }
    }
    for m in &ms.meters {
        let w = 1.0 / (m.sigma_v * m.sigma_v);
        // Constant part of the model voltage at the meter.
        let mut c = sm.v_tilde()[m.slot];
        for col in 0..2 * n {
            if !free.contains(&col) {
                c += g(m.slot, col) * fixed[col];
            }
        }
        for (a, &ca) in free.iter().enumerate() {
            rhs[a] += w * g(m.slot, ca) * (m.v_hat - c);
            for (b, &cb) in free.iter().enumerate() {
                h[(a, b)] += w * g(m.slot, ca) * g(m.slot, cb);
            }
        }
    }
    (h, rhs, free, fixed)
}

fn scatter(free: &[usize], fixed: &[f64], x: &DVector<f64>) -> Injections {
    let mut z = fixed.to_vec();
    for (a, &ca) in free.iter().enumerate() {
        z[ca] = x[a];
    }
    Injections::from_stacked(&z)
}

/// Unconstrained WLS optimum over the free coordinates from the dense
/// normal equations.
pub fn dense_wls(ms: &MeasurementSet, sm: &SensitivityModel) -> Injections {
    let (h, rhs, free, fixed) = dense_problem(ms, sm);
    let sol = h.lu().solve(&rhs).expect("normal matrix is nonsingular");
    scatter(&free, &fixed, &sol)
}

/// Box-constrained WLS optimum by accelerated projected gradient (FISTA
/// with restarts) on the dense quadratic.
pub fn box_wls(ms: &MeasurementSet, sm: &SensitivityModel, max_iters: usize) -> Injections {
    let (h, rhs, free, fixed) = dense_problem(ms, sm);
    let n = ms.dim();
    let (lo, hi): (Vec<f64>, Vec<f64>) = free
        .iter()
        .map(|&c| {
            let b = &ms.omega[c % n];
            if c < n {
                (b.p_min, b.p_max)
            } else {
                (b.q_min, b.q_max)
            }
        })
        .unzip();
    let clamp = |x: &mut DVector<f64>| {
        for (a, v) in x.iter_mut().enumerate() {
            *v = v.clamp(lo[a], hi[a]);
        }
    };
    let step = 1.0 / h.symmetric_eigenvalues().max();
    let mut x = DVector::from_fn(free.len(), |a, _| 0.5 * (lo[a] + hi[a]));
    let mut y = x.clone();
    let mut t = 1.0f64;
    let cost = |x: &DVector<f64>| 0.5 * x.dot(&(&h * x)) - rhs.dot(x);
    let mut last = cost(&x);
    for _ in 0..max_iters {
        let mut next = &y - (&h * &y - &rhs) * step;
        clamp(&mut next);
        let c = cost(&next);
        if c > last {
            // Restart the momentum.
            y = x.clone();
            t = 1.0;
            continue;
        }
        let t1 = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &x) * ((t - 1.0) / t1);
        let moved = (&next - &x).amax();
        x = next;
        t = t1;
        last = c;
        if moved < 1e-14 {
            break;
        }
    }
    scatter(&free, &fixed, &x)
}

/// Dense WLS Hessian restricted to the free coordinates.
pub fn dense_hessian(ms: &MeasurementSet, sm: &SensitivityModel) -> DMatrix<f64> {
    let n = ms.dim();
    let free = free_coords(ms);
    let g = |row: usize, col: usize| if col < n { sm.r()[(row, col)] } else { sm.x()[(row, col - n)] };
    let mut h = DMatrix::zeros(free.len(), free.len());
    for (a, &ca) in free.iter().enumerate() {
        let s = if ca < n { ms.sigma_p[ca] } else { ms.sigma_q[ca - n] };
        if let Some(s) = s {
            h[(a, a)] += 1.0 / (s * s);
        }
        for m in &ms.meters {
            let w = 1.0 / (m.sigma_v * m.sigma_v);
            for (b, &cb) in free.iter().enumerate() {
                h[(a, b)] += w * g(m.slot, ca) * g(m.slot, cb);
            }
        }
    }
    h
}

/// Central-difference gradient of an objective over the stacked state.
pub fn fd_gradient(f: impl Fn(&Injections) -> f64, z: &Injections, h: f64) -> Vec<f64> {
    let mut s = z.stacked();
    let mut out = Vec::with_capacity(s.len());
    for k in 0..s.len() {
        let x0 = s[k];
        s[k] = x0 + h;
        let up = f(&Injections::from_stacked(&s));
        s[k] = x0 - h;
        let dn = f(&Injections::from_stacked(&s));
        s[k] = x0;
        out.push((up - dn) / (2.0 * h));
    }
    out
}

pub fn single_phase(size: usize, seed: u64) -> FeederModel {
    generate_feeder(&GeneratorSpec { size, seed, ..GeneratorSpec::default() }).unwrap()
}

pub fn three_phase(size: usize, seed: u64) -> FeederModel {
    generate_feeder(&GeneratorSpec {
        size,
        seed,
        phase_mix: PhaseMix::ThreePhase { lateral_fraction: 0.4, mutual_ratio: 0.35 },
        ..GeneratorSpec::default()
    })
    .unwrap()
}

/// Noisy measurements at nominal load with a random meter fraction.
pub fn measurements(model: &FeederModel, frac: f64, seed: u64) -> MeasurementSet {
    synthesize(model, &model.nominal_injections(), &NoisePolicy::default(), &MeterPlacement::Fraction(frac), seed)
        .unwrap()
        .0
}

/// A well-conditioned problem whose optimum is interior: uniform pseudo
/// variances, loose voltage meters and boxes far wider than the data.
pub fn interior_problem(size: usize, seed: u64) -> (FeederModel, SensitivityModel, MeasurementSet) {
    let model = single_phase(size, seed);
    let sm = SensitivityModel::build_single_phase(&model).unwrap();
    let mut ms = measurements(&model, 0.3, seed);
    for k in 0..ms.dim() {
        if ms.sigma_p[k].is_some() {
            ms.sigma_p[k] = Some(0.05);
            ms.sigma_q[k] = Some(0.05);
            ms.omega[k] = InjectionBox::new(-10.0, 10.0, -10.0, 10.0);
        }
    }
    for m in &mut ms.meters {
        m.sigma_v = 0.05;
    }
    (model, sm, ms)
}

pub fn inf_norm(a: &Injections, b: &Injections) -> f64 {
    a.p.iter().zip(&b.p).chain(a.q.iter().zip(&b.q)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Picks up to `k` non-nested, non-slack roots with a deterministic walk.
pub fn disjoint_roots(model: &FeederModel, k: usize, seed: u64) -> Vec<NodeId> {
    let t = tree(model);
    let mut candidates: Vec<u32> = (1..model.num_nodes()).map(|i| model.id(i).0).collect();
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut chosen: Vec<u32> = Vec::new();
    while chosen.len() < k && !candidates.is_empty() {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let pick = candidates.swap_remove((state >> 33) as usize % candidates.len());
        let pp = path(&t, pick);
        let nested = chosen.iter().any(|&c| pp.contains(&c) || path(&t, c).contains(&pick));
        if !nested {
            chosen.push(pick);
        }
    }
    chosen.into_iter().map(NodeId).collect()
}
