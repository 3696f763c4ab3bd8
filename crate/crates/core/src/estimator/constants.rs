use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DsseError, Result};
use crate::grid::FeederModel;
use crate::measurements::MeasurementSet;
use crate::powerflow::{solve_nonlinear, PowerFlowOptions};
use crate::sensitivity::{Injections, SensitivityModel};

pub const POWER_ITERATION_TOL: f64 = 1e-8;
const POWER_ITERATION_CAP: usize = 50_000;

/// Step-size and tracking constants of the projected gradient map.
///
/// `delta1` is the bound on the *squared* distance between consecutive
/// optima and `delta2` the bound on the squared gradient discrepancy
/// between nonlinear and linear voltages; both enter the ball radius
/// additively.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceConstants {
    pub m: f64,
    pub l: f64,
    pub epsilon_max: f64,
    pub epsilon: f64,
    pub contraction: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub ball_radius: f64,
}

impl ConvergenceConstants {
    fn new(m: f64, l: f64) -> Self {
        let eps = m / (l * l);
        let mut c = Self {
            m,
            l,
            epsilon_max: 2.0 * m / (l * l),
            epsilon: eps,
            contraction: 0.0,
            delta1: 0.0,
            delta2: 0.0,
            ball_radius: 0.0,
        };
        c.refresh();
        c
    }

    fn refresh(&mut self) {
        self.contraction = self.contraction_for(self.epsilon);
        self.ball_radius = self.ball_for(self.epsilon, self.delta1, self.delta2);
    }

    /// `1 + ε²L² - 2εM`.
    pub fn contraction_for(&self, eps: f64) -> f64 {
        1.0 + eps * eps * self.l * self.l - 2.0 * eps * self.m
    }

    /// `(Δ1 + ε²Δ2) / (2εM - ε²L²)`; infinite outside the admissible range.
    pub fn ball_for(&self, eps: f64, delta1: f64, delta2: f64) -> f64 {
        let den = 2.0 * eps * self.m - eps * eps * self.l * self.l;
        if den > 0.0 {
            (delta1 + eps * eps * delta2) / den
        } else {
            f64::INFINITY
        }
    }

    pub fn admissible(&self, eps: f64) -> bool {
        eps > 0.0 && eps < self.epsilon_max
    }

    pub fn with_step(mut self, eps: f64) -> Self {
        self.epsilon = eps;
        self.refresh();
        self
    }

    pub fn with_deltas(mut self, delta1: f64, delta2: f64) -> Self {
        self.delta1 = delta1;
        self.delta2 = delta2;
        self.refresh();
        self
    }
}

/// Coordinates of the stacked `[p; q]` vector whose box is not a point.
fn free_mask(ms: &MeasurementSet) -> Vec<bool> {
    let n = ms.dim();
    let mut free = vec![false; 2 * n];
    for k in 0..n {
        free[k] = !ms.omega[k].p_fixed();
        free[n + k] = !ms.omega[k].q_fixed();
    }
    free
}

struct Hessian<'a> {
    ms: &'a MeasurementSet,
    sm: &'a SensitivityModel,
    w: Vec<f64>,
    free: Vec<bool>,
}

impl Hessian<'_> {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.sm.dim();
        let (r, xm) = (self.sm.r(), self.sm.x());
        let mut u = Vec::with_capacity(self.ms.meters.len());
        for m in &self.ms.meters {
            let mut g = 0.0;
            for k in 0..n {
                g += r[(m.slot, k)] * x[k] + xm[(m.slot, k)] * x[n + k];
            }
            u.push(g / (m.sigma_v * m.sigma_v));
        }
        for k in 0..2 * n {
            if !self.free[k] {
                out[k] = 0.0;
                continue;
            }
            let mat = if k < n { r } else { xm };
            let col = k % n;
            let mut acc = self.w[k] * x[k];
            for (m, um) in self.ms.meters.iter().zip(&u) {
                acc += mat[(m.slot, col)] * um;
            }
            out[k] = acc;
        }
    }

    fn diagonal(&self, k: usize) -> f64 {
        let n = self.sm.dim();
        let mat = if k < n { self.sm.r() } else { self.sm.x() };
        let col = k % n;
        let mut d = self.w[k];
        for m in &self.ms.meters {
            let g = mat[(m.slot, col)];
            d += g * g / (m.sigma_v * m.sigma_v);
        }
        d
    }

    fn dense(&self) -> DMatrix<f64> {
        let idx: Vec<usize> = (0..self.free.len()).filter(|&k| self.free[k]).collect();
        let mut h = DMatrix::zeros(idx.len(), idx.len());
        let mut e = vec![0.0; self.free.len()];
        let mut col = vec![0.0; self.free.len()];
        for (b, &kb) in idx.iter().enumerate() {
            e[kb] = 1.0;
            self.apply(&e, &mut col);
            e[kb] = 0.0;
            for (a, &ka) in idx.iter().enumerate() {
                h[(a, b)] = col[ka];
            }
        }
        h
    }
}

/// `M` and `L` for the WLS Hessian restricted to non-degenerate box
/// coordinates, with `ε = M/L²`.
///
/// `M` is the smallest pseudo weight over the free coordinates (a Weyl lower
/// bound, since the voltage term is positive semidefinite); when some free
/// coordinate carries no pseudo channel the dense smallest eigenvalue is
/// used instead. `L` comes from power iteration.
pub fn estimate_constants(ms: &MeasurementSet, sm: &SensitivityModel) -> Result<ConvergenceConstants> {
    let n = sm.dim();
    if ms.dim() != n {
        return Err(DsseError::DimensionMismatch { expected: n, found: ms.dim() });
    }
    let (wp, wq) = ms.weights();
    let mut w = wp;
    w.extend(wq);
    let free = free_mask(ms);
    if !free.iter().any(|&f| f) {
        return Ok(ConvergenceConstants::new(1.0, 1.0));
    }
    let h = Hessian { ms, sm, w, free };

    let l = power_iteration(&h)?;
    let weyl = (0..2 * n).filter(|&k| h.free[k]).map(|k| h.w[k]).fold(f64::INFINITY, f64::min);
    let m = if weyl > 0.0 {
        weyl
    } else {
        let eig = SymmetricEigen::new(h.dense());
        let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let m = lo - 1e-12 * hi;
        if !(m > 0.0) {
            return Err(DsseError::NotStronglyConvex);
        }
        m
    };
    Ok(ConvergenceConstants::new(m.min(l), l))
}

fn power_iteration(h: &Hessian<'_>) -> Result<f64> {
    let dim = h.free.len();
    let mut x: Vec<f64> = (0..dim).map(|k| if h.free[k] { 1.0 + k as f64 / dim as f64 } else { 0.0 }).collect();
    normalize(&mut x);
    let mut y = vec![0.0; dim];
    let mut lambda = 0.0;
    for it in 0..POWER_ITERATION_CAP {
        h.apply(&x, &mut y);
        let next: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let norm = normalize(&mut y);
        if norm == 0.0 {
            return Err(DsseError::NotStronglyConvex);
        }
        core::mem::swap(&mut x, &mut y);
        if it > 0 && (next - lambda).abs() <= POWER_ITERATION_TOL * next.abs() {
            // The Rayleigh quotient approaches λ_max from below; the largest
            // diagonal entry is also a lower bound and sometimes a tighter one.
            let diag = (0..dim).filter(|&k| h.free[k]).map(|k| h.diagonal(k)).fold(0.0, f64::max);
            return Ok(next.max(diag));
        }
        lambda = next;
    }
    Err(DsseError::PowerIterationFailed(POWER_ITERATION_CAP))
}

fn normalize(x: &mut [f64]) -> f64 {
    let n = libm::sqrt(x.iter().map(|a| a * a).sum::<f64>());
    if n > 0.0 {
        x.iter_mut().for_each(|a| *a /= n);
    }
    n
}

/// Largest sampled `‖f̃(z) - f(z)‖²` over feasible `z`: the gradient
/// discrepancy caused by replacing linear voltages with the nonlinear power
/// flow. Samples are uniform in the boxes plus the projected
/// pseudo-measurement point.
pub fn estimate_delta2(
    ms: &MeasurementSet,
    sm: &SensitivityModel,
    model: &FeederModel,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let n = sm.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(samples + 1);
    let mut z0 = ms.z_hat();
    ms.project(&mut z0);
    points.push(z0);
    for _ in 0..samples {
        let mut z = Injections::zeros(n);
        for (k, b) in ms.omega.iter().enumerate() {
            z.p[k] = if b.p_fixed() { b.p_min } else { rng.random_range(b.p_min..=b.p_max) };
            z.q[k] = if b.q_fixed() { b.q_min } else { rng.random_range(b.q_min..=b.q_max) };
        }
        points.push(z);
    }
    let mut worst: f64 = 0.0;
    for z in &points {
        let v_lin = sm.predict_voltage(z)?;
        let v_nl = solve_nonlinear(model, z, &PowerFlowOptions::default())?.v;
        let e: Vec<f64> = ms.meters.iter().map(|m| (v_nl[m.slot] - v_lin[m.slot]) / (m.sigma_v * m.sigma_v)).collect();
        let mut sq = 0.0;
        for k in 0..n {
            let (mut a, mut b) = (0.0, 0.0);
            for (m, em) in ms.meters.iter().zip(&e) {
                a += sm.r()[(m.slot, k)] * em;
                b += sm.x()[(m.slot, k)] * em;
            }
            sq += a * a + b * b;
        }
        worst = worst.max(sq);
    }
    Ok(worst)
}
