use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use super::objective::objective_at;
use super::{EstimateState, TraceRow};
use crate::clock::{Clock, NoClock};
use crate::error::{DsseError, Result};
use crate::grid::FeederModel;
use crate::measurements::MeasurementSet;
use crate::powerflow::{solve_nonlinear, PowerFlowOptions};
use crate::sensitivity::Injections;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussNewtonOptions {
    pub max_iters: usize,
    /// Stop once `‖Δz‖∞` falls below this.
    pub tolerance: f64,
    /// Levenberg damping `λ`, adding `λ·diag(N)` to the normal matrix.
    pub levenberg: Option<f64>,
    /// Turn an exhausted iteration budget into an error.
    pub strict: bool,
    /// Central-difference step for the voltage Jacobian (per-unit).
    pub fd_step: f64,
    /// Power flow settings for the Jacobian; tighter than the default so
    /// the differences are not dominated by solver tolerance.
    pub power_flow: PowerFlowOptions,
}

impl Default for GaussNewtonOptions {
    fn default() -> Self {
        Self {
            max_iters: 30,
            tolerance: 1e-8,
            levenberg: None,
            strict: false,
            fd_step: 1e-6,
            power_flow: PowerFlowOptions { tolerance: 1e-13, max_sweeps: 300 },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussNewtonOutcome {
    pub state: EstimateState,
    /// Condition estimate `λ_max/λ_min` of the first normal matrix.
    pub condition: f64,
    /// Error that stopped the iteration early, if any. The state then holds
    /// the last iterate clipped to the boxes.
    pub failure: Option<DsseError>,
}

enum Coord {
    P(usize),
    Q(usize),
}

/// Weighted least squares by Gauss-Newton on the nonlinear power flow,
/// from a flat start. Only coordinates with a non-degenerate box are
/// estimated; the result is clipped to the boxes at the end.
pub fn solve_gauss_newton(
    ms: &MeasurementSet,
    model: &FeederModel,
    opts: &GaussNewtonOptions,
) -> Result<GaussNewtonOutcome> {
    solve_gauss_newton_timed(ms, model, opts, &NoClock)
}

pub fn solve_gauss_newton_timed(
    ms: &MeasurementSet,
    model: &FeederModel,
    opts: &GaussNewtonOptions,
    clock: &dyn Clock,
) -> Result<GaussNewtonOutcome> {
    let n = model.state_index().len();
    if ms.dim() != n {
        return Err(DsseError::DimensionMismatch { expected: n, found: ms.dim() });
    }
    ms.validate()?;
    let start = clock.seconds();
    let mut coords = Vec::new();
    for (k, b) in ms.omega.iter().enumerate() {
        if !b.p_fixed() {
            coords.push(Coord::P(k));
        }
    }
    for (k, b) in ms.omega.iter().enumerate() {
        if !b.q_fixed() {
            coords.push(Coord::Q(k));
        }
    }
    // Rows: pseudo channels on free coordinates, then meters.
    let mut pseudo_rows = Vec::new();
    for (j, c) in coords.iter().enumerate() {
        let (sigma, y) = match *c {
            Coord::P(k) => (ms.sigma_p[k], ms.p_hat[k]),
            Coord::Q(k) => (ms.sigma_q[k], ms.q_hat[k]),
        };
        if let Some(s) = sigma {
            pseudo_rows.push((j, y, 1.0 / (s * s)));
        }
    }
    let rows = pseudo_rows.len() + ms.meters.len();
    let dim = coords.len();

    let mut z = Injections::zeros(n);
    for (k, b) in ms.omega.iter().enumerate() {
        if b.p_fixed() {
            z.p[k] = b.p_min;
        }
        if b.q_fixed() {
            z.q[k] = b.q_min;
        }
    }
    let set = |z: &mut Injections, j: usize, val: f64| match coords[j] {
        Coord::P(k) => z.p[k] = val,
        Coord::Q(k) => z.q[k] = val,
    };
    let get = |z: &Injections, j: usize| match coords[j] {
        Coord::P(k) => z.p[k],
        Coord::Q(k) => z.q[k],
    };

    let mut trace = Vec::new();
    let mut condition = f64::NAN;
    let mut failure = None;
    let mut converged = dim == 0;
    let mut iterations = 0;
    while !converged && iterations < opts.max_iters {
        iterations += 1;
        let step = (|| -> Result<(DVector<f64>, f64)> {
            let base = solve_nonlinear(model, &z, &opts.power_flow)?.v;
            let mut jac = DMatrix::zeros(rows, dim);
            let mut resid = DVector::zeros(rows);
            let mut w = DVector::zeros(rows);
            for (r, &(j, y, wt)) in pseudo_rows.iter().enumerate() {
                jac[(r, j)] = 1.0;
                resid[r] = y - get(&z, j);
                w[r] = wt;
            }
            let off = pseudo_rows.len();
            for (r, m) in ms.meters.iter().enumerate() {
                resid[off + r] = m.v_hat - base[m.slot];
                w[off + r] = 1.0 / (m.sigma_v * m.sigma_v);
            }
            if !ms.meters.is_empty() {
                let mut zp = z.clone();
                for j in 0..dim {
                    let x0 = get(&z, j);
                    set(&mut zp, j, x0 + opts.fd_step);
                    let up = solve_nonlinear(model, &zp, &opts.power_flow)?.v;
                    set(&mut zp, j, x0 - opts.fd_step);
                    let dn = solve_nonlinear(model, &zp, &opts.power_flow)?.v;
                    set(&mut zp, j, x0);
                    for (r, m) in ms.meters.iter().enumerate() {
                        jac[(off + r, j)] = (up[m.slot] - dn[m.slot]) / (2.0 * opts.fd_step);
                    }
                }
            }
            let mut jw = jac.transpose();
            for r in 0..rows {
                jw.column_mut(r).scale_mut(w[r]);
            }
            let mut normal = &jw * &jac;
            let rhs = &jw * &resid;
            if let Some(lambda) = opts.levenberg {
                for d in 0..dim {
                    normal[(d, d)] *= 1.0 + lambda;
                }
            }
            let cond = condition_estimate(&normal);
            let chol = Cholesky::new(normal).ok_or(DsseError::SingularNormalMatrix { condition: cond })?;
            Ok((chol.solve(&rhs), cond))
        })();
        match step {
            Ok((dz, cond)) => {
                if condition.is_nan() {
                    condition = cond;
                }
                let mut step_inf: f64 = 0.0;
                for j in 0..dim {
                    let x = get(&z, j) + dz[j];
                    set(&mut z, j, x);
                    step_inf = step_inf.max(dz[j].abs());
                }
                let dz_norm = libm::sqrt(dz.iter().map(|d| d * d).sum::<f64>());
                trace.push(TraceRow {
                    iteration: iterations,
                    objective: f64::NAN,
                    dz_norm,
                    dv_inf: f64::NAN,
                    time: clock.seconds() - start,
                });
                converged = step_inf < opts.tolerance;
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    if let Some(e @ DsseError::SingularNormalMatrix { .. }) = failure {
        return Err(e);
    }
    if !converged && failure.is_none() && opts.strict {
        return Err(DsseError::IterationCap(iterations));
    }
    ms.project(&mut z);
    let v = solve_nonlinear(model, &z, &PowerFlowOptions::default())?.v;
    let objective = objective_at(ms, &z, &v);
    if let Some(last) = trace.last_mut() {
        last.objective = objective;
    }
    Ok(GaussNewtonOutcome {
        state: EstimateState { z, v, iterations, objective, step_size: 1.0, converged, trace },
        condition,
        failure,
    })
}

fn condition_estimate(normal: &DMatrix<f64>) -> f64 {
    if normal.nrows() == 0 {
        return 1.0;
    }
    let eig = SymmetricEigen::new(normal.clone());
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::fig2_feeder;
    use crate::measurements::{synthesize, MeterPlacement, NoisePolicy};

    #[test]
    fn exact_data_recovers_truth() {
        let m = fig2_feeder(3).unwrap();
        let truth = m.nominal_injections();
        let (ms, _) =
            synthesize(&m, &truth, &NoisePolicy::default().exact(), &MeterPlacement::Fraction(1.0), 1).unwrap();
        let out = solve_gauss_newton(&ms, &m, &GaussNewtonOptions::default()).unwrap();
        assert!(out.state.converged, "{:?}", out.failure);
        let err = truth.p.iter().zip(&out.state.z.p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }
}
