use alloc::vec;

use super::constants::estimate_constants;
use super::objective::{gradient_at, objective_at};
use super::{EstimateState, Feedback, TraceRow};
use crate::clock::{Clock, NoClock};
use crate::error::{DsseError, Result};
use crate::measurements::MeasurementSet;
use crate::sensitivity::{Injections, SensitivityModel};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSize {
    /// `ε = M/L²`.
    Auto,
    /// Must lie in `(0, 2M/L²)`.
    Fixed(f64),
    /// Used as given, without computing the constants.
    Unchecked(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientOptions {
    pub step: StepSize,
    pub max_iters: usize,
    /// Stop once `‖v(s+1) - v(s)‖∞ < delta`.
    pub delta: f64,
    /// Consecutive objective increases that count as divergence.
    pub divergence_window: usize,
}

impl Default for GradientOptions {
    fn default() -> Self {
        Self { step: StepSize::Auto, max_iters: 500, delta: 1e-6, divergence_window: 10 }
    }
}

/// Resolves the step size, checking the admissible interval.
pub(crate) fn resolve_step(ms: &MeasurementSet, sm: &SensitivityModel, step: StepSize) -> Result<f64> {
    match step {
        StepSize::Unchecked(eps) => Ok(eps),
        StepSize::Auto => Ok(estimate_constants(ms, sm)?.epsilon),
        StepSize::Fixed(eps) => {
            let c = estimate_constants(ms, sm)?;
            if c.admissible(eps) {
                Ok(eps)
            } else {
                Err(DsseError::StepSizeOutOfRange { step: eps, max: c.epsilon_max })
            }
        }
    }
}

/// `[z - ε ∇C(z)]_Ω` with the voltage residuals taken from `v`.
pub fn projected_step(ms: &MeasurementSet, sm: &SensitivityModel, z: &Injections, v: &[f64], eps: f64) -> Injections {
    let g = gradient_at(ms, sm, z, v);
    let mut next = Injections::zeros(z.len());
    for k in 0..z.len() {
        next.p[k] = z.p[k] - eps * g.p[k];
        next.q[k] = z.q[k] - eps * g.q[k];
    }
    ms.project(&mut next);
    next
}

pub fn solve_gradient(
    ms: &MeasurementSet,
    sm: &SensitivityModel,
    feedback: Feedback<'_>,
    opts: &GradientOptions,
) -> Result<EstimateState> {
    solve_gradient_timed(ms, sm, feedback, opts, &NoClock)
}

/// Projected gradient iterations from `z0 = [ẑ]_Ω`.
pub fn solve_gradient_timed(
    ms: &MeasurementSet,
    sm: &SensitivityModel,
    feedback: Feedback<'_>,
    opts: &GradientOptions,
    clock: &dyn Clock,
) -> Result<EstimateState> {
    if ms.dim() != sm.dim() {
        return Err(DsseError::DimensionMismatch { expected: sm.dim(), found: ms.dim() });
    }
    ms.validate()?;
    let start = clock.seconds();
    let eps = resolve_step(ms, sm, opts.step)?;
    let mut z = ms.z_hat();
    ms.project(&mut z);
    let mut v = feedback.voltages(sm, &z)?;
    let mut objective = objective_at(ms, &z, &v);
    let mut state = EstimateState {
        z: z.clone(),
        v: v.clone(),
        iterations: 0,
        objective,
        step_size: eps,
        converged: false,
        trace: vec![],
    };
    let mut rising = 0;
    for s in 1..=opts.max_iters.max(1) {
        let z1 = projected_step(ms, sm, &z, &v, eps);
        let v1 = feedback.voltages(sm, &z1)?;
        let dz_norm = libm::sqrt(z1.dist_sq(&z));
        let dv_inf = v1.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let obj1 = objective_at(ms, &z1, &v1);
        state.trace.push(TraceRow { iteration: s, objective: obj1, dz_norm, dv_inf, time: clock.seconds() - start });
        rising = if obj1 > objective * (1.0 + 1e-12) + f64::MIN_POSITIVE { rising + 1 } else { 0 };
        z = z1;
        v = v1;
        objective = obj1;
        state.iterations = s;
        if rising >= opts.divergence_window {
            return Err(DsseError::Diverged(s));
        }
        if dv_inf < opts.delta {
            state.converged = true;
            break;
        }
    }
    state.z = z;
    state.v = v;
    state.objective = objective;
    Ok(state)
}

/// One projected gradient step on the current tick's measurements. The
/// feasible boxes are those carried by `ms`.
pub fn step_realtime(
    state: &EstimateState,
    ms: &MeasurementSet,
    sm: &SensitivityModel,
    feedback: Feedback<'_>,
    eps: f64,
) -> Result<EstimateState> {
    let n = sm.dim();
    if state.z.len() != n || ms.dim() != n || state.v.len() != n {
        return Err(DsseError::DimensionMismatch { expected: n, found: state.z.len() });
    }
    let z1 = projected_step(ms, sm, &state.z, &state.v, eps);
    let v1 = feedback.voltages(sm, &z1)?;
    let dz_norm = libm::sqrt(z1.dist_sq(&state.z));
    let dv_inf = v1.iter().zip(&state.v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let objective = objective_at(ms, &z1, &v1);
    let iteration = state.iterations + 1;
    Ok(EstimateState {
        z: z1,
        v: v1,
        iterations: iteration,
        objective,
        step_size: eps,
        converged: false,
        trace: vec![TraceRow { iteration, objective, dz_norm, dv_inf, time: 0.0 }],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{estimate_constants, gradient, wls_objective};
    use crate::generate::{fig2_feeder, FIG2_METERS};
    use crate::grid::{InjectionBox, NodeId};
    use crate::measurements::{synthesize, MeterPlacement, NoisePolicy};

    fn setup(seed: u64) -> (crate::FeederModel, SensitivityModel, MeasurementSet) {
        let m = fig2_feeder(seed).unwrap();
        let sm = SensitivityModel::build_single_phase(&m).unwrap();
        let placement = MeterPlacement::Nodes(FIG2_METERS.iter().map(|&n| (NodeId(n), None)).collect());
        let (ms, _) = synthesize(&m, &m.nominal_injections(), &NoisePolicy::default(), &placement, seed).unwrap();
        (m, sm, ms)
    }

    #[test]
    fn all_singletons_give_zero_after_one_iteration() {
        let (_, sm, mut ms) = setup(1);
        ms.omega.iter_mut().for_each(|b| *b = InjectionBox::ZERO);
        let st = solve_gradient(&ms, &sm, Feedback::Linear, &GradientOptions::default()).unwrap();
        assert_eq!(st.iterations, 1);
        assert!(st.z.p.iter().chain(&st.z.q).all(|&x| x == 0.0));
    }

    #[test]
    fn meterless_gradient_is_pseudo_residual() {
        let (_, sm, mut ms) = setup(2);
        ms.meters.clear();
        let z = Injections::zeros(sm.dim());
        let g = gradient(&ms, &sm, &z).unwrap();
        for k in 0..sm.dim() {
            let expect = ms.sigma_p[k].map_or(0.0, |s| -ms.p_hat[k] / (s * s));
            assert!((g.p[k] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        }
        assert_eq!(wls_objective(&ms, &sm, &ms.z_hat()).unwrap(), 0.0);
    }

    #[test]
    fn step_out_of_range_is_rejected() {
        let (_, sm, ms) = setup(3);
        let c = estimate_constants(&ms, &sm).unwrap();
        let err = solve_gradient(
            &ms,
            &sm,
            Feedback::Linear,
            &GradientOptions { step: StepSize::Fixed(2.5 * c.m / (c.l * c.l)), ..Default::default() },
        )
        .unwrap_err();
        assert!(matches!(err, DsseError::StepSizeOutOfRange { .. }));
    }

    #[test]
    fn realtime_static_stream_matches_batch() {
        let (_, sm, ms) = setup(4);
        let opts = GradientOptions { max_iters: 15, delta: 0.0, ..Default::default() };
        let batch = solve_gradient(&ms, &sm, Feedback::Linear, &opts).unwrap();
        let mut z0 = ms.z_hat();
        ms.project(&mut z0);
        let v0 = sm.predict_voltage(&z0).unwrap();
        let mut st = EstimateState {
            z: z0,
            v: v0,
            iterations: 0,
            objective: 0.0,
            step_size: batch.step_size,
            converged: false,
            trace: vec![],
        };
        for _ in 0..15 {
            st = step_realtime(&st, &ms, &sm, Feedback::Linear, batch.step_size).unwrap();
        }
        assert_eq!(st.z, batch.z);
    }

    #[test]
    fn realtime_snaps_into_singleton() {
        let (_, sm, mut ms) = setup(5);
        let z0 = ms.z_hat();
        let v0 = sm.predict_voltage(&z0).unwrap();
        let st = EstimateState {
            z: z0,
            v: v0,
            iterations: 0,
            objective: 0.0,
            step_size: 0.0,
            converged: false,
            trace: vec![],
        };
        ms.omega[3] = InjectionBox::new(-0.02, -0.02, 0.01, 0.01);
        let next = step_realtime(&st, &ms, &sm, Feedback::Linear, 1e-9).unwrap();
        assert_eq!((next.z.p[3], next.z.q[3]), (-0.02, 0.01));
    }
}
