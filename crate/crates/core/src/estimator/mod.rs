//! Centralized solvers for the box-constrained WLS problem.

mod constants;
mod gauss_newton;
mod gradient;
mod objective;

pub use constants::{estimate_constants, estimate_delta2, ConvergenceConstants, POWER_ITERATION_TOL};
pub use gauss_newton::{solve_gauss_newton, solve_gauss_newton_timed, GaussNewtonOptions, GaussNewtonOutcome};
pub(crate) use gradient::resolve_step;
pub use gradient::{projected_step, solve_gradient, solve_gradient_timed, step_realtime, GradientOptions, StepSize};
pub use objective::{gradient, gradient_at, nu, objective_at, project, wls_objective};

use alloc::vec::Vec;

use crate::error::Result;
use crate::grid::FeederModel;
use crate::powerflow::{solve_nonlinear, PowerFlowOptions};
use crate::sensitivity::{Injections, SensitivityModel};

/// Source of the voltages `v(s+1)` used in the next gradient evaluation.
#[derive(Clone, Copy, Debug)]
pub enum Feedback<'a> {
    /// `v = R p + X q + ṽ`.
    Linear,
    /// Voltages from the nonlinear power flow of the current iterate.
    Nonlinear { model: &'a FeederModel, options: PowerFlowOptions },
}

impl<'a> Feedback<'a> {
    pub fn nonlinear(model: &'a FeederModel) -> Self {
        Feedback::Nonlinear { model, options: PowerFlowOptions::default() }
    }

    pub fn voltages(&self, sm: &SensitivityModel, z: &Injections) -> Result<Vec<f64>> {
        match self {
            Feedback::Linear => sm.predict_voltage(z),
            Feedback::Nonlinear { model, options } => Ok(solve_nonlinear(model, z, options)?.v),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Feedback::Linear)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    /// Euclidean norm of `z(s+1) - z(s)`.
    pub dz_norm: f64,
    /// Infinity norm of `v(s+1) - v(s)`.
    pub dv_inf: f64,
    /// Seconds since the solve started, as reported by the clock.
    pub time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateState {
    pub z: Injections,
    /// Voltages consistent with `z` under the solver's feedback.
    pub v: Vec<f64>,
    pub iterations: usize,
    pub objective: f64,
    pub step_size: f64,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
}
