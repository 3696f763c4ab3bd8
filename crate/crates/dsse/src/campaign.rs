//! Monte-Carlo trials and the real-time tracking loop. Trials run in
//! parallel, each from its own seed; callers write the results serially.

use dsse_core::clock::Clock;
use dsse_core::estimator::{
    estimate_constants, solve_gauss_newton_timed, solve_gradient_timed, step_realtime, EstimateState,
    GaussNewtonOptions, StepSize, TraceRow,
};
use dsse_core::grid::partition;
use dsse_core::measurements::{synthesize, MeasurementSet, Scenario};
use dsse_core::multiarea::{run_protocol_timed, InProcessTransport, MultiAreaSystem, ProtocolOptions, RoundMessage};
use dsse_core::powerflow::{solve_nonlinear, PowerFlowOptions};
use dsse_core::{AreaPartition, FeederModel, Injections, SensitivityModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::clock;
use crate::config::{RunConfig, SolverKind};
use crate::measurement_io::digest;
use crate::Result;

const TRUTH_STREAM: u64 = 7;

/// Seed of trial `t`, shared by every solver run on that trial.
pub fn trial_seed(base: u64, t: usize) -> u64 {
    crate::timeseries::tick_seed(base, t as u64)
}

/// Mean and max of `|√v_est - √v_true| / √v_true` in percent.
pub fn magnitude_errors(v_est: &[f64], v_true: &[f64]) -> (f64, f64) {
    let mut sum = 0.0;
    let mut worst: f64 = 0.0;
    for (a, b) in v_est.iter().zip(v_true) {
        let e = (a.sqrt() - b.sqrt()).abs() / b.sqrt() * 100.0;
        sum += e;
        worst = worst.max(e);
    }
    (sum / v_true.len().max(1) as f64, worst)
}

/// Model, sensitivities and partition shared by all trials of a run.
pub struct Setup {
    pub model: FeederModel,
    pub sm: SensitivityModel,
    pub partition: AreaPartition,
}

impl Setup {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let model = cfg.feeder.load()?;
        let sm = SensitivityModel::build_auto(&model);
        let partition = partition(&model, &cfg.root_ids())?;
        Ok(Self { model, sm, partition })
    }
}

/// Truth and measurements of one trial.
pub struct TrialInput {
    pub trial: usize,
    pub seed: u64,
    pub ms: MeasurementSet,
    pub v_true: Vec<f64>,
}

pub fn trial_input(setup: &Setup, cfg: &RunConfig, trial: usize) -> Result<TrialInput> {
    let seed = trial_seed(cfg.seed, trial);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TRUTH_STREAM);
    let mut truth = setup.model.nominal_injections();
    if cfg.load_spread > 0.0 {
        for k in 0..truth.len() {
            let f = 1.0 + rng.random_range(-cfg.load_spread..cfg.load_spread);
            truth.p[k] *= f;
            truth.q[k] *= f;
        }
    }
    let (ms, sol) = synthesize(&setup.model, &truth, &cfg.noise_policy(), &cfg.meters.placement(), seed)?;
    Ok(TrialInput { trial, seed, ms, v_true: sol.v })
}

#[derive(Clone, Debug)]
pub struct SolverRun {
    pub state: EstimateState,
    pub avg_error: f64,
    pub max_error: f64,
    /// Solver wall time in seconds.
    pub time: f64,
    pub failure: Option<String>,
    pub messages: Vec<RoundMessage>,
}

#[derive(Clone, Debug)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub digest: String,
    pub run: SolverRun,
}

/// Runs `solver` on one measurement set. Only the solver call is timed.
pub fn run_solver(
    setup: &Setup,
    cfg: &RunConfig,
    solver: SolverKind,
    ms: &MeasurementSet,
    v_true: &[f64],
    keep_messages: bool,
) -> Result<SolverRun> {
    let clock = clock::pick(cfg.timing);
    let clock: &dyn Clock = clock.as_ref();
    let feedback = cfg.feedback(&setup.model);
    let start = clock.seconds();
    let mut failure = None;
    let mut messages = Vec::new();
    let state = match solver {
        SolverKind::Gradient => solve_gradient_timed(ms, &setup.sm, feedback, &cfg.gradient_options(), clock)?,
        SolverKind::Multiarea => {
            let transport = if keep_messages { InProcessTransport::with_log() } else { InProcessTransport::new() };
            let mut sys = MultiAreaSystem::new(&setup.sm, ms, &setup.partition, feedback, cfg.step(), transport)?;
            let opts = ProtocolOptions { delta: cfg.delta, max_rounds: cfg.max_iters, fail_on_cap: false };
            let out = run_protocol_timed(&mut sys, &opts, clock)?;
            messages = sys.transport.log().to_vec();
            out.state
        }
        SolverKind::GaussNewton => {
            let opts = GaussNewtonOptions { max_iters: cfg.max_iters.min(100), ..GaussNewtonOptions::default() };
            let out = solve_gauss_newton_timed(ms, &setup.model, &opts, clock)?;
            failure = out.failure.map(|e| e.to_string());
            out.state
        }
    };
    let time = clock.seconds() - start;
    let (avg_error, max_error) = magnitude_errors(&state.v, v_true);
    Ok(SolverRun { state, avg_error, max_error, time, failure, messages })
}

/// Runs `cfg.trials` trials of `cfg.solver`. Messages are kept for trial 0
/// only.
pub fn estimate(setup: &Setup, cfg: &RunConfig) -> Result<Vec<TrialResult>> {
    (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let input = trial_input(setup, cfg, t)?;
            let run = run_solver(setup, cfg, cfg.solver, &input.ms, &input.v_true, t == 0)?;
            Ok(TrialResult { trial: t, seed: input.seed, digest: digest(&input.ms), run })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct PairedResult {
    pub trial: usize,
    pub seed: u64,
    pub gradient_digest: String,
    pub gauss_newton_digest: String,
    pub gradient: SolverRun,
    pub gauss_newton: SolverRun,
    /// Per-node errors of both solvers, in percent.
    pub gradient_node_errors: Vec<f64>,
    pub gauss_newton_node_errors: Vec<f64>,
}

fn node_errors(v_est: &[f64], v_true: &[f64]) -> Vec<f64> {
    v_est.iter().zip(v_true).map(|(a, b)| (a.sqrt() - b.sqrt()).abs() / b.sqrt() * 100.0).collect()
}

/// Gradient (or multi-area, when configured) against Gauss-Newton on the
/// same measurement realizations.
pub fn compare(setup: &Setup, cfg: &RunConfig) -> Result<Vec<PairedResult>> {
    let first = if cfg.solver == SolverKind::Multiarea { SolverKind::Multiarea } else { SolverKind::Gradient };
    (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let input = trial_input(setup, cfg, t)?;
            let ms_g = input.ms.clone();
            let ms_gn = input.ms.clone();
            let gradient = run_solver(setup, cfg, first, &ms_g, &input.v_true, false)?;
            let gauss_newton = run_solver(setup, cfg, SolverKind::GaussNewton, &ms_gn, &input.v_true, false)?;
            Ok(PairedResult {
                trial: t,
                seed: input.seed,
                gradient_digest: digest(&ms_g),
                gauss_newton_digest: digest(&ms_gn),
                gradient_node_errors: node_errors(&gradient.state.v, &input.v_true),
                gauss_newton_node_errors: node_errors(&gauss_newton.state.v, &input.v_true),
                gradient,
                gauss_newton,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TickResult {
    pub tick: u64,
    pub avg_error: f64,
    pub max_error: f64,
    pub running_avg: f64,
    pub running_max: f64,
    /// `(true, estimated)` voltage magnitudes at the sampled slots.
    pub samples: Vec<(f64, f64)>,
    pub objective: f64,
    pub time: f64,
}

/// Slots reported in the per-tick output: first, middle and last.
pub fn sample_slots(n: usize) -> Vec<usize> {
    let mut s = vec![0, n / 2, n.saturating_sub(1)];
    s.dedup();
    s
}

/// One projected gradient step per tick, starting from the projected
/// pseudo-measurements of the first tick. The step size is fixed from the
/// first tick's measurements.
pub fn realtime(setup: &Setup, cfg: &RunConfig, scenarios: &[Scenario]) -> Result<Vec<TickResult>> {
    dsse_core::measurements::check_ticks(scenarios)?;
    let model = &setup.model;
    let sm = &setup.sm;
    let noise = cfg.noise_policy();
    let feedback = cfg.feedback(model);
    let meter_slots = cfg.meters.placement().resolve(model, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let samples = sample_slots(sm.dim());
    let clock = clock::pick(cfg.timing);
    let pf = PowerFlowOptions::default();

    let mut out = Vec::with_capacity(scenarios.len());
    let mut state: Option<EstimateState> = None;
    let mut eps = 0.0;
    let (mut sum_avg, mut sum_max) = (0.0, 0.0);
    for (t, sc) in scenarios.iter().enumerate() {
        let v_true = solve_nonlinear(model, &sc.truth, &pf)?.v;
        let ms = sc.measurements(model, &v_true, &meter_slots, &noise)?;
        let start = clock.seconds();
        let prev = match state.take() {
            Some(s) => s,
            None => {
                eps = match cfg.step() {
                    StepSize::Auto => estimate_constants(&ms, sm)?.epsilon,
                    StepSize::Fixed(e) | StepSize::Unchecked(e) => e,
                };
                initial_state(&ms, sm, feedback, eps)?
            }
        };
        let next = step_realtime(&prev, &ms, sm, feedback, eps)?;
        let time = clock.seconds() - start;
        let (avg, max) = magnitude_errors(&next.v, &v_true);
        sum_avg += avg;
        sum_max += max;
        let n = (t + 1) as f64;
        out.push(TickResult {
            tick: sc.tick,
            avg_error: avg,
            max_error: max,
            running_avg: sum_avg / n,
            running_max: sum_max / n,
            samples: samples.iter().map(|&k| (v_true[k].sqrt(), next.v[k].sqrt())).collect(),
            objective: next.objective,
            time,
        });
        state = Some(next);
    }
    Ok(out)
}

fn initial_state(
    ms: &MeasurementSet,
    sm: &SensitivityModel,
    feedback: dsse_core::estimator::Feedback<'_>,
    eps: f64,
) -> Result<EstimateState> {
    let mut z: Injections = ms.z_hat();
    ms.project(&mut z);
    let v = feedback.voltages(sm, &z)?;
    Ok(EstimateState {
        objective: dsse_core::estimator::objective_at(ms, &z, &v),
        z,
        v,
        iterations: 0,
        step_size: eps,
        converged: false,
        trace: Vec::<TraceRow>::new(),
    })
}
