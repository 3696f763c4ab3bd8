//! One function per subcommand. Each writes `config.json` into the output
//! directory before anything else.

use std::fs::File;
use std::io::{BufWriter, Write};

use dsse_core::generate::FIG2_METERS;
use dsse_core::measurements::{synthesize, DiurnalSpec, MeterPlacement, Scenario};
use dsse_core::observability::build_h;
use dsse_core::powerflow::{solve_nonlinear, PowerFlowOptions};
use dsse_core::NodeId;
use serde::Serialize;

use crate::campaign::{self, sample_slots, Setup};
use crate::config::{FeederSource, MeterSpec, RunConfig};
use crate::export::{csv_writer, write_matrices, write_observability, write_rows, write_solution, write_traces};
use crate::feeder_io::{save_feeder_csv, save_feeder_json, write_partition};
use crate::measurement_io::save_measurements;
use crate::msglog::write_log;
use crate::timeseries::{load_timeseries, save_timeseries};
use crate::{Error, Result};

#[derive(Serialize)]
struct TrialRow<'a> {
    trial: usize,
    seed: u64,
    digest: &'a str,
    avg_error: f64,
    max_error: f64,
    iterations: usize,
    converged: bool,
    objective: f64,
    time: f64,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    method: &'a str,
    trials: usize,
    #[serde(rename = "Average Time")]
    average_time: f64,
    #[serde(rename = "Average Error")]
    average_error: f64,
    #[serde(rename = "Average Max Error")]
    average_max_error: f64,
    average_iterations: f64,
    non_converged: usize,
}

fn summary<'a>(method: &'a str, runs: &[&campaign::SolverRun]) -> SummaryRow<'a> {
    let n = runs.len() as f64;
    let mean = |f: &dyn Fn(&campaign::SolverRun) -> f64| runs.iter().map(|r| f(r)).sum::<f64>() / n;
    SummaryRow {
        method,
        trials: runs.len(),
        average_time: mean(&|r| r.time),
        average_error: mean(&|r| r.avg_error),
        average_max_error: mean(&|r| r.max_error),
        average_iterations: mean(&|r| r.state.iterations as f64),
        non_converged: runs.iter().filter(|r| !r.state.converged || r.failure.is_some()).count(),
    }
}

fn solver_name(cfg: &RunConfig) -> &'static str {
    match cfg.solver {
        crate::config::SolverKind::Gradient => "gradient",
        crate::config::SolverKind::Multiarea => "multiarea",
        crate::config::SolverKind::GaussNewton => "gauss-newton",
    }
}

/// `trials.csv`, `summary.csv`, `traces.csv`, `solution.csv` (trial 0) and,
/// for the multi-area solver, `message_log.jsonl` (trial 0).
pub fn estimate(cfg: &RunConfig) -> Result<Vec<campaign::TrialResult>> {
    cfg.prepare_out()?;
    let setup = Setup::new(cfg)?;
    let results = campaign::estimate(&setup, cfg)?;
    let out = &cfg.out;
    write_rows(
        &out.join("trials.csv"),
        results.iter().map(|r| TrialRow {
            trial: r.trial,
            seed: r.seed,
            digest: &r.digest,
            avg_error: r.run.avg_error,
            max_error: r.run.max_error,
            iterations: r.run.state.iterations,
            converged: r.run.state.converged && r.run.failure.is_none(),
            objective: r.run.state.objective,
            time: r.run.time,
        }),
    )?;
    let runs: Vec<_> = results.iter().map(|r| &r.run).collect();
    write_rows(&out.join("summary.csv"), [summary(solver_name(cfg), &runs)])?;
    write_traces(&out.join("traces.csv"), results.iter().map(|r| (r.trial, r.run.state.trace.as_slice())))?;
    let first = &results[0];
    let sol = solve_nonlinear(&setup.model, &first.run.state.z, &PowerFlowOptions::default())?;
    write_solution(&out.join("solution.csv"), &setup.model, &first.run.state.z, &sol)?;
    if cfg.solver == crate::config::SolverKind::Multiarea {
        write_log(&out.join("message_log.jsonl"), &first.run.messages)?;
    }
    Ok(results)
}

#[derive(Serialize)]
struct PairRow<'a> {
    trial: usize,
    seed: u64,
    gradient_digest: &'a str,
    gauss_newton_digest: &'a str,
    gradient_avg_error: f64,
    gradient_max_error: f64,
    gradient_iterations: usize,
    gradient_time: f64,
    gauss_newton_avg_error: f64,
    gauss_newton_max_error: f64,
    gauss_newton_iterations: usize,
    gauss_newton_converged: bool,
    gauss_newton_time: f64,
}

#[derive(Serialize)]
struct HistogramRow {
    bin_low: f64,
    bin_high: f64,
    gradient: usize,
    gauss_newton: usize,
}

/// Bin width of the error histogram, in percent.
pub const HISTOGRAM_BIN: f64 = 0.05;

fn histogram(a: &[f64], b: &[f64]) -> Vec<HistogramRow> {
    let bin = |e: f64| (e / HISTOGRAM_BIN).floor() as usize;
    let bins = a.iter().chain(b).map(|&e| bin(e) + 1).max().unwrap_or(0);
    let mut rows: Vec<HistogramRow> = (0..bins)
        .map(|i| HistogramRow {
            bin_low: i as f64 * HISTOGRAM_BIN,
            bin_high: (i + 1) as f64 * HISTOGRAM_BIN,
            gradient: 0,
            gauss_newton: 0,
        })
        .collect();
    for &e in a {
        rows[bin(e)].gradient += 1;
    }
    for &e in b {
        rows[bin(e)].gauss_newton += 1;
    }
    rows
}

/// `pairs.csv`, `histogram.csv` (per-node errors pooled over trials) and
/// `summary.csv` with one row per solver.
pub fn compare(cfg: &RunConfig) -> Result<Vec<campaign::PairedResult>> {
    cfg.prepare_out()?;
    let setup = Setup::new(cfg)?;
    let results = campaign::compare(&setup, cfg)?;
    let out = &cfg.out;
    write_rows(
        &out.join("pairs.csv"),
        results.iter().map(|r| PairRow {
            trial: r.trial,
            seed: r.seed,
            gradient_digest: &r.gradient_digest,
            gauss_newton_digest: &r.gauss_newton_digest,
            gradient_avg_error: r.gradient.avg_error,
            gradient_max_error: r.gradient.max_error,
            gradient_iterations: r.gradient.state.iterations,
            gradient_time: r.gradient.time,
            gauss_newton_avg_error: r.gauss_newton.avg_error,
            gauss_newton_max_error: r.gauss_newton.max_error,
            gauss_newton_iterations: r.gauss_newton.state.iterations,
            gauss_newton_converged: r.gauss_newton.state.converged && r.gauss_newton.failure.is_none(),
            gauss_newton_time: r.gauss_newton.time,
        }),
    )?;
    let ga: Vec<f64> = results.iter().flat_map(|r| r.gradient_node_errors.iter().copied()).collect();
    let gn: Vec<f64> = results.iter().flat_map(|r| r.gauss_newton_node_errors.iter().copied()).collect();
    write_rows(&out.join("histogram.csv"), histogram(&ga, &gn))?;
    let first = if cfg.solver == crate::config::SolverKind::Multiarea { "multiarea" } else { "gradient" };
    let g: Vec<_> = results.iter().map(|r| &r.gradient).collect();
    let n: Vec<_> = results.iter().map(|r| &r.gauss_newton).collect();
    write_rows(&out.join("summary.csv"), [summary(first, &g), summary("gauss-newton", &n)])?;
    Ok(results)
}

fn diurnal(cfg: &RunConfig, model: &dsse_core::FeederModel) -> Vec<Scenario> {
    let spec = DiurnalSpec { ticks: cfg.ticks, seed: cfg.seed, ..DiurnalSpec::default() };
    dsse_core::measurements::diurnal_profile(model, &spec)
}

/// `realtime.csv` with one row per tick and `summary.csv` with the final
/// running averages.
pub fn realtime(cfg: &RunConfig) -> Result<Vec<campaign::TickResult>> {
    if let Some(p) = &cfg.timeseries {
        if !p.is_file() {
            return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "no such time series file")));
        }
    }
    cfg.prepare_out()?;
    let setup = Setup::new(cfg)?;
    let scenarios = match &cfg.timeseries {
        Some(p) => load_timeseries(&setup.model, p, cfg.seed)?,
        None => diurnal(cfg, &setup.model),
    };
    let ticks = campaign::realtime(&setup, cfg, &scenarios)?;
    let path = cfg.out.join("realtime.csv");
    let mut w = csv_writer(&path)?;
    let csv_err = |e| Error::Csv { path: path.clone(), source: e };
    let idx = setup.model.state_index();
    let labels: Vec<String> = sample_slots(idx.len())
        .iter()
        .map(|&k| {
            let (i, ph) = idx.slot(k);
            format!("{}{}", setup.model.id(i).0, ph.as_char())
        })
        .collect();
    let mut header: Vec<String> =
        ["tick", "avg_error", "max_error", "running_avg_error", "running_max_error", "objective", "time"]
            .map(String::from)
            .to_vec();
    for l in &labels {
        header.push(format!("vmag_true_{l}"));
        header.push(format!("vmag_est_{l}"));
    }
    w.write_record(&header).map_err(csv_err)?;
    for t in &ticks {
        let mut rec = vec![
            t.tick.to_string(),
            t.avg_error.to_string(),
            t.max_error.to_string(),
            t.running_avg.to_string(),
            t.running_max.to_string(),
            t.objective.to_string(),
            t.time.to_string(),
        ];
        for &(a, b) in &t.samples {
            rec.push(a.to_string());
            rec.push(b.to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    #[derive(Serialize)]
    struct RealtimeSummary {
        ticks: usize,
        final_running_avg_error: f64,
        final_running_max_error: f64,
        average_step_time: f64,
    }
    let last = ticks.last().expect("time series is non-empty");
    write_rows(
        &cfg.out.join("summary.csv"),
        [RealtimeSummary {
            ticks: ticks.len(),
            final_running_avg_error: last.running_avg,
            final_running_max_error: last.running_max,
            average_step_time: ticks.iter().map(|t| t.time).sum::<f64>() / ticks.len() as f64,
        }],
    )?;
    Ok(ticks)
}

/// Options of the observability command beyond the run configuration.
#[derive(Clone, Debug, Default)]
pub struct ObservabilityOptions {
    /// Ignore the meter setting and use no voltage meters.
    pub no_meters: bool,
    /// Pseudo channels to remove, as `(node, 'p' | 'q')`.
    pub drop_pseudo: Vec<(u32, char)>,
}

/// `observability.json` and, when rank-deficient, `null_space.csv`, for the
/// nominal-load measurement set of the configuration.
pub fn observability(
    cfg: &RunConfig,
    opts: &ObservabilityOptions,
) -> Result<dsse_core::observability::ObservabilityReport> {
    cfg.prepare_out()?;
    let setup = Setup::new(cfg)?;
    let model = &setup.model;
    let placement = if opts.no_meters { MeterPlacement::Slots(Vec::new()) } else { cfg.meters.placement() };
    let (mut ms, _) = synthesize(model, &model.nominal_injections(), &cfg.noise_policy(), &placement, cfg.seed)?;
    let idx = model.state_index();
    for &(node, which) in &opts.drop_pseudo {
        let i = model.index_of(NodeId(node))?;
        for ph in model.node(i).phases.iter() {
            let k = idx.get(i, ph).ok_or_else(|| Error::Config(format!("node {node} has no state slot")))?;
            match which {
                'p' => ms.sigma_p[k] = None,
                'q' => ms.sigma_q[k] = None,
                _ => return Err(Error::Config(format!("pseudo channel must be p or q, got {which:?}"))),
            }
        }
    }
    let rep = build_h(model, &ms)?;
    write_observability(&cfg.out, model, &rep)?;
    save_measurements(model, &ms, &cfg.out.join("measurements.json"))?;
    Ok(rep)
}

/// Writes the feeder as `feeder.json` and a `feeder/` CSV pair, the
/// sensitivity matrices under `matrices/`, and one nominal-load
/// measurement set.
pub fn generate(cfg: &RunConfig) -> Result<()> {
    cfg.prepare_out()?;
    let setup = Setup::new(cfg)?;
    let out = &cfg.out;
    save_feeder_json(&setup.model, &out.join("feeder.json"))?;
    save_feeder_csv(&setup.model, &out.join("feeder"))?;
    write_matrices(&out.join("matrices"), &setup.model, &setup.sm)?;
    let (ms, _) = synthesize(
        &setup.model,
        &setup.model.nominal_injections(),
        &cfg.noise_policy(),
        &cfg.meters.placement(),
        cfg.seed,
    )?;
    save_measurements(&setup.model, &ms, &out.join("measurements.json"))
}

/// `partition.csv` with the area of every node (0 for unclustered).
pub fn partition(cfg: &RunConfig) -> Result<()> {
    cfg.prepare_out()?;
    let setup = Setup::new(cfg)?;
    let path = cfg.out.join("partition.csv");
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    write_partition(&setup.model, &setup.partition, &mut w).map_err(|e| Error::io(&path, e))?;
    w.flush().map_err(|e| Error::io(&path, e))
}

/// `timeseries.csv` holding the generated diurnal profile.
pub fn timeseries(cfg: &RunConfig) -> Result<()> {
    cfg.prepare_out()?;
    let setup = Setup::new(cfg)?;
    let scenarios = diurnal(cfg, &setup.model);
    save_timeseries(&setup.model, &scenarios, &cfg.out.join("timeseries.csv"))
}

/// Configuration of the built-in 37-node comparison: three meters at the
/// nodes used for the static tables.
pub fn builtin_comparison(trials: usize, seed: u64) -> RunConfig {
    RunConfig {
        feeder: FeederSource::Builtin37 { seed: 0 },
        meters: MeterSpec::List(
            FIG2_METERS.iter().map(|&n| crate::config::MeterRef { node: n, phase: None }).collect(),
        ),
        trials,
        seed,
        ..RunConfig::default()
    }
}
