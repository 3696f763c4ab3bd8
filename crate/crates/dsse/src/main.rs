use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dsse::commands::{self, ObservabilityOptions};
use dsse::config::{parse_roots, Eps, FeedbackKind, FeederSource, MeterSpec, RunConfig, SolverKind};

#[derive(Parser)]
#[command(name = "dsse", version, about = "Distribution system state estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a feeder, its sensitivity matrices and one measurement set.
    Generate(Common),
    /// Assign nodes to areas below the given roots.
    Partition(Common),
    /// Monte-Carlo static estimation with one solver.
    Estimate(Common),
    /// One gradient step per tick over a time series.
    Realtime {
        #[command(flatten)]
        common: Common,
        /// Time-series CSV; a diurnal profile is generated when absent.
        #[arg(long)]
        timeseries: Option<PathBuf>,
        /// Ticks of the generated profile.
        #[arg(long)]
        ticks: Option<usize>,
    },
    /// Rank and observability index of the measurement matrix.
    Observability {
        #[command(flatten)]
        common: Common,
        /// Use no voltage meters.
        #[arg(long)]
        no_meters: bool,
        /// Remove pseudo channels, e.g. `5p,7q`.
        #[arg(long, value_delimiter = ',')]
        drop_pseudo: Vec<String>,
    },
    /// Gradient against Gauss-Newton on paired measurement realizations.
    Compare(Common),
    /// Write a generated diurnal time series.
    Timeseries {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ticks: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// Start from a saved `config.json`; other flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Feeder JSON file or CSV directory.
    #[arg(long, conflicts_with = "generate")]
    feeder: Option<PathBuf>,
    /// `size=N,seed=S[,phases=3]` or `builtin37[,seed=S]`.
    #[arg(long)]
    generate: Option<String>,
    /// Area root node ids, comma separated.
    #[arg(long)]
    roots: Option<String>,
    /// `frac=F` or `list=N,N,...` (a trailing letter picks one phase).
    #[arg(long)]
    meters: Option<String>,
    /// Relative σ of voltage magnitude readings.
    #[arg(long)]
    sigma_v: Option<f64>,
    /// Relative σ of pseudo-measurements.
    #[arg(long)]
    sigma_rel: Option<f64>,
    /// Synthesize exact readings (σ is still used for the weights).
    #[arg(long)]
    no_noise: bool,
    #[arg(long, value_enum)]
    solver: Option<SolverKind>,
    #[arg(long, value_enum)]
    feedback: Option<FeedbackKind>,
    /// `auto` or a step size.
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Relative spread of true loads around nominal.
    #[arg(long)]
    load_spread: Option<f64>,
    #[arg(long, env = "DSSE_OUT_DIR")]
    out: Option<PathBuf>,
    /// Write zero wall times so repeated runs are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.feeder {
            cfg.feeder = FeederSource::Path(p.clone());
        }
        if let Some(g) = &self.generate {
            cfg.feeder = g.parse()?;
        }
        if let Some(r) = &self.roots {
            cfg.roots = parse_roots(r)?;
        }
        if let Some(m) = &self.meters {
            cfg.meters = m.parse::<MeterSpec>()?;
        }
        if let Some(s) = self.sigma_v {
            cfg.noise.sigma_mag = s;
        }
        if let Some(s) = self.sigma_rel {
            cfg.noise.sigma_rel = s;
        }
        if self.no_noise {
            cfg.noise.apply = false;
        }
        if let Some(s) = self.solver {
            cfg.solver = s;
        }
        if let Some(f) = self.feedback {
            cfg.feedback = f;
        }
        if let Some(e) = &self.eps {
            cfg.eps = e.parse::<Eps>()?;
        }
        if let Some(d) = self.delta {
            cfg.delta = d;
        }
        if let Some(m) = self.max_iters {
            cfg.max_iters = m;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.load_spread {
            cfg.load_spread = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if self.no_timing {
            cfg.timing = false;
        }
        Ok(cfg)
    }
}

fn parse_drop(items: &[String]) -> anyhow::Result<Vec<(u32, char)>> {
    items
        .iter()
        .map(|s| {
            let s = s.trim();
            let (node, which) = s.split_at(s.len().saturating_sub(1));
            let which = which.chars().next().filter(|c| matches!(c, 'p' | 'q'));
            match (node.parse(), which) {
                (Ok(n), Some(c)) => Ok((n, c)),
                _ => anyhow::bail!("pseudo channel must look like 5p or 7q, got {s:?}"),
            }
        })
        .collect()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate(c) => commands::generate(&c.resolve()?)?,
        Command::Partition(c) => commands::partition(&c.resolve()?)?,
        Command::Estimate(c) => {
            let cfg = c.resolve()?;
            let res = commands::estimate(&cfg)?;
            let n = res.len() as f64;
            let avg = res.iter().map(|r| r.run.avg_error).sum::<f64>() / n;
            let max = res.iter().map(|r| r.run.max_error).sum::<f64>() / n;
            println!("{} trials: average error {avg:.4}%, average max error {max:.4}%", res.len());
        }
        Command::Realtime { common, timeseries, ticks } => {
            let mut cfg = common.resolve()?;
            if timeseries.is_some() {
                cfg.timeseries = timeseries;
            }
            if let Some(t) = ticks {
                cfg.ticks = t;
            }
            let ticks = commands::realtime(&cfg)?;
            let last = ticks.last().expect("non-empty");
            println!(
                "{} ticks: running average error {:.4}%, running max error {:.4}%",
                ticks.len(),
                last.running_avg,
                last.running_max
            );
        }
        Command::Observability { common, no_meters, drop_pseudo } => {
            let cfg = common.resolve()?;
            let opts = ObservabilityOptions { no_meters, drop_pseudo: parse_drop(&drop_pseudo)? };
            let rep = commands::observability(&cfg, &opts)?;
            println!("rank {} of {}, index {:.2}%", rep.rank, rep.h.ncols(), rep.index_percent);
        }
        Command::Compare(c) => {
            let cfg = c.resolve()?;
            let res = commands::compare(&cfg)?;
            let n = res.len() as f64;
            let g = res.iter().map(|r| r.gradient.avg_error).sum::<f64>() / n;
            let gn = res.iter().map(|r| r.gauss_newton.avg_error).sum::<f64>() / n;
            let failed =
                res.iter().filter(|r| !r.gauss_newton.state.converged || r.gauss_newton.failure.is_some()).count();
            println!("gradient {g:.4}%, Gauss-Newton {gn:.4}% ({failed} not converged)");
        }
        Command::Timeseries { common, ticks } => {
            let mut cfg = common.resolve()?;
            if let Some(t) = ticks {
                cfg.ticks = t;
            }
            commands::timeseries(&cfg)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
