//! Run configuration. A run is reproducible from its [`RunConfig`] alone,
//! which is why every command copies it into the output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dsse_core::estimator::{Feedback, GradientOptions, StepSize};
use dsse_core::generate::{fig2_feeder, generate_feeder, GeneratorSpec, PhaseMix};
use dsse_core::measurements::{MeterPlacement, NoisePolicy};
use dsse_core::{FeederModel, NodeId, Phase};
use serde::{Deserialize, Serialize};

use crate::feeder_io::load_feeder;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeederSource {
    Path(PathBuf),
    Generate(GenerateSpec),
    /// The built-in 37-node test feeder, with loads drawn from `seed`.
    Builtin37 {
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateSpec {
    /// Non-slack nodes.
    pub size: usize,
    pub seed: u64,
    #[serde(default)]
    pub three_phase: bool,
}

impl FromStr for FeederSource {
    type Err = Error;

    /// `size=N,seed=S[,phases=1|3]` or `builtin37[,seed=S]`.
    fn from_str(s: &str) -> Result<Self> {
        let mut size = None;
        let mut seed = 0;
        let mut three_phase = false;
        let mut builtin = false;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.split_once('=') {
                None if part == "builtin37" => builtin = true,
                Some(("size", v)) => size = Some(parse_num(v, "size")?),
                Some(("seed", v)) => seed = parse_num(v, "seed")?,
                Some(("phases", "1")) => three_phase = false,
                Some(("phases", "3")) => three_phase = true,
                _ => return Err(Error::Config(format!("unrecognized generator field {part:?}"))),
            }
        }
        if builtin {
            if size.is_some() {
                return Err(Error::Config("builtin37 has a fixed size".into()));
            }
            return Ok(FeederSource::Builtin37 { seed });
        }
        let size = size.ok_or_else(|| Error::Config("generator spec needs size=N".into()))?;
        Ok(FeederSource::Generate(GenerateSpec { size, seed, three_phase }))
    }
}

fn parse_num<T: FromStr>(v: &str, what: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("cannot parse {what} from {v:?}")))
}

impl FeederSource {
    pub fn load(&self) -> Result<FeederModel> {
        Ok(match self {
            FeederSource::Path(p) => load_feeder(p)?,
            FeederSource::Builtin37 { seed } => fig2_feeder(*seed)?,
            FeederSource::Generate(g) => generate_feeder(&GeneratorSpec {
                size: g.size,
                seed: g.seed,
                phase_mix: if g.three_phase {
                    PhaseMix::ThreePhase { lateral_fraction: 0.4, mutual_ratio: 0.35 }
                } else {
                    PhaseMix::SinglePhase
                },
                ..GeneratorSpec::default()
            })?,
        })
    }
}

/// A metered node, optionally restricted to one phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeterRef {
    pub node: u32,
    pub phase: Option<char>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeterSpec {
    Fraction(f64),
    List(Vec<MeterRef>),
}

impl FromStr for MeterSpec {
    type Err = Error;

    /// `frac=0.05` or `list=6,12,34b`.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(v) = s.strip_prefix("frac=") {
            return Ok(MeterSpec::Fraction(parse_num(v, "meter fraction")?));
        }
        let Some(list) = s.strip_prefix("list=") else {
            return Err(Error::Config(format!("meters must be frac=F or list=N,N,..., got {s:?}")));
        };
        let mut out = Vec::new();
        for tok in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (digits, phase) = match tok.char_indices().last() {
                Some((i, c)) if c.is_ascii_alphabetic() => (&tok[..i], Some(c.to_ascii_lowercase())),
                _ => (tok, None),
            };
            if let Some(c) = phase {
                if Phase::from_char(c).is_none() {
                    return Err(Error::Config(format!("bad phase in meter {tok:?}")));
                }
            }
            out.push(MeterRef { node: parse_num(digits, "meter node")?, phase });
        }
        Ok(MeterSpec::List(out))
    }
}

impl MeterSpec {
    pub fn placement(&self) -> MeterPlacement {
        match self {
            MeterSpec::Fraction(f) => MeterPlacement::Fraction(*f),
            MeterSpec::List(list) => MeterPlacement::Nodes(
                list.iter().map(|m| (NodeId(m.node), m.phase.and_then(Phase::from_char))).collect(),
            ),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Gradient,
    Multiarea,
    GaussNewton,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackKind {
    Linear,
    Nonlinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eps {
    Auto,
    Value(f64),
}

impl FromStr for Eps {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            Ok(Eps::Auto)
        } else {
            Ok(Eps::Value(parse_num(s, "eps")?))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Relative σ of voltage magnitude readings.
    pub sigma_mag: f64,
    /// Relative σ of pseudo-measurements.
    pub sigma_rel: f64,
    pub apply: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub feeder: FeederSource,
    /// Area roots by node id; empty means a single unpartitioned DSO.
    pub roots: Vec<u32>,
    pub noise: NoiseConfig,
    pub meters: MeterSpec,
    pub solver: SolverKind,
    pub feedback: FeedbackKind,
    pub eps: Eps,
    pub delta: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub trials: usize,
    /// True loads are nominal times `1 + U(-load_spread, load_spread)`.
    pub load_spread: f64,
    /// Ticks of the generated diurnal profile when no time series is given.
    pub ticks: usize,
    pub timeseries: Option<PathBuf>,
    /// Wall-time columns are written as zero when false.
    pub timing: bool,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            feeder: FeederSource::Builtin37 { seed: 0 },
            roots: Vec::new(),
            noise: NoiseConfig { sigma_mag: 0.01, sigma_rel: 0.5, apply: true },
            meters: MeterSpec::Fraction(0.05),
            solver: SolverKind::Gradient,
            feedback: FeedbackKind::Nonlinear,
            eps: Eps::Auto,
            delta: 1e-6,
            max_iters: 500,
            seed: 0,
            trials: 1,
            load_spread: 0.3,
            ticks: 3600,
            timeseries: None,
            timing: true,
            out: PathBuf::from("dsse-out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs always serialize") + "\n"
    }

    /// Creates the output directory and writes `config.json` into it.
    pub fn prepare_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let path = self.out.join("config.json");
        fs::write(&path, self.to_json()).map_err(|e| Error::io(&path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config("delta must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.load_spread) {
            return Err(Error::Config("load_spread must lie in [0, 1)".into()));
        }
        if let Eps::Value(e) = self.eps {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Config("eps must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn noise_policy(&self) -> NoisePolicy {
        NoisePolicy {
            sigma_mag: self.noise.sigma_mag,
            sigma_rel: self.noise.sigma_rel,
            apply_noise: self.noise.apply,
            ..NoisePolicy::default()
        }
    }

    pub fn step(&self) -> StepSize {
        match self.eps {
            Eps::Auto => StepSize::Auto,
            Eps::Value(e) => StepSize::Fixed(e),
        }
    }

    pub fn gradient_options(&self) -> GradientOptions {
        GradientOptions {
            step: self.step(),
            max_iters: self.max_iters,
            delta: self.delta,
            ..GradientOptions::default()
        }
    }

    pub fn feedback<'a>(&self, model: &'a FeederModel) -> Feedback<'a> {
        match self.feedback {
            FeedbackKind::Linear => Feedback::Linear,
            FeedbackKind::Nonlinear => Feedback::nonlinear(model),
        }
    }

    pub fn root_ids(&self) -> Vec<NodeId> {
        self.roots.iter().map(|&r| NodeId(r)).collect()
    }
}

/// `3,11,20` into node ids.
pub fn parse_roots(s: &str) -> Result<Vec<u32>> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(|t| parse_num(t, "root")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_and_meter_specs_parse() {
        assert_eq!(
            "size=50,seed=7".parse::<FeederSource>().unwrap(),
            FeederSource::Generate(GenerateSpec { size: 50, seed: 7, three_phase: false })
        );
        assert_eq!("builtin37,seed=2".parse::<FeederSource>().unwrap(), FeederSource::Builtin37 { seed: 2 });
        assert!("seed=1".parse::<FeederSource>().is_err());
        assert_eq!("frac=0.05".parse::<MeterSpec>().unwrap(), MeterSpec::Fraction(0.05));
        assert_eq!(
            "list=6,12b".parse::<MeterSpec>().unwrap(),
            MeterSpec::List(vec![MeterRef { node: 6, phase: None }, MeterRef { node: 12, phase: Some('b') }])
        );
        assert!("list=6x".parse::<MeterSpec>().is_err());
        assert_eq!("auto".parse::<Eps>().unwrap(), Eps::Auto);
        assert_eq!(parse_roots("3, 11,20").unwrap(), vec![3, 11, 20]);
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = RunConfig { meters: "list=6,12,34".parse().unwrap(), eps: Eps::Value(0.1), ..RunConfig::default() };
        let back: RunConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }
}
