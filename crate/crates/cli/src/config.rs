//! Flag parsing, the flat config file and resolution into a validated
//! [`ExperimentConfig`]. Flags override file values, which override defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use qcd_core::{DistributionPair, ThresholdPolicy};

pub const DEFAULT_TRIALS: u64 = 10_000;
pub const DEFAULT_CONFIDENCE: f64 = qcd_core::montecarlo::DEFAULT_CONFIDENCE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DistKind {
    Gaussian,
    Bernoulli,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Tvt,
    Fixed,
}

/// Change-point selection: explicit values, no change, or a generated grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(into = "String")]
pub enum NuSpec {
    Never,
    Values(Vec<u64>),
    /// `{1, T/4, T/2, 3T/4, T − d}`
    Grid,
    /// every `ν` in `1..T`
    Full,
}

impl FromStr for NuSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "inf" | "infinity" | "never" => Ok(Self::Never),
            "grid" => Ok(Self::Grid),
            "full" => Ok(Self::Full),
            list => list
                .split(',')
                .map(|v| {
                    let nu: u64 = v.trim().parse().map_err(|_| format!("invalid change point `{v}`"))?;
                    if nu == 0 {
                        return Err("change points start at 1".to_string());
                    }
                    Ok(nu)
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Self::Values),
        }
    }
}

impl fmt::Display for NuSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Never => f.write_str("inf"),
            Self::Grid => f.write_str("grid"),
            Self::Full => f.write_str("full"),
            Self::Values(v) => {
                let parts: Vec<String> = v.iter().map(u64::to_string).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

impl From<NuSpec> for String {
    fn from(nu: NuSpec) -> Self {
        nu.to_string()
    }
}

/// Flags shared by every subcommand. All optional so the config file can fill gaps.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Flat TOML file whose keys mirror the long flag names
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub dist: Option<DistKind>,
    #[arg(long, allow_negative_numbers = true)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Pre-change probability (bernoulli) or comma-separated pmf (table)
    #[arg(long, value_delimiter = ',')]
    pub p0: Option<Vec<f64>>,
    /// Post-change probability (bernoulli) or comma-separated pmf (table)
    #[arg(long, value_delimiter = ',')]
    pub p1: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyKind>,
    #[arg(long)]
    pub delta_f: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    /// Fixed threshold (with --policy fixed)
    #[arg(long, allow_negative_numbers = true)]
    pub b: Option<f64>,
    /// Comma-separated horizons
    #[arg(long, value_delimiter = ',')]
    pub horizon: Option<Vec<u64>>,
    #[arg(long)]
    pub delta_d: Option<f64>,
    /// `inf`, `grid`, `full` or comma-separated change points
    #[arg(long)]
    pub nu: Option<NuSpec>,
    /// Comma-separated detection windows
    #[arg(long, value_delimiter = ',')]
    pub d: Option<Vec<u64>>,
    #[arg(long)]
    pub trials: Option<u64>,
    /// Master seed; drawn from the clock and recorded when absent
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for simulation (0 = all cores); never changes results
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub confidence: Option<f64>,
    /// Include exact oracle rows (discrete pairs only)
    #[arg(long)]
    pub oracle: bool,
    /// CSV destination; the manifest goes next to it as `<stem>.manifest.json`
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            Self::One(v) => vec![v],
            Self::Many(v) => v,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum NuValue {
    Text(String),
    One(u64),
    Many(Vec<u64>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct FileConfig {
    dist: Option<DistKind>,
    mu: Option<f64>,
    sigma: Option<f64>,
    p0: Option<OneOrMany<f64>>,
    p1: Option<OneOrMany<f64>>,
    policy: Option<PolicyKind>,
    #[serde(alias = "delta_f")]
    delta_f: Option<f64>,
    r: Option<f64>,
    b: Option<f64>,
    horizon: Option<OneOrMany<u64>>,
    #[serde(alias = "delta_d")]
    delta_d: Option<f64>,
    nu: Option<NuValue>,
    d: Option<OneOrMany<u64>>,
    trials: Option<u64>,
    seed: Option<u64>,
    workers: Option<usize>,
    confidence: Option<f64>,
    oracle: Option<bool>,
    out: Option<PathBuf>,
}

fn load_file(path: &Path) -> anyhow::Result<FileConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
}

impl CommonArgs {
    /// Fills every unset flag from the config file named by `--config`.
    fn merged(mut self) -> anyhow::Result<Self> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let file = load_file(&path)?;
        self.dist = self.dist.or(file.dist);
        self.mu = self.mu.or(file.mu);
        self.sigma = self.sigma.or(file.sigma);
        self.p0 = self.p0.or(file.p0.map(OneOrMany::into_vec));
        self.p1 = self.p1.or(file.p1.map(OneOrMany::into_vec));
        self.policy = self.policy.or(file.policy);
        self.delta_f = self.delta_f.or(file.delta_f);
        self.r = self.r.or(file.r);
        self.b = self.b.or(file.b);
        self.horizon = self.horizon.or(file.horizon.map(OneOrMany::into_vec));
        self.delta_d = self.delta_d.or(file.delta_d);
        if self.nu.is_none() {
            self.nu = match file.nu {
                None => None,
                Some(NuValue::Text(s)) => Some(s.parse().map_err(UsageError)?),
                Some(NuValue::One(v)) => Some(NuSpec::Values(vec![v])),
                Some(NuValue::Many(v)) => Some(NuSpec::Values(v)),
            };
        }
        self.d = self.d.or(file.d.map(OneOrMany::into_vec));
        self.trials = self.trials.or(file.trials);
        self.seed = self.seed.or(file.seed);
        self.workers = self.workers.or(file.workers);
        self.confidence = self.confidence.or(file.confidence);
        self.oracle = self.oracle || file.oracle.unwrap_or(false);
        self.out = self.out.or(file.out);
        Ok(self)
    }
}

/// The distribution pair as the user specified it.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum DistSpec {
    Gaussian { mu: f64, sigma: f64 },
    Bernoulli { p0: f64, p1: f64 },
    Table { p0: Vec<f64>, p1: Vec<f64> },
}

impl DistSpec {
    pub fn build(&self) -> qcd_core::Result<DistributionPair> {
        match self {
            Self::Gaussian { mu, sigma } => DistributionPair::gaussian(*mu, *sigma),
            Self::Bernoulli { p0, p1 } => DistributionPair::bernoulli(*p0, *p1),
            Self::Table { p0, p1 } => DistributionPair::table(p0.clone(), p1.clone()),
        }
    }
}

/// Every parameter a run used, after precedence and validation.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub command: String,
    pub dist: DistSpec,
    pub policy: ThresholdPolicy,
    pub horizons: Vec<u64>,
    pub delta_f: Option<f64>,
    pub r: Option<f64>,
    pub delta_d: Option<f64>,
    pub nu: NuSpec,
    pub d: Vec<u64>,
    pub trials: u64,
    pub seed: u64,
    pub workers: usize,
    pub confidence: f64,
    pub oracle: bool,
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub pair: DistributionPair,
}

/// A bad flag, range or combination. Reported with exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

macro_rules! usage {
    ($($arg:tt)*) => {
        return Err(UsageError(format!($($arg)*)).into())
    };
}

fn open_unit(name: &str, v: f64) -> anyhow::Result<f64> {
    if !(v > 0.0 && v < 1.0) {
        usage!("--{name} must lie in (0, 1); got {v}");
    }
    Ok(v)
}

fn single(name: &str, v: Option<Vec<f64>>) -> anyhow::Result<f64> {
    match v.as_deref() {
        Some([x]) => Ok(*x),
        Some(_) => usage!("--{name} takes a single value for --dist bernoulli"),
        None => usage!("--dist bernoulli needs --{name}"),
    }
}

fn clock_seed() -> u64 {
    let now = chrono::Utc::now();
    now.timestamp_nanos_opt().unwrap_or_else(|| now.timestamp()) as u64
}

/// Which optional groups a subcommand insists on.
#[derive(Debug, Clone, Copy, Default)]
pub struct Needs {
    pub delta_d: bool,
    pub lower_bound: bool,
    pub tvt: bool,
}

pub fn resolve(command: &str, args: CommonArgs, needs: Needs) -> anyhow::Result<ExperimentConfig> {
    let args = args.merged()?;

    let dist = match args.dist {
        None => usage!("--dist is required (gaussian, bernoulli or table)"),
        Some(DistKind::Gaussian) => DistSpec::Gaussian {
            mu: args.mu.unwrap_or(1.0),
            sigma: args.sigma.unwrap_or(1.0),
        },
        Some(DistKind::Bernoulli) => DistSpec::Bernoulli {
            p0: single("p0", args.p0)?,
            p1: single("p1", args.p1)?,
        },
        Some(DistKind::Table) => match (args.p0, args.p1) {
            (Some(p0), Some(p1)) => DistSpec::Table { p0, p1 },
            _ => usage!("--dist table needs --p0 and --p1 as comma-separated pmfs"),
        },
    };
    let pair = dist.build().map_err(|e| UsageError(e.to_string()))?;

    let kind = if needs.tvt {
        PolicyKind::Tvt
    } else {
        args.policy.unwrap_or(PolicyKind::Tvt)
    };
    if needs.tvt && args.policy == Some(PolicyKind::Fixed) {
        usage!("`{command}` only supports --policy tvt");
    }
    let (policy, delta_f, r) = match kind {
        PolicyKind::Tvt => {
            let delta_f = open_unit("delta-f", args.delta_f.unwrap_or(0.05))?;
            let r = args.r.unwrap_or(2.0);
            if !(r.is_finite() && r > 1.0) {
                usage!("--r must exceed 1; got {r}");
            }
            let policy = ThresholdPolicy::time_varying(delta_f, r).map_err(|e| UsageError(e.to_string()))?;
            (policy, Some(delta_f), Some(r))
        }
        PolicyKind::Fixed => {
            let Some(b) = args.b else {
                usage!("--policy fixed needs --b");
            };
            let policy = ThresholdPolicy::fixed(b).map_err(|e| UsageError(e.to_string()))?;
            (policy, args.delta_f.map(|v| open_unit("delta-f", v)).transpose()?, None)
        }
    };

    let horizons = args.horizon.unwrap_or_default();
    if horizons.is_empty() {
        usage!("--horizon needs at least one value");
    }
    if horizons.contains(&0) {
        usage!("horizons must be positive");
    }

    let delta_d = args.delta_d.map(|v| open_unit("delta-d", v)).transpose()?;
    if needs.delta_d && delta_d.is_none() {
        usage!("`{command}` needs --delta-d");
    }
    if needs.lower_bound {
        if let (Some(f), Some(d)) = (delta_f, delta_d) {
            if f + d >= 1.0 {
                usage!("the lower bound needs delta-f + delta-d < 1; got {}", f + d);
            }
        }
    }

    let confidence = args.confidence.unwrap_or(DEFAULT_CONFIDENCE);
    if !(confidence > 0.0 && confidence < 1.0) {
        usage!("--confidence must lie in (0, 1); got {confidence}");
    }

    Ok(ExperimentConfig {
        command: command.to_string(),
        dist,
        policy,
        horizons,
        delta_f,
        r,
        delta_d,
        nu: args.nu.unwrap_or(NuSpec::Never),
        d: args.d.unwrap_or_default(),
        trials: args.trials.unwrap_or(DEFAULT_TRIALS),
        seed: args.seed.unwrap_or_else(clock_seed),
        workers: args.workers.unwrap_or(0),
        confidence,
        oracle: args.oracle,
        out: args.out,
        pair,
    })
}

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> anyhow::Result<()> {
    if !cond {
        bail!(UsageError(msg()));
    }
    Ok(())
}
