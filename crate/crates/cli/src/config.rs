use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use nys_sink::reference::DEFAULT_PROJECTION_CAP;
use nys_sink::RankPolicy;
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "nys-sink", version, about = "Entropic optimal transport between point clouds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one instance and write the report as JSON.
    Compute(CommonArgs),
    /// Time dense and low-rank Sinkhorn to a target accuracy; CSV output.
    Benchmark(BenchmarkArgs),
    /// Run the randomized property suites and print a pass/fail table.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON file with any of the long options (snake_case keys). Flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV with the first cloud.
    #[arg(long)]
    pub points_a: Option<PathBuf>,
    /// CSV with the second cloud.
    #[arg(long)]
    pub points_b: Option<PathBuf>,
    /// Kernel bandwidth η (the cost is scaled by η in the exponent).
    #[arg(long)]
    pub eta: Option<f64>,
    /// Target additive accuracy.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ceiling on the Nyström rank.
    #[arg(long)]
    pub r_max: Option<usize>,
    /// Largest support on which dense kernels and references are allowed.
    #[arg(long)]
    pub dense_cap: Option<usize>,
    #[arg(long)]
    pub max_retries: Option<usize>,
    /// Sinkhorn iteration ceiling (default: derived from the accuracy target).
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output file (default: stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated η values (default: --eta).
    #[arg(long, value_delimiter = ',')]
    pub etas: Option<Vec<f64>>,
    /// Comma-separated ranks; `auto` uses the adaptive certified rank.
    #[arg(long, value_delimiter = ',')]
    pub ranks: Option<Vec<RankSpec>>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Synthetic support size when no point files are given.
    #[arg(long)]
    pub n: Option<usize>,
    /// Synthetic dimension when no point files are given.
    #[arg(long)]
    pub d: Option<usize>,
    /// Stop each run once |Ŵ − W_η| falls below this.
    #[arg(long)]
    pub target: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Random samples per suite.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Fault injection: skip the rounding step. The feasibility suite must fail.
    #[arg(long)]
    pub skip_rounding: bool,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankSpec {
    Auto,
    Fixed(usize),
}

impl FromStr for RankSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(RankSpec::Auto);
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("rank must be a positive integer or `auto`, got {s:?}")),
            Ok(r) => Ok(RankSpec::Fixed(r)),
        }
    }
}

impl From<RankSpec> for RankPolicy {
    fn from(r: RankSpec) -> Self {
        match r {
            RankSpec::Auto => RankPolicy::Adaptive,
            RankSpec::Fixed(r) => RankPolicy::Fixed(r),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RankEntry {
    Number(usize),
    Text(String),
}

/// Contents of a `--config` file. Unknown keys are an error.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    points_a: Option<PathBuf>,
    points_b: Option<PathBuf>,
    eta: Option<f64>,
    eps: Option<f64>,
    seed: Option<u64>,
    r_max: Option<usize>,
    dense_cap: Option<usize>,
    max_retries: Option<usize>,
    max_iters: Option<usize>,
    threads: Option<usize>,
    output: Option<PathBuf>,
    etas: Option<Vec<f64>>,
    ranks: Option<Vec<RankEntry>>,
    repeats: Option<usize>,
    n: Option<usize>,
    d: Option<usize>,
    target: Option<f64>,
    samples: Option<usize>,
}

fn read_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Fully resolved settings shared by every subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub points_a: Option<PathBuf>,
    pub points_b: Option<PathBuf>,
    pub eta: f64,
    pub eps: f64,
    pub seed: u64,
    pub r_max: Option<usize>,
    pub dense_cap: usize,
    pub max_retries: usize,
    pub max_iters: Option<usize>,
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
    pub etas: Vec<f64>,
    pub ranks: Vec<RankSpec>,
    pub repeats: usize,
    pub n: usize,
    pub d: usize,
    pub target: f64,
    pub samples: usize,
    pub skip_rounding: bool,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            points_a: None,
            points_b: None,
            eta: 1.0,
            eps: 0.1,
            seed: 0,
            r_max: None,
            dense_cap: DEFAULT_PROJECTION_CAP,
            max_retries: 5,
            max_iters: None,
            threads: None,
            output: None,
            etas: Vec::new(),
            ranks: vec![RankSpec::Auto],
            repeats: 3,
            n: 1000,
            d: 2,
            target: 1e-2,
            samples: 1000,
            skip_rounding: false,
        }
    }
}

impl CliConfig {
    pub fn from_common(args: &CommonArgs) -> Result<Self> {
        let file = read_file_config(args.config.as_deref())?;
        let mut cfg = CliConfig::default().merge_file(file)?;
        cfg.apply_common(args);
        cfg.finish()
    }

    pub fn from_benchmark(args: &BenchmarkArgs) -> Result<Self> {
        let file = read_file_config(args.common.config.as_deref())?;
        let mut cfg = CliConfig::default().merge_file(file)?;
        cfg.apply_common(&args.common);
        set(&mut cfg.etas, args.etas.clone());
        set(&mut cfg.ranks, args.ranks.clone());
        set(&mut cfg.repeats, args.repeats);
        set(&mut cfg.n, args.n);
        set(&mut cfg.d, args.d);
        set(&mut cfg.target, args.target);
        cfg.finish()
    }

    pub fn from_validate(args: &ValidateArgs) -> Result<Self> {
        let file = read_file_config(args.config.as_deref())?;
        let mut cfg = CliConfig::default().merge_file(file)?;
        set(&mut cfg.seed, args.seed);
        set(&mut cfg.samples, args.samples);
        cfg.threads = args.threads.or(cfg.threads);
        cfg.output = args.output.clone().or(cfg.output);
        cfg.skip_rounding = args.skip_rounding;
        cfg.finish()
    }

    fn merge_file(mut self, f: FileConfig) -> Result<Self> {
        self.points_a = f.points_a;
        self.points_b = f.points_b;
        self.r_max = f.r_max;
        self.max_iters = f.max_iters;
        self.threads = f.threads;
        self.output = f.output;
        set(&mut self.eta, f.eta);
        set(&mut self.eps, f.eps);
        set(&mut self.seed, f.seed);
        set(&mut self.dense_cap, f.dense_cap);
        set(&mut self.max_retries, f.max_retries);
        set(&mut self.etas, f.etas);
        set(&mut self.repeats, f.repeats);
        set(&mut self.n, f.n);
        set(&mut self.d, f.d);
        set(&mut self.target, f.target);
        set(&mut self.samples, f.samples);
        if let Some(ranks) = f.ranks {
            self.ranks = ranks
                .into_iter()
                .map(|r| match r {
                    RankEntry::Number(n) => RankSpec::from_str(&n.to_string()),
                    RankEntry::Text(s) => RankSpec::from_str(&s),
                })
                .collect::<std::result::Result<_, _>>()
                .map_err(CliError::Config)?;
        }
        Ok(self)
    }

    fn apply_common(&mut self, a: &CommonArgs) {
        self.points_a = a.points_a.clone().or(self.points_a.take());
        self.points_b = a.points_b.clone().or(self.points_b.take());
        self.r_max = a.r_max.or(self.r_max);
        self.max_iters = a.max_iters.or(self.max_iters);
        self.threads = a.threads.or(self.threads);
        self.output = a.output.clone().or(self.output.take());
        set(&mut self.eta, a.eta);
        set(&mut self.eps, a.eps);
        set(&mut self.seed, a.seed);
        set(&mut self.dense_cap, a.dense_cap);
        set(&mut self.max_retries, a.max_retries);
    }

    fn finish(mut self) -> Result<Self> {
        if self.etas.is_empty() {
            self.etas = vec![self.eta];
        }
        let bad = |msg: String| Err(CliError::Config(msg));
        if let Some(eta) = std::iter::once(self.eta).chain(self.etas.iter().copied()).find(|e| !(*e > 0.0 && e.is_finite())) {
            return bad(format!("eta must be positive, got {eta}"));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return bad(format!("eps must lie in (0, 1], got {}", self.eps));
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if self.ranks.is_empty() {
            return bad("ranks must not be empty".into());
        }
        if !(self.target > 0.0 && self.target.is_finite()) {
            return bad(format!("target must be positive, got {}", self.target));
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        if self.r_max == Some(0) {
            return bad("r_max must be at least 1".into());
        }
        Ok(self)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_file(json: &str) -> Result<CliConfig> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, json).unwrap();
        CliConfig::from_common(&CommonArgs { config: Some(path), eta: Some(3.0), ..Default::default() })
    }

    #[test]
    fn flags_override_file_values() {
        let cfg = with_file(r#"{"eta": 2.0, "eps": 0.5, "seed": 9}"#).unwrap();
        assert_eq!((cfg.eta, cfg.eps, cfg.seed), (3.0, 0.5, 9));
        assert_eq!(cfg.etas, vec![3.0]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = with_file(r#"{"eta": 2.0, "epsilon": 0.5}"#).unwrap_err();
        assert!(matches!(err, CliError::Config(ref m) if m.contains("epsilon")), "{err}");
    }

    #[test]
    fn invariants_are_enforced() {
        assert!(with_file(r#"{"eps": 0.0}"#).is_err());
        assert!(with_file(r#"{"eps": 1.5}"#).is_err());
        assert!(with_file(r#"{"repeats": 0}"#).is_err());
        assert!(with_file(r#"{"etas": [1.0, -2.0]}"#).is_err());
        assert!(with_file(r#"{"eps": 1.0}"#).is_ok());
    }

    #[test]
    fn ranks_accept_numbers_and_auto() {
        let cfg = with_file(r#"{"ranks": [16, "auto", "32"]}"#).unwrap();
        assert_eq!(cfg.ranks, vec![RankSpec::Fixed(16), RankSpec::Auto, RankSpec::Fixed(32)]);
        assert!(with_file(r#"{"ranks": [0]}"#).is_err());
        assert!("nope".parse::<RankSpec>().is_err());
    }
}
