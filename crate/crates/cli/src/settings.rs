use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use snowstorm::harness::{OutputFormat, Profile};
use snowstorm::{EstimatorMode, NoMajorityPolicy, ProtocolParams, Strategy};

pub const SEED_ENV: &str = "SNOWSTORM_SEED";

/// Parameters accepted both as flags and as keys of the config file.
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// Total number of validators
    #[arg(long)]
    pub n: Option<u32>,
    /// Number of adversarial validators
    #[arg(long)]
    pub f: Option<u32>,
    /// Sample size per query
    #[arg(long)]
    pub k: Option<u32>,
    /// Majority threshold
    #[arg(long)]
    pub alpha: Option<u32>,
    /// Consecutive chits needed to finalize
    #[arg(long)]
    pub beta: Option<u32>,
    /// What a query without an alpha-majority does to the counter: reset or keep
    #[arg(long)]
    pub no_majority: Option<NoMajorityPolicy>,
    /// Master seed (falls back to $SNOWSTORM_SEED, then 0)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Runs per stake point (liveness) or per adversary fraction (safety)
    #[arg(long)]
    pub runs: Option<u32>,
    #[arg(long)]
    pub max_rounds: Option<u64>,
    /// Adversary strategy for `simulate`: none, liveness or safety
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// naive or informed
    #[arg(long)]
    pub estimator: Option<EstimatorMode>,
    /// Weight of each new sample in the naive estimate
    #[arg(long)]
    pub smoothing: Option<f64>,
    /// k-sample queries per round for the naive estimator (default: one per adversarial validator)
    #[arg(long)]
    pub naive_queries: Option<u32>,
    /// Number of targeted honest validators
    #[arg(long)]
    pub targets: Option<u32>,
    /// Honest Red fraction the safety attack maintains
    #[arg(long)]
    pub mu_target: Option<f64>,
    /// Constant c in the maintained split c / (1 - f/n)
    #[arg(long)]
    pub split_constant: Option<f64>,
    /// Fraction of honest validators starting Red
    #[arg(long)]
    pub split: Option<f64>,
    /// Chits each honest validator holds for its starting color
    #[arg(long)]
    pub initial_confidence: Option<u64>,
    /// Adversary fractions, comma separated
    #[arg(long, value_delimiter = ',')]
    pub phi: Option<Vec<f64>>,
    /// Network sizes for `liveness-sweep`, comma separated
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<u32>>,
    /// quick (10,000 rounds) or paper (100,000 rounds)
    #[arg(long)]
    pub profile: Option<Profile>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// csv, json or both
    #[arg(long)]
    pub format: Option<OutputFormat>,
}

macro_rules! prefer {
    ($a:ident, $b:ident; $($field:ident),* $(,)?) => {
        Overrides { $($field: $a.$field.or($b.$field)),* }
    };
}

impl Overrides {
    /// Field-wise `self` where set, `fallback` otherwise.
    pub fn or(self, fallback: Overrides) -> Overrides {
        prefer!(self, fallback;
            n, f, k, alpha, beta, no_majority, seed, runs, max_rounds, strategy, estimator,
            smoothing, naive_queries, targets, mu_target, split_constant, split,
            initial_confidence, phi, sizes, profile, out, format,
        )
    }

    pub fn from_file(path: &Path) -> Result<Overrides> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| {
            let msg = e.message().to_string();
            anyhow::anyhow!("{}: {}", path.display(), msg)
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Predict,
    LivenessSweep,
    SafetySweep,
}

/// Fully resolved run configuration, echoed into every JSON output.
#[derive(Clone, Debug, Serialize)]
pub struct Settings {
    pub command: Command,
    pub n: u32,
    pub f: u32,
    pub params: ProtocolParams,
    pub seed: u64,
    pub runs: u32,
    pub max_rounds: u64,
    pub strategy: Strategy,
    pub estimator: EstimatorMode,
    pub smoothing: f64,
    pub naive_queries: Option<u32>,
    pub targets: u32,
    pub mu_target: Option<f64>,
    pub split_constant: f64,
    pub split: Option<f64>,
    pub initial_confidence: Option<u64>,
    pub phi: Vec<f64>,
    pub sizes: Vec<u32>,
    pub profile: Profile,
    pub out: PathBuf,
    pub format: OutputFormat,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer")),
        Err(_) => Ok(None),
    }
}

impl Settings {
    /// Applies per-command defaults to the merged overrides.
    pub fn resolve(command: Command, o: Overrides) -> Result<Settings> {
        let defaults = ProtocolParams::default();
        let params = ProtocolParams::new(
            o.k.unwrap_or(defaults.k),
            o.alpha.unwrap_or(defaults.alpha),
            o.beta.unwrap_or(defaults.beta),
        )?
        .with_no_majority(o.no_majority.unwrap_or_default());
        let profile = o.profile.unwrap_or_default();
        let n = o.n.unwrap_or(match command {
            Command::SafetySweep => 3000,
            _ => 2000,
        });
        let f = o.f.unwrap_or(match command {
            Command::SafetySweep => 900,
            _ => 0,
        });
        let phi = match (command, o.phi, o.f) {
            (_, Some(phi), _) => phi,
            (Command::SafetySweep, None, Some(f)) => vec![f64::from(f) / f64::from(n)],
            (Command::SafetySweep, None, None) => vec![0.25, 0.30],
            (_, None, _) => vec![0.30, 0.25, 0.20, 0.10, 0.05],
        };
        let sizes = match (o.sizes, o.n) {
            (Some(s), _) => s,
            (None, Some(n)) => vec![n],
            (None, None) => vec![200, 500, 1000, 2000],
        };
        let settings = Settings {
            command,
            n,
            f,
            params,
            seed: match o.seed {
                Some(s) => s,
                None => env_seed()?.unwrap_or(0),
            },
            runs: o.runs.unwrap_or(match command {
                Command::SafetySweep => 30,
                _ => 10,
            }),
            max_rounds: o.max_rounds.unwrap_or(match command {
                Command::LivenessSweep => profile.max_rounds(),
                _ => 100_000,
            }),
            strategy: o.strategy.unwrap_or(match command {
                Command::Simulate if f == 0 => Strategy::None,
                Command::Simulate => Strategy::Liveness,
                Command::LivenessSweep => Strategy::Liveness,
                _ => Strategy::Safety,
            }),
            estimator: o.estimator.unwrap_or_default(),
            smoothing: o.smoothing.unwrap_or(snowstorm::adversary::DEFAULT_SMOOTHING),
            naive_queries: o.naive_queries,
            targets: o.targets.unwrap_or(1000),
            mu_target: o.mu_target,
            split_constant: o
                .split_constant
                .unwrap_or(snowstorm::adversary::DEFAULT_STABLE_SPLIT_CONSTANT),
            split: match (command, o.split) {
                (Command::Simulate, None) => Some(0.5),
                (_, split) => split,
            },
            initial_confidence: match (command, o.initial_confidence) {
                (Command::Simulate, None) => Some(0),
                (_, ic) => ic,
            },
            phi,
            sizes,
            profile,
            out: o.out.unwrap_or_else(|| PathBuf::from("out")),
            format: o.format.unwrap_or_default(),
        };
        settings.check()?;
        Ok(settings)
    }

    fn check(&self) -> Result<()> {
        if self.runs == 0 {
            bail!("--runs must be at least 1");
        }
        if self.max_rounds == 0 {
            bail!("--max-rounds must be at least 1");
        }
        if let Some(bad) = self.phi.iter().find(|p| !(0.0..1.0).contains(*p)) {
            bail!("adversary fraction {bad} must lie in [0, 1)");
        }
        if self.command == Command::LivenessSweep && self.sizes.is_empty() {
            bail!("--sizes needs at least one network size");
        }
        if self.command == Command::SafetySweep && self.phi.contains(&0.0) {
            bail!("a safety attack needs adversarial validators, got an adversary fraction of 0");
        }
        Ok(())
    }
}
