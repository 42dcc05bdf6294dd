//! Experiment drivers: liveness threshold searches, safety-attack duration
//! studies and the files they produce.

mod liveness;
mod output;
mod safety;

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::AttackForecast;
use crate::simnet::SimError;

pub use liveness::{
    attack_success, liveness_sweep, liveness_threshold_search, monotonicity_violations, LivenessExperimentSpec,
    ProbePoint, ThresholdEstimate,
};
pub use output::{emit_results, OutputFormat, PLOT_CSV_HEADER, RUNS_CSV_HEADER};
pub use safety::{run_safety_experiment, safety_sweep, SafetyExperimentSpec, SafetySummary};

/// Version of the JSON summary layout.
pub const SCHEMA_VERSION: u32 = 1;

/// `git describe` of the tree this binary was built from.
pub const GIT_DESCRIBE: &str = match option_env!("SNOWSTORM_GIT_DESCRIBE") {
    Some(v) => v,
    None => "unknown",
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error("search bracket invalid: attack {verdict} at stake fraction {fraction} (f = {f})")]
    Bracket {
        fraction: f64,
        f: u32,
        verdict: &'static str,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Round budget presets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 10,000 rounds per liveness run. Thresholds found this way sit below
    /// the 100,000-round ones, since a stall only has to last 10,000 rounds.
    #[default]
    Quick,
    Paper,
}

impl Profile {
    pub fn max_rounds(self) -> u64 {
        match self {
            Profile::Quick => 10_000,
            Profile::Paper => 100_000,
        }
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "quick" => Ok(Profile::Quick),
            "paper" => Ok(Profile::Paper),
            other => Err(format!("unknown profile `{other}` (expected quick or paper)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Liveness,
    Safety,
}

/// One simulation run inside an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Sweep coordinate: n for liveness sweeps, f/n for safety sweeps.
    pub x: f64,
    pub n: u32,
    pub f: u32,
    pub run: u32,
    pub seed: u64,
    pub outcome: String,
    pub rounds: u64,
    /// Round in which the first target finalized Red.
    pub pivot_round: Option<u64>,
    pub violation_round: Option<u64>,
}

/// Mean, sample standard deviation and standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    pub stddev: f64,
    pub stderr: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Self> {
        let count = values.len();
        if count == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let stddev = if count > 1 {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self {
            count,
            mean,
            stddev,
            stderr: stddev / (count as f64).sqrt(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "points", rename_all = "lowercase")]
pub enum Aggregate {
    Liveness(Vec<ThresholdEstimate>),
    Safety(Vec<SafetySummary>),
}

/// A point of the plot-ready table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub x: f64,
    pub y: f64,
    pub stderr: Option<f64>,
    pub predicted: Option<f64>,
}

/// Everything an experiment produced, plus what is needed to rerun it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub schema_version: u32,
    pub git_describe: String,
    pub kind: ExperimentKind,
    pub config: serde_json::Value,
    pub runs: Vec<RunRecord>,
    pub aggregate: Aggregate,
    pub plot: Vec<PlotPoint>,
    pub wall_clock_secs: f64,
}

impl ExperimentResult {
    fn new<S: Serialize>(kind: ExperimentKind, config: &S, aggregate: Aggregate) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            git_describe: GIT_DESCRIBE.to_string(),
            kind,
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            runs: Vec::new(),
            aggregate,
            plot: Vec::new(),
            wall_clock_secs: 0.0,
        }
    }

    /// A result with no runs, e.g. a sweep over an empty list.
    pub fn empty(kind: ExperimentKind) -> Self {
        let aggregate = match kind {
            ExperimentKind::Liveness => Aggregate::Liveness(Vec::new()),
            ExperimentKind::Safety => Aggregate::Safety(Vec::new()),
        };
        Self::new(kind, &serde_json::Value::Null, aggregate)
    }
}

fn forecast_point(summary: &SafetySummary) -> PlotPoint {
    let forecast: &AttackForecast = &summary.forecast;
    PlotPoint {
        x: summary.adversary_fraction,
        y: summary.pivot.map_or(f64::NAN, |s| s.mean),
        stderr: summary.pivot.map(|s| s.stderr),
        predicted: Some(forecast.expected_rounds_multi),
    }
}
