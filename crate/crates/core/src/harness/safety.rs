use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{forecast_point, Aggregate, ExperimentKind, ExperimentResult, HarnessError, RunRecord, Stats};
use crate::adversary::{AdversarySpec, EstimatorMode, DEFAULT_SMOOTHING, DEFAULT_STABLE_SPLIT_CONSTANT};
use crate::analysis::{predict_table_row, AttackForecast};
use crate::simnet::{rng::derive_seed, NetworkConfig, SimOutcome, Simulation, StopRule};
use crate::snowball::{Color, ProtocolParams};

/// A batch of seeded safety-attack runs at one adversary fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetyExperimentSpec {
    pub n: u32,
    pub f: u32,
    pub num_targets: u32,
    pub runs: u32,
    /// Split to maintain; derived from `stable_split_constant` when unset.
    pub mu_target: Option<f64>,
    pub stable_split_constant: f64,
    pub seed: u64,
    pub params: ProtocolParams,
    pub max_rounds: u64,
    pub estimator: EstimatorMode,
    pub smoothing: f64,
    pub naive_queries: Option<u32>,
    /// Honest Red fraction at round 0; the maintained split when unset.
    pub initial_split: Option<f64>,
    /// Chits each honest validator already holds for its starting color.
    pub initial_confidence: u64,
}

impl SafetyExperimentSpec {
    pub fn new(n: u32, f: u32, num_targets: u32, runs: u32) -> Self {
        let params = ProtocolParams::default();
        Self {
            n,
            f,
            num_targets,
            runs,
            mu_target: None,
            stable_split_constant: DEFAULT_STABLE_SPLIT_CONSTANT,
            seed: 0,
            params,
            max_rounds: 100_000,
            estimator: EstimatorMode::Informed,
            smoothing: DEFAULT_SMOOTHING,
            naive_queries: None,
            initial_split: None,
            initial_confidence: u64::from(params.beta),
        }
    }

    pub fn phi(&self) -> f64 {
        f64::from(self.f) / f64::from(self.n)
    }

    pub fn adversary(&self) -> AdversarySpec {
        AdversarySpec {
            estimator: self.estimator,
            smoothing: self.smoothing,
            mu_target: self.mu_target,
            stable_split_constant: self.stable_split_constant,
            naive_queries: self.naive_queries,
            ..AdversarySpec::safety(self.num_targets)
        }
    }

    /// Network configuration of run `run`.
    pub fn network(&self, run: u32) -> NetworkConfig {
        let split = self
            .initial_split
            .unwrap_or_else(|| self.adversary().resolve_mu_target(self.phi()));
        NetworkConfig::new(self.n, self.f, derive_seed(self.seed, &[u64::from(run)]))
            .with_params(self.params)
            .with_split(split)
            .with_initial_confidence(self.initial_confidence)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.runs == 0 {
            return Err(HarnessError::InvalidSpec("runs must be at least 1".into()));
        }
        if self.max_rounds == 0 {
            return Err(HarnessError::InvalidSpec("max_rounds must be at least 1".into()));
        }
        self.network(0).validate()?;
        self.adversary().validate(self.n, self.f)?;
        Ok(())
    }

    /// Closed-form forecast for the split this experiment maintains.
    pub fn forecast(&self) -> Result<AttackForecast, HarnessError> {
        let phi = self.phi();
        let c = self.adversary().resolve_mu_target(phi) * (1.0 - phi);
        predict_table_row(phi, &self.params, self.num_targets, c).map_err(|e| HarnessError::InvalidSpec(e.to_string()))
    }
}

/// Aggregates of one safety experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetySummary {
    pub adversary_fraction: f64,
    pub n: u32,
    pub f: u32,
    pub num_targets: u32,
    pub runs: u32,
    /// Rounds until the first target finalized Red.
    pub pivot: Option<Stats>,
    /// Rounds until two honest validators finalized different colors.
    pub violation: Option<Stats>,
    pub violations: u32,
    /// Runs whose first finalized target chose Blue.
    pub target_blue: u32,
    pub timeouts: u32,
    pub forecast: AttackForecast,
    /// Standard deviation of the pivot round if finalization times followed
    /// the forecast's waiting-time model.
    pub model_stddev: f64,
}

impl SafetySummary {
    /// Standard error of the mean pivot round, never smaller than the
    /// model's. Matters when every run pivots in the same round.
    pub fn pivot_stderr(&self) -> Option<f64> {
        self.pivot
            .map(|s| s.stderr.max(self.model_stddev / (s.count as f64).sqrt()))
    }
}

fn run_one(spec: &SafetyExperimentSpec, adversary: &AdversarySpec, run: u32) -> Result<RunRecord, HarnessError> {
    let config = spec.network(run);
    let seed = config.seed;
    let mut sim = Simulation::new(config, adversary)?;
    let outcome = sim.run_with(spec.max_rounds, StopRule::Settled, |_| {});
    let summary = sim.summary(outcome);
    let pivot_round = summary
        .first_target_finalization
        .filter(|t| t.color == Color::Red)
        .map(|t| t.round);
    let violation_round = match outcome {
        SimOutcome::SafetyViolation { round } => Some(round),
        _ => None,
    };
    log::debug!("safety run {run} (seed {seed}): {outcome}, pivot {pivot_round:?}");
    Ok(RunRecord {
        x: spec.phi(),
        n: spec.n,
        f: spec.f,
        run,
        seed,
        outcome: outcome.label().to_string(),
        rounds: summary.rounds,
        pivot_round,
        violation_round,
    })
}

fn summarize(spec: &SafetyExperimentSpec, runs: &[RunRecord]) -> Result<SafetySummary, HarnessError> {
    let forecast = spec.forecast()?;
    let pivots: Vec<f64> = runs.iter().filter_map(|r| r.pivot_round).map(|r| r as f64).collect();
    let violations: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.violation_round)
        .map(|r| r as f64)
        .collect();
    let mean_excess = (forecast.expected_rounds_multi - f64::from(spec.params.beta - 1)).max(1.0);
    Ok(SafetySummary {
        adversary_fraction: spec.phi(),
        n: spec.n,
        f: spec.f,
        num_targets: spec.num_targets,
        runs: runs.len() as u32,
        pivot: Stats::of(&pivots),
        violation: Stats::of(&violations),
        violations: violations.len() as u32,
        target_blue: runs
            .iter()
            .filter(|r| r.pivot_round.is_none() && r.outcome != "Timeout")
            .count() as u32,
        timeouts: runs.iter().filter(|r| r.outcome == "Timeout").count() as u32,
        forecast,
        model_stddev: (mean_excess * (mean_excess - 1.0)).sqrt(),
    })
}

fn run_batch(spec: &SafetyExperimentSpec) -> Result<(Vec<RunRecord>, SafetySummary), HarnessError> {
    spec.validate()?;
    let adversary = spec.adversary();
    let runs = (0..spec.runs)
        .into_par_iter()
        .map(|run| run_one(spec, &adversary, run))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(spec, &runs)?;
    log::info!(
        "safety f/n={:.3}: pivot {:?}, violations {}/{}",
        summary.adversary_fraction,
        summary.pivot.map(|s| s.mean),
        summary.violations,
        summary.runs
    );
    Ok((runs, summary))
}

/// Runs `spec.runs` seeded safety attacks and compares the rounds until the
/// first target finalizes against the closed-form forecast.
pub fn run_safety_experiment(spec: &SafetyExperimentSpec) -> Result<ExperimentResult, HarnessError> {
    safety_sweep(spec, &[spec.phi()])
}

/// Repeats `base` at each adversary fraction in `phis`, realized as
/// `round(phi * n)` validators.
pub fn safety_sweep(base: &SafetyExperimentSpec, phis: &[f64]) -> Result<ExperimentResult, HarnessError> {
    let started = Instant::now();
    let mut result = ExperimentResult::new(
        ExperimentKind::Safety,
        &serde_json::json!({ "experiment": base, "phis": phis }),
        Aggregate::Safety(Vec::new()),
    );
    let mut summaries = Vec::new();
    for &phi in phis {
        if !(0.0..1.0).contains(&phi) {
            return Err(HarnessError::InvalidSpec(format!(
                "adversary fraction {phi} must lie in [0, 1)"
            )));
        }
        let spec = SafetyExperimentSpec {
            f: (phi * f64::from(base.n)).round() as u32,
            ..base.clone()
        };
        let (runs, summary) = run_batch(&spec)?;
        result.runs.extend(runs);
        result.plot.push(forecast_point(&summary));
        summaries.push(summary);
    }
    result.aggregate = Aggregate::Safety(summaries);
    result.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SafetyExperimentSpec {
        SafetyExperimentSpec {
            max_rounds: 2_000,
            ..SafetyExperimentSpec::new(300, 90, 100, 3)
        }
    }

    #[test]
    fn validation() {
        assert!(small().validate().is_ok());
        assert!(SafetyExperimentSpec::new(300, 0, 100, 3).validate().is_err());
        assert!(SafetyExperimentSpec::new(300, 90, 211, 3).validate().is_err());
        assert!(SafetyExperimentSpec::new(300, 90, 10, 0).validate().is_err());
    }

    #[test]
    fn default_start_is_the_maintained_split() {
        let spec = small();
        let config = spec.network(0);
        assert_eq!(config.initial_red(), (0.486 / 0.7 * 210.0f64 - 1e-9).ceil() as u32);
        assert_eq!(config.initial_confidence, 20);
        assert_ne!(spec.network(0).seed, spec.network(1).seed);
    }

    #[test]
    fn small_attack_is_reproducible() {
        let a = run_safety_experiment(&small()).unwrap();
        let b = run_safety_experiment(&small()).unwrap();
        assert_eq!(a.runs, b.runs);
        assert_eq!(a.runs.len(), 3);
        let Aggregate::Safety(s) = &a.aggregate else { panic!() };
        assert_eq!(s[0].runs, 3);
        assert!(s[0].pivot.is_some());
        assert_eq!(a.plot.len(), 1);
    }

    #[test]
    fn pivot_stderr_has_model_floor() {
        let spec = small();
        let records: Vec<RunRecord> = (0..4)
            .map(|run| RunRecord {
                x: 0.3,
                n: 300,
                f: 90,
                run,
                seed: 0,
                outcome: "SafetyViolation".into(),
                rounds: 40,
                pivot_round: Some(20),
                violation_round: Some(40),
            })
            .collect();
        let s = summarize(&spec, &records).unwrap();
        assert_eq!(s.pivot.unwrap().stddev, 0.0);
        assert!(s.pivot_stderr().unwrap() > 0.0);
        assert_eq!(s.violations, 4);
        assert_eq!(s.target_blue, 0);
    }
}
