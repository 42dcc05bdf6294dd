//! Synchronous-round network engine.
//!
//! Honest validators occupy ids `[0, n - f)` and adversarial ones
//! `[n - f, n)`. In every round each undecided honest validator samples `k`
//! peers by stake, collects their answers from the preference snapshot
//! taken at round start (or from the adversary), and all outcomes are
//! absorbed together at round end.

mod export;
pub mod rng;
mod sampler;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{Adversary, AdversarySpec};
use crate::snowball::{Color, ProtocolError, ProtocolParams, QueryOutcome, SnowballState};

pub use export::{write_trace_csv, RunSummary, TRACE_CSV_HEADER};
pub use sampler::StakeSampler;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
    #[error("no stake left to sample from")]
    NoStake,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValidatorId(pub u32);

impl ValidatorId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ValidatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Stake distribution over all `n` validators.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stakes {
    #[default]
    Equal,
    Weighted(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n: u32,
    pub f: u32,
    pub stakes: Stakes,
    pub params: ProtocolParams,
    pub seed: u64,
    /// Fraction of honest validators that start on Red.
    pub initial_split: f64,
    /// Chits every honest validator starts with on its initial color.
    #[serde(default)]
    pub initial_confidence: u64,
}

impl NetworkConfig {
    /// Equal stakes, default protocol parameters and an even split.
    pub fn new(n: u32, f: u32, seed: u64) -> Self {
        Self {
            n,
            f,
            stakes: Stakes::Equal,
            params: ProtocolParams::default(),
            seed,
            initial_split: 0.5,
            initial_confidence: 0,
        }
    }

    pub fn with_params(mut self, params: ProtocolParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_split(mut self, initial_split: f64) -> Self {
        self.initial_split = initial_split;
        self
    }

    pub fn with_initial_confidence(mut self, chits: u64) -> Self {
        self.initial_confidence = chits;
        self
    }

    pub fn with_stakes(mut self, stakes: Vec<f64>) -> Self {
        self.stakes = Stakes::Weighted(stakes);
        self
    }

    pub fn honest(&self) -> u32 {
        self.n - self.f
    }

    pub fn adversary_fraction(&self) -> f64 {
        f64::from(self.f) / f64::from(self.n)
    }

    /// Number of honest validators starting on Red: `ceil(split * (n - f))`.
    pub fn initial_red(&self) -> u32 {
        let h = f64::from(self.honest());
        ((self.initial_split * h - 1e-9).ceil().max(0.0) as u32).min(self.honest())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.params.validate()?;
        if self.n == 0 || self.f >= self.n {
            return Err(SimError::InvalidConfig(format!(
                "need 0 <= f < n, got n={} f={}",
                self.n, self.f
            )));
        }
        if !(0.0..=1.0).contains(&self.initial_split) {
            return Err(SimError::InvalidConfig(format!(
                "initial split {} must lie in [0, 1]",
                self.initial_split
            )));
        }
        if let Stakes::Weighted(w) = &self.stakes {
            if w.len() != self.n as usize {
                return Err(SimError::InvalidConfig(format!(
                    "{} stakes given for {} validators",
                    w.len(),
                    self.n
                )));
            }
        }
        Ok(())
    }

    pub fn sampler(&self) -> Result<StakeSampler, SimError> {
        match &self.stakes {
            Stakes::Equal => StakeSampler::uniform(self.n),
            Stakes::Weighted(w) => StakeSampler::weighted(w),
        }
    }
}

/// Draws the `k` peers validator `self_id` queries.
pub fn sample_validators<R: Rng + ?Sized>(
    config: &NetworkConfig,
    self_id: ValidatorId,
    rng: &mut R,
) -> Result<Vec<ValidatorId>, SimError> {
    config.validate()?;
    config.sampler()?.sample(rng, Some(self_id), config.params.k)
}

/// Observable record of one round.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: u64,
    /// Honest validators answering Red at round start.
    pub honest_red: u32,
    /// Honest validators answering Blue at round start, including any
    /// without a preference.
    pub honest_blue: u32,
    pub newly_finalized: Vec<(ValidatorId, Color)>,
    /// Honest validators finalized after this round.
    pub finalized_total: u32,
}

/// When a run stops short of `max_rounds`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopRule {
    /// Every honest validator finalized, or two finalized on different colors.
    #[default]
    Settled,
    /// The first honest finalization, or a safety violation.
    FirstFinalization,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimOutcome {
    AllFinalized { color: Color, round: u64 },
    SafetyViolation { round: u64 },
    FirstFinalization { color: Color, round: u64 },
    Timeout { rounds: u64 },
}

impl SimOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            SimOutcome::AllFinalized { .. } => "all_finalized",
            SimOutcome::SafetyViolation { .. } => "safety_violation",
            SimOutcome::FirstFinalization { .. } => "first_finalization",
            SimOutcome::Timeout { .. } => "timeout",
        }
    }

    pub fn round(&self) -> u64 {
        match *self {
            SimOutcome::AllFinalized { round, .. }
            | SimOutcome::SafetyViolation { round }
            | SimOutcome::FirstFinalization { round, .. } => round,
            SimOutcome::Timeout { rounds } => rounds,
        }
    }

    pub fn is_timeout(&self) -> bool {
        matches!(self, SimOutcome::Timeout { .. })
    }
}

impl fmt::Display for SimOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimOutcome::AllFinalized { color, round } => write!(f, "AllFinalized({color}) at round {round}"),
            SimOutcome::SafetyViolation { round } => write!(f, "SafetyViolation at round {round}"),
            SimOutcome::FirstFinalization { color, round } => {
                write!(f, "FirstFinalization({color}) at round {round}")
            }
            SimOutcome::Timeout { rounds } => write!(f, "Timeout after {rounds} rounds"),
        }
    }
}

/// One simulation run in progress.
pub struct Simulation {
    config: NetworkConfig,
    honest: Vec<SnowballState>,
    adversary: Adversary,
    sampler: StakeSampler,
    honest_sampler: StakeSampler,
    round: u64,
    finalized: [u32; 2],
    first_finalization: Option<(u64, Color)>,
    violation_round: Option<u64>,
    // per-round scratch
    snapshot: Vec<Option<Color>>,
    adopt: Vec<Option<Color>>,
    outcomes: Vec<(u32, QueryOutcome)>,
}

impl Simulation {
    pub fn new(config: NetworkConfig, adversary: &AdversarySpec) -> Result<Self, SimError> {
        config.validate()?;
        let sampler = config.sampler()?;
        let h = config.honest();
        for id in 0..h {
            if sampler.stake_excluding(Some(ValidatorId(id))) <= 0.0 {
                return Err(SimError::NoStake);
            }
        }
        let honest_sampler = match &config.stakes {
            Stakes::Equal => StakeSampler::uniform(h)?,
            Stakes::Weighted(w) => StakeSampler::weighted(&w[..h as usize])?,
        };
        let adversary = Adversary::new(adversary, config.n, config.f, config.params.beta)?;
        let red = config.initial_red();
        let honest = (0..h)
            .map(|i| {
                let color = if i < red { Color::Red } else { Color::Blue };
                SnowballState::with_prior(color, config.initial_confidence)
            })
            .collect();
        Ok(Self {
            snapshot: vec![None; h as usize],
            adopt: vec![None; h as usize],
            outcomes: Vec::with_capacity(h as usize),
            config,
            honest,
            adversary,
            sampler,
            honest_sampler,
            round: 0,
            finalized: [0, 0],
            first_finalization: None,
            violation_round: None,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn adversary(&self) -> &Adversary {
        &self.adversary
    }

    pub fn honest_states(&self) -> &[SnowballState] {
        &self.honest
    }

    /// Rounds executed so far.
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn finalized_count(&self, color: Color) -> u32 {
        self.finalized[color.index()]
    }

    pub fn first_finalization(&self) -> Option<(u64, Color)> {
        self.first_finalization
    }

    pub fn safety_violated(&self) -> bool {
        self.violation_round.is_some()
    }

    /// Executes one synchronous round.
    pub fn step(&mut self) -> RoundTrace {
        self.round += 1;
        let round = self.round;
        let k = self.config.params.k;
        let h = self.config.honest();

        let mut honest_red = 0;
        for (snap, state) in self.snapshot.iter_mut().zip(&self.honest) {
            *snap = state.answer();
            honest_red += u32::from(*snap == Some(Color::Red));
        }
        self.adversary.begin_round(honest_red, h);

        self.outcomes.clear();
        for q in 0..h {
            if self.honest[q as usize].is_finalized() {
                continue;
            }
            let querier = ValidatorId(q);
            let querier_color = self.snapshot[q as usize];
            let mut rng = rng::stream_rng(self.config.seed, round, u64::from(q));
            let mut red = 0;
            for _ in 0..k {
                let peer = self.sampler.draw(&mut rng, Some(querier));
                let answer = if peer.0 < h {
                    match self.snapshot[peer.index()] {
                        Some(c) => c,
                        None => {
                            // Unset responders echo the querier; the first
                            // querier by id is adopted at round end.
                            if self.adopt[peer.index()].is_none() {
                                self.adopt[peer.index()] = querier_color;
                            }
                            querier_color.unwrap_or(Color::Blue)
                        }
                    }
                } else {
                    self.adversary.respond(querier, querier_color)
                };
                red += u32::from(answer == Color::Red);
            }
            self.outcomes.push((q, QueryOutcome::new(k - red, red)));
        }

        for (state, adopt) in self.honest.iter_mut().zip(self.adopt.iter_mut()) {
            if let Some(c) = adopt.take() {
                state.respond(c);
            }
        }

        let mut newly_finalized = Vec::new();
        for &(q, outcome) in &self.outcomes {
            let state = &mut self.honest[q as usize];
            state
                .absorb_outcome(outcome, &self.config.params)
                .expect("outcomes are built with k answers for undecided validators");
            if let Some(c) = state.finalized() {
                newly_finalized.push((ValidatorId(q), c));
                self.finalized[c.index()] += 1;
                self.first_finalization.get_or_insert((round, c));
            }
        }
        if self.violation_round.is_none() && self.finalized[0] > 0 && self.finalized[1] > 0 {
            self.violation_round = Some(round);
        }

        let trace = RoundTrace {
            round,
            honest_red,
            honest_blue: h - honest_red,
            newly_finalized,
            finalized_total: self.finalized[0] + self.finalized[1],
        };

        let draws = self.adversary.estimation_queries() * k;
        let sample = (draws > 0).then(|| {
            let mut rng = rng::stream_rng(self.config.seed, round, rng::ADVERSARY_STREAM);
            let red = (0..draws)
                .filter(|_| {
                    let peer = self.honest_sampler.draw(&mut rng, None);
                    self.honest[peer.index()].answer() == Some(Color::Red)
                })
                .count() as u32;
            (red, draws)
        });
        self.adversary.end_round(&trace, sample);
        trace
    }

    /// The outcome if the run should stop now under `stop`.
    pub fn verdict(&self, stop: StopRule) -> Option<SimOutcome> {
        if let Some(round) = self.violation_round {
            return Some(SimOutcome::SafetyViolation { round });
        }
        let total = self.finalized[0] + self.finalized[1];
        if total == self.config.honest() {
            let color = if self.finalized[1] > 0 { Color::Red } else { Color::Blue };
            return Some(SimOutcome::AllFinalized {
                color,
                round: self.round,
            });
        }
        match (stop, self.first_finalization) {
            (StopRule::FirstFinalization, Some((round, color))) => Some(SimOutcome::FirstFinalization { color, round }),
            _ => None,
        }
    }

    /// Runs until `stop` triggers or `max_rounds` have elapsed, handing each
    /// trace to `observe`.
    pub fn run_with<F: FnMut(&RoundTrace)>(&mut self, max_rounds: u64, stop: StopRule, mut observe: F) -> SimOutcome {
        while self.round < max_rounds {
            let trace = self.step();
            observe(&trace);
            if let Some(outcome) = self.verdict(stop) {
                return outcome;
            }
        }
        SimOutcome::Timeout { rounds: self.round }
    }

    pub fn summary(&self, outcome: SimOutcome) -> RunSummary {
        RunSummary {
            outcome,
            rounds: self.round,
            seed: self.config.seed,
            first_finalization_round: self.first_finalization.map(|(r, _)| r),
            first_target_finalization: self.adversary.first_target_finalization(),
            fin_round: self.adversary.fin_round(),
            finalized_red: self.finalized[1],
            finalized_blue: self.finalized[0],
            config: self.config.clone(),
            adversary: None,
        }
    }
}

/// Result of [`run_simulation`].
#[derive(Clone, Debug)]
pub struct SimulationRun {
    pub traces: Vec<RoundTrace>,
    pub outcome: SimOutcome,
    pub summary: RunSummary,
}

/// Runs rounds until every honest validator finalized, a safety violation
/// is witnessed, or `max_rounds` elapse.
pub fn run_simulation(
    config: NetworkConfig,
    adversary: &AdversarySpec,
    max_rounds: u64,
) -> Result<SimulationRun, SimError> {
    if max_rounds == 0 {
        return Err(SimError::InvalidConfig("max_rounds must be at least 1".into()));
    }
    let mut sim = Simulation::new(config, adversary)?;
    let mut traces = Vec::new();
    let outcome = sim.run_with(max_rounds, StopRule::Settled, |t| traces.push(t.clone()));
    let mut summary = sim.summary(outcome);
    summary.adversary = Some(adversary.clone());
    Ok(SimulationRun {
        traces,
        outcome,
        summary,
    })
}
