//! Colluding adversary: split estimation, the liveness rebalancing attack
//! and the targeted safety attack.
//!
//! All adversarial validators share one [`Adversary`]. It answers every
//! query that lands on an adversarial id and never issues protocol queries
//! of its own beyond one honest-sized estimation sample per round (naive
//! mode).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::simnet::{RoundTrace, SimError, ValidatorId};
use crate::snowball::Color;

/// Default honest Red share of responses, `mu * (1 - f/n)`, that the safety
/// attack tries to hold.
pub const DEFAULT_STABLE_SPLIT_CONSTANT: f64 = 0.486;
/// Default weight of the newest sample in the naive estimator.
pub const DEFAULT_SMOOTHING: f64 = 0.3;
const MU_TARGET_CAP: f64 = 0.999;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    None,
    Liveness,
    Safety,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorMode {
    Naive,
    #[default]
    Informed,
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Strategy::None),
            "liveness" => Ok(Strategy::Liveness),
            "safety" => Ok(Strategy::Safety),
            other => Err(format!(
                "unknown strategy '{other}' (expected none, liveness or safety)"
            )),
        }
    }
}

impl FromStr for EstimatorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(EstimatorMode::Naive),
            "informed" => Ok(EstimatorMode::Informed),
            other => Err(format!("unknown estimator '{other}' (expected naive or informed)")),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::None => "none",
            Strategy::Liveness => "liveness",
            Strategy::Safety => "safety",
        })
    }
}

impl fmt::Display for EstimatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorMode::Naive => "naive",
            EstimatorMode::Informed => "informed",
        })
    }
}

/// Estimate of the fraction of honest validators preferring Red.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitEstimator {
    mode: EstimatorMode,
    smoothing: f64,
    estimate: f64,
}

impl SplitEstimator {
    pub fn informed() -> Self {
        Self {
            mode: EstimatorMode::Informed,
            smoothing: 1.0,
            estimate: 0.5,
        }
    }

    /// Exponentially smoothed estimator; `smoothing` is the weight of each
    /// new per-round sample mean. Starts from an even split.
    pub fn naive(smoothing: f64) -> Self {
        Self {
            mode: EstimatorMode::Naive,
            smoothing: smoothing.clamp(f64::MIN_POSITIVE, 1.0),
            estimate: 0.5,
        }
    }

    pub fn new(mode: EstimatorMode, smoothing: f64) -> Self {
        match mode {
            EstimatorMode::Informed => Self::informed(),
            EstimatorMode::Naive => Self::naive(smoothing),
        }
    }

    pub fn mode(&self) -> EstimatorMode {
        self.mode
    }

    pub fn estimate(&self) -> f64 {
        self.estimate
    }

    /// Folds in the exact honest counts. Only meaningful in informed mode;
    /// a naive estimator ignores ground truth.
    pub fn observe_truth(&mut self, honest_red: u32, honest_total: u32) -> f64 {
        if self.mode == EstimatorMode::Informed && honest_total > 0 {
            self.estimate = f64::from(honest_red) / f64::from(honest_total);
        }
        self.estimate
    }

    /// Folds in one batch of sampled honest answers. Ignored in informed
    /// mode.
    pub fn observe_sample(&mut self, red: u32, total: u32) -> f64 {
        if self.mode == EstimatorMode::Naive && total > 0 {
            let mean = f64::from(red) / f64::from(total);
            self.estimate += self.smoothing * (mean - self.estimate);
        }
        self.estimate
    }
}

/// Honest validators singled out by the safety attack.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TargetSet {
    members: Vec<ValidatorId>,
    // slot of each honest id in `members`
    slot: Vec<Option<u32>>,
}

impl TargetSet {
    pub fn new(honest: u32, members: impl IntoIterator<Item = ValidatorId>) -> Result<Self, SimError> {
        let mut slot = vec![None; honest as usize];
        let mut list = Vec::new();
        for id in members {
            let entry = slot
                .get_mut(id.index())
                .ok_or_else(|| SimError::InvalidConfig(format!("target {id} is not an honest validator")))?;
            if entry.is_none() {
                *entry = Some(list.len() as u32);
                list.push(id);
            }
        }
        Ok(Self { members: list, slot })
    }

    /// The first `count` honest ids.
    pub fn first(honest: u32, count: u32) -> Result<Self, SimError> {
        if count > honest {
            return Err(SimError::InvalidConfig(format!(
                "{count} targets requested but only {honest} honest validators"
            )));
        }
        Self::new(honest, (0..count).map(ValidatorId))
    }

    pub fn contains(&self, id: ValidatorId) -> bool {
        self.slot_of(id).is_some()
    }

    fn slot_of(&self, id: ValidatorId) -> Option<usize> {
        self.slot.get(id.index()).copied().flatten().map(|s| s as usize)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ValidatorId> + '_ {
        self.members.iter().copied()
    }
}

/// State shared by all colluding validators.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversaryState {
    pub mu_estimate: f64,
    pub mu_target: f64,
    pub targets: TargetSet,
    pub fin: bool,
}

impl AdversaryState {
    pub fn new(mu_estimate: f64, mu_target: f64, targets: TargetSet) -> Self {
        Self {
            mu_estimate,
            mu_target,
            targets,
            fin: false,
        }
    }
}

/// Liveness attack: answer with the color honest validators prefer less.
pub fn liveness_respond(adv: &AdversaryState) -> Color {
    if adv.mu_estimate < 0.5 {
        Color::Red
    } else {
        Color::Blue
    }
}

/// Safety attack: Red to targets and Blue to everyone once a target has
/// accepted Red. Otherwise hold the honest split around `mu_target`.
pub fn safety_respond(adv: &AdversaryState, querier: ValidatorId) -> Color {
    if adv.fin {
        Color::Blue
    } else if adv.targets.contains(querier) || adv.mu_estimate < adv.mu_target {
        Color::Red
    } else {
        Color::Blue
    }
}

/// What the first target finalization of a run looked like.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetFinalization {
    pub round: u64,
    pub color: Color,
}

/// Sets `fin` once a target shows up finalized on Red in `trace`. Returns
/// the first target finalization seen in this round, whatever its color.
pub fn detect_target_finalization(adv: &mut AdversaryState, trace: &RoundTrace) -> Option<TargetFinalization> {
    if target_finalized_red(&adv.targets, trace) {
        adv.fin = true;
    }
    first_target_finalization(&adv.targets, trace)
}

fn target_finalized_red(targets: &TargetSet, trace: &RoundTrace) -> bool {
    trace
        .newly_finalized
        .iter()
        .any(|&(id, color)| color == Color::Red && targets.contains(id))
}

fn first_target_finalization(targets: &TargetSet, trace: &RoundTrace) -> Option<TargetFinalization> {
    trace
        .newly_finalized
        .iter()
        .find(|&&(id, _)| targets.contains(id))
        .map(|&(_, color)| TargetFinalization {
            round: trace.round,
            color,
        })
}

/// How the safety attack learns that a target accepted Red.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinDetection {
    /// Exact knowledge of target finalizations.
    Oracle,
    /// Heuristic: a target that queried adversarial validators while
    /// preferring Red in `beta` consecutive observed rounds is assumed done.
    Heuristic,
}

/// Adversary configuration as chosen by an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarySpec {
    pub strategy: Strategy,
    pub estimator: EstimatorMode,
    pub smoothing: f64,
    pub num_targets: u32,
    /// Overrides the split derived from `stable_split_constant`.
    pub mu_target: Option<f64>,
    pub stable_split_constant: f64,
    /// k-sample queries the naive estimator issues per round. `None` means
    /// one per adversarial validator.
    #[serde(default)]
    pub naive_queries: Option<u32>,
}

impl Default for AdversarySpec {
    fn default() -> Self {
        Self {
            strategy: Strategy::None,
            estimator: EstimatorMode::Informed,
            smoothing: DEFAULT_SMOOTHING,
            num_targets: 0,
            mu_target: None,
            stable_split_constant: DEFAULT_STABLE_SPLIT_CONSTANT,
            naive_queries: None,
        }
    }
}

impl AdversarySpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn liveness(estimator: EstimatorMode) -> Self {
        Self {
            strategy: Strategy::Liveness,
            estimator,
            ..Self::default()
        }
    }

    pub fn safety(num_targets: u32) -> Self {
        Self {
            strategy: Strategy::Safety,
            num_targets,
            ..Self::default()
        }
    }

    pub fn with_estimator(mut self, estimator: EstimatorMode) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn fin_detection(&self) -> FinDetection {
        match self.estimator {
            EstimatorMode::Informed => FinDetection::Oracle,
            EstimatorMode::Naive => FinDetection::Heuristic,
        }
    }

    /// The split the safety attack maintains for adversary fraction `phi`.
    pub fn resolve_mu_target(&self, phi: f64) -> f64 {
        match self.mu_target {
            Some(mu) => mu,
            None => (self.stable_split_constant / (1.0 - phi)).min(MU_TARGET_CAP),
        }
    }

    pub fn validate(&self, n: u32, f: u32) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidConfig(msg));
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return bad(format!("smoothing factor {} must lie in (0, 1]", self.smoothing));
        }
        if self.naive_queries == Some(0) {
            return bad("naive estimator needs at least one query per round".into());
        }
        if let Some(mu) = self.mu_target {
            if !(0.0..=1.0).contains(&mu) {
                return bad(format!("mu_target {mu} must lie in [0, 1]"));
            }
        }
        if !(self.stable_split_constant > 0.0 && self.stable_split_constant < 1.0) {
            return bad(format!(
                "stable split constant {} must lie in (0, 1)",
                self.stable_split_constant
            ));
        }
        match self.strategy {
            Strategy::None if f > 0 => bad(format!("strategy none needs f = 0, got f = {f}")),
            Strategy::Liveness | Strategy::Safety if f == 0 => {
                bad(format!("{} attack needs adversarial validators (f > 0)", self.strategy))
            }
            Strategy::Safety if self.num_targets == 0 => bad("safety attack needs at least one target".into()),
            Strategy::Safety if self.num_targets > n - f => bad(format!(
                "{} targets exceed the {} honest validators",
                self.num_targets,
                n - f
            )),
            _ => Ok(()),
        }
    }
}

/// The colluding adversary driving one simulation run.
#[derive(Clone, Debug)]
pub struct Adversary {
    strategy: Strategy,
    detection: FinDetection,
    beta: u32,
    queries: u32,
    estimator: SplitEstimator,
    state: AdversaryState,
    // per target slot: consecutive observed rounds preferring Red
    red_streak: Vec<u32>,
    // per target slot: color the target queried with this round, if seen
    observed: Vec<Option<Color>>,
    first_target_finalization: Option<TargetFinalization>,
    fin_round: Option<u64>,
}

impl Adversary {
    pub fn new(spec: &AdversarySpec, n: u32, f: u32, beta: u32) -> Result<Self, SimError> {
        spec.validate(n, f)?;
        let honest = n - f;
        let phi = f64::from(f) / f64::from(n);
        let targets = match spec.strategy {
            Strategy::Safety => TargetSet::first(honest, spec.num_targets)?,
            _ => TargetSet::new(honest, [])?,
        };
        let estimator = SplitEstimator::new(spec.estimator, spec.smoothing);
        let state = AdversaryState::new(estimator.estimate(), spec.resolve_mu_target(phi), targets);
        let slots = state.targets.len();
        Ok(Self {
            strategy: spec.strategy,
            detection: spec.fin_detection(),
            beta,
            queries: match (spec.strategy, spec.estimator) {
                (Strategy::None, _) | (_, EstimatorMode::Informed) => 0,
                (_, EstimatorMode::Naive) => spec.naive_queries.unwrap_or(f),
            },
            estimator,
            state,
            red_streak: vec![0; slots],
            observed: vec![None; slots],
            first_target_finalization: None,
            fin_round: None,
        })
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn state(&self) -> &AdversaryState {
        &self.state
    }

    pub fn estimator(&self) -> &SplitEstimator {
        &self.estimator
    }

    pub fn first_target_finalization(&self) -> Option<TargetFinalization> {
        self.first_target_finalization
    }

    /// Round in which `fin` was raised.
    pub fn fin_round(&self) -> Option<u64> {
        self.fin_round
    }

    /// Number of k-sample estimation queries to run this round; zero unless
    /// the estimator is naive.
    pub fn estimation_queries(&self) -> u32 {
        self.queries
    }

    /// Called with the round-start honest counts.
    pub fn begin_round(&mut self, honest_red: u32, honest_total: u32) {
        self.state.mu_estimate = self.estimator.observe_truth(honest_red, honest_total);
        self.observed.iter_mut().for_each(|o| *o = None);
    }

    /// Answer to a query from `querier`, who prefers `querier_color`.
    #[inline]
    pub fn respond(&mut self, querier: ValidatorId, querier_color: Option<Color>) -> Color {
        match self.strategy {
            Strategy::None => querier_color.unwrap_or(Color::Blue),
            Strategy::Liveness => liveness_respond(&self.state),
            Strategy::Safety => {
                if self.detection == FinDetection::Heuristic {
                    if let Some(slot) = self.state.targets.slot_of(querier) {
                        self.observed[slot] = querier_color;
                    }
                }
                safety_respond(&self.state, querier)
            }
        }
    }

    /// Round-end bookkeeping: finalization detection and, for the naive
    /// estimator, folding in this round's sample (`red` of `total`).
    pub fn end_round(&mut self, trace: &RoundTrace, sample: Option<(u32, u32)>) {
        if let Some((red, total)) = sample {
            self.state.mu_estimate = self.estimator.observe_sample(red, total);
        }
        if self.strategy != Strategy::Safety {
            return;
        }
        let was_fin = self.state.fin;
        if self.first_target_finalization.is_none() {
            self.first_target_finalization = first_target_finalization(&self.state.targets, trace);
        }
        match self.detection {
            FinDetection::Oracle => {
                detect_target_finalization(&mut self.state, trace);
            }
            FinDetection::Heuristic => {
                for (streak, seen) in self.red_streak.iter_mut().zip(&self.observed) {
                    match seen {
                        Some(Color::Red) => *streak += 1,
                        Some(Color::Blue) => *streak = 0,
                        None => {}
                    }
                    if *streak >= self.beta {
                        self.state.fin = true;
                    }
                }
            }
        }
        if self.state.fin && !was_fin {
            self.fin_round = Some(trace.round);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(mu_estimate: f64, mu_target: f64, targets: &[u32], fin: bool) -> AdversaryState {
        let targets = TargetSet::new(10, targets.iter().map(|&i| ValidatorId(i))).unwrap();
        AdversaryState {
            mu_estimate,
            mu_target,
            targets,
            fin,
        }
    }

    fn trace(round: u64, finalized: &[(u32, Color)]) -> RoundTrace {
        RoundTrace {
            round,
            honest_red: 5,
            honest_blue: 5,
            newly_finalized: finalized.iter().map(|&(i, c)| (ValidatorId(i), c)).collect(),
            finalized_total: finalized.len() as u32,
        }
    }

    #[test]
    fn informed_estimate_is_exact() {
        let mut e = SplitEstimator::informed();
        assert!((e.observe_truth(1388, 2000) - 0.694).abs() < 1e-12);
        // samples do not move an informed estimate
        assert!((e.observe_sample(0, 20) - 0.694).abs() < 1e-12);
    }

    #[test]
    fn naive_estimate_moves_toward_samples() {
        let mut e = SplitEstimator::naive(0.3);
        let before = e.estimate();
        let after = e.observe_sample(20, 20);
        assert!(after > before);
        assert!((after - 0.65).abs() < 1e-12);
        for _ in 0..100 {
            e.observe_sample(20, 20);
        }
        assert!(e.estimate() > 0.999 && e.estimate() <= 1.0);
        // truth is invisible to the naive adversary
        assert_eq!(e.observe_truth(0, 20), e.estimate());
    }

    #[test]
    fn liveness_answers_minority_color() {
        assert_eq!(liveness_respond(&state(0.3, 0.5, &[], false)), Color::Red);
        assert_eq!(liveness_respond(&state(0.7, 0.5, &[], false)), Color::Blue);
        assert_eq!(liveness_respond(&state(0.5, 0.5, &[], false)), Color::Blue);
    }

    #[test]
    fn safety_answers() {
        let s = state(0.9, 0.694, &[3], true);
        assert_eq!(safety_respond(&s, ValidatorId(3)), Color::Blue);
        assert_eq!(safety_respond(&s, ValidatorId(4)), Color::Blue);

        let s = state(0.9, 0.694, &[3], false);
        assert_eq!(safety_respond(&s, ValidatorId(3)), Color::Red);
        assert_eq!(safety_respond(&s, ValidatorId(4)), Color::Blue);

        let s = state(0.60, 0.694, &[3], false);
        assert_eq!(safety_respond(&s, ValidatorId(4)), Color::Red);
    }

    #[test]
    fn target_red_finalization_raises_fin() {
        let mut s = state(0.6, 0.694, &[7], false);
        let first = detect_target_finalization(&mut s, &trace(12, &[(2, Color::Red), (7, Color::Red)]));
        assert!(s.fin);
        assert_eq!(
            first,
            Some(TargetFinalization {
                round: 12,
                color: Color::Red
            })
        );
    }

    #[test]
    fn non_target_or_blue_finalization_keeps_fin() {
        let mut s = state(0.6, 0.694, &[7], false);
        assert_eq!(detect_target_finalization(&mut s, &trace(3, &[(2, Color::Red)])), None);
        assert!(!s.fin);

        let first = detect_target_finalization(&mut s, &trace(4, &[(7, Color::Blue)]));
        assert!(!s.fin);
        assert_eq!(first.map(|t| t.color), Some(Color::Blue));
    }

    #[test]
    fn spec_validation() {
        assert!(AdversarySpec::safety(10).validate(100, 0).is_err());
        assert!(AdversarySpec::safety(0).validate(100, 10).is_err());
        assert!(AdversarySpec::safety(91).validate(100, 10).is_err());
        assert!(AdversarySpec::safety(90).validate(100, 10).is_ok());
        assert!(AdversarySpec::none().validate(100, 1).is_err());
        assert!(AdversarySpec::liveness(EstimatorMode::Naive).validate(100, 1).is_ok());
        let mut s = AdversarySpec::liveness(EstimatorMode::Naive);
        s.smoothing = 0.0;
        assert!(s.validate(100, 1).is_err());
    }

    #[test]
    fn naive_query_budget() {
        let naive = AdversarySpec::liveness(EstimatorMode::Naive);
        assert_eq!(Adversary::new(&naive, 100, 7, 20).unwrap().estimation_queries(), 7);
        let single = AdversarySpec {
            naive_queries: Some(1),
            ..naive.clone()
        };
        assert_eq!(Adversary::new(&single, 100, 7, 20).unwrap().estimation_queries(), 1);
        let none = AdversarySpec {
            naive_queries: Some(0),
            ..naive
        };
        assert!(none.validate(100, 7).is_err());
        let informed = AdversarySpec::liveness(EstimatorMode::Informed);
        assert_eq!(Adversary::new(&informed, 100, 7, 20).unwrap().estimation_queries(), 0);
    }

    #[test]
    fn default_mu_target_follows_stable_split() {
        let spec = AdversarySpec::safety(1);
        assert!((spec.resolve_mu_target(0.30) - 0.694_285_714).abs() < 1e-6);
        assert!((spec.resolve_mu_target(0.25) - 0.648).abs() < 1e-12);
        assert_eq!(spec.resolve_mu_target(0.6), 0.999);
        let spec = AdversarySpec {
            mu_target: Some(0.55),
            ..spec
        };
        assert_eq!(spec.resolve_mu_target(0.3), 0.55);
    }

    #[test]
    fn heuristic_fin_after_beta_red_observations() {
        let spec = AdversarySpec::safety(1).with_estimator(EstimatorMode::Naive);
        let mut adv = Adversary::new(&spec, 10, 2, 3).unwrap();
        for round in 1..=3 {
            assert!(!adv.state().fin);
            adv.begin_round(5, 8);
            assert_eq!(adv.respond(ValidatorId(0), Some(Color::Red)), Color::Red);
            adv.end_round(&trace(round, &[]), Some((10, 20)));
        }
        assert!(adv.state().fin);
        assert_eq!(adv.fin_round(), Some(3));
        assert_eq!(adv.respond(ValidatorId(0), Some(Color::Red)), Color::Blue);
    }

    #[test]
    fn heuristic_streak_resets_on_blue() {
        let spec = AdversarySpec::safety(1).with_estimator(EstimatorMode::Naive);
        let mut adv = Adversary::new(&spec, 10, 2, 2).unwrap();
        let colors = [Color::Red, Color::Blue, Color::Red];
        for (round, c) in colors.into_iter().enumerate() {
            adv.begin_round(5, 8);
            adv.respond(ValidatorId(0), Some(c));
            adv.end_round(&trace(round as u64 + 1, &[]), None);
        }
        assert!(!adv.state().fin);
        // an unobserved round leaves the streak alone
        adv.begin_round(5, 8);
        adv.end_round(&trace(4, &[]), None);
        assert!(!adv.state().fin);
        adv.begin_round(5, 8);
        adv.respond(ValidatorId(0), Some(Color::Red));
        adv.end_round(&trace(5, &[]), None);
        assert!(adv.state().fin);
    }

    #[test]
    fn oracle_records_first_target_finalization() {
        let mut adv = Adversary::new(&AdversarySpec::safety(2), 10, 2, 20).unwrap();
        adv.begin_round(5, 8);
        adv.end_round(&trace(9, &[(1, Color::Blue)]), None);
        assert!(!adv.state().fin);
        adv.end_round(&trace(10, &[(0, Color::Red)]), None);
        assert!(adv.state().fin);
        assert_eq!(adv.fin_round(), Some(10));
        assert_eq!(
            adv.first_target_finalization(),
            Some(TargetFinalization {
                round: 9,
                color: Color::Blue
            })
        );
    }
}
