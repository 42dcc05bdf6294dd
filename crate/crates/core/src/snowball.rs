//! Binary Snowball state machine for a single validator.
//!
//! The state machine is independent of any network or scheduling concern: a
//! driver samples peers, tallies their answers into a [`QueryOutcome`] and
//! feeds it to [`SnowballState::absorb_outcome`]. Answers to incoming queries
//! come from [`SnowballState::respond`].

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One of the two conflicting choices. `Blue` accepts the transaction,
/// `Red` rejects it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Blue = 0,
    Red = 1,
}

impl Color {
    pub const ALL: [Color; 2] = [Color::Blue, Color::Red];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Color::Blue),
            1 => Some(Color::Red),
            _ => None,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Color::Blue => Color::Red,
            Color::Red => Color::Blue,
        }
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Color::Blue => f.write_str("Blue"),
            Color::Red => f.write_str("Red"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("invalid protocol parameters: {0}")]
    InvalidParams(String),
    #[error("query outcome tallies {red}+{blue} do not sum to k={k}")]
    OutcomeSize { red: u32, blue: u32, k: u32 },
    #[error("validator already finalized on {0}")]
    AlreadyFinalized(Color),
}

/// What happens to the consecutive counter when a query ends with neither
/// color reaching `alpha`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoMajorityPolicy {
    /// Unsuccessful polls reset the counter.
    #[default]
    Reset,
    /// Only a chit for a different color resets the counter.
    Keep,
}

impl std::str::FromStr for NoMajorityPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reset" => Ok(Self::Reset),
            "keep" => Ok(Self::Keep),
            other => Err(format!("unknown no-majority policy `{other}` (expected reset or keep)")),
        }
    }
}

/// Sample size `k`, majority threshold `alpha` and decision threshold `beta`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub k: u32,
    pub alpha: u32,
    pub beta: u32,
    #[serde(default)]
    pub no_majority: NoMajorityPolicy,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            k: 20,
            alpha: 15,
            beta: 20,
            no_majority: NoMajorityPolicy::Reset,
        }
    }
}

impl ProtocolParams {
    pub fn new(k: u32, alpha: u32, beta: u32) -> Result<Self, ProtocolError> {
        let params = Self {
            k,
            alpha,
            beta,
            no_majority: NoMajorityPolicy::default(),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_no_majority(mut self, policy: NoMajorityPolicy) -> Self {
        self.no_majority = policy;
        self
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.k == 0 {
            return Err(ProtocolError::InvalidParams("k must be at least 1".into()));
        }
        // alpha > k/2 keeps both colors from reaching alpha in one query.
        if 2 * self.alpha <= self.k || self.alpha > self.k {
            return Err(ProtocolError::InvalidParams(format!(
                "alpha={} must satisfy k/2 < alpha <= k (k={})",
                self.alpha, self.k
            )));
        }
        if self.beta == 0 {
            return Err(ProtocolError::InvalidParams("beta must be at least 1".into()));
        }
        Ok(())
    }
}

/// Tally of the `k` responses to one query, indexed by [`Color`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueryOutcome {
    counts: [u32; 2],
}

impl QueryOutcome {
    pub fn new(blue: u32, red: u32) -> Self {
        Self { counts: [blue, red] }
    }

    /// Builds a tally from an iterator of responses.
    pub fn from_responses<I: IntoIterator<Item = Color>>(responses: I) -> Self {
        let mut counts = [0; 2];
        for c in responses {
            counts[c.index()] += 1;
        }
        Self { counts }
    }

    pub fn count(&self, color: Color) -> u32 {
        self.counts[color.index()]
    }

    pub fn total(&self) -> u32 {
        self.counts[0] + self.counts[1]
    }

    /// The color with at least `alpha` votes, if any.
    pub fn majority(&self, alpha: u32) -> Option<Color> {
        Color::ALL.into_iter().find(|c| self.count(*c) >= alpha)
    }
}

/// Per-validator Snowball state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnowballState {
    pref: Option<Color>,
    last: Option<Color>,
    confidence: [u64; 2],
    counter: u32,
    finalized: Option<Color>,
}

impl SnowballState {
    /// A fresh instance. `None` models a validator without an initial
    /// preference; it adopts the color of the first querier it answers.
    pub fn new(init: Option<Color>) -> Self {
        Self {
            pref: init,
            last: init,
            confidence: [0, 0],
            counter: 0,
            finalized: None,
        }
    }

    /// A validator that already holds `chits` chits for `init`, as after a
    /// stretch of earlier voting. The consecutive counter still starts at 0.
    pub fn with_prior(init: Color, chits: u64) -> Self {
        let mut state = Self::new(Some(init));
        state.confidence[init.index()] = chits;
        state
    }

    pub fn preference(&self) -> Option<Color> {
        self.pref
    }

    pub fn last(&self) -> Option<Color> {
        self.last
    }

    pub fn confidence(&self, color: Color) -> u64 {
        self.confidence[color.index()]
    }

    pub fn counter(&self) -> u32 {
        self.counter
    }

    pub fn finalized(&self) -> Option<Color> {
        self.finalized
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized.is_some()
    }

    /// The color this validator currently answers with, without the
    /// adoption side effect of [`respond`](Self::respond).
    pub fn answer(&self) -> Option<Color> {
        self.finalized.or(self.pref)
    }

    /// Applies the result of one query and returns the color that earned a
    /// chit, if any.
    pub fn absorb_outcome(
        &mut self,
        outcome: QueryOutcome,
        params: &ProtocolParams,
    ) -> Result<Option<Color>, ProtocolError> {
        if let Some(c) = self.finalized {
            return Err(ProtocolError::AlreadyFinalized(c));
        }
        if outcome.total() != params.k {
            return Err(ProtocolError::OutcomeSize {
                red: outcome.count(Color::Red),
                blue: outcome.count(Color::Blue),
                k: params.k,
            });
        }

        let Some(chit) = outcome.majority(params.alpha) else {
            if params.no_majority == NoMajorityPolicy::Reset {
                self.counter = 0;
            }
            return Ok(None);
        };

        if self.last != Some(chit) {
            self.counter = 0;
        }
        let i = chit.index();
        self.confidence[i] += 1;
        if self.confidence[i] > self.confidence[1 - i] {
            self.pref = Some(chit);
        }
        self.last = Some(chit);
        self.counter += 1;

        if self.counter >= params.beta {
            self.finalized = Some(chit);
        }
        Ok(Some(chit))
    }

    /// Answers a query from a validator preferring `querier_color`.
    pub fn respond(&mut self, querier_color: Color) -> Color {
        if let Some(c) = self.finalized {
            return c;
        }
        *self.pref.get_or_insert(querier_color)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ProtocolParams {
        ProtocolParams::default()
    }

    fn state(last: Color, counter: u32, confidence: [u64; 2]) -> SnowballState {
        SnowballState {
            pref: Some(last),
            last: Some(last),
            confidence,
            counter,
            finalized: None,
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(ProtocolParams::new(0, 0, 1).is_err());
        assert!(ProtocolParams::new(20, 10, 20).is_err());
        assert!(ProtocolParams::new(20, 21, 20).is_err());
        assert!(ProtocolParams::new(20, 15, 0).is_err());
        assert!(ProtocolParams::new(20, 11, 1).is_ok());
        assert!(ProtocolParams::new(1, 1, 1).is_ok());
    }

    #[test]
    fn new_state() {
        let s = SnowballState::new(Some(Color::Red));
        assert_eq!(s.preference(), Some(Color::Red));
        assert_eq!(s.last(), Some(Color::Red));
        assert_eq!(s.counter(), 0);

        let s = SnowballState::new(Some(Color::Blue));
        assert_eq!(s.confidence(Color::Blue), 0);
        assert_eq!(s.confidence(Color::Red), 0);
        assert_eq!(s.finalized(), None);
    }

    #[test]
    fn unanimous_chit_completes_beta() {
        let mut s = state(Color::Red, 19, [0, 19]);
        let chit = s.absorb_outcome(QueryOutcome::new(0, 20), &params()).unwrap();
        assert_eq!(chit, Some(Color::Red));
        assert_eq!(s.finalized(), Some(Color::Red));
        assert_eq!(s.counter(), 20);
    }

    #[test]
    fn chit_for_other_color_resets_counter() {
        let mut s = state(Color::Red, 5, [0, 5]);
        s.absorb_outcome(QueryOutcome::new(17, 3), &params()).unwrap();
        assert_eq!(s.last(), Some(Color::Blue));
        assert_eq!(s.counter(), 1);
        assert_eq!(s.confidence(Color::Blue), 1);
        // Red still leads in confidence.
        assert_eq!(s.preference(), Some(Color::Red));
    }

    #[test]
    fn no_majority_round() {
        let outcome = QueryOutcome::new(6, 14);

        let mut keep = state(Color::Red, 5, [0, 5]);
        let p = params().with_no_majority(NoMajorityPolicy::Keep);
        assert_eq!(keep.absorb_outcome(outcome, &p).unwrap(), None);
        assert_eq!(keep.counter(), 5);
        assert_eq!(keep.confidence(Color::Red), 5);

        let mut reset = state(Color::Red, 5, [0, 5]);
        assert_eq!(reset.absorb_outcome(outcome, &params()).unwrap(), None);
        assert_eq!(reset.counter(), 0);
        assert_eq!(reset.confidence(Color::Red), 5);
        assert_eq!(reset.last(), Some(Color::Red));
    }

    #[test]
    fn rejects_wrong_outcome_size() {
        let mut s = SnowballState::new(Some(Color::Red));
        let err = s.absorb_outcome(QueryOutcome::new(3, 3), &params()).unwrap_err();
        assert!(matches!(err, ProtocolError::OutcomeSize { k: 20, .. }));
    }

    #[test]
    fn rejects_absorb_after_finalization() {
        let p = ProtocolParams::new(1, 1, 1).unwrap();
        let mut s = SnowballState::new(Some(Color::Blue));
        s.absorb_outcome(QueryOutcome::new(1, 0), &p).unwrap();
        assert_eq!(s.finalized(), Some(Color::Blue));
        assert_eq!(
            s.absorb_outcome(QueryOutcome::new(0, 1), &p),
            Err(ProtocolError::AlreadyFinalized(Color::Blue))
        );
    }

    #[test]
    fn respond_returns_preference() {
        let mut s = SnowballState::new(Some(Color::Blue));
        assert_eq!(s.respond(Color::Red), Color::Blue);
        assert_eq!(s.preference(), Some(Color::Blue));
    }

    #[test]
    fn respond_adopts_querier_color_when_unset() {
        let mut s = SnowballState::new(None);
        assert_eq!(s.respond(Color::Red), Color::Red);
        assert_eq!(s.preference(), Some(Color::Red));
        assert_eq!(s.respond(Color::Blue), Color::Red);
    }

    #[test]
    fn finalized_response_is_immutable() {
        let p = ProtocolParams::new(20, 15, 2).unwrap();
        let mut s = SnowballState::new(Some(Color::Red));
        for _ in 0..2 {
            s.absorb_outcome(QueryOutcome::new(0, 20), &p).unwrap();
        }
        assert_eq!(s.finalized(), Some(Color::Red));
        assert_eq!(s.respond(Color::Blue), Color::Red);
    }

    #[test]
    fn finalized_color_overrides_confidence_leader() {
        // Blue leads on confidence but Red wins beta consecutive chits.
        let p = ProtocolParams::new(20, 15, 3).unwrap();
        let mut s = state(Color::Blue, 0, [10, 0]);
        for _ in 0..3 {
            s.absorb_outcome(QueryOutcome::new(0, 20), &p).unwrap();
        }
        assert_eq!(s.finalized(), Some(Color::Red));
        assert_eq!(s.preference(), Some(Color::Blue));
        assert_eq!(s.answer(), Some(Color::Red));
        assert_eq!(s.respond(Color::Blue), Color::Red);
    }

    #[test]
    fn tie_keeps_initial_preference() {
        let p = params();
        let mut s = SnowballState::new(Some(Color::Red));
        s.absorb_outcome(QueryOutcome::new(20, 0), &p).unwrap();
        assert_eq!(s.preference(), Some(Color::Blue));
        s.absorb_outcome(QueryOutcome::new(0, 20), &p).unwrap();
        // 1:1 tie, Blue stays preferred.
        assert_eq!(s.preference(), Some(Color::Blue));
        s.absorb_outcome(QueryOutcome::new(0, 20), &p).unwrap();
        assert_eq!(s.preference(), Some(Color::Red));
    }
}
