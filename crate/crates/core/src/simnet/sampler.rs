use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::{SimError, ValidatorId};

/// Stake-weighted sampling with replacement.
///
/// Equal stakes take a uniform fast path; anything else goes through
/// `WeightedIndex`. The caller's own id is excluded by rejection, which keeps
/// the remaining probabilities proportional to stake.
#[derive(Clone, Debug)]
pub struct StakeSampler {
    kind: Kind,
    total: f64,
}

#[derive(Clone, Debug)]
enum Kind {
    Uniform {
        n: u32,
    },
    Weighted {
        index: WeightedIndex<f64>,
        weights: Vec<f64>,
    },
}

impl StakeSampler {
    pub fn uniform(n: u32) -> Result<Self, SimError> {
        if n == 0 {
            return Err(SimError::NoStake);
        }
        Ok(Self {
            kind: Kind::Uniform { n },
            total: f64::from(n),
        })
    }

    pub fn weighted(weights: &[f64]) -> Result<Self, SimError> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(SimError::InvalidConfig("stakes must be finite and non-negative".into()));
        }
        let first = weights.first().copied().unwrap_or(0.0);
        if !weights.is_empty() && weights.iter().all(|w| *w == first) && first > 0.0 {
            return Self::uniform(weights.len() as u32);
        }
        let total: f64 = weights.iter().sum();
        let index = WeightedIndex::new(weights).map_err(|_| SimError::NoStake)?;
        Ok(Self {
            kind: Kind::Weighted {
                index,
                weights: weights.to_vec(),
            },
            total,
        })
    }

    pub fn len(&self) -> u32 {
        match &self.kind {
            Kind::Uniform { n } => *n,
            Kind::Weighted { weights, .. } => weights.len() as u32,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stake(&self, id: ValidatorId) -> f64 {
        match &self.kind {
            Kind::Uniform { .. } => 1.0,
            Kind::Weighted { weights, .. } => weights[id.index()],
        }
    }

    /// Stake held by everyone except `id`.
    pub fn stake_excluding(&self, id: Option<ValidatorId>) -> f64 {
        match id {
            Some(id) if id.index() < self.len() as usize => self.total - self.stake(id),
            _ => self.total,
        }
    }

    /// One draw; `exclude` must leave positive stake, see
    /// [`stake_excluding`](Self::stake_excluding).
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, exclude: Option<ValidatorId>) -> ValidatorId {
        match &self.kind {
            Kind::Uniform { n } => match exclude {
                Some(ex) if ex.0 < *n => {
                    let x = rng.gen_range(0..*n - 1);
                    ValidatorId(if x >= ex.0 { x + 1 } else { x })
                }
                _ => ValidatorId(rng.gen_range(0..*n)),
            },
            Kind::Weighted { index, .. } => loop {
                let id = ValidatorId(index.sample(rng) as u32);
                if Some(id) != exclude {
                    return id;
                }
            },
        }
    }

    /// Draws `k` ids with replacement, never returning `exclude`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        exclude: Option<ValidatorId>,
        k: u32,
    ) -> Result<Vec<ValidatorId>, SimError> {
        if self.stake_excluding(exclude) <= 0.0 {
            return Err(SimError::NoStake);
        }
        Ok((0..k).map(|_| self.draw(rng, exclude)).collect())
    }
}
