use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Aggregate, ExperimentKind, ExperimentResult, HarnessError, PlotPoint, Profile, RunRecord};
use crate::adversary::{AdversarySpec, EstimatorMode, DEFAULT_SMOOTHING};
use crate::simnet::{rng::derive_seed, NetworkConfig, SimOutcome, Simulation, StopRule};
use crate::snowball::ProtocolParams;

/// Binary search for the smallest adversary stake that stalls the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LivenessExperimentSpec {
    pub n: u32,
    pub estimator: EstimatorMode,
    pub runs_per_point: u32,
    pub max_rounds: u64,
    /// The attack succeeds at a stake point when strictly more runs than
    /// this time out.
    pub success_threshold: u32,
    pub search_lo: f64,
    pub search_hi: f64,
    pub search_resolution: f64,
    pub seed: u64,
    pub params: ProtocolParams,
    pub smoothing: f64,
    pub naive_queries: Option<u32>,
    /// Skip the remaining runs of a point once its verdict is settled.
    pub early_stop: bool,
}

impl LivenessExperimentSpec {
    pub fn new(n: u32, estimator: EstimatorMode, profile: Profile) -> Self {
        Self {
            n,
            estimator,
            runs_per_point: 10,
            max_rounds: profile.max_rounds(),
            success_threshold: 5,
            search_lo: 0.001,
            search_hi: 0.20,
            search_resolution: 0.001,
            seed: 0,
            params: ProtocolParams::default(),
            smoothing: DEFAULT_SMOOTHING,
            naive_queries: None,
            early_stop: true,
        }
    }

    /// Adversarial validator count probed for stake fraction `x`.
    pub fn f_at(&self, x: f64) -> u32 {
        (x * f64::from(self.n)).round() as u32
    }

    pub fn adversary(&self, f: u32) -> AdversarySpec {
        if f == 0 {
            return AdversarySpec::none();
        }
        AdversarySpec {
            smoothing: self.smoothing,
            naive_queries: self.naive_queries,
            ..AdversarySpec::liveness(self.estimator)
        }
    }

    /// Network of run `run` at `f` adversarial validators. The seed depends
    /// on the run index only, so every stake point sees the same seeds.
    pub fn network(&self, f: u32, run: u32) -> NetworkConfig {
        NetworkConfig::new(self.n, f, derive_seed(self.seed, &[u64::from(run)])).with_params(self.params)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::InvalidSpec(msg));
        if self.runs_per_point == 0 {
            return bad("runs_per_point must be at least 1".into());
        }
        if self.success_threshold > self.runs_per_point {
            return bad(format!(
                "success threshold {} exceeds {} runs per point",
                self.success_threshold, self.runs_per_point
            ));
        }
        if !(0.0 <= self.search_lo && self.search_lo < self.search_hi && self.search_hi < 1.0) {
            return bad(format!(
                "search bracket [{}, {}] must satisfy 0 <= lo < hi < 1",
                self.search_lo, self.search_hi
            ));
        }
        if !(self.search_resolution > 0.0) {
            return bad(format!("search resolution {} must be positive", self.search_resolution));
        }
        if self.max_rounds == 0 {
            return bad("max_rounds must be at least 1".into());
        }
        let f = self.f_at(self.search_hi);
        self.network(f, 0).validate()?;
        self.adversary(f).validate(self.n, f)?;
        Ok(())
    }
}

/// True iff strictly more than `success_threshold` runs ended without any
/// honest validator finalizing.
pub fn attack_success(outcomes: &[SimOutcome], success_threshold: u32) -> bool {
    outcomes.iter().filter(|o| o.is_timeout()).count() > success_threshold as usize
}

/// Verdict at one probed stake point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub fraction: f64,
    pub f: u32,
    /// Runs actually executed; fewer than `runs_per_point` after an early
    /// stop.
    pub runs: u32,
    pub timeouts: u32,
    pub success: bool,
}

/// Outcome of one threshold search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    pub n: u32,
    pub estimator: EstimatorMode,
    pub threshold: f64,
    /// Final bracket: the attack failed at `lower` and succeeded at `upper`.
    pub lower: f64,
    pub upper: f64,
    /// Probes in the order they ran.
    pub probes: Vec<ProbePoint>,
}

fn probe(
    spec: &LivenessExperimentSpec,
    fraction: f64,
    records: &mut Vec<RunRecord>,
) -> Result<ProbePoint, HarnessError> {
    let f = spec.f_at(fraction);
    let adversary = spec.adversary(f);
    let chunk = if spec.early_stop {
        rayon::current_num_threads().max(1) as u32
    } else {
        spec.runs_per_point
    };
    let mut outcomes = Vec::new();
    let mut start = 0;
    while start < spec.runs_per_point {
        let end = (start + chunk).min(spec.runs_per_point);
        let batch = (start..end)
            .into_par_iter()
            .map(|run| {
                let config = spec.network(f, run);
                let seed = config.seed;
                let mut sim = Simulation::new(config, &adversary)?;
                let outcome = sim.run_with(spec.max_rounds, StopRule::FirstFinalization, |_| {});
                Ok::<_, HarnessError>((run, seed, outcome))
            })
            .collect::<Result<Vec<_>, _>>()?;
        for (run, seed, outcome) in batch {
            records.push(RunRecord {
                x: f64::from(spec.n),
                n: spec.n,
                f,
                run,
                seed,
                outcome: outcome.label().to_string(),
                rounds: outcome.round(),
                pivot_round: None,
                violation_round: None,
            });
            outcomes.push(outcome);
        }
        start = end;
        let timeouts = outcomes.iter().filter(|o| o.is_timeout()).count() as u32;
        let finished = outcomes.len() as u32 - timeouts;
        let decided = timeouts > spec.success_threshold || finished >= spec.runs_per_point - spec.success_threshold;
        if spec.early_stop && decided {
            break;
        }
    }
    let point = ProbePoint {
        fraction,
        f,
        runs: outcomes.len() as u32,
        timeouts: outcomes.iter().filter(|o| o.is_timeout()).count() as u32,
        success: attack_success(&outcomes, spec.success_threshold),
    };
    log::info!(
        "n={} {} f={} ({:.4}): {}/{} timeouts -> {}",
        spec.n,
        spec.estimator,
        f,
        fraction,
        point.timeouts,
        point.runs,
        if point.success { "stalled" } else { "finalized" }
    );
    Ok(point)
}

/// Pairs (f succeeding, larger f failing) among `probes`.
pub fn monotonicity_violations(probes: &[ProbePoint]) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for a in probes.iter().filter(|p| p.success) {
        for b in probes.iter().filter(|p| !p.success && p.f > a.f) {
            out.push((a.f, b.f));
        }
    }
    out
}

fn search(spec: &LivenessExperimentSpec, records: &mut Vec<RunRecord>) -> Result<ThresholdEstimate, HarnessError> {
    spec.validate()?;
    let mut probes: Vec<ProbePoint> = Vec::new();
    let mut verdicts: BTreeMap<u32, bool> = BTreeMap::new();
    let mut check = |x: f64, probes: &mut Vec<ProbePoint>| -> Result<bool, HarnessError> {
        let f = spec.f_at(x);
        if let Some(&v) = verdicts.get(&f) {
            return Ok(v);
        }
        let point = probe(spec, x, records)?;
        verdicts.insert(f, point.success);
        let v = point.success;
        probes.push(point);
        Ok(v)
    };

    let (mut lo, mut hi) = (spec.search_lo, spec.search_hi);
    if check(lo, &mut probes)? {
        return Err(HarnessError::Bracket {
            fraction: lo,
            f: spec.f_at(lo),
            verdict: "already succeeds",
        });
    }
    if !check(hi, &mut probes)? {
        return Err(HarnessError::Bracket {
            fraction: hi,
            f: spec.f_at(hi),
            verdict: "still fails",
        });
    }
    while hi - lo > spec.search_resolution {
        let mid = 0.5 * (lo + hi);
        if check(mid, &mut probes)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    for (a, b) in monotonicity_violations(&probes) {
        log::warn!("n={}: attack stalled at f={a} but not at f={b}", spec.n);
    }
    Ok(ThresholdEstimate {
        n: spec.n,
        estimator: spec.estimator,
        threshold: 0.5 * (lo + hi),
        lower: lo,
        upper: hi,
        probes,
    })
}

/// Bisects on the adversary's stake fraction until the bracket is no wider
/// than `search_resolution`. Fails if the attack already succeeds at
/// `search_lo` or still fails at `search_hi`.
pub fn liveness_threshold_search(spec: &LivenessExperimentSpec) -> Result<ThresholdEstimate, HarnessError> {
    search(spec, &mut Vec::new())
}

/// Runs the threshold search of `base` once per network size.
pub fn liveness_sweep(base: &LivenessExperimentSpec, sizes: &[u32]) -> Result<ExperimentResult, HarnessError> {
    let started = Instant::now();
    let mut result = ExperimentResult::new(
        ExperimentKind::Liveness,
        &serde_json::json!({ "search": base, "sizes": sizes }),
        Aggregate::Liveness(Vec::new()),
    );
    let mut estimates = Vec::new();
    for &n in sizes {
        let spec = LivenessExperimentSpec { n, ..base.clone() };
        let estimate = search(&spec, &mut result.runs)?;
        result.plot.push(PlotPoint {
            x: f64::from(n),
            y: estimate.threshold,
            stderr: None,
            predicted: None,
        });
        estimates.push(estimate);
    }
    result.aggregate = Aggregate::Liveness(estimates);
    result.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(result)
}
