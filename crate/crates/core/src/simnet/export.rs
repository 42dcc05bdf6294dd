//! Trace and run-summary export.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{NetworkConfig, RoundTrace, SimOutcome};
use crate::adversary::{AdversarySpec, TargetFinalization};

pub const TRACE_CSV_HEADER: [&str; 4] = ["round", "honest_red", "honest_blue", "finalized_total"];

/// JSON summary of one run, echoing the configuration that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub outcome: SimOutcome,
    pub rounds: u64,
    pub seed: u64,
    pub first_finalization_round: Option<u64>,
    pub first_target_finalization: Option<TargetFinalization>,
    pub fin_round: Option<u64>,
    pub finalized_red: u32,
    pub finalized_blue: u32,
    pub config: NetworkConfig,
    pub adversary: Option<AdversarySpec>,
}

/// Writes one CSV row per round.
pub fn write_trace_csv<W: Write>(writer: W, traces: &[RoundTrace]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACE_CSV_HEADER)?;
    for t in traces {
        w.write_record([
            t.round.to_string(),
            t.honest_red.to_string(),
            t.honest_blue.to_string(),
            t.finalized_total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
