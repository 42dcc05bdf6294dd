//! Snowball binary consensus under adversarial attack.
//!
//! - [`snowball`]: the per-validator state machine.
//! - [`simnet`]: synchronous rounds with stake-weighted sampling.
//! - [`adversary`]: colluding liveness and safety strategies.
//! - [`analysis`]: closed-form safety-attack forecasts.
//! - [`harness`]: threshold searches, safety studies and result files.

pub mod adversary;
pub mod analysis;
pub mod harness;
pub mod simnet;
pub mod snowball;

pub use adversary::{AdversarySpec, EstimatorMode, Strategy};
pub use simnet::{run_simulation, NetworkConfig, RoundTrace, SimOutcome, Simulation, ValidatorId};
pub use snowball::{Color, NoMajorityPolicy, ProtocolParams, QueryOutcome, SnowballState};
