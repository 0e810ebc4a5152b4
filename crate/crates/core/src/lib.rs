//! Average consensus on time-varying directed graphs: conventional push-sum,
//! a confidential push-sum variant that hides initial values from colluding
//! honest-but-curious agents, a deterministic round simulator, attacks, and
//! convergence diagnostics.
//!
//! Agent ids are 0-based in this API. Files and exported artifacts use
//! 1-based ids.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod engine;
pub mod error;
pub mod export;
pub mod graph;
pub mod metrics;
pub mod protocol;
pub mod rng;
pub mod scenario;
pub mod stats;

pub use adversary::{
    attack_conventional, attack_reconstruct, indistinguishability_test, observe, privacy_condition,
    AdversaryView, IndistinguishabilityReport, PrivacyVerdict, Verdict, Witness,
};
pub use engine::{run, run_trials, RoundRecord, Transcript};
pub use error::{Error, Result};
pub use graph::{AssumptionReport, Edge, EdgeSet, GraphSchedule, IncidenceMatrix, ScheduleFile};
pub use metrics::{
    audit_transcript, error_norm, estimate_rate, theoretical_rate, ConvergenceReport, RateBound,
    Violation, ViolationKind,
};
pub use protocol::{
    decode_estimate, encode_initial, frac, gen_weights, AgentState, ProtocolParams, RoundMessage,
    WeightMatrix, WeightPolicy, WeightVector,
};
pub use scenario::{Algorithm, InitialValues, RecordMode, ScenarioConfig, ScheduleSource};
