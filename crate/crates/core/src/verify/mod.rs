//! Independent checks of plain and protected programs: exhaustive
//! reachability, target-trace comparison and clone experiments.

mod experiments;
mod reach;

use thiserror::Error;

use crate::interp::{OracleError, RunError, StepError};
use crate::puf::PufError;

pub use experiments::{
    compare_target_traces, CloneExperiment, Comparison, DivergenceReport, TrialResult, Verdict,
    DIVERGENCE_HORIZON,
};
pub use reach::{
    adversarial_responses, exhaustive_safety_check, replay_witness, PufSpace, ReachSubject,
    ReachabilityReport, Witness, WitnessStep, MAX_STATE_SPACE,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("state space of {size} exceeds the limit of {limit}")]
    StateSpaceTooLarge { size: u128, limit: u128 },
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Puf(#[from] PufError),
}
