//! Data generation and execution of single trials: the adaptive matched
//! design, its one-stage counterpart, and the conventional comparators.

mod adaptive;
mod cmh;
mod comparators;
mod population;

pub use adaptive::{
    run_adaptive_trial, AnalysisMode, EngineOptions, Stage2Issue, StageAnalysis, TrialEngine, TrialFault, TrialOutcome,
};
pub use cmh::{cmh_test, CmhError, CmhResult};
pub use comparators::{run_rct, run_single_arm, single_arm_z, RctAnalysis, RctOutcome, SingleArmOutcome};
pub use population::{generate_cohort, generate_patient, Covariate, OutcomeModel, Patient};

use crate::stats::RngStream;

/// Substream purposes within one replication.
pub mod purpose {
    pub const POOL: u64 = 1;
    pub const STAGE1: u64 = 2;
    pub const STAGE2: u64 = 3;
    pub const COMPARATOR: u64 = 4;
}

/// Historical control pool with ids `0..n_controls`.
pub fn generate_pool(s: &mut RngStream, model: &OutcomeModel, n_controls: usize) -> Vec<Patient> {
    generate_cohort(s, model, 0, n_controls, false)
}
