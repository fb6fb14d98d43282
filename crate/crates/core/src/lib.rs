//! Simulation engine and analytical planner for an adaptive two-stage
//! single-arm trial whose intervention arm is augmented with
//! propensity-score-matched historical controls.
//!
//! The design, in order of execution for one trial:
//!
//! 1. recruit `n1` intervention patients and fit a propensity model against
//!    the historical pool;
//! 2. pick the number of controls per patient `M` by the iterative
//!    matching-rate rule ([`matching::determine_m`]) and match 1:M with a
//!    caliper, greedily and without replacement;
//! 3. estimate the log odds ratio on the matched stage I data with an
//!    adjusted logistic model and stop for futility if it falls below
//!    `theta_stop`;
//! 4. otherwise recalculate the stage II size from the conditional error
//!    function, a target conditional power and the projected stage II
//!    matching rate ([`design::recalc_stage2_n`]);
//! 5. match the stage II recruits (plus stage I leftovers) against the
//!    controls not used in stage I, fit the stage II model and combine the
//!    two one-sided p-values with the inverse normal method.
//!
//! [`harness`] runs many such trials in parallel on independent random
//! streams and reduces them into operating characteristics.

pub mod design;
pub mod estimators;
pub mod glm;
pub mod harness;
pub mod matching;
pub mod stats;
pub mod trial;

pub use design::{CpTable, DesignError, DesignParams, InterimResult, Mr2Mode, RecalcMode};
pub use estimators::{MlWeighting, StageEstimate, StagePair};
pub use glm::{fit_logistic, DesignMatrix, FitResult, GlmError};
pub use matching::{MatchResult, MatchedSet, MatchingError, PropensityScores};
pub use stats::{RngStream, TwoByTwoTable};
pub use trial::{AnalysisMode, Covariate, EngineOptions, OutcomeModel, Patient, TrialEngine, TrialOutcome};
pub use harness::{
    estimator_study, find_fixed_n, futility_table, run_scenario, run_scenario_with_threads, AggregateStats,
    HarnessError, PoolMode, ScenarioConfig, StudyDesign,
};
