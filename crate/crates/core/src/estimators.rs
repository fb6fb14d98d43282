//! Point estimates and the repeated confidence bound combining both stages.

use serde::{Deserialize, Serialize};

use crate::stats::norm_quantile;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageEstimate {
    pub theta: f64,
    pub se: f64,
    /// Intervention patients offered for matching in this stage.
    pub n: f64,
    pub mr: f64,
}

impl StageEstimate {
    /// Matched intervention patients, `mr * n`.
    pub fn effective_n(&self) -> f64 {
        self.mr * self.n
    }
}

/// Stage-wise estimates of one trial. `stage2` is absent when the trial
/// stopped at the interim or its stage II data were discarded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StagePair {
    pub stage1: StageEstimate,
    pub stage2: Option<StageEstimate>,
    pub w1: f64,
    pub w2: f64,
}

/// Weighting of the pooled maximum-likelihood estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MlWeighting {
    /// Weights `mr1 n1` and `mr2 n2`, normalized to sum to one.
    #[default]
    Normalized,
    /// Second numerator `n2` without its matching rate, as sometimes
    /// written; weights then need not sum to one.
    AsPrinted,
}

/// Stage-size weighted average of the stage estimates.
pub fn estimate_ml(s: &StagePair, weighting: MlWeighting) -> f64 {
    let Some(s2) = s.stage2 else {
        return s.stage1.theta;
    };
    let e1 = s.stage1.effective_n();
    let e2 = s2.effective_n();
    let denom = e1 + e2;
    let second = match weighting {
        MlWeighting::Normalized => e2,
        MlWeighting::AsPrinted => s2.n,
    };
    (e1 * s.stage1.theta + second * s2.theta) / denom
}

/// Fixed-weight combination `omega theta1 + (1 - omega) theta2`.
pub fn estimate_fwml(s: &StagePair, omega: f64) -> f64 {
    debug_assert!(omega > 0.0 && omega < 1.0);
    match s.stage2 {
        Some(s2) => omega * s.stage1.theta + (1.0 - omega) * s2.theta,
        None => s.stage1.theta,
    }
}

/// Adaptive weights proportional to `w_k / se_k`.
pub fn estimate_awml(s: &StagePair) -> f64 {
    match s.stage2 {
        Some(s2) => {
            let a = s.w1 / s.stage1.se;
            let b = s.w2 / s2.se;
            let omega = a / (a + b);
            omega * s.stage1.theta + (1.0 - omega) * s2.theta
        }
        None => s.stage1.theta,
    }
}

/// Lower bound of the one-sided repeated confidence interval at level `1 - alpha`.
pub fn repeated_ci_lower(s: &StagePair, alpha: f64) -> f64 {
    let z = -norm_quantile(alpha).expect("alpha in (0, 1)");
    match s.stage2 {
        Some(s2) => estimate_awml(s) - z / (s.w1 / s.stage1.se + s.w2 / s2.se),
        None => s.stage1.theta - z * s.stage1.se,
    }
}
