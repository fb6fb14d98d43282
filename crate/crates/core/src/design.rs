//! Adaptive-design calculus: inverse normal combination, conditional error,
//! futility, conditional power and stage II sample-size recalculation, plus
//! the analytical planning approximations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{expit, logit, norm_cdf, norm_quantile, norm_sf};

/// p-values are clamped to `[P_CLAMP, 1 - P_CLAMP]` before any quantile.
pub const P_CLAMP: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid design parameter `{field}`: {reason}")]
pub struct DesignError {
    pub field: &'static str,
    pub reason: String,
}

fn invalid(field: &'static str, reason: impl Into<String>) -> DesignError {
    DesignError {
        field,
        reason: reason.into(),
    }
}

/// Which effect drives the stage II sample-size recalculation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecalcMode {
    /// The effect assumed at planning, `theta_plan`.
    PlannedEffect,
    /// The stage I estimate.
    InterimEstimate,
}

/// How the stage II matching rate is projected from stage I.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mr2Mode {
    /// Use the stage I rate unchanged.
    Naive,
    /// Lower limit of the one-sided 99% Wald interval for the stage I rate.
    WaldLower99,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignParams {
    /// One-sided significance level.
    pub alpha: f64,
    /// Type II error target.
    pub beta: f64,
    pub theta_plan: f64,
    /// Futility threshold on the stage I log odds ratio.
    pub theta_stop: f64,
    /// Null value of the log odds ratio.
    pub theta_cross: f64,
    pub w1: f64,
    pub w2: f64,
    /// Stage I intervention patients.
    pub n1: usize,
    pub n2_min: usize,
    pub n2_max: usize,
    /// Matching-rate tolerance for the choice of `M`.
    pub tau: f64,
    pub m_max: usize,
    pub recalc_mode: RecalcMode,
    pub cp_cap: f64,
    pub mr2_mode: Mr2Mode,
    /// Control response rate assumed when planning the conditional power.
    pub planning_pi_c: f64,
    /// Stage I matching rate assumed when planning the conditional power.
    pub planning_match_rate: f64,
}

impl Default for DesignParams {
    fn default() -> Self {
        Self {
            alpha: 0.025,
            beta: 0.2,
            theta_plan: (7.0f64 / 3.0).ln(),
            theta_stop: 1.3f64.ln(),
            theta_cross: 0.0,
            w1: std::f64::consts::FRAC_1_SQRT_2,
            w2: std::f64::consts::FRAC_1_SQRT_2,
            n1: 20,
            n2_min: 10,
            n2_max: 80,
            tau: 0.05,
            m_max: 5,
            recalc_mode: RecalcMode::PlannedEffect,
            cp_cap: 0.99,
            mr2_mode: Mr2Mode::WaldLower99,
            planning_pi_c: 0.3,
            planning_match_rate: 1.0,
        }
    }
}

impl DesignParams {
    /// Defaults with a given stage I size, a total cap of `max_total`
    /// intervention patients and `M_max` derived from the pool size.
    pub fn with_pool(n1: usize, max_total: usize, n_controls: usize) -> Self {
        Self {
            n1,
            n2_max: max_total.saturating_sub(n1),
            m_max: crate::matching::m_max_from_pool(n_controls, max_total),
            ..Self::default()
        }
    }

    /// Largest number of intervention patients a trial can enrol.
    pub fn max_total(&self) -> usize {
        self.n1 + self.n2_max
    }

    pub fn validate(&self) -> Result<(), DesignError> {
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return Err(invalid("alpha", "must lie in (0, 0.5]"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(invalid("beta", "must lie in (0, 1)"));
        }
        if !self.theta_plan.is_finite() {
            return Err(invalid("theta_plan", "must be finite"));
        }
        if self.theta_stop.is_nan() {
            return Err(invalid("theta_stop", "must not be NaN"));
        }
        if !self.theta_cross.is_finite() {
            return Err(invalid("theta_cross", "must be finite"));
        }
        if !(self.w1 > 0.0 && self.w2 > 0.0) {
            return Err(invalid("w1", "weights must be positive"));
        }
        if (self.w1 * self.w1 + self.w2 * self.w2 - 1.0).abs() > 1e-12 {
            return Err(invalid("w2", "w1^2 + w2^2 must equal 1"));
        }
        if self.n1 < 1 {
            return Err(invalid("n1", "must be at least 1"));
        }
        if self.n2_min < 1 {
            return Err(invalid("n2_min", "must be at least 1"));
        }
        if self.n2_max < self.n2_min {
            return Err(invalid("n2_max", "must be at least n2_min"));
        }
        if !(self.tau >= 0.0 && self.tau <= 1.0) {
            return Err(invalid("tau", "must lie in [0, 1]"));
        }
        if self.m_max < 1 {
            return Err(invalid("m_max", "must be at least 1"));
        }
        if !(self.cp_cap > 0.0 && self.cp_cap < 1.0) {
            return Err(invalid("cp_cap", "must lie in (0, 1)"));
        }
        if !(self.planning_pi_c > 0.0 && self.planning_pi_c < 1.0) {
            return Err(invalid("planning_pi_c", "must lie in (0, 1)"));
        }
        if !(self.planning_match_rate > 0.0 && self.planning_match_rate <= 1.0) {
            return Err(invalid("planning_match_rate", "must lie in (0, 1]"));
        }
        Ok(())
    }

    fn z_alpha(&self) -> f64 {
        z_upper(self.alpha)
    }
}

/// `Phi^-1(1 - p)` with `p` clamped away from 0 and 1.
#[inline]
fn z_upper(p: f64) -> f64 {
    let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
    -norm_quantile(p).expect("clamped probability")
}

/// Inverse normal combination `1 - Phi(w1 Phi^-1(1 - p1) + w2 Phi^-1(1 - p2))`.
pub fn combine_p_values(p1: f64, p2: f64, w1: f64, w2: f64) -> f64 {
    norm_sf(w1 * z_upper(p1) + w2 * z_upper(p2))
}

/// Conditional error function `A(p1)`: the level at which stage II must be
/// significant for the combination test to reject.
pub fn conditional_error(p1: f64, params: &DesignParams) -> f64 {
    norm_sf((params.z_alpha() - params.w1 * z_upper(p1)) / params.w2)
}

/// Non-binding futility rule; the boundary continues.
#[inline]
pub fn futility_decision(theta1_hat: f64, theta_stop: f64) -> bool {
    theta1_hat < theta_stop
}

/// Large-sample SE of the stage I log odds ratio with `n1_eff` matched
/// intervention patients, `m` controls each and response rates `pi_t`, `pi_c`.
pub fn approx_se_stage1(n1_eff: f64, m: f64, pi_t: f64, pi_c: f64) -> f64 {
    let nt = n1_eff;
    let nc = n1_eff * m;
    (1.0 / (nt * pi_t) + 1.0 / (nt * (1.0 - pi_t)) + 1.0 / (nc * pi_c) + 1.0 / (nc * (1.0 - pi_c))).sqrt()
}

/// Normal approximation to the futility stop: `(p_stop, p_continue)`.
pub fn futility_probability(theta: f64, theta_stop: f64, se: f64) -> (f64, f64) {
    let p_continue = norm_cdf((theta - theta_stop) / se);
    (1.0 - p_continue, p_continue)
}

/// Conditional power so that overall power is about `1 - beta` given the
/// planned probability of passing the interim.
pub fn conditional_power_target(beta: f64, p_continue_plan: f64, cp_cap: f64) -> f64 {
    if p_continue_plan < 1.0 - beta {
        cp_cap
    } else {
        ((1.0 - beta) / p_continue_plan).min(cp_cap)
    }
}

/// Treatment response rate implied by a log odds ratio over `pi_c`.
pub fn implied_pi_t(theta: f64, pi_c: f64) -> f64 {
    expit(logit(pi_c) + theta)
}

/// Conditional power targets for every admissible `M`, fixed before the
/// trial from the planning effect.
#[derive(Debug, Clone, PartialEq)]
pub struct CpTable {
    /// `cp[m - 1]` for `m = 1..=m_max`.
    cp: Vec<f64>,
}

impl CpTable {
    pub fn plan(params: &DesignParams) -> Self {
        let pi_c = params.planning_pi_c;
        let pi_t = implied_pi_t(params.theta_plan, pi_c);
        let n_eff = params.n1 as f64 * params.planning_match_rate;
        let cp = (1..=params.m_max)
            .map(|m| {
                let se = approx_se_stage1(n_eff, m as f64, pi_t, pi_c);
                let (_, p_continue) = futility_probability(params.theta_plan, params.theta_stop, se);
                conditional_power_target(params.beta, p_continue, params.cp_cap)
            })
            .collect();
        Self { cp }
    }

    /// Target for `m` controls per patient; values beyond the table use its last entry.
    pub fn lookup(&self, m: usize) -> f64 {
        let k = m.clamp(1, self.cp.len()) - 1;
        self.cp[k]
    }

    pub fn entries(&self) -> &[f64] {
        &self.cp
    }
}

/// Projected stage II matching rate.
pub fn estimate_stage2_mr(mr1: f64, n1: usize, mode: Mr2Mode) -> f64 {
    match mode {
        Mr2Mode::Naive => mr1,
        Mr2Mode::WaldLower99 => {
            if mr1 >= 1.0 {
                return 1.0;
            }
            let z = norm_quantile(0.99).expect("fixed level");
            let lower = mr1 - z * (mr1 * (1.0 - mr1) / (mr1 * n1 as f64)).sqrt();
            lower.clamp(f64::MIN_POSITIVE, 1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage2Size {
    /// Matched stage II patients needed for the target conditional power;
    /// infinite when the recalculation effect is not above `theta_cross`.
    pub n2_star: f64,
    pub mr2_hat: f64,
    /// Stage II recruits after inflation by `1 / mr2_hat`, rounding up and clamping.
    pub n2_final: usize,
}

/// Stage II sample size from the stage I result.
///
/// `n2* = n1 mr1 se1^2 (Phi^-1(cp) + Phi^-1(1 - A(p1)))^2 / ((theta_recalc - theta_cross)+)^2`.
/// When the conditional error already exceeds `cp` the bracket is negative;
/// it is truncated at zero so the smallest stage II is chosen.
pub fn recalc_stage2_n(p1: f64, se1: f64, mr1: f64, params: &DesignParams, theta_recalc: f64, cp: f64) -> Stage2Size {
    let mr2_hat = estimate_stage2_mr(mr1, params.n1, params.mr2_mode);
    let effect = (theta_recalc - params.theta_cross).max(0.0);
    let n2_star = if effect > 0.0 {
        let z_cp = norm_quantile(cp.clamp(P_CLAMP, 1.0 - P_CLAMP)).expect("clamped probability");
        let z_ce = (params.z_alpha() - params.w1 * z_upper(p1)) / params.w2;
        let bracket = (z_cp + z_ce).max(0.0);
        params.n1 as f64 * mr1 * se1 * se1 * bracket * bracket / (effect * effect)
    } else {
        f64::INFINITY
    };
    let n2_final = inflate_stage2(n2_star, mr2_hat, params);
    Stage2Size {
        n2_star,
        mr2_hat,
        n2_final,
    }
}

/// Stage II recruits needed for `n2_star` matched patients at projected rate
/// `mr2_hat`: `clamp(ceil(n2_star / mr2_hat), n2_min, n2_max)`.
pub fn inflate_stage2(n2_star: f64, mr2_hat: f64, params: &DesignParams) -> usize {
    let inflated = n2_star / mr2_hat;
    if inflated.is_nan() || inflated >= params.n2_max as f64 {
        params.n2_max
    } else {
        (inflated.ceil() as usize).clamp(params.n2_min, params.n2_max)
    }
}

/// Relative allowance on `alpha` so that a combined p-value equal to the
/// level up to rounding rejects.
pub const LEVEL_ROUNDING: f64 = 1e-12;

/// Combination test: `(p_total, reject)`.
pub fn final_test(p1: f64, p2: f64, params: &DesignParams) -> (f64, bool) {
    let p_total = combine_p_values(p1, p2, params.w1, params.w2);
    (p_total, p_total <= params.alpha * (1.0 + LEVEL_ROUNDING))
}

/// Everything decided at the interim analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterimResult {
    pub theta1_hat: f64,
    pub se1: f64,
    pub p1: f64,
    pub stop_for_futility: bool,
    pub m: usize,
    pub mr1: f64,
    pub cp_used: f64,
    pub mr2_hat: f64,
    pub n2_star: f64,
    /// 0 when stopped.
    pub n2_final: usize,
}

/// Interim decision from the stage I estimate.
pub fn interim_decision(theta1_hat: f64, se1: f64, m: usize, mr1: f64, params: &DesignParams, cp_table: &CpTable) -> InterimResult {
    let p1 = norm_sf((theta1_hat - params.theta_cross) / se1);
    let cp = cp_table.lookup(m);
    let stop = futility_decision(theta1_hat, params.theta_stop);
    let (n2_star, mr2_hat, n2_final) = if stop {
        (0.0, estimate_stage2_mr(mr1, params.n1, params.mr2_mode), 0)
    } else {
        let theta_recalc = match params.recalc_mode {
            RecalcMode::PlannedEffect => params.theta_plan,
            RecalcMode::InterimEstimate => theta1_hat,
        };
        let s = recalc_stage2_n(p1, se1, mr1, params, theta_recalc, cp);
        (s.n2_star, s.mr2_hat, s.n2_final)
    };
    InterimResult {
        theta1_hat,
        se1,
        p1,
        stop_for_futility: stop,
        m,
        mr1,
        cp_used: cp,
        mr2_hat,
        n2_star,
        n2_final,
    }
}
