//! Conventional designs the matched design is compared against.

use serde::{Deserialize, Serialize};

use super::cmh::cmh_test;
use super::population::{generate_cohort, Covariate, OutcomeModel, Patient};
use crate::glm::{fit_logistic, wald_p_value, Alternative, DesignMatrix};
use crate::stats::{norm_sf, RngStream, TwoByTwoTable};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleArmOutcome {
    pub rejected: bool,
    pub z: f64,
    pub pi_t_hat: f64,
}

/// Single-arm trial of `n` treated patients against a fixed response rate
/// `p0`, normal approximation without continuity correction.
pub fn run_single_arm(s: &mut RngStream, model: &OutcomeModel, n: usize, p0: f64, alpha: f64) -> SingleArmOutcome {
    assert!(n >= 1, "n must be positive");
    let arm = generate_cohort(s, model, 0, n, true);
    let responders = arm.iter().filter(|p| p.response).count();
    let pi = responders as f64 / n as f64;
    let z = single_arm_z(responders, n, p0);
    SingleArmOutcome {
        rejected: norm_sf(z) <= alpha,
        z,
        pi_t_hat: pi,
    }
}

/// `(p_hat - p0) / sqrt(p0 (1 - p0) / n)`.
pub fn single_arm_z(responders: usize, n: usize, p0: f64) -> f64 {
    let pi = responders as f64 / n as f64;
    (pi - p0) / (p0 * (1.0 - p0) / n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RctAnalysis {
    /// Pooled-variance two-proportion z-test.
    ZTest,
    /// Wald test of treatment in a logistic model with all covariates.
    AdjustedLogistic,
    /// CMH test over cytogenetics x age (< 55, >= 55) strata.
    Cmh,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RctOutcome {
    pub rejected: bool,
    pub pi_t_hat: f64,
    pub pi_c_hat: f64,
    /// The analysis was not estimable; counted as not rejected.
    pub degenerate: bool,
}

/// Age split for the CMH strata.
pub const CMH_AGE_CUT: f64 = 55.0;

/// Randomized trial with exactly `n_per_arm` patients in each arm.
pub fn run_rct(s: &mut RngStream, model: &OutcomeModel, n_per_arm: usize, alpha: f64, analysis: RctAnalysis) -> RctOutcome {
    assert!(n_per_arm >= 2, "need at least two patients per arm");
    let treated = generate_cohort(s, model, 0, n_per_arm, true);
    let control = generate_cohort(s, model, n_per_arm as u32, n_per_arm, false);
    let rt = treated.iter().filter(|p| p.response).count();
    let rc = control.iter().filter(|p| p.response).count();
    let n = n_per_arm as f64;
    let (pi_t, pi_c) = (rt as f64 / n, rc as f64 / n);

    let p_value = match analysis {
        RctAnalysis::ZTest => {
            let pooled = (rt + rc) as f64 / (2.0 * n);
            let var = pooled * (1.0 - pooled) * 2.0 / n;
            (var > 0.0).then(|| norm_sf((pi_t - pi_c) / var.sqrt()))
        }
        RctAnalysis::AdjustedLogistic => {
            let covs = Covariate::ALL;
            let mut x = DesignMatrix::with_columns(["intercept", "treatment", "age", "cyto"], 2 * n_per_arm);
            for p in treated.iter().chain(&control) {
                x.push_row(&[1.0, p.treated as u8 as f64, covs[0].value(p), covs[1].value(p)], p.response);
            }
            fit_logistic(&x)
                .ok()
                .and_then(|fit| wald_p_value(&fit, 1, 0.0, Alternative::Greater).ok())
        }
        RctAnalysis::Cmh => {
            let strata = stratify(treated.iter().chain(&control));
            cmh_test(&strata).ok().map(|r| r.p_one_sided)
        }
    };
    RctOutcome {
        rejected: p_value.is_some_and(|p| p <= alpha),
        pi_t_hat: pi_t,
        pi_c_hat: pi_c,
        degenerate: p_value.is_none(),
    }
}

fn stratify<'a>(patients: impl Iterator<Item = &'a Patient>) -> Vec<TwoByTwoTable> {
    // [responders_t, nonresponders_t, responders_c, nonresponders_c] per stratum
    let mut cells = [[0u32; 4]; 4];
    for p in patients {
        let k = (p.cyto as usize) * 2 + (p.age >= CMH_AGE_CUT) as usize;
        let j = (!p.treated as usize) * 2 + (!p.response as usize);
        cells[k][j] += 1;
    }
    cells
        .iter()
        .map(|c| TwoByTwoTable::from_counts(c[0], c[1], c[2], c[3]))
        .collect()
}
