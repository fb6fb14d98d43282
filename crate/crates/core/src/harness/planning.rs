//! Estimator study, analytical futility tables and the fixed-design search.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_scenario, shared_pool, AggregateStats, HarnessError, ScenarioConfig, StudyDesign};
use crate::design::{approx_se_stage1, futility_probability, implied_pi_t};
use crate::stats::RngStream;
use crate::trial::{generate_pool, purpose, TrialEngine};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRow {
    pub theta: f64,
    pub bias_ml: f64,
    pub rmse_ml: f64,
    pub bias_fwml: f64,
    pub rmse_fwml: f64,
    pub bias_awml: f64,
    pub rmse_awml: f64,
    pub ci_coverage: f64,
    pub ci_coverage_se: f64,
    /// Replications that produced an estimate.
    pub estimable: u64,
    pub replications: u64,
}

impl EstimatorRow {
    fn from_stats(s: &AggregateStats) -> Self {
        Self {
            theta: s.theta,
            bias_ml: s.bias_ml,
            rmse_ml: s.rmse_ml,
            bias_fwml: s.bias_fwml,
            rmse_fwml: s.rmse_fwml,
            bias_awml: s.bias_awml,
            rmse_awml: s.rmse_awml,
            ci_coverage: s.ci_coverage,
            ci_coverage_se: s.ci_coverage_se,
            estimable: s.replications - s.fault_count,
            replications: s.replications,
        }
    }
}

/// Bias, RMSE and CI coverage of the point estimators at each true effect
/// in `thetas`, with the futility stop disabled.
pub fn estimator_study(cfg: &ScenarioConfig, thetas: &[f64]) -> Result<Vec<EstimatorRow>, HarnessError> {
    if thetas.is_empty() {
        return Err(HarnessError::Invalid {
            field: "thetas",
            reason: "grid must not be empty".into(),
        });
    }
    if cfg.study != StudyDesign::Adaptive {
        return Err(HarnessError::Invalid {
            field: "study",
            reason: "estimator study needs the adaptive design".into(),
        });
    }
    thetas
        .iter()
        .map(|&theta| {
            let mut c = cfg.clone();
            c.model.theta = theta;
            c.design.theta_stop = f64::NEG_INFINITY;
            run_scenario(&c).map(|s| EstimatorRow::from_stats(&s))
        })
        .collect()
}

/// Axes of the analytical futility table. An empty `pi_t` axis means
/// `pi_t` is implied by each `theta` and `pi_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FutilityGrid {
    pub n_eff: Vec<f64>,
    pub m: Vec<f64>,
    pub theta_stop: Vec<f64>,
    pub theta: Vec<f64>,
    pub pi_t: Vec<f64>,
    pub pi_c: Vec<f64>,
}

impl Default for FutilityGrid {
    /// Stage I sizes 10..=100 by 10 and `M` of 1, 5 and 10 at the planning effect.
    fn default() -> Self {
        Self {
            n_eff: (1..=10).map(|k| 10.0 * k as f64).collect(),
            m: vec![1.0, 5.0, 10.0],
            theta_stop: vec![1.3f64.ln()],
            theta: vec![(7.0f64 / 3.0).ln()],
            pi_t: Vec::new(),
            pi_c: vec![0.3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FutilityRow {
    pub n_eff: f64,
    pub m: f64,
    pub theta_stop: f64,
    pub theta: f64,
    pub pi_t: f64,
    pub pi_c: f64,
    pub se: f64,
    pub p_stop: f64,
    pub p_continue: f64,
}

/// Normal-approximation stop and continue probabilities over the full
/// cartesian grid. Draws no random numbers.
pub fn futility_table(grid: &FutilityGrid) -> Result<Vec<FutilityRow>, HarnessError> {
    let check = |field: &'static str, v: &[f64], ok: fn(f64) -> bool| {
        if v.is_empty() && field != "pi_t" {
            return Err(HarnessError::Invalid {
                field,
                reason: "axis must not be empty".into(),
            });
        }
        match v.iter().find(|&&x| !ok(x)) {
            Some(x) => Err(HarnessError::Invalid {
                field,
                reason: format!("value {x} out of range"),
            }),
            None => Ok(()),
        }
    };
    let prob = |x: f64| x > 0.0 && x < 1.0;
    check("n_eff", &grid.n_eff, |x| x > 0.0 && x.is_finite())?;
    check("m", &grid.m, |x| x > 0.0 && x.is_finite())?;
    check("theta_stop", &grid.theta_stop, |x| !x.is_nan())?;
    check("theta", &grid.theta, f64::is_finite)?;
    check("pi_t", &grid.pi_t, prob)?;
    check("pi_c", &grid.pi_c, prob)?;

    let mut rows = Vec::new();
    for &theta_stop in &grid.theta_stop {
        for &theta in &grid.theta {
            for &pi_c in &grid.pi_c {
                let pi_ts = if grid.pi_t.is_empty() {
                    vec![implied_pi_t(theta, pi_c)]
                } else {
                    grid.pi_t.clone()
                };
                for pi_t in pi_ts {
                    for &m in &grid.m {
                        for &n_eff in &grid.n_eff {
                            let se = approx_se_stage1(n_eff, m, pi_t, pi_c);
                            let (p_stop, p_continue) = futility_probability(theta, theta_stop, se);
                            rows.push(FutilityRow {
                                n_eff,
                                m,
                                theta_stop,
                                theta,
                                pi_t,
                                pi_c,
                                se,
                                p_stop,
                                p_continue,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedNResult {
    pub n: usize,
    pub power: f64,
    pub power_se: f64,
    /// Candidate sizes evaluated during the search.
    pub evaluations: usize,
}

/// Smallest one-stage size in `n_min..=n_max` whose simulated power reaches
/// `target_power`. Every candidate reuses the same replication streams, so
/// the pools and the first `n` recruits coincide across candidates.
pub fn find_fixed_n(
    cfg: &ScenarioConfig,
    target_power: f64,
    n_min: usize,
    n_max: usize,
) -> Result<FixedNResult, HarnessError> {
    if !(0.0..1.0).contains(&target_power) {
        return Err(HarnessError::Invalid {
            field: "target_power",
            reason: "must lie in [0, 1)".into(),
        });
    }
    if n_min < 1 || n_max < n_min {
        return Err(HarnessError::Invalid {
            field: "n_max",
            reason: format!("need 1 <= n_min <= n_max, got {n_min}..={n_max}"),
        });
    }
    cfg.validate()?;
    let engine = TrialEngine::new(cfg.model, cfg.design, cfg.options.clone())?;
    let shared = shared_pool(cfg);
    let reps = cfg.replications;
    let mut cache: BTreeMap<usize, f64> = BTreeMap::new();
    let mut power = |n: usize| -> f64 {
        *cache.entry(n).or_insert_with(|| {
            let hits: u64 = (0..reps)
                .into_par_iter()
                .map(|i| {
                    let rng = RngStream::new(cfg.base_seed, i);
                    let own;
                    let pool = match &shared {
                        Some(p) => p.as_slice(),
                        None => {
                            own = generate_pool(&mut rng.substream(purpose::POOL), &cfg.model, cfg.n_controls);
                            own.as_slice()
                        }
                    };
                    engine.run_fixed(&rng, pool, n).unwrap_or(false) as u64
                })
                .sum();
            hits as f64 / reps as f64
        })
    };

    let finish = |n: usize, p: f64, evals: usize| FixedNResult {
        n,
        power: p,
        power_se: (p * (1.0 - p) / reps as f64).sqrt(),
        evaluations: evals,
    };
    let p_lo = power(n_min);
    if p_lo >= target_power {
        return Ok(finish(n_min, p_lo, 1));
    }
    let p_hi = power(n_max);
    if p_hi < target_power {
        return Err(HarnessError::NotFound {
            n_max,
            target: target_power,
            power: p_hi,
        });
    }
    // invariant: power(lo) < target <= power(hi)
    let (mut lo, mut hi) = (n_min, n_max);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if power(mid) >= target_power {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let p = power(hi);
    Ok(finish(hi, p, cache.len()))
}
