//! Propensity scores and greedy caliper 1:M matching without replacement.

use std::cmp::Ordering;

use thiserror::Error;

use crate::glm::{fit_logistic, DesignMatrix, GlmError};
use crate::trial::{Covariate, Patient};

/// Caliper width as a multiple of the pooled score SD.
pub const DEFAULT_CALIPER: f64 = 0.2;

/// Slack when comparing matching rates in the admission rule, so that a rate
/// computed as `k / n` equal to `mr11 - tau` in exact arithmetic is admitted.
const RATE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchingError {
    #[error("no intervention patients or no controls to match")]
    EmptyGroup,
    #[error("propensity model is not estimable: treatment status is separated by the covariates")]
    Infeasible,
    #[error("propensity model failed: {0}")]
    Fit(#[from] GlmError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPatient {
    pub id: u32,
    /// Estimated propensity on the logit scale.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityScores {
    pub intervention: Vec<ScoredPatient>,
    pub controls: Vec<ScoredPatient>,
    /// Sample SD of all scores, intervention and controls together.
    pub pooled_sd: f64,
    /// Propensity model coefficients, intercept first.
    pub coefficients: Vec<f64>,
}

impl PropensityScores {
    /// Build from precomputed scores; `pooled_sd` is derived.
    pub fn from_scores(intervention: Vec<ScoredPatient>, controls: Vec<ScoredPatient>) -> Self {
        let pooled_sd = sample_sd(intervention.iter().chain(&controls).map(|s| s.score));
        Self {
            intervention,
            controls,
            pooled_sd,
            coefficients: Vec::new(),
        }
    }

    /// Absolute caliper for a multiplier of the pooled SD. Infinite when all
    /// scores coincide.
    pub fn caliper(&self, multiplier: f64) -> f64 {
        if self.pooled_sd > 0.0 {
            multiplier * self.pooled_sd
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchedSet {
    pub intervention_id: u32,
    /// Exactly `M` control ids, nearest first.
    pub control_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub m: usize,
    pub matched_sets: Vec<MatchedSet>,
    pub unmatched_intervention_ids: Vec<u32>,
    /// Number of intervention patients offered for matching.
    pub offered: usize,
    pub matching_rate: f64,
    /// Absolute caliper used.
    pub caliper: f64,
}

impl MatchResult {
    pub fn matched_count(&self) -> usize {
        self.matched_sets.len()
    }

    pub fn control_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.matched_sets.iter().flat_map(|s| s.control_ids.iter().copied())
    }
}

/// Logistic regression of treatment status on `covariates` (plus intercept)
/// over both groups; scores are the fitted linear predictors.
pub fn estimate_propensity(
    intervention: &[Patient],
    controls: &[Patient],
    covariates: &[Covariate],
) -> Result<PropensityScores, MatchingError> {
    if intervention.is_empty() || controls.is_empty() {
        return Err(MatchingError::EmptyGroup);
    }
    let mut names = Vec::with_capacity(covariates.len() + 1);
    names.push("intercept");
    names.extend(covariates.iter().map(|c| c.name()));
    let mut x = DesignMatrix::with_columns(names, intervention.len() + controls.len());
    let mut row = vec![0.0; covariates.len() + 1];
    row[0] = 1.0;
    for (group, treated) in [(intervention, true), (controls, false)] {
        for p in group {
            for (slot, c) in row[1..].iter_mut().zip(covariates) {
                *slot = c.value(p);
            }
            x.push_row(&row, treated);
        }
    }
    let fit = fit_logistic(&x)?;
    if fit.separated {
        return Err(MatchingError::Infeasible);
    }
    let score = |p: &Patient| {
        fit.coefficients[0]
            + covariates
                .iter()
                .zip(&fit.coefficients[1..])
                .map(|(c, b)| b * c.value(p))
                .sum::<f64>()
    };
    let scored = |group: &[Patient]| -> Vec<ScoredPatient> {
        group.iter().map(|p| ScoredPatient { id: p.id, score: score(p) }).collect()
    };
    let mut scores = PropensityScores::from_scores(scored(intervention), scored(controls));
    scores.coefficients = fit.coefficients;
    Ok(scores)
}

/// Greedy nearest-neighbour 1:M matching within a caliper of
/// `caliper_multiplier * pooled_sd`.
///
/// Intervention patients are visited in descending score order (ties: lower
/// id first). Each takes its `m` nearest available in-caliper controls
/// (distance ties: lower id first), or nothing if fewer than `m` exist.
pub fn match_one_to_many(scores: &PropensityScores, m: usize, caliper_multiplier: f64) -> MatchResult {
    Matcher::new(scores, caliper_multiplier).run(m)
}

/// Choose `M` by the matching-rate tolerance rule: starting from the 1:1 rate
/// `mr11`, increase `M` while the 1:M rate stays at or above `mr11 - tau`
/// and `M <= m_max`.
pub fn determine_m(scores: &PropensityScores, tau: f64, m_max: usize) -> (usize, MatchResult) {
    determine_m_with_caliper(scores, tau, m_max, DEFAULT_CALIPER)
}

pub fn determine_m_with_caliper(
    scores: &PropensityScores,
    tau: f64,
    m_max: usize,
    caliper_multiplier: f64,
) -> (usize, MatchResult) {
    assert!(m_max >= 1, "m_max must be at least 1");
    let matcher = Matcher::new(scores, caliper_multiplier);
    let mut best = matcher.run(1);
    let threshold = best.matching_rate - tau;
    for m in 2..=m_max {
        let candidate = matcher.run(m);
        if candidate.matching_rate >= threshold - RATE_SLACK {
            best = candidate;
        } else {
            break;
        }
    }
    debug_assert!(
        best.m == m_max || matcher.run(best.m + 1).matching_rate < threshold - RATE_SLACK,
        "determine_m stopped at an admissible M"
    );
    (best.m, best)
}

/// `floor(n_controls / max_trial_patients)`, at least 1.
pub fn m_max_from_pool(n_controls: usize, max_trial_patients: usize) -> usize {
    assert!(max_trial_patients > 0, "max_trial_patients must be positive");
    (n_controls / max_trial_patients).max(1)
}

struct Matcher {
    /// Intervention patients in processing order.
    order: Vec<ScoredPatient>,
    /// Controls sorted by (score, id).
    controls: Vec<ScoredPatient>,
    caliper: f64,
}

impl Matcher {
    fn new(scores: &PropensityScores, caliper_multiplier: f64) -> Self {
        let mut order = scores.intervention.clone();
        order.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
        let mut controls = scores.controls.clone();
        controls.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.id.cmp(&b.id)));
        Self {
            order,
            controls,
            caliper: scores.caliper(caliper_multiplier),
        }
    }

    fn run(&self, m: usize) -> MatchResult {
        assert!(m >= 1, "M must be at least 1");
        let mut taken = vec![false; self.controls.len()];
        let mut window: Vec<(f64, u32, usize)> = Vec::new();
        let mut matched_sets = Vec::new();
        let mut unmatched = Vec::new();

        for t in &self.order {
            let lo = self.controls.partition_point(|c| c.score < t.score - self.caliper);
            window.clear();
            for (k, c) in self.controls[lo..].iter().enumerate() {
                let d = (c.score - t.score).abs();
                if c.score > t.score && d > self.caliper {
                    break;
                }
                if d <= self.caliper && !taken[lo + k] {
                    window.push((d, c.id, lo + k));
                }
            }
            if window.len() < m {
                unmatched.push(t.id);
                continue;
            }
            let by_distance = |a: &(f64, u32, usize), b: &(f64, u32, usize)| -> Ordering { a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)) };
            if window.len() > m {
                window.select_nth_unstable_by(m - 1, by_distance);
                window.truncate(m);
            }
            window.sort_unstable_by(by_distance);
            for &(_, _, k) in &window {
                taken[k] = true;
            }
            matched_sets.push(MatchedSet {
                intervention_id: t.id,
                control_ids: window.iter().map(|w| w.1).collect(),
            });
        }

        let offered = self.order.len();
        let matching_rate = if offered == 0 {
            0.0
        } else {
            matched_sets.len() as f64 / offered as f64
        };
        MatchResult {
            m,
            matched_sets,
            unmatched_intervention_ids: unmatched,
            offered,
            matching_rate,
            caliper: self.caliper,
        }
    }
}

fn sample_sd(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n < 2 {
        return 0.0;
    }
    let mean = sum / n as f64;
    let ss: f64 = values.map(|v| (v - mean).powi(2)).sum();
    (ss / (n - 1) as f64).sqrt()
}
