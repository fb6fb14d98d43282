use serde::{Deserialize, Serialize};

use super::cmh::cmh_test;
use super::population::{generate_cohort, Covariate, OutcomeModel, Patient};
use super::purpose;
use crate::design::{final_test, interim_decision, CpTable, DesignError, DesignParams};
use crate::estimators::{estimate_awml, estimate_fwml, estimate_ml, repeated_ci_lower, MlWeighting, StageEstimate, StagePair};
use crate::glm::{fit_logistic, DesignMatrix, GlmError};
use crate::matching::{determine_m_with_caliper, estimate_propensity, match_one_to_many, MatchResult, DEFAULT_CALIPER};
use crate::stats::{norm_sf, RngStream, TwoByTwoTable};

/// How the matched data of a stage are analysed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalysisMode {
    /// Logistic regression of response on treatment and covariates.
    #[default]
    Logistic,
    /// Matched sets as strata: Mantel-Haenszel odds ratio, CMH test.
    Cmh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineOptions {
    pub propensity_covariates: Vec<Covariate>,
    pub outcome_covariates: Vec<Covariate>,
    /// Caliper as a multiple of the pooled SD of the logit propensity.
    pub caliper: f64,
    pub analysis: AnalysisMode,
    pub ml_weighting: MlWeighting,
    /// Stage I weight of the fixed-weight estimator; `w1^2` when absent.
    pub fwml_omega: Option<f64>,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            propensity_covariates: Covariate::ALL.to_vec(),
            outcome_covariates: Covariate::ALL.to_vec(),
            caliper: DEFAULT_CALIPER,
            analysis: AnalysisMode::Logistic,
            ml_weighting: MlWeighting::Normalized,
            fwml_omega: None,
        }
    }
}

/// Why a trial could not reach a stage I estimate. Such trials are recorded
/// as futility stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialFault {
    PropensityNotEstimable,
    NoStage1Matches,
    Stage1Separation,
}

/// Why stage II data were discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage2Issue {
    PropensityNotEstimable,
    NoMatches,
    /// Outcome model not estimable: separation or a constant response.
    Separation,
}

/// Estimate from the matched data of one stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageAnalysis {
    pub theta: f64,
    pub se: f64,
    /// One-sided p-value against `theta_cross`.
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub rejected: bool,
    pub stopped_at_interim: bool,
    pub fault: Option<TrialFault>,
    /// Intervention patients enrolled, `n1 + n2_final`.
    pub total_n: usize,
    pub p1: f64,
    pub p2: Option<f64>,
    pub p_total: f64,
    pub m: usize,
    pub mr1: f64,
    pub mr2: Option<f64>,
    pub mr2_hat: Option<f64>,
    pub cp_used: f64,
    pub n2_final: usize,
    pub theta1: f64,
    pub se1: f64,
    pub theta2: Option<f64>,
    pub se2: Option<f64>,
    pub theta_ml: f64,
    pub theta_fwml: f64,
    pub theta_awml: f64,
    pub ci_lower: f64,
    pub separation_stage2: bool,
    pub stage2_issue: Option<Stage2Issue>,
    /// Observed response rate of all enrolled intervention patients.
    pub pi_t_hat: f64,
    /// Observed response rate of all matched controls.
    pub pi_c_hat: f64,
}

impl TrialOutcome {
    fn faulted(fault: TrialFault, n1: usize, m: usize, mr1: f64, pi_t_hat: f64) -> Self {
        Self {
            rejected: false,
            stopped_at_interim: true,
            fault: Some(fault),
            total_n: n1,
            p1: f64::NAN,
            p2: None,
            p_total: f64::NAN,
            m,
            mr1,
            mr2: None,
            mr2_hat: None,
            cp_used: f64::NAN,
            n2_final: 0,
            theta1: f64::NAN,
            se1: f64::NAN,
            theta2: None,
            se2: None,
            theta_ml: f64::NAN,
            theta_fwml: f64::NAN,
            theta_awml: f64::NAN,
            ci_lower: f64::NAN,
            separation_stage2: false,
            stage2_issue: None,
            pi_t_hat,
            pi_c_hat: f64::NAN,
        }
    }
}

/// A validated design with its precomputed conditional-power table.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialEngine {
    pub model: OutcomeModel,
    pub params: DesignParams,
    pub options: EngineOptions,
    cp_table: CpTable,
}

impl TrialEngine {
    pub fn new(model: OutcomeModel, params: DesignParams, options: EngineOptions) -> Result<Self, DesignError> {
        params.validate()?;
        model.validate().map_err(|reason| DesignError { field: "model", reason })?;
        if !(options.caliper > 0.0) {
            return Err(DesignError {
                field: "caliper",
                reason: "must be positive".into(),
            });
        }
        if let Some(w) = options.fwml_omega {
            if !(w > 0.0 && w < 1.0) {
                return Err(DesignError {
                    field: "fwml_omega",
                    reason: "must lie in (0, 1)".into(),
                });
            }
        }
        if options.propensity_covariates.is_empty() {
            return Err(DesignError {
                field: "propensity_covariates",
                reason: "at least one covariate is required".into(),
            });
        }
        let cp_table = CpTable::plan(&params);
        Ok(Self {
            model,
            params,
            options,
            cp_table,
        })
    }

    pub fn cp_table(&self) -> &CpTable {
        &self.cp_table
    }

    /// One adaptive two-stage trial. `rng` is the replication's root stream;
    /// stage I and stage II recruits come from separate substreams.
    pub fn run_adaptive(&self, rng: &RngStream, pool: &[Patient]) -> TrialOutcome {
        let params = &self.params;
        let n_c = pool.len();
        let n1 = params.n1;

        let mut patients: Vec<Patient> = pool
            .iter()
            .enumerate()
            .map(|(i, p)| Patient { id: i as u32, treated: false, ..*p })
            .collect();
        let stage1 = generate_cohort(&mut rng.substream(purpose::STAGE1), &self.model, n_c as u32, n1, true);
        patients.extend_from_slice(&stage1);
        let stage1_rate = response_rate(&stage1);

        let Ok(scores) = estimate_propensity(&stage1, &patients[..n_c], &self.options.propensity_covariates) else {
            return TrialOutcome::faulted(TrialFault::PropensityNotEstimable, n1, 0, 0.0, stage1_rate);
        };
        let (m, match1) = determine_m_with_caliper(&scores, params.tau, params.m_max, self.options.caliper);
        let mr1 = match1.matching_rate;
        if match1.matched_count() == 0 {
            return TrialOutcome::faulted(TrialFault::NoStage1Matches, n1, m, mr1, stage1_rate);
        }
        let Some(a1) = self.analyse(&patients, &match1) else {
            return TrialOutcome::faulted(TrialFault::Stage1Separation, n1, m, mr1, stage1_rate);
        };

        let interim = interim_decision(a1.theta, a1.se, m, mr1, params, &self.cp_table);
        let stage1_est = StageEstimate {
            theta: a1.theta,
            se: a1.se,
            n: n1 as f64,
            mr: mr1,
        };
        let mut out = TrialOutcome {
            rejected: false,
            stopped_at_interim: interim.stop_for_futility,
            fault: None,
            total_n: n1,
            p1: a1.p,
            p2: None,
            p_total: a1.p,
            m,
            mr1,
            mr2: None,
            mr2_hat: None,
            cp_used: interim.cp_used,
            n2_final: 0,
            theta1: a1.theta,
            se1: a1.se,
            theta2: None,
            se2: None,
            theta_ml: a1.theta,
            theta_fwml: a1.theta,
            theta_awml: a1.theta,
            ci_lower: f64::NAN,
            separation_stage2: false,
            stage2_issue: None,
            pi_t_hat: stage1_rate,
            pi_c_hat: control_rate(&patients, &[&match1]),
        };
        if interim.stop_for_futility {
            self.finish(&mut out, stage1_est, None);
            return out;
        }

        // Stage II
        let n2 = interim.n2_final;
        out.n2_final = n2;
        out.total_n = n1 + n2;
        out.mr2_hat = Some(interim.mr2_hat);
        let first_id = (n_c + n1) as u32;
        let recruits = generate_cohort(&mut rng.substream(purpose::STAGE2), &self.model, first_id, n2, true);
        patients.extend_from_slice(&recruits);
        out.pi_t_hat = response_rate(&patients[n_c..]);

        let mut used = vec![false; n_c];
        for id in match1.control_ids() {
            used[id as usize] = true;
        }
        let remaining: Vec<Patient> = patients[..n_c].iter().filter(|p| !used[p.id as usize]).copied().collect();
        let mut candidates = recruits;
        candidates.extend(match1.unmatched_intervention_ids.iter().map(|&id| patients[id as usize]));

        let stage2 = match estimate_propensity(&candidates, &remaining, &self.options.propensity_covariates) {
            Err(_) => Err(Stage2Issue::PropensityNotEstimable),
            Ok(scores2) => {
                let match2 = match_one_to_many(&scores2, m, self.options.caliper);
                out.mr2 = Some(match2.matching_rate);
                if match2.matched_count() == 0 {
                    Err(Stage2Issue::NoMatches)
                } else {
                    out.pi_c_hat = control_rate(&patients, &[&match1, &match2]);
                    self.analyse(&patients, &match2)
                        .map(|a| (a, match2.offered, match2.matching_rate))
                        .ok_or(Stage2Issue::Separation)
                }
            }
        };

        match stage2 {
            Ok((a2, offered, mr2)) => {
                let (p_total, rejected) = final_test(a1.p, a2.p, params);
                out.p2 = Some(a2.p);
                out.p_total = p_total;
                out.rejected = rejected;
                out.theta2 = Some(a2.theta);
                out.se2 = Some(a2.se);
                let stage2_est = StageEstimate {
                    theta: a2.theta,
                    se: a2.se,
                    n: offered as f64,
                    mr: mr2,
                };
                self.finish(&mut out, stage1_est, Some(stage2_est));
            }
            Err(issue) => {
                out.stage2_issue = Some(issue);
                out.separation_stage2 = issue == Stage2Issue::Separation;
                out.rejected = a1.p <= params.alpha;
                self.finish(&mut out, stage1_est, None);
            }
        }
        out
    }

    /// A one-stage trial with `n` intervention patients: same matching and
    /// analysis, no interim. Returns the rejection decision, or `None` if the
    /// data could not be analysed.
    pub fn run_fixed(&self, rng: &RngStream, pool: &[Patient], n: usize) -> Option<bool> {
        let n_c = pool.len();
        let mut patients: Vec<Patient> = pool
            .iter()
            .enumerate()
            .map(|(i, p)| Patient { id: i as u32, treated: false, ..*p })
            .collect();
        let recruits = generate_cohort(&mut rng.substream(purpose::STAGE1), &self.model, n_c as u32, n, true);
        patients.extend_from_slice(&recruits);
        let scores = estimate_propensity(&recruits, &patients[..n_c], &self.options.propensity_covariates).ok()?;
        let (_, matched) = determine_m_with_caliper(&scores, self.params.tau, self.params.m_max, self.options.caliper);
        if matched.matched_count() == 0 {
            return None;
        }
        let a = self.analyse(&patients, &matched)?;
        Some(a.p <= self.params.alpha)
    }

    fn finish(&self, out: &mut TrialOutcome, stage1: StageEstimate, stage2: Option<StageEstimate>) {
        let pair = StagePair {
            stage1,
            stage2,
            w1: self.params.w1,
            w2: self.params.w2,
        };
        let omega = self.options.fwml_omega.unwrap_or(self.params.w1 * self.params.w1);
        out.theta_ml = estimate_ml(&pair, self.options.ml_weighting);
        out.theta_fwml = estimate_fwml(&pair, omega);
        out.theta_awml = estimate_awml(&pair);
        out.ci_lower = repeated_ci_lower(&pair, self.params.alpha);
    }

    /// Effect estimate on matched sets; `None` when not estimable.
    /// `patients[id]` must be the patient with that id.
    pub fn analyse(&self, patients: &[Patient], matched: &MatchResult) -> Option<StageAnalysis> {
        let theta_cross = self.params.theta_cross;
        match self.options.analysis {
            AnalysisMode::Logistic => {
                let covs = &self.options.outcome_covariates;
                let mut names = vec!["intercept", "treatment"];
                names.extend(covs.iter().map(|c| c.name()));
                let rows = matched.matched_count() * (matched.m + 1);
                let mut x = DesignMatrix::with_columns(names, rows);
                let mut row = vec![0.0; covs.len() + 2];
                row[0] = 1.0;
                for set in &matched.matched_sets {
                    let ids = std::iter::once(set.intervention_id).chain(set.control_ids.iter().copied());
                    for (k, id) in ids.enumerate() {
                        let p = &patients[id as usize];
                        row[1] = (k == 0) as u8 as f64;
                        for (slot, c) in row[2..].iter_mut().zip(covs) {
                            *slot = c.value(p);
                        }
                        x.push_row(&row, p.response);
                    }
                }
                let fit = match fit_logistic(&x) {
                    Ok(f) => f,
                    Err(GlmError::DegenerateResponse(_)) | Err(GlmError::TooFewRows { .. }) => return None,
                    Err(e) => panic!("outcome design matrix is malformed: {e}"),
                };
                if !fit.is_usable() {
                    return None;
                }
                let (theta, se) = (fit.coefficients[1], fit.standard_errors[1]);
                Some(StageAnalysis {
                    theta,
                    se,
                    p: norm_sf((theta - theta_cross) / se),
                })
            }
            AnalysisMode::Cmh => {
                let strata: Vec<TwoByTwoTable> = matched
                    .matched_sets
                    .iter()
                    .map(|set| {
                        let t = patients[set.intervention_id as usize].response as u32;
                        let c = set.control_ids.iter().filter(|&&id| patients[id as usize].response).count() as u32;
                        TwoByTwoTable::from_counts(t, 1 - t, c, set.control_ids.len() as u32 - c)
                    })
                    .collect();
                let r = cmh_test(&strata).ok()?;
                let se = r.log_or_se?;
                let theta = r.log_or();
                let p = if theta_cross == 0.0 {
                    r.p_one_sided
                } else {
                    norm_sf((theta - theta_cross) / se)
                };
                Some(StageAnalysis { theta, se, p })
            }
        }
    }
}

/// Free-function form of [`TrialEngine::run_adaptive`].
pub fn run_adaptive_trial(
    rng: &RngStream,
    model: &OutcomeModel,
    params: &DesignParams,
    pool: &[Patient],
    options: &EngineOptions,
) -> Result<TrialOutcome, DesignError> {
    Ok(TrialEngine::new(*model, *params, options.clone())?.run_adaptive(rng, pool))
}

fn response_rate(ps: &[Patient]) -> f64 {
    if ps.is_empty() {
        return f64::NAN;
    }
    ps.iter().filter(|p| p.response).count() as f64 / ps.len() as f64
}

fn control_rate(patients: &[Patient], matches: &[&MatchResult]) -> f64 {
    let (mut hits, mut total) = (0usize, 0usize);
    for m in matches {
        for id in m.control_ids() {
            hits += patients[id as usize].response as usize;
            total += 1;
        }
    }
    if total == 0 {
        f64::NAN
    } else {
        hits as f64 / total as f64
    }
}
