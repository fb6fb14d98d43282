//! Monte Carlo orchestration.
//!
//! Replication `i` of a scenario always runs on stream `(base_seed, i)`.
//! Replications are processed in fixed-size chunks; each chunk is reduced
//! sequentially and the chunk partials are merged in index order, so results
//! are bit-identical for any number of worker threads.

mod planning;

pub use planning::{
    estimator_study, find_fixed_n, futility_table, EstimatorRow, FixedNResult, FutilityGrid, FutilityRow,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{approx_se_stage1, estimate_stage2_mr, futility_probability, implied_pi_t, DesignError, DesignParams};
use crate::stats::RngStream;
use crate::trial::{
    generate_pool, purpose, run_rct, run_single_arm, EngineOptions, OutcomeModel, Patient, RctAnalysis, TrialEngine,
    TrialOutcome,
};

const CHUNK: u64 = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error("invalid scenario field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("no sample size up to {n_max} reaches power {target} (power at {n_max}: {power})")]
    NotFound { n_max: usize, target: f64, power: f64 },
    #[error("could not build worker pool: {0}")]
    ThreadPool(String),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> HarnessError {
    HarnessError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// Whether every replication draws its own historical pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolMode {
    #[default]
    Fresh,
    /// One pool drawn from the base seed and shared by all replications.
    Fixed,
}

/// The trial design a scenario simulates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StudyDesign {
    /// Adaptive two-stage design with matched historical controls.
    #[default]
    Adaptive,
    /// Single-arm trial against a fixed response rate.
    SingleArm { n: usize, p0: f64, alpha: f64 },
    /// Randomized trial with `n_per_arm` patients in each arm.
    Rct { n_per_arm: usize, alpha: f64, analysis: RctAnalysis },
}

impl StudyDesign {
    pub fn label(&self) -> &'static str {
        match self {
            StudyDesign::Adaptive => "adaptive",
            StudyDesign::SingleArm { .. } => "single-arm",
            StudyDesign::Rct { analysis: RctAnalysis::ZTest, .. } => "rct-z-test",
            StudyDesign::Rct { analysis: RctAnalysis::AdjustedLogistic, .. } => "rct-adjusted-logistic",
            StudyDesign::Rct { analysis: RctAnalysis::Cmh, .. } => "rct-cmh",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub study: StudyDesign,
    #[serde(default)]
    pub model: OutcomeModel,
    #[serde(default)]
    pub design: DesignParams,
    /// Historical pool size.
    pub n_controls: usize,
    pub replications: u64,
    pub base_seed: u64,
    #[serde(default)]
    pub pool_mode: PoolMode,
    #[serde(default)]
    pub options: EngineOptions,
}

impl ScenarioConfig {
    /// Adaptive design with the standard parameters: a cap of 100
    /// intervention patients and `M_max` derived from the pool.
    pub fn adaptive(name: impl Into<String>, theta: f64, n_controls: usize, n1: usize) -> Self {
        Self {
            name: name.into(),
            study: StudyDesign::Adaptive,
            model: OutcomeModel::default().with_theta(theta),
            design: DesignParams::with_pool(n1, 100, n_controls),
            n_controls,
            replications: 10_000,
            base_seed: 20_240_601,
            pool_mode: PoolMode::Fresh,
            options: EngineOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.replications < 1 {
            return Err(invalid("replications", "must be at least 1"));
        }
        self.model.validate().map_err(|r| invalid("model", r))?;
        match self.study {
            StudyDesign::Adaptive => {
                if self.n_controls < 2 {
                    return Err(invalid("n_controls", "need at least two historical controls"));
                }
                self.design.validate()?;
                TrialEngine::new(self.model, self.design, self.options.clone())?;
            }
            StudyDesign::SingleArm { n, p0, alpha } => {
                if n < 1 {
                    return Err(invalid("study.n", "must be at least 1"));
                }
                if !(p0 > 0.0 && p0 < 1.0) {
                    return Err(invalid("study.p0", "must lie in (0, 1)"));
                }
                check_alpha(alpha)?;
            }
            StudyDesign::Rct { n_per_arm, alpha, .. } => {
                if n_per_arm < 2 {
                    return Err(invalid("study.n_per_arm", "must be at least 2"));
                }
                check_alpha(alpha)?;
            }
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<(), HarnessError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(invalid("study.alpha", "must lie in (0, 1)"))
    }
}

/// Operating characteristics of one scenario. Rates carry binomial Monte
/// Carlo standard errors; means over subsets (continued trials, trials with
/// an estimate) are NaN when the subset is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub scenario: String,
    pub design: String,
    pub theta: f64,
    pub replications: u64,
    pub reject_rate: f64,
    pub reject_rate_se: f64,
    pub stop_rate: f64,
    pub stop_rate_se: f64,
    /// Normal approximation to the stop probability at the observed `E[M]` and `E[mr1]`.
    pub p_stop_approx: f64,
    /// Unconditional mean of `n1 + n2_final`.
    pub expected_total_n: f64,
    pub expected_total_n_se: f64,
    pub expected_m: f64,
    pub expected_mr1: f64,
    /// Over trials that reached stage II matching.
    pub expected_mr2: f64,
    /// Mean of the per-trial projected stage II rate over continued trials.
    pub expected_mr2_hat: f64,
    /// Projected stage II rate evaluated at `E[mr1]`.
    pub mr2_hat_at_mean_mr1: f64,
    pub bias_ml: f64,
    pub rmse_ml: f64,
    pub bias_fwml: f64,
    pub rmse_fwml: f64,
    pub bias_awml: f64,
    pub rmse_awml: f64,
    /// `P[ci_lower <= theta]`.
    pub ci_coverage: f64,
    pub ci_coverage_se: f64,
    pub expected_pi_t: f64,
    pub expected_pi_c: f64,
    /// Trials without a stage I estimate (counted as futility stops).
    pub fault_count: u64,
    /// Trials whose stage II outcome model was not estimable.
    pub separation_count: u64,
    /// Trials whose stage II data were discarded for any reason.
    pub stage2_discarded_count: u64,
    /// Comparator analyses that were not estimable.
    pub degenerate_count: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Mean {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl Mean {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn push_opt(&mut self, x: Option<f64>) {
        if let Some(x) = x.filter(|v| v.is_finite()) {
            self.push(x);
        }
    }

    fn merge(&mut self, o: &Mean) {
        self.n += o.n;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
    }

    fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }

    fn rms(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            (self.sum_sq / self.n as f64).sqrt()
        }
    }

    /// Standard error of the mean.
    fn se(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        let n = self.n as f64;
        let var = (self.sum_sq - self.sum * self.sum / n) / (n - 1.0);
        (var.max(0.0) / n).sqrt()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Accumulator {
    count: u64,
    rejected: u64,
    stopped: u64,
    faults: u64,
    separations: u64,
    discarded: u64,
    degenerate: u64,
    covered: u64,
    total_n: Mean,
    m: Mean,
    mr1: Mean,
    mr2: Mean,
    mr2_hat: Mean,
    err_ml: Mean,
    err_fwml: Mean,
    err_awml: Mean,
    pi_t: Mean,
    pi_c: Mean,
}

impl Accumulator {
    fn push_trial(&mut self, o: &TrialOutcome, theta: f64) {
        self.count += 1;
        self.rejected += o.rejected as u64;
        self.stopped += o.stopped_at_interim as u64;
        self.total_n.push(o.total_n as f64);
        self.pi_t.push_opt(Some(o.pi_t_hat));
        self.pi_c.push_opt(Some(o.pi_c_hat));
        if o.fault.is_some() {
            self.faults += 1;
        }
        if o.m > 0 {
            self.m.push(o.m as f64);
            self.mr1.push(o.mr1);
        }
        self.mr2.push_opt(o.mr2);
        self.mr2_hat.push_opt(o.mr2_hat);
        self.separations += o.separation_stage2 as u64;
        self.discarded += o.stage2_issue.is_some() as u64;
        if o.theta_awml.is_finite() {
            self.err_ml.push(o.theta_ml - theta);
            self.err_fwml.push(o.theta_fwml - theta);
            self.err_awml.push(o.theta_awml - theta);
            self.covered += (o.ci_lower <= theta) as u64;
        }
    }

    fn push_comparator(&mut self, rejected: bool, degenerate: bool, pi_t: f64, pi_c: Option<f64>, n: usize) {
        self.count += 1;
        self.rejected += rejected as u64;
        self.degenerate += degenerate as u64;
        self.total_n.push(n as f64);
        self.pi_t.push(pi_t);
        self.pi_c.push_opt(pi_c);
    }

    fn merge(&mut self, o: &Accumulator) {
        self.count += o.count;
        self.rejected += o.rejected;
        self.stopped += o.stopped;
        self.faults += o.faults;
        self.separations += o.separations;
        self.discarded += o.discarded;
        self.degenerate += o.degenerate;
        self.covered += o.covered;
        for (a, b) in [
            (&mut self.total_n, &o.total_n),
            (&mut self.m, &o.m),
            (&mut self.mr1, &o.mr1),
            (&mut self.mr2, &o.mr2),
            (&mut self.mr2_hat, &o.mr2_hat),
            (&mut self.err_ml, &o.err_ml),
            (&mut self.err_fwml, &o.err_fwml),
            (&mut self.err_awml, &o.err_awml),
            (&mut self.pi_t, &o.pi_t),
            (&mut self.pi_c, &o.pi_c),
        ] {
            a.merge(b);
        }
    }
}

fn rate(k: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let r = k as f64 / n as f64;
    (r, (r * (1.0 - r) / n as f64).sqrt())
}

/// Own pool for one replication, or `None` when a shared pool is in use.
fn pool_for(cfg: &ScenarioConfig, rng: &RngStream, shared: Option<&[Patient]>) -> Option<Vec<Patient>> {
    match shared {
        Some(_) => None,
        None => Some(generate_pool(&mut rng.substream(purpose::POOL), &cfg.model, cfg.n_controls)),
    }
}

pub(crate) fn shared_pool(cfg: &ScenarioConfig) -> Option<Vec<Patient>> {
    (cfg.pool_mode == PoolMode::Fixed).then(|| {
        let root = RngStream::new(cfg.base_seed, u64::MAX);
        generate_pool(&mut root.substream(purpose::POOL), &cfg.model, cfg.n_controls)
    })
}

/// Run `f(i)` for every replication index in deterministic chunks and merge.
fn reduce_chunks<F>(replications: u64, f: F) -> Accumulator
where
    F: Fn(u64, &mut Accumulator) + Sync,
{
    let n_chunks = replications.div_ceil(CHUNK);
    let partials: Vec<Accumulator> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Accumulator::default();
            for i in c * CHUNK..((c + 1) * CHUNK).min(replications) {
                f(i, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = Accumulator::default();
    for p in &partials {
        total.merge(p);
    }
    total
}

/// Simulate every replication of a scenario and reduce to operating
/// characteristics. Uses the global rayon pool.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<AggregateStats, HarnessError> {
    cfg.validate()?;
    let theta = cfg.model.theta;
    let acc = match cfg.study {
        StudyDesign::Adaptive => {
            let engine = TrialEngine::new(cfg.model, cfg.design, cfg.options.clone())?;
            let shared = shared_pool(cfg);
            reduce_chunks(cfg.replications, |i, acc| {
                let rng = RngStream::new(cfg.base_seed, i);
                let own = pool_for(cfg, &rng, shared.as_deref());
                let pool = own.as_deref().or(shared.as_deref()).expect("pool");
                acc.push_trial(&engine.run_adaptive(&rng, pool), theta);
            })
        }
        StudyDesign::SingleArm { n, p0, alpha } => reduce_chunks(cfg.replications, |i, acc| {
            let mut s = RngStream::new(cfg.base_seed, i).substream(purpose::COMPARATOR);
            let o = run_single_arm(&mut s, &cfg.model, n, p0, alpha);
            acc.push_comparator(o.rejected, false, o.pi_t_hat, None, n);
        }),
        StudyDesign::Rct {
            n_per_arm,
            alpha,
            analysis,
        } => reduce_chunks(cfg.replications, |i, acc| {
            let mut s = RngStream::new(cfg.base_seed, i).substream(purpose::COMPARATOR);
            let o = run_rct(&mut s, &cfg.model, n_per_arm, alpha, analysis);
            acc.push_comparator(o.rejected, o.degenerate, o.pi_t_hat, Some(o.pi_c_hat), 2 * n_per_arm);
        }),
    };
    Ok(summarize(cfg, &acc))
}

/// [`run_scenario`] on a dedicated pool of `threads` workers.
pub fn run_scenario_with_threads(cfg: &ScenarioConfig, threads: usize) -> Result<AggregateStats, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::ThreadPool(e.to_string()))?;
    pool.install(|| run_scenario(cfg))
}

fn summarize(cfg: &ScenarioConfig, acc: &Accumulator) -> AggregateStats {
    let n = acc.count;
    let (reject_rate, reject_rate_se) = rate(acc.rejected, n);
    let adaptive = cfg.study == StudyDesign::Adaptive;
    let (stop_rate, stop_rate_se) = if adaptive { rate(acc.stopped, n) } else { (f64::NAN, f64::NAN) };
    let est = acc.err_awml.n;
    let (ci_coverage, ci_coverage_se) = rate(acc.covered, est);
    let expected_m = acc.m.mean();
    let expected_mr1 = acc.mr1.mean();
    let (p_stop_approx, mr2_hat_at_mean_mr1) = if adaptive && expected_mr1 > 0.0 {
        let d = &cfg.design;
        let pi_c = d.planning_pi_c;
        let pi_t = implied_pi_t(cfg.model.theta, pi_c);
        let se = approx_se_stage1(d.n1 as f64 * expected_mr1, expected_m, pi_t, pi_c);
        (
            futility_probability(cfg.model.theta, d.theta_stop, se).0,
            estimate_stage2_mr(expected_mr1, d.n1, d.mr2_mode),
        )
    } else {
        (f64::NAN, f64::NAN)
    };
    AggregateStats {
        scenario: cfg.name.clone(),
        design: cfg.study.label().to_string(),
        theta: cfg.model.theta,
        replications: n,
        reject_rate,
        reject_rate_se,
        stop_rate,
        stop_rate_se,
        p_stop_approx,
        expected_total_n: acc.total_n.mean(),
        expected_total_n_se: acc.total_n.se(),
        expected_m,
        expected_mr1,
        expected_mr2: acc.mr2.mean(),
        expected_mr2_hat: acc.mr2_hat.mean(),
        mr2_hat_at_mean_mr1,
        bias_ml: acc.err_ml.mean(),
        rmse_ml: acc.err_ml.rms(),
        bias_fwml: acc.err_fwml.mean(),
        rmse_fwml: acc.err_fwml.rms(),
        bias_awml: acc.err_awml.mean(),
        rmse_awml: acc.err_awml.rms(),
        ci_coverage,
        ci_coverage_se,
        expected_pi_t: acc.pi_t.mean(),
        expected_pi_c: acc.pi_c.mean(),
        fault_count: acc.faults,
        separation_count: acc.separations,
        stage2_discarded_count: acc.discarded,
        degenerate_count: acc.degenerate,
    }
}
