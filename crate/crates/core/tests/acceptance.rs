//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Simulation criteria run at 10,000
//! replications per scenario.

use std::collections::HashSet;
use std::process::ExitCode;
use std::time::Instant;

use matchtrial::design::{
    approx_se_stage1, combine_p_values, conditional_error, final_test, futility_probability, RecalcMode,
};
use matchtrial::glm::{fit_logistic, DesignMatrix};
use matchtrial::harness::{estimator_study, find_fixed_n, run_scenario_with_threads};
use matchtrial::matching::{estimate_propensity, match_one_to_many, DEFAULT_CALIPER};
use matchtrial::trial::{generate_cohort, RctAnalysis};
use matchtrial::{run_scenario, AggregateStats, Covariate, OutcomeModel, RngStream, ScenarioConfig, StudyDesign};

const REPS: u64 = 10_000;
const LN_2_33: f64 = 0.845_868_267_577_609_2;
const LN_7_3: f64 = 0.847_297_860_387_203_7;
const THETA_STOP: f64 = 0.262_364_264_467_491_06;

struct Check {
    ok: bool,
    lines: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Self { ok: true, lines: Vec::new() }
    }

    fn within(&mut self, label: &str, value: f64, target: f64, tol: f64) {
        let pass = (value - target).abs() <= tol;
        self.ok &= pass;
        self.lines.push(format!("{label} = {value:.4} (target {target} +/- {tol}){}", flag(pass)));
    }

    fn at_most(&mut self, label: &str, value: f64, bound: f64) {
        let pass = value <= bound;
        self.ok &= pass;
        self.lines.push(format!("{label} = {value:.4} (<= {bound}){}", flag(pass)));
    }

    fn holds(&mut self, label: &str, pass: bool) {
        self.ok &= pass;
        self.lines.push(format!("{label}{}", flag(pass)));
    }

    fn note(&mut self, text: String) {
        self.lines.push(text);
    }
}

fn flag(pass: bool) -> &'static str {
    if pass {
        ""
    } else {
        "  <-- out of range"
    }
}

fn scenario(theta: f64, n_c: usize, n1: usize) -> ScenarioConfig {
    ScenarioConfig {
        replications: REPS,
        ..ScenarioConfig::adaptive("acceptance", theta, n_c, n1)
    }
}

fn run(cfg: &ScenarioConfig) -> AggregateStats {
    run_scenario(cfg).expect("valid scenario")
}

fn type_one_error() -> Check {
    let mut c = Check::new();
    let s = run(&scenario(0.0, 500, 20));
    c.at_most("reject", s.reject_rate, 0.030);
    c.within("reject", s.reject_rate, 0.0242, 0.008);
    c.within("p_stop", s.stop_rate, 0.6807, 0.02);
    c.within("E[n]", s.expected_total_n, 42.18, 1.5);
    c
}

fn analytic_futility() -> Check {
    let mut c = Check::new();
    let (n, m) = (19.724, 4.93);
    let (p_null, _) = futility_probability(0.0, THETA_STOP, approx_se_stage1(n, m, 0.3, 0.3));
    c.within("p_stop(pi_T = 0.3)", p_null, 0.6868, 5e-4);
    // pi_T = 0.5 over pi_C = 0.3 is a log odds ratio of log(7/3)
    let (p_alt, _) = futility_probability(LN_7_3, THETA_STOP, approx_se_stage1(n, m, 0.5, 0.3));
    c.within("p_stop(pi_T = 0.5)", p_alt, 0.1219, 5e-4);
    c
}

fn power() -> Check {
    let mut c = Check::new();
    let s = run(&scenario(LN_2_33, 1000, 25));
    c.within("power", s.reject_rate, 0.7931, 0.02);
    c.within("E[n]", s.expected_total_n, 54.68, 2.0);
    c
}

fn matching_diagnostics() -> Check {
    let mut c = Check::new();
    let s = run(&scenario(LN_2_33, 1000, 20));
    c.within("E[M]", s.expected_m, 9.85, 0.4);
    c.within("E[mr1]", s.expected_mr1, 0.9866, 0.01);
    c.within("mr2_hat at E[mr1]", s.mr2_hat_at_mean_mr1, 0.9268, 0.015);
    c.note(format!(
        "per-trial mean of mr2_hat over continued trials = {:.4}; realised E[mr2] = {:.4}",
        s.expected_mr2_hat, s.expected_mr2
    ));
    c
}

fn residual_variance() -> Check {
    let mut c = Check::new();
    let noisy = run(&ScenarioConfig {
        model: OutcomeModel::default().with_theta(LN_2_33).with_sigma(1.0),
        ..scenario(LN_2_33, 500, 20)
    });
    let clean = run(&scenario(LN_2_33, 500, 20));
    c.within("power(sigma = 1)", noisy.reject_rate, 0.6518, 0.025);
    c.holds(
        &format!("power(sigma = 0) - power(sigma = 1) = {:.4} > 0.08", clean.reject_rate - noisy.reject_rate),
        clean.reject_rate - noisy.reject_rate > 0.08,
    );
    c
}

fn comparators() -> Check {
    let mut c = Check::new();
    let single = run(&ScenarioConfig {
        study: StudyDesign::SingleArm { n: 44, p0: 0.3, alpha: 0.025 },
        model: OutcomeModel::default().with_sigma(1.0),
        ..scenario(0.0, 0, 20)
    });
    c.within("single-arm type I (sigma = 1)", single.reject_rate, 0.0595, 0.01);
    let rct = |analysis| {
        run(&ScenarioConfig {
            study: StudyDesign::Rct { n_per_arm: 50, alpha: 0.1, analysis },
            ..scenario(LN_7_3, 0, 20)
        })
    };
    let logistic = rct(RctAnalysis::AdjustedLogistic);
    let z = rct(RctAnalysis::ZTest);
    c.within("RCT logistic power", logistic.reject_rate, 0.7410, 0.02);
    c.holds(
        &format!("logistic {:.4} > z-test {:.4}", logistic.reject_rate, z.reject_rate),
        logistic.reject_rate > z.reject_rate,
    );
    c
}

fn residual_variance_null() -> Check {
    let mut c = Check::new();
    let mut worst: f64 = 0.0;
    for sigma in [0.5, 1.0] {
        for mode in [RecalcMode::PlannedEffect, RecalcMode::InterimEstimate] {
            for n_c in [500, 1000] {
                for n1 in [20, 25, 30] {
                    let mut cfg = scenario(0.0, n_c, n1);
                    cfg.model = cfg.model.with_sigma(sigma);
                    cfg.design.recalc_mode = mode;
                    let s = run(&cfg);
                    worst = worst.max(s.reject_rate);
                    c.at_most(&format!("sigma {sigma} {mode:?} {n_c}/{n1} reject"), s.reject_rate, 0.030);
                }
            }
        }
    }
    c.note(format!("largest rejection rate = {worst:.4}"));
    c
}

fn estimator_grid() -> Check {
    let mut c = Check::new();
    let thetas: Vec<f64> = (-1..=20).map(|k| k as f64 / 10.0).collect();
    let rows = estimator_study(&scenario(0.0, 1000, 25), &thetas).expect("valid study");
    let max_bias = rows.iter().map(|r| r.bias_awml.abs()).fold(0.0, f64::max);
    c.at_most("max |AWML bias|", max_bias, 0.08);
    let last = rows.last().unwrap();
    c.holds(
        &format!(
            "theta = 2: ML bias {:.4} - AWML bias {:.4} = {:.4} >= 0.1",
            last.bias_ml,
            last.bias_awml,
            last.bias_ml - last.bias_awml
        ),
        last.bias_ml - last.bias_awml >= 0.1,
    );
    let (lo, hi) = rows
        .iter()
        .fold((1.0f64, 0.0f64), |(lo, hi), r| (lo.min(r.ci_coverage), hi.max(r.ci_coverage)));
    c.holds(&format!("coverage range [{lo:.4}, {hi:.4}] inside [0.965, 0.985]"), lo >= 0.965 && hi <= 0.985);
    c
}

/// Asymptotic Kolmogorov distribution tail `P(sqrt(n) D > x)`.
fn kolmogorov_sf(x: f64) -> f64 {
    let mut s = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-2.0 * k * k * x * x).exp();
        s += if k as u64 % 2 == 1 { term } else { -term };
    }
    s.clamp(0.0, 1.0)
}

fn properties() -> Check {
    let mut c = Check::new();
    let params = matchtrial::DesignParams::default();

    // combined p-value under independent uniform inputs
    let mut s = RngStream::new(9, 0);
    let n = 100_000;
    let mut ps: Vec<f64> = (0..n)
        .map(|_| combine_p_values(s.draw_uniform(), s.draw_uniform(), params.w1, params.w2))
        .collect();
    ps.sort_by(f64::total_cmp);
    let d = ps
        .iter()
        .enumerate()
        .map(|(i, &p)| ((i + 1) as f64 / n as f64 - p).max(p - i as f64 / n as f64))
        .fold(0.0, f64::max);
    let ks_p = kolmogorov_sf(d * (n as f64).sqrt());
    c.holds(&format!("combined p uniform: KS p = {ks_p:.3} > 0.01"), ks_p > 0.01);

    // conditional error and final test agree on a 100 x 100 grid
    let mut disagreements = 0;
    for i in 1..=100 {
        let p1 = (i as f64 - 0.5) / 100.0;
        let a = conditional_error(p1, &params);
        for j in 1..=100 {
            let p2 = (j as f64 - 0.5) / 100.0;
            disagreements += (final_test(p1, p2, &params).1 != (p2 <= a)) as u32;
        }
    }
    c.holds(&format!("conditional error vs final test: {disagreements} disagreements"), disagreements == 0);

    // matching invariants on random instances
    let model = OutcomeModel::default();
    let mut violations = 0;
    for k in 0..200u64 {
        let mut s = RngStream::new(11, k);
        let n_t = 10 + (k % 20) as usize;
        let controls = generate_cohort(&mut s, &model, 0, 150, false);
        let treated = generate_cohort(&mut s, &model, 1000, n_t, true);
        let Ok(scores) = estimate_propensity(&treated, &controls, &Covariate::ALL) else {
            continue;
        };
        let score_of = |id: u32| {
            scores
                .intervention
                .iter()
                .chain(&scores.controls)
                .find(|p| p.id == id)
                .map(|p| p.score)
                .unwrap()
        };
        let mut last_rate = f64::INFINITY;
        for m in 1..=8 {
            let r = match_one_to_many(&scores, m, DEFAULT_CALIPER);
            let mut used = HashSet::new();
            for set in &r.matched_sets {
                for &cid in &set.control_ids {
                    violations += !used.insert(cid) as u32;
                    let dist = (score_of(set.intervention_id) - score_of(cid)).abs();
                    violations += (dist > r.caliper) as u32;
                }
                violations += (set.control_ids.len() != m) as u32;
            }
            violations += (r.matching_rate > last_rate) as u32;
            last_rate = r.matching_rate;
        }
    }
    c.holds(&format!("matching invariants: {violations} violations"), violations == 0);

    // bit-exact reruns under different worker counts
    let cfg = ScenarioConfig {
        replications: 300,
        ..scenario(LN_2_33, 500, 20)
    };
    let runs: Vec<String> = [1, 2, 4]
        .iter()
        .map(|&t| format!("{:?}", run_scenario_with_threads(&cfg, t).unwrap()))
        .collect();
    c.holds("identical results with 1, 2 and 4 threads", runs.iter().all(|r| *r == runs[0]));

    // logistic fit against the 2x2 closed form
    let mut x = DesignMatrix::with_columns(["intercept", "treatment"], 60);
    for (treated, responders, total) in [(1.0, 15, 30), (0.0, 9, 30)] {
        for i in 0..total {
            x.push_row(&[1.0, treated], i < responders);
        }
    }
    let fit = fit_logistic(&x).unwrap();
    let (coef, se) = fit.coefficient("treatment").unwrap();
    let woolf = (1.0 / 15.0 + 1.0 / 15.0 + 1.0 / 9.0 + 1.0 / 21.0f64).sqrt();
    let err = (coef - LN_7_3).abs().max((se - woolf).abs());
    c.holds(&format!("logistic vs 2x2 closed form: max error {err:.2e} <= 1e-6"), err <= 1e-6);
    c
}

fn fixed_design() -> Check {
    let mut c = Check::new();
    for (n_c, target) in [(500, 65.0), (1000, 58.0)] {
        let r = find_fixed_n(&scenario(LN_2_33, n_c, 20), 0.8, 20, 150).expect("search succeeds");
        c.within(&format!("n_fixed(n_C = {n_c})"), r.n as f64, target, 3.0);
        c.note(format!("  power at n_fixed = {:.4} +/- {:.4}", r.power, r.power_se));
    }
    c
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("type I error, sigma = 0", type_one_error),
        ("analytical futility probabilities", analytic_futility),
        ("power under the planning effect", power),
        ("matching diagnostics", matching_diagnostics),
        ("power loss with residual variance", residual_variance),
        ("comparator designs", comparators),
        ("type I error with residual variance", residual_variance_null),
        ("estimator bias and coverage", estimator_grid),
        ("property suite", properties),
        ("fixed-design sample size", fixed_design),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let check = f();
        let verdict = if check.ok { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {verdict}: {name} ({:.0}s)", t.elapsed().as_secs_f64());
        for line in &check.lines {
            println!("      {line}");
        }
        failed += !check.ok as u32;
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
