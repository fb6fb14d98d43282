//! CSV tables and run manifests.

use std::fs;
use std::io::Write;
use std::path::Path;

use matchtrial::harness::{EstimatorRow, FixedNResult, FutilityGrid, FutilityRow};
use matchtrial::{AggregateStats, ScenarioConfig};
use serde::{Deserialize, Serialize};

use crate::config::{EstimatorSpec, FixedNSpec};

/// Bumped whenever a column is added, removed or reordered.
pub const SCHEMA_VERSION: u32 = 1;

pub const RESULTS_FILE: &str = "results.csv";
pub const CP_FILE: &str = "cp_table.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub const RESULT_COLUMNS: &[&str] = &[
    "scenario",
    "design",
    "n_controls",
    "n1",
    "theta",
    "sigma",
    "tau",
    "recalc_mode",
    "pool_mode",
    "replications",
    "base_seed",
    "reject_rate",
    "reject_rate_se",
    "stop_rate",
    "stop_rate_se",
    "p_stop_approx",
    "expected_total_n",
    "expected_total_n_se",
    "expected_m",
    "expected_mr1",
    "expected_mr2",
    "expected_mr2_hat",
    "mr2_hat_at_mean_mr1",
    "bias_ml",
    "rmse_ml",
    "bias_fwml",
    "rmse_fwml",
    "bias_awml",
    "rmse_awml",
    "ci_coverage",
    "ci_coverage_se",
    "expected_pi_t",
    "expected_pi_c",
    "fault_count",
    "separation_count",
    "stage2_discarded_count",
    "degenerate_count",
    "n_fixed",
    "n_fixed_power",
    "n_fixed_power_se",
];

fn kebab<T: Serialize>(v: &T) -> String {
    // unit enum variants serialize to their kebab-case name
    toml::Value::try_from(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

pub fn result_record(cfg: &ScenarioConfig, s: &AggregateStats, fixed: Option<&FixedNResult>) -> Vec<String> {
    let adaptive = cfg.study == matchtrial::StudyDesign::Adaptive;
    let design = |v: String| if adaptive { v } else { String::new() };
    let mut r = vec![
        s.scenario.clone(),
        s.design.clone(),
        design(cfg.n_controls.to_string()),
        design(cfg.design.n1.to_string()),
        fmt_f64(cfg.model.theta),
        fmt_f64(cfg.model.sigma),
        design(fmt_f64(cfg.design.tau)),
        design(kebab(&cfg.design.recalc_mode)),
        design(kebab(&cfg.pool_mode)),
        s.replications.to_string(),
        cfg.base_seed.to_string(),
    ];
    r.extend(
        [
            s.reject_rate,
            s.reject_rate_se,
            s.stop_rate,
            s.stop_rate_se,
            s.p_stop_approx,
            s.expected_total_n,
            s.expected_total_n_se,
            s.expected_m,
            s.expected_mr1,
            s.expected_mr2,
            s.expected_mr2_hat,
            s.mr2_hat_at_mean_mr1,
            s.bias_ml,
            s.rmse_ml,
            s.bias_fwml,
            s.rmse_fwml,
            s.bias_awml,
            s.rmse_awml,
            s.ci_coverage,
            s.ci_coverage_se,
            s.expected_pi_t,
            s.expected_pi_c,
        ]
        .map(fmt_f64),
    );
    r.extend(
        [s.fault_count, s.separation_count, s.stage2_discarded_count, s.degenerate_count].map(|c| c.to_string()),
    );
    r.push(fixed.map(|f| f.n.to_string()).unwrap_or_default());
    r.push(opt(fixed.map(|f| f.power)));
    r.push(opt(fixed.map(|f| f.power_se)));
    debug_assert_eq!(r.len(), RESULT_COLUMNS.len());
    r
}

pub const ESTIMATOR_COLUMNS: &[&str] = &[
    "theta",
    "bias_ml",
    "rmse_ml",
    "bias_fwml",
    "rmse_fwml",
    "bias_awml",
    "rmse_awml",
    "ci_coverage",
    "ci_coverage_se",
    "estimable",
    "replications",
];

pub fn estimator_record(r: &EstimatorRow) -> Vec<String> {
    let mut v: Vec<String> = [
        r.theta,
        r.bias_ml,
        r.rmse_ml,
        r.bias_fwml,
        r.rmse_fwml,
        r.bias_awml,
        r.rmse_awml,
        r.ci_coverage,
        r.ci_coverage_se,
    ]
    .map(fmt_f64)
    .into();
    v.push(r.estimable.to_string());
    v.push(r.replications.to_string());
    v
}

pub const FUTILITY_COLUMNS: &[&str] =
    &["n_eff", "m", "theta_stop", "theta", "pi_t", "pi_c", "se", "p_stop", "p_continue"];

pub fn futility_record(r: &FutilityRow) -> Vec<String> {
    [r.n_eff, r.m, r.theta_stop, r.theta, r.pi_t, r.pi_c, r.se, r.p_stop, r.p_continue]
        .map(fmt_f64)
        .into()
}

pub const CP_COLUMNS: &[&str] = &["m", "p_continue_plan", "cp"];

pub fn write_csv<W: Write>(out: W, header: &[&str], rows: &[Vec<String>]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Everything needed to reproduce the files written next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    pub config: String,
    pub base_seed: u64,
    pub replications: u64,
    pub threads: Option<usize>,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<String>,
    pub fixed_n: Option<FixedNSpec>,
    pub estimators: Option<EstimatorSpec>,
    pub grid: Option<FutilityGrid>,
    #[serde(default, rename = "scenario")]
    pub scenarios: Vec<ScenarioConfig>,
}

impl RunManifest {
    pub fn to_toml(&self) -> Result<String, toml::ser::Error> {
        toml::to_string(self)
    }
}

pub fn prepare_dir(dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dir)
}
