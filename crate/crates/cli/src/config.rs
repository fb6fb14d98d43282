//! Scenario files: parsing, grid expansion and command-line overrides.

use std::path::Path;

use matchtrial::design::RecalcMode;
use matchtrial::harness::FutilityGrid;
use matchtrial::{DesignParams, EngineOptions, OutcomeModel, PoolMode, ScenarioConfig, StudyDesign};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::presets;

pub const DEFAULT_REPLICATIONS: u64 = 10_000;
pub const FULL_SCALE_REPLICATIONS: u64 = 100_000;
pub const DEFAULT_BASE_SEED: u64 = 20_240_601;
pub const DEFAULT_MAX_TOTAL: usize = 100;
pub const DEFAULT_N1: usize = 20;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("unknown preset `{0}` (available: {list})", list = presets::names().join(", "))]
    UnknownPreset(String),
    #[error("{source_name}: {message}")]
    Parse { source_name: String, message: String },
    #[error("scenario `{scenario}`: field `{field}`: {reason}")]
    Field {
        scenario: String,
        field: String,
        reason: String,
    },
    #[error("{0}")]
    Other(String),
}

/// A value or a list of values to expand over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Axis<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> Axis<T> {
    fn values(&self) -> Vec<T> {
        match self {
            Axis::One(v) => vec![v.clone()],
            Axis::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default)]
    pub study: StudyDesign,
    pub n_controls: Option<Axis<usize>>,
    pub n1: Option<Axis<usize>>,
    pub theta: Option<Axis<f64>>,
    pub sigma: Option<Axis<f64>>,
    pub tau: Option<Axis<f64>>,
    pub recalc_mode: Option<Axis<RecalcMode>>,
    /// Cap on intervention patients over both stages.
    pub max_total: Option<usize>,
    #[serde(default)]
    pub pool_mode: PoolMode,
    /// Overrides on the outcome model defaults.
    #[serde(default)]
    pub model: toml::Table,
    /// Overrides on the design derived from `n1`, `max_total` and `n_controls`.
    #[serde(default)]
    pub design: toml::Table,
    #[serde(default)]
    pub options: EngineOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedNSpec {
    /// Defaults to `1 - beta` of each scenario.
    pub target_power: Option<f64>,
    #[serde(default = "FixedNSpec::default_n_min")]
    pub n_min: usize,
    #[serde(default = "FixedNSpec::default_n_max")]
    pub n_max: usize,
}

impl FixedNSpec {
    fn default_n_min() -> usize {
        10
    }

    fn default_n_max() -> usize {
        200
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    pub thetas: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    #[serde(default)]
    pub grid: FutilityGrid,
    /// Design used for the conditional power lookup.
    pub n1: Option<usize>,
    pub n_controls: Option<usize>,
    pub max_total: Option<usize>,
    #[serde(default)]
    pub design: toml::Table,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub replications: Option<u64>,
    pub base_seed: Option<u64>,
    #[serde(default, rename = "scenario")]
    pub scenarios: Vec<ScenarioSpec>,
    pub fixed_n: Option<FixedNSpec>,
    pub estimators: Option<EstimatorSpec>,
    pub plan: Option<PlanSpec>,
}

/// Where a configuration came from, for diagnostics and the manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    File(String),
    Preset(String),
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Source::File(p) => f.write_str(p),
            Source::Preset(n) => write!(f, "preset:{n}"),
        }
    }
}

pub fn load(config: Option<&Path>, preset: Option<&str>) -> Result<(ConfigFile, Source), ConfigError> {
    let (text, source) = match (config, preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                path: path.display().to_string(),
                source,
            })?;
            (text, Source::File(path.display().to_string()))
        }
        (None, Some(name)) => {
            let text = presets::get(name).ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))?;
            (text.to_string(), Source::Preset(name.to_string()))
        }
        (None, None) => return Err(ConfigError::Other("either --config or --preset is required".into())),
    };
    let cfg = parse(&text, &source.to_string())?;
    Ok((cfg, source))
}

pub fn parse(text: &str, source_name: &str) -> Result<ConfigFile, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse {
        source_name: source_name.to_string(),
        message: e.to_string(),
    })
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub replications: Option<u64>,
    pub base_seed: Option<u64>,
    pub paper_scale: bool,
}

impl ConfigFile {
    pub fn replications(&self, o: &Overrides) -> u64 {
        o.replications
            .or(o.paper_scale.then_some(FULL_SCALE_REPLICATIONS))
            .or(self.replications)
            .unwrap_or(DEFAULT_REPLICATIONS)
    }

    pub fn base_seed(&self, o: &Overrides) -> u64 {
        o.base_seed.or(self.base_seed).unwrap_or(DEFAULT_BASE_SEED)
    }

    /// Every scenario of the file with its axes expanded, in file order.
    pub fn resolve(&self, o: &Overrides) -> Result<Vec<ScenarioConfig>, ConfigError> {
        let reps = self.replications(o);
        let seed = self.base_seed(o);
        let mut out = Vec::new();
        for spec in &self.scenarios {
            out.extend(spec.expand(reps, seed)?);
        }
        if out.is_empty() {
            return Err(ConfigError::Other("configuration defines no scenario".into()));
        }
        for cfg in &out {
            cfg.validate().map_err(|e| ConfigError::Other(format!("scenario `{}`: {e}", cfg.name)))?;
        }
        Ok(out)
    }
}

fn axis<T: Clone>(scenario: &str, field: &str, a: &Option<Axis<T>>, default: Option<T>) -> Result<Vec<T>, ConfigError> {
    let values = match (a, default) {
        (Some(a), _) => a.values(),
        (None, Some(d)) => vec![d],
        (None, None) => {
            return Err(ConfigError::Field {
                scenario: scenario.to_string(),
                field: field.to_string(),
                reason: "is required".into(),
            })
        }
    };
    if values.is_empty() {
        return Err(ConfigError::Field {
            scenario: scenario.to_string(),
            field: field.to_string(),
            reason: "list must not be empty".into(),
        });
    }
    Ok(values)
}

/// `base` with the keys of `overlay` replaced; unknown keys are rejected
/// by the target type.
fn overlay<T>(scenario: &str, field: &str, base: &T, overlay: &toml::Table) -> Result<T, ConfigError>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let err = |reason: String| ConfigError::Field {
        scenario: scenario.to_string(),
        field: field.to_string(),
        reason,
    };
    let mut table = toml::Table::try_from(base).map_err(|e| err(e.to_string()))?;
    for (k, v) in overlay {
        table.insert(k.clone(), v.clone());
    }
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| err(e.message().to_string()))
}

pub fn design_for(
    scenario: &str,
    n1: usize,
    max_total: usize,
    n_controls: usize,
    table: &toml::Table,
) -> Result<DesignParams, ConfigError> {
    if max_total <= n1 {
        return Err(ConfigError::Field {
            scenario: scenario.to_string(),
            field: "max_total".into(),
            reason: format!("must exceed n1 = {n1}"),
        });
    }
    overlay(scenario, "design", &DesignParams::with_pool(n1, max_total, n_controls), table)
}

impl ScenarioSpec {
    fn expand(&self, replications: u64, base_seed: u64) -> Result<Vec<ScenarioConfig>, ConfigError> {
        let name = self.name.as_str();
        let adaptive = self.study == StudyDesign::Adaptive;
        let model = overlay(name, "model", &OutcomeModel::default(), &self.model)?;
        let n_controls = axis(name, "n_controls", &self.n_controls, (!adaptive).then_some(0))?;
        let n1 = axis(name, "n1", &self.n1, Some(DEFAULT_N1))?;
        let theta = axis(name, "theta", &self.theta, Some(model.theta))?;
        let sigma = axis(name, "sigma", &self.sigma, Some(model.sigma))?;
        let tau = self.tau.as_ref().map(|_| axis(name, "tau", &self.tau, None)).transpose()?;
        let recalc = self
            .recalc_mode
            .as_ref()
            .map(|_| axis(name, "recalc_mode", &self.recalc_mode, None))
            .transpose()?;
        let max_total = self.max_total.unwrap_or(DEFAULT_MAX_TOTAL);

        let mut out = Vec::new();
        for recalc_mode in option_axis(&recalc) {
            for tau in option_axis(&tau) {
                for &sigma in &sigma {
                    for &theta in &theta {
                        for &n_c in &n_controls {
                            for &n1 in &n1 {
                                let mut design = design_for(name, n1, max_total, n_c, &self.design)?;
                                if let Some(m) = recalc_mode {
                                    design.recalc_mode = m;
                                }
                                if let Some(t) = tau {
                                    design.tau = t;
                                }
                                out.push(ScenarioConfig {
                                    name: self.name.clone(),
                                    study: self.study,
                                    model: model.with_theta(theta).with_sigma(sigma),
                                    design,
                                    n_controls: n_c,
                                    replications,
                                    base_seed,
                                    pool_mode: self.pool_mode,
                                    options: self.options.clone(),
                                });
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn option_axis<T: Copy>(v: &Option<Vec<T>>) -> Vec<Option<T>> {
    match v {
        Some(v) => v.iter().map(|&x| Some(x)).collect(),
        None => vec![None],
    }
}

impl PlanSpec {
    pub fn design(&self) -> Result<DesignParams, ConfigError> {
        design_for(
            "plan",
            self.n1.unwrap_or(DEFAULT_N1),
            self.max_total.unwrap_or(DEFAULT_MAX_TOTAL),
            self.n_controls.unwrap_or(1000),
            &self.design,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FILE: &str = r#"
        replications = 50
        [[scenario]]
        name = "grid"
        n_controls = [500, 1000]
        n1 = [20, 25, 30]
        recalc_mode = ["planned-effect", "interim-estimate"]
        theta = 0.0
        design = { theta_stop = -inf }
        model = { beta_cyto = -0.2 }
    "#;

    #[test]
    fn expands_axes_in_order() {
        let cfg = parse(FILE, "t").unwrap();
        let all = cfg.resolve(&Overrides::default()).unwrap();
        assert_eq!(all.len(), 12);
        assert_eq!(all[0].design.recalc_mode, RecalcMode::PlannedEffect);
        assert_eq!((all[0].n_controls, all[0].design.n1), (500, 20));
        assert_eq!((all[1].n_controls, all[1].design.n1), (500, 25));
        assert_eq!(all[11].design.recalc_mode, RecalcMode::InterimEstimate);
        assert!(all.iter().all(|c| c.design.theta_stop == f64::NEG_INFINITY));
        assert!(all.iter().all(|c| c.model.beta_cyto == -0.2 && c.replications == 50));
        assert_eq!(all[0].design.n2_max, 80);
        assert_eq!(all[2].design.n2_max, 70);
    }

    #[test]
    fn overrides_take_precedence() {
        let cfg = parse(FILE, "t").unwrap();
        let o = Overrides {
            paper_scale: true,
            base_seed: Some(9),
            ..Overrides::default()
        };
        let all = cfg.resolve(&o).unwrap();
        assert_eq!((all[0].replications, all[0].base_seed), (FULL_SCALE_REPLICATIONS, 9));
        let o = Overrides {
            replications: Some(3),
            ..Overrides::default()
        };
        assert_eq!(cfg.resolve(&o).unwrap()[0].replications, 3);
    }

    #[test]
    fn diagnostics_name_the_field() {
        let bad = FILE.replace("theta_stop = -inf", "w1 = 0.9");
        let err = parse(&bad, "t").unwrap().resolve(&Overrides::default()).unwrap_err().to_string();
        assert!(err.contains("w2") || err.contains("w1"), "{err}");
        let bad = FILE.replace("theta_stop", "theta_stopp");
        let err = parse(&bad, "t").unwrap().resolve(&Overrides::default()).unwrap_err().to_string();
        assert!(err.contains("theta_stopp"), "{err}");
        let bad = FILE.replace("n1 = [20, 25, 30]", "n1 = []");
        let err = parse(&bad, "t").unwrap().resolve(&Overrides::default()).unwrap_err().to_string();
        assert!(err.contains("`n1`"), "{err}");
        let err = parse("replications = 1\n[[scenario]]\nnmae = 3\n", "t.toml").unwrap_err().to_string();
        assert!(err.contains("t.toml") && err.contains("line"), "{err}");
    }

    #[test]
    fn every_preset_parses() {
        for name in presets::names() {
            let cfg = parse(presets::get(name).unwrap(), name).unwrap();
            if !cfg.scenarios.is_empty() {
                cfg.resolve(&Overrides::default()).unwrap();
            }
            if let Some(plan) = &cfg.plan {
                plan.design().unwrap();
            }
        }
    }
}
