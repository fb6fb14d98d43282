//! Patients and the outcome model that generates them.

use serde::{Deserialize, Serialize};

use crate::stats::{expit, RngStream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Patient {
    pub id: u32,
    /// Age in years.
    pub age: f64,
    /// High-risk cytogenetics.
    pub cyto: bool,
    pub treated: bool,
    pub response: bool,
    /// Latent residual on the logit scale.
    pub epsilon: f64,
}

/// Baseline covariates available for matching and adjustment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Covariate {
    Age,
    Cyto,
}

impl Covariate {
    pub const ALL: [Covariate; 2] = [Covariate::Age, Covariate::Cyto];

    #[inline]
    pub fn value(self, p: &Patient) -> f64 {
        match self {
            Covariate::Age => p.age,
            Covariate::Cyto => p.cyto as u8 as f64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Covariate::Age => "age",
            Covariate::Cyto => "cyto",
        }
    }
}

/// `logit P(Y = 1) = beta0 + theta * treated + beta_age * age + beta_cyto * cyto + eps`,
/// with `age ~ N(age_mean, age_sd^2)`, `cyto ~ Bernoulli(cyto_prev)` and
/// `eps ~ N(0, sigma^2)`, all independent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutcomeModel {
    pub beta0: f64,
    /// Treatment log odds ratio.
    pub theta: f64,
    pub beta_age: f64,
    pub beta_cyto: f64,
    pub sigma: f64,
    pub age_mean: f64,
    pub age_sd: f64,
    pub cyto_prev: f64,
}

impl Default for OutcomeModel {
    fn default() -> Self {
        Self {
            beta0: 2.0,
            theta: 0.0,
            beta_age: -0.05,
            beta_cyto: -0.5,
            sigma: 0.0,
            age_mean: 55.0,
            age_sd: 15.0,
            cyto_prev: 0.34,
        }
    }
}

impl OutcomeModel {
    pub fn with_theta(self, theta: f64) -> Self {
        Self { theta, ..self }
    }

    pub fn with_sigma(self, sigma: f64) -> Self {
        Self { sigma, ..self }
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite = [
            self.beta0,
            self.theta,
            self.beta_age,
            self.beta_cyto,
            self.sigma,
            self.age_mean,
            self.age_sd,
            self.cyto_prev,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err("outcome model parameters must be finite".into());
        }
        if self.sigma < 0.0 {
            return Err("sigma must be non-negative".into());
        }
        if self.age_sd < 0.0 {
            return Err("age_sd must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.cyto_prev) {
            return Err("cyto_prev must lie in [0, 1]".into());
        }
        Ok(())
    }

    #[inline]
    pub fn linear_predictor(&self, age: f64, cyto: bool, treated: bool) -> f64 {
        self.beta0 + self.theta * (treated as u8 as f64) + self.beta_age * age + self.beta_cyto * (cyto as u8 as f64)
    }
}

/// Draw one patient. The response is generated here, once.
pub fn generate_patient(s: &mut RngStream, model: &OutcomeModel, id: u32, treated: bool) -> Patient {
    let age = s.draw_normal(model.age_mean, model.age_sd);
    let cyto = s.draw_bernoulli(model.cyto_prev);
    let epsilon = s.draw_normal(0.0, model.sigma);
    let eta = model.linear_predictor(age, cyto, treated) + epsilon;
    let response = s.draw_bernoulli(expit(eta));
    Patient {
        id,
        age,
        cyto,
        treated,
        response,
        epsilon,
    }
}

/// `count` patients with consecutive ids starting at `first_id`.
pub fn generate_cohort(s: &mut RngStream, model: &OutcomeModel, first_id: u32, count: usize, treated: bool) -> Vec<Patient> {
    (0..count as u32)
        .map(|k| generate_patient(s, model, first_id + k, treated))
        .collect()
}
