//! Maximum-likelihood logistic regression.
//!
//! Newton-Raphson (equivalently IRLS) with step-halving, Wald standard errors
//! from the inverse observed information, and detection of complete or
//! quasi-complete separation. Used for both the outcome model and the
//! propensity model; covariates enter unstandardized.

use thiserror::Error;

use crate::stats::{expit, norm_sf};

pub const MAX_ITERATIONS: usize = 100;
/// Convergence threshold on the max-norm of the score vector.
pub const SCORE_TOLERANCE: f64 = 1e-8;
/// Largest change of any linear predictor that the final Newton step may
/// still propose. Under separation the step keeps a roughly constant size
/// along the diverging direction even after the score has vanished.
pub const ETA_STEP_TOLERANCE: f64 = 1e-6;

const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GlmError {
    #[error("design matrix has no columns")]
    NoColumns,
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{rows} observations cannot identify {cols} coefficients")]
    TooFewRows { rows: usize, cols: usize },
    #[error("response must be 0 or 1 and covariates finite")]
    InvalidValue,
    #[error("response is constant (all {0}); the model is not identifiable")]
    DegenerateResponse(u8),
    #[error("fit did not converge")]
    NotConverged,
    #[error("no coefficient at index {0}")]
    NoSuchCoefficient(usize),
}

/// Regressors (row-major, first column normally the intercept) and a binary
/// response.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    names: Vec<String>,
    values: Vec<f64>,
    response: Vec<f64>,
}

impl DesignMatrix {
    pub fn new<S: Into<String>>(
        names: impl IntoIterator<Item = S>,
        values: Vec<f64>,
        response: Vec<f64>,
    ) -> Result<Self, GlmError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(GlmError::NoColumns);
        }
        let expected = response.len() * names.len();
        if values.len() != expected {
            return Err(GlmError::DimensionMismatch { expected, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) || response.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(GlmError::InvalidValue);
        }
        Ok(Self { names, values, response })
    }

    /// Empty matrix with the given columns, to be filled with [`push_row`](Self::push_row).
    pub fn with_columns<S: Into<String>>(names: impl IntoIterator<Item = S>, capacity: usize) -> Self {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let p = names.len();
        Self {
            names,
            values: Vec::with_capacity(capacity * p),
            response: Vec::with_capacity(capacity),
        }
    }

    pub fn push_row(&mut self, row: &[f64], response: bool) {
        assert_eq!(row.len(), self.names.len(), "row width");
        self.values.extend_from_slice(row);
        self.response.push(if response { 1.0 } else { 0.0 });
    }

    pub fn nrows(&self) -> usize {
        self.response.len()
    }

    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.ncols();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    fn validate(&self) -> Result<(), GlmError> {
        if self.names.is_empty() {
            return Err(GlmError::NoColumns);
        }
        if self.values.len() != self.nrows() * self.ncols() {
            return Err(GlmError::DimensionMismatch {
                expected: self.nrows() * self.ncols(),
                got: self.values.len(),
            });
        }
        if self.nrows() < self.ncols() {
            return Err(GlmError::TooFewRows { rows: self.nrows(), cols: self.ncols() });
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(GlmError::InvalidValue);
        }
        let ones = self.response.iter().filter(|&&y| y == 1.0).count();
        if ones == 0 {
            return Err(GlmError::DegenerateResponse(0));
        }
        if ones == self.nrows() {
            return Err(GlmError::DegenerateResponse(1));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub converged: bool,
    pub separated: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Max-norm of the score at the returned coefficients.
    pub max_abs_score: f64,
}

impl FitResult {
    pub fn coefficient(&self, name: &str) -> Option<(f64, f64)> {
        let i = self.names.iter().position(|n| n == name)?;
        Some((self.coefficients[i], self.standard_errors[i]))
    }

    pub fn is_usable(&self) -> bool {
        self.converged && !self.separated
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alternative {
    /// H1: coefficient > null value.
    Greater,
    /// H1: coefficient < null value.
    Less,
}

/// One-sided Wald p-value for a single coefficient.
pub fn wald_p_value(
    fit: &FitResult,
    coefficient_index: usize,
    null_value: f64,
    alternative: Alternative,
) -> Result<f64, GlmError> {
    if !fit.converged {
        return Err(GlmError::NotConverged);
    }
    let (&coef, &se) = fit
        .coefficients
        .get(coefficient_index)
        .zip(fit.standard_errors.get(coefficient_index))
        .ok_or(GlmError::NoSuchCoefficient(coefficient_index))?;
    let z = (coef - null_value) / se;
    Ok(match alternative {
        Alternative::Greater => norm_sf(z),
        Alternative::Less => norm_sf(-z),
    })
}

/// Fit `logit P(y = 1) = X beta` by maximum likelihood.
///
/// A degenerate (constant) response is an error. Separation is not an
/// error: the result comes back with `separated = true, converged = false`.
pub fn fit_logistic(x: &DesignMatrix) -> Result<FitResult, GlmError> {
    fit_traced(x, None)
}

pub(crate) fn fit_traced(x: &DesignMatrix, mut trace: Option<&mut Vec<f64>>) -> Result<FitResult, GlmError> {
    x.validate()?;
    let p = x.ncols();
    let mut beta = vec![0.0; p];
    let mut state = Evaluation::new(p);
    state.full(x, &beta);
    if let Some(t) = trace.as_deref_mut() {
        t.push(state.loglik);
    }

    let mut iterations = 0;
    let mut converged = false;
    let mut singular = false;
    let mut candidate = vec![0.0; p];
    let mut step = vec![0.0; p];

    loop {
        step.copy_from_slice(&state.score);
        let Some(chol) = Cholesky::factor(&state.information, p) else {
            singular = true;
            break;
        };
        chol.solve_in_place(&mut step);
        if state.max_abs_score() <= SCORE_TOLERANCE && max_eta_change(x, &step) <= ETA_STEP_TOLERANCE {
            converged = true;
            break;
        }
        if iterations == MAX_ITERATIONS {
            break;
        }
        iterations += 1;

        let slack = 1e-10 * state.loglik.abs().max(1.0);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            for j in 0..p {
                candidate[j] = beta[j] + scale * step[j];
            }
            let ll = log_likelihood(x, &candidate);
            if ll.is_finite() && ll >= state.loglik - slack {
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        beta.copy_from_slice(&candidate);
        state.full(x, &beta);
        if let Some(t) = trace.as_deref_mut() {
            t.push(state.loglik);
        }
    }

    let separated = singular || !converged;
    let standard_errors = match Cholesky::factor(&state.information, p) {
        Some(chol) => chol.inverse_diagonal().into_iter().map(f64::sqrt).collect(),
        None => vec![f64::NAN; p],
    };

    Ok(FitResult {
        names: x.names.clone(),
        coefficients: beta,
        standard_errors,
        converged: converged && !separated,
        separated,
        iterations,
        log_likelihood: state.loglik,
        max_abs_score: state.max_abs_score(),
    })
}

fn max_eta_change(x: &DesignMatrix, step: &[f64]) -> f64 {
    (0..x.nrows()).fold(0.0f64, |m, i| m.max(dot(x.row(i), step).abs()))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Bernoulli log-likelihood contribution `y * eta - log(1 + e^eta)`.
#[inline]
fn loglik_term(y: f64, eta: f64) -> f64 {
    let log1pexp = if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    };
    y * eta - log1pexp
}

fn log_likelihood(x: &DesignMatrix, beta: &[f64]) -> f64 {
    (0..x.nrows())
        .map(|i| loglik_term(x.response[i], dot(x.row(i), beta)))
        .sum()
}

struct Evaluation {
    loglik: f64,
    score: Vec<f64>,
    /// Packed full p x p observed information (row-major).
    information: Vec<f64>,
}

impl Evaluation {
    fn new(p: usize) -> Self {
        Self {
            loglik: 0.0,
            score: vec![0.0; p],
            information: vec![0.0; p * p],
        }
    }

    fn full(&mut self, x: &DesignMatrix, beta: &[f64]) {
        let p = x.ncols();
        self.loglik = 0.0;
        self.score.iter_mut().for_each(|v| *v = 0.0);
        self.information.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..x.nrows() {
            let row = x.row(i);
            let y = x.response[i];
            let eta = dot(row, beta);
            let mu = expit(eta);
            let w = mu * (1.0 - mu);
            let r = y - mu;
            self.loglik += loglik_term(y, eta);
            for a in 0..p {
                self.score[a] += row[a] * r;
                let wa = w * row[a];
                for b in 0..=a {
                    self.information[a * p + b] += wa * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                self.information[b * p + a] = self.information[a * p + b];
            }
        }
    }

    fn max_abs_score(&self) -> f64 {
        self.score.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }
}

/// Lower-triangular Cholesky factor of a small symmetric positive definite matrix.
struct Cholesky {
    l: Vec<f64>,
    p: usize,
}

impl Cholesky {
    fn factor(a: &[f64], p: usize) -> Option<Self> {
        let mut l = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..=i {
                let mut sum = a[i * p + j];
                for k in 0..j {
                    sum -= l[i * p + k] * l[j * p + k];
                }
                if i == j {
                    // relative pivot check catches numerically singular information
                    if !(sum > 1e-13 * a[i * p + i].abs()) || sum <= 0.0 {
                        return None;
                    }
                    l[i * p + i] = sum.sqrt();
                } else {
                    l[i * p + j] = sum / l[j * p + j];
                }
            }
        }
        Some(Self { l, p })
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        let (l, p) = (&self.l, self.p);
        for i in 0..p {
            let mut s = b[i];
            for k in 0..i {
                s -= l[i * p + k] * b[k];
            }
            b[i] = s / l[i * p + i];
        }
        for i in (0..p).rev() {
            let mut s = b[i];
            for k in i + 1..p {
                s -= l[k * p + i] * b[k];
            }
            b[i] = s / l[i * p + i];
        }
    }

    fn inverse_diagonal(&self) -> Vec<f64> {
        let p = self.p;
        let mut e = vec![0.0; p];
        (0..p)
            .map(|j| {
                e.iter_mut().for_each(|v| *v = 0.0);
                e[j] = 1.0;
                self.solve_in_place(&mut e);
                e[j]
            })
            .collect()
    }
}
