//! Logistic propensity models and score truncation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::CausalDataset;
use crate::error::{param, FitError, Result};

pub const MAX_ITERATIONS: usize = 100;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
/// Fitted probabilities outside `(PROB_FLOOR, 1 - PROB_FLOOR)` mean the
/// likelihood has no finite maximizer.
pub const PROB_FLOOR: f64 = 1e-10;

/// Truncation level `a` in `(0, 1/2)`; scores are clamped to `[a, 1 - a]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Truncation(f64);

impl Truncation {
    pub fn new(a: f64) -> Result<Self> {
        if !(a > 0.0 && a < 0.5) {
            return param(format!("truncation level a={a} must lie in (0, 1/2)"));
        }
        Ok(Self(a))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn clamp(self, e: f64) -> f64 {
        e.clamp(self.0, 1.0 - self.0)
    }
}

impl TryFrom<f64> for Truncation {
    type Error = crate::error::Error;
    fn try_from(a: f64) -> Result<Self> {
        Self::new(a)
    }
}

impl From<Truncation> for f64 {
    fn from(t: Truncation) -> f64 {
        t.0
    }
}

/// Maximum-likelihood logistic regression with intercept.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogisticModel {
    /// Intercept first, then one coefficient per covariate.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
}

pub type PropensityModel = LogisticModel;

impl LogisticModel {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len() + 1, self.coefficients.len());
        self.coefficients[0] + self.coefficients[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        inv_logit(self.linear_predictor(x))
    }
}

pub fn inv_logit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(eta)) without overflow.
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn log_likelihood(x: &DMatrix<f64>, labels: &[u8], beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    eta.iter().zip(labels).map(|(&e, &l)| f64::from(l) * e - softplus(e)).sum()
}

/// Newton-Raphson (IRLS) on the logistic log-likelihood of `labels` given
/// `(1, x)`, from the zero vector.
///
/// Convergence requires both a gradient norm at most [`GRADIENT_TOLERANCE`]
/// and a vanishing Newton step; under separation the gradient decays while
/// the step does not, and the fitted probabilities eventually leave
/// `(PROB_FLOOR, 1 - PROB_FLOOR)`, which is reported as
/// [`FitError::Separation`].
pub fn fit_logistic(covariates: &[f64], p: usize, labels: &[u8]) -> Result<LogisticModel, FitError> {
    let n = labels.len();
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = n - positives;
    if positives < 2 || negatives < 2 {
        return Err(FitError::TooFewRecords { positives, negatives });
    }
    let k = p + 1;
    let x = DMatrix::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { covariates[i * p + j - 1] });
    let ys = DVector::from_iterator(n, labels.iter().map(|&l| f64::from(l)));

    let mut beta = DVector::zeros(k);
    let mut ll = log_likelihood(&x, labels, &beta);
    let mut grad_norm = f64::INFINITY;
    for iter in 1..=MAX_ITERATIONS {
        let eta = &x * &beta;
        let mu = eta.map(inv_logit);
        if mu.iter().any(|&m| !(m > PROB_FLOOR && m < 1.0 - PROB_FLOOR)) {
            return Err(FitError::Separation { iterations: iter });
        }
        let grad = x.tr_mul(&(&ys - &mu));
        grad_norm = grad.norm();
        let w = mu.map(|m| m * (1.0 - m));
        let mut xw = x.clone();
        for (mut row, &wi) in xw.row_iter_mut().zip(w.iter()) {
            row *= wi;
        }
        let hessian = x.tr_mul(&xw);
        let chol = hessian.cholesky().ok_or(FitError::RankDeficient)?;
        let diag = chol.l_dirty().diagonal();
        if diag.min() <= 1e-7 * diag.max() {
            return Err(FitError::RankDeficient);
        }
        let step = chol.solve(&grad);
        if !step.iter().all(|s| s.is_finite()) {
            return Err(FitError::RankDeficient);
        }
        let step_small = step.amax() <= 1e-7 * (1.0 + beta.amax());
        if grad_norm <= GRADIENT_TOLERANCE && step_small {
            return Ok(LogisticModel {
                coefficients: beta.iter().copied().collect(),
                converged: true,
                iterations: iter - 1,
                final_gradient_norm: grad_norm,
            });
        }
        // Step halving keeps the likelihood non-decreasing.
        let mut t = 1.0;
        let mut candidate = &beta + &step;
        let mut cand_ll = log_likelihood(&x, labels, &candidate);
        while cand_ll < ll - 1e-12 * ll.abs().max(1.0) && t > 1e-6 {
            t *= 0.5;
            candidate = &beta + &step * t;
            cand_ll = log_likelihood(&x, labels, &candidate);
        }
        beta = candidate;
        ll = cand_ll;
    }
    Ok(LogisticModel {
        coefficients: beta.iter().copied().collect(),
        converged: false,
        iterations: MAX_ITERATIONS,
        final_gradient_norm: grad_norm,
    })
}

/// Propensity model: logistic regression of `z` on all covariates of `data`.
pub fn fit_propensity(data: &CausalDataset) -> Result<PropensityModel, FitError> {
    fit_logistic(data.covariates(), data.p(), data.treatments())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropensityScores {
    pub raw: Vec<f64>,
    pub truncated: Vec<f64>,
    pub a: Truncation,
}

pub fn predict_raw(model: &PropensityModel, data: &CausalDataset) -> Vec<f64> {
    (0..data.len()).map(|i| model.probability(data.x(i))).collect()
}

pub fn predict_scores(model: &PropensityModel, data: &CausalDataset, a: Truncation) -> PropensityScores {
    let raw = predict_raw(model, data);
    let truncated = truncate_scores(&raw, a);
    PropensityScores { raw, truncated, a }
}

pub fn truncate_scores(raw: &[f64], a: Truncation) -> Vec<f64> {
    raw.iter().map(|&e| a.clamp(e)).collect()
}
