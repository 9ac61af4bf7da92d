//! Weighted average treatment effect estimators (Hajek form) and their
//! approximate variances, for the ATE, ATT and ATC.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::CausalDataset;
use crate::error::{Error, Result};
use crate::propensity::{fit_logistic, Truncation};

/// Target population of the effect, via the tilting function `t(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimand {
    /// `t(x) = 1`
    Ate,
    /// `t(x) = e(x)`
    Att,
    /// `t(x) = 1 - e(x)`
    Atc,
}

impl Estimand {
    pub const ALL: [Estimand; 3] = [Estimand::Ate, Estimand::Att, Estimand::Atc];

    pub fn tilt(self, e: f64) -> f64 {
        match self {
            Estimand::Ate => 1.0,
            Estimand::Att => e,
            Estimand::Atc => 1.0 - e,
        }
    }

    /// `(w0, w1) = (t / (1 - e), t / e)`.
    pub fn weights(self, e: f64) -> (f64, f64) {
        match self {
            Estimand::Ate => (1.0 / (1.0 - e), 1.0 / e),
            Estimand::Att => (e / (1.0 - e), 1.0),
            Estimand::Atc => (1.0, (1.0 - e) / e),
        }
    }

    pub fn index(self) -> u32 {
        match self {
            Estimand::Ate => 0,
            Estimand::Att => 1,
            Estimand::Atc => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Estimand::Ate => "ate",
            Estimand::Att => "att",
            Estimand::Atc => "atc",
        }
    }

    /// Upper bound on the variance estimate of one subset of size `n` with
    /// scores truncated at `a`: `1/(2an)` for the ATE, `1/(4a^2 n)` otherwise.
    /// Twice this value bounds the change between neighboring datasets.
    pub fn variance_bound(self, a: Truncation, n: usize) -> f64 {
        let a = a.value();
        let n = n as f64;
        match self {
            Estimand::Ate => 1.0 / (2.0 * a * n),
            Estimand::Att | Estimand::Atc => 1.0 / (4.0 * a * a * n),
        }
    }
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str().to_uppercase())
    }
}

impl FromStr for Estimand {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ate" => Ok(Estimand::Ate),
            "att" => Ok(Estimand::Att),
            "atc" => Ok(Estimand::Atc),
            other => Err(Error::Parameter(format!("unknown estimand `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMode {
    /// `v_z(x) = 1/4` everywhere.
    Conservative,
    /// Per-arm logistic outcome regressions, `v_z(x) = p(1 - p)`.
    #[default]
    Fitted,
}

/// Per-record outcome variances `v_1(x_i)` and `v_0(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeVariances {
    pub v1: Vec<f64>,
    pub v0: Vec<f64>,
    /// Arms whose fit failed and fell back to `1/4`, as `[control, treated]`.
    pub fell_back: [bool; 2],
}

impl OutcomeVariances {
    pub fn conservative(n: usize) -> Self {
        Self { v1: vec![0.25; n], v0: vec![0.25; n], fell_back: [false; 2] }
    }

    /// Builds variances from per-record success probabilities of each arm.
    pub fn from_probabilities(p1: &[f64], p0: &[f64]) -> Result<Self> {
        if p1.len() != p0.len() || p1.iter().chain(p0).any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Parameter("outcome probabilities must lie in [0, 1]".into()));
        }
        Ok(Self {
            v1: p1.iter().map(|p| p * (1.0 - p)).collect(),
            v0: p0.iter().map(|p| p * (1.0 - p)).collect(),
            fell_back: [false; 2],
        })
    }

    /// Estimates the variances on `data`. In fitted mode an arm whose
    /// outcome regression fails or does not converge uses `1/4`.
    pub fn estimate(data: &CausalDataset, mode: VarianceMode) -> Self {
        let n = data.len();
        match mode {
            VarianceMode::Conservative => Self::conservative(n),
            VarianceMode::Fitted => {
                let arm = |z: u8| -> Option<Vec<f64>> {
                    let rows: Vec<usize> = (0..n).filter(|&i| data.treatments()[i] == z).collect();
                    let sub = data.subset(&rows);
                    let model = fit_logistic(sub.covariates(), sub.p(), sub.outcomes()).ok()?;
                    if !model.converged {
                        return None;
                    }
                    Some(
                        (0..n)
                            .map(|i| {
                                let p = model.probability(data.x(i));
                                p * (1.0 - p)
                            })
                            .collect(),
                    )
                };
                let v0 = arm(0);
                let v1 = arm(1);
                Self {
                    fell_back: [v0.is_none(), v1.is_none()],
                    v0: v0.unwrap_or_else(|| vec![0.25; n]),
                    v1: v1.unwrap_or_else(|| vec![0.25; n]),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WateEstimate {
    pub tau_hat: f64,
    pub v_hat: f64,
    pub n_used: usize,
    pub estimand: Estimand,
    /// `None` when raw (untruncated) scores were used.
    pub truncation: Option<Truncation>,
}

fn check_inputs(data: &CausalDataset, scores: &[f64]) -> Result<()> {
    if scores.len() != data.len() {
        return Err(Error::Parameter(format!("{} scores for {} records", scores.len(), data.len())));
    }
    if scores.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::Parameter("propensity scores must lie strictly inside (0, 1)".into()));
    }
    data.require_both_arms()
}

/// Difference of the weighted treated and control outcome means.
pub fn estimate_tau(data: &CausalDataset, scores: &[f64], estimand: Estimand) -> Result<f64> {
    check_inputs(data, scores)?;
    let (mut num1, mut den1, mut num0, mut den0) = (0.0, 0.0, 0.0, 0.0);
    for ((&y, &z), &e) in data.outcomes().iter().zip(data.treatments()).zip(scores) {
        let (w0, w1) = estimand.weights(e);
        let y = f64::from(y);
        if z == 1 {
            num1 += w1 * y;
            den1 += w1;
        } else {
            num0 += w0 * y;
            den0 += w0;
        }
    }
    Ok(num1 / den1 - num0 / den0)
}

/// `sum t^2 (v1/e + v0/(1-e)) / (sum t)^2`.
pub fn estimate_variance(
    data: &CausalDataset,
    scores: &[f64],
    estimand: Estimand,
    variances: &OutcomeVariances,
) -> Result<f64> {
    check_inputs(data, scores)?;
    if variances.v1.len() != data.len() || variances.v0.len() != data.len() {
        return Err(Error::Parameter("outcome variances do not match the data".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for ((&e, &v1), &v0) in scores.iter().zip(&variances.v1).zip(&variances.v0) {
        let t = estimand.tilt(e);
        num += t * t * (v1 / e + v0 / (1.0 - e));
        den += t;
    }
    Ok(num / (den * den))
}

pub fn estimate_pair(
    data: &CausalDataset,
    scores: &[f64],
    estimand: Estimand,
    variances: &OutcomeVariances,
    truncation: Option<Truncation>,
) -> Result<WateEstimate> {
    Ok(WateEstimate {
        tau_hat: estimate_tau(data, scores, estimand)?,
        v_hat: estimate_variance(data, scores, estimand, variances)?,
        n_used: data.len(),
        estimand,
        truncation,
    })
}
