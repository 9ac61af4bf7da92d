//! End-to-end private and non-private estimation.
//!
//! The private run partitions the data, estimates in every partition,
//! aggregates, adds noise and post-processes. Only the [`PrivateRelease`] and
//! what is computed from it are safe to publish; [`ConfidentialTrace`] holds
//! everything else.

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{partition_health, random_partition, CausalDataset};
use crate::error::{param, Error, Result};
use crate::posterior::{summarize, PosteriorConfig, PosteriorSummary};
use crate::privacy::{
    aggregate, privatize, sensitivity_v, PartitionEstimates, PartitionOutcome, PrivacyBudget, PrivacyLedger,
    PrivateRelease,
};
use crate::propensity::{fit_propensity, predict_raw, predict_scores, Truncation};
use crate::rng::{Stage, Streams};
use crate::wate::{estimate_pair, Estimand, OutcomeVariances, VarianceMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub m: usize,
    pub truncation: Truncation,
    pub budget: PrivacyBudget,
    pub variance_mode: VarianceMode,
    pub posterior: PosteriorConfig,
    /// Fill degenerate partitions with uniform draws instead of failing.
    pub allow_fallback: bool,
}

impl PipelineConfig {
    /// Checks the parameters that can be checked knowing only `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.m < 1 {
            return param("number of partitions must be at least 1");
        }
        if self.m > n {
            return param(format!("number of partitions M={} exceeds record count n={n}", self.m));
        }
        self.posterior.validate()?;
        // every variance sensitivity needs floor(n / M) >= 4
        sensitivity_v(Estimand::Ate, self.truncation, n / self.m).map(|_| ())
    }
}

/// Confidential intermediates of one private run. Never part of a release.
#[derive(Debug, Clone, Serialize)]
pub struct ConfidentialTrace {
    pub estimates: PartitionEstimates,
    /// Per partition, `None` when the propensity fit failed.
    pub propensity_coefficients: Vec<Option<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct EstimandOutcome {
    pub release: PrivateRelease,
    pub summary: PosteriorSummary,
    pub trace: ConfidentialTrace,
}

struct PartitionFit {
    coefficients: Option<Vec<f64>>,
    per_estimand: Vec<PartitionOutcome>,
}

fn fit_partition(
    data: &CausalDataset,
    rows: &[usize],
    degenerate: bool,
    estimands: &[Estimand],
    cfg: &PipelineConfig,
) -> PartitionFit {
    let failed =
        |coefficients| PartitionFit { coefficients, per_estimand: vec![PartitionOutcome::Degenerate; estimands.len()] };
    if degenerate {
        return failed(None);
    }
    let sub = data.subset(rows).drop_constant_covariates();
    let model = match fit_propensity(&sub) {
        Ok(m) => m,
        Err(_) => return failed(None),
    };
    let scores = predict_scores(&model, &sub, cfg.truncation);
    let variances = OutcomeVariances::estimate(&sub, cfg.variance_mode);
    let per_estimand = estimands
        .iter()
        .map(|&est| match estimate_pair(&sub, &scores.truncated, est, &variances, Some(cfg.truncation)) {
            Ok(e) => PartitionOutcome::Estimate(e),
            Err(_) => PartitionOutcome::Degenerate,
        })
        .collect();
    PartitionFit { coefficients: Some(model.coefficients), per_estimand }
}

/// Runs the private estimator for each requested estimand on one shared
/// random partition. Each estimand is a separate release charged the full
/// budget to `ledger`.
pub fn run_private(
    data: &CausalDataset,
    estimands: &[Estimand],
    cfg: &PipelineConfig,
    seed: u64,
    ledger: Option<&PrivacyLedger>,
) -> Result<Vec<EstimandOutcome>> {
    cfg.validate(data.len())?;
    data.require_both_arms()?;
    let streams = Streams::new(seed);
    let parts = random_partition(data.len(), cfg.m, &mut streams.stream(Stage::Partition, 0))?;
    let health = partition_health(data, &parts);

    let fits: Vec<PartitionFit> = (0..parts.m())
        .into_par_iter()
        .map(|k| fit_partition(data, parts.members(k), health.degenerate[k], estimands, cfg))
        .collect();

    let coefficients: Vec<Option<Vec<f64>>> = fits.iter().map(|f| f.coefficients.clone()).collect();
    let n_partition = data.len() / cfg.m;
    let mut out = Vec::with_capacity(estimands.len());
    for (j, &est) in estimands.iter().enumerate() {
        let outcomes: Vec<PartitionOutcome> = fits.iter().map(|f| f.per_estimand[j].clone()).collect();
        let degenerate = outcomes.iter().filter(|o| matches!(o, PartitionOutcome::Degenerate)).count();
        if degenerate > 0 && !cfg.allow_fallback {
            return Err(Error::DegeneratePartitions(format!(
                "{degenerate} of {} partitions could not be estimated for {est}; \
                 enable the uniform fallback or choose a smaller M",
                cfg.m
            )));
        }
        let idx = est.index();
        let sens_v = sensitivity_v(est, cfg.truncation, n_partition)?;
        let estimates = aggregate(&outcomes, &mut streams.stream(Stage::Fallback, idx), sens_v)?;
        let release = privatize(
            &estimates,
            cfg.budget,
            est,
            cfg.truncation,
            data.len(),
            Some(seed),
            &mut streams.stream(Stage::TauNoise, idx),
            &mut streams.stream(Stage::VarianceNoise, idx),
        )?;
        if let Some(ledger) = ledger {
            ledger.record(est.as_str(), &cfg.budget);
        }
        let summary = summarize(&release, &cfg.posterior, &mut streams.stream(Stage::Posterior, idx))?;
        out.push(EstimandOutcome {
            release,
            summary,
            trace: ConfidentialTrace { estimates, propensity_coefficients: coefficients.clone() },
        });
    }
    Ok(out)
}

/// Full-data estimate with untruncated scores and a normal 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NonPrivateEstimate {
    pub estimand: Estimand,
    pub tau_hat: f64,
    pub v_hat: f64,
    pub lower: f64,
    pub upper: f64,
}

impl NonPrivateEstimate {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

pub const NORMAL_975: f64 = 1.96;

pub fn run_nonprivate(
    data: &CausalDataset,
    estimands: &[Estimand],
    variance_mode: VarianceMode,
) -> Result<Vec<NonPrivateEstimate>> {
    data.require_both_arms()?;
    let data = data.drop_constant_covariates();
    let model = fit_propensity(&data)?;
    let scores = predict_raw(&model, &data);
    let variances = OutcomeVariances::estimate(&data, variance_mode);
    estimands
        .iter()
        .map(|&est| {
            let e = estimate_pair(&data, &scores, est, &variances, None)?;
            let half = NORMAL_975 * e.v_hat.sqrt();
            Ok(NonPrivateEstimate {
                estimand: est,
                tau_hat: e.tau_hat,
                v_hat: e.v_hat,
                lower: e.tau_hat - half,
                upper: e.tau_hat + half,
            })
        })
        .collect()
}
