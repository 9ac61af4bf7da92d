//! JSON and CSV report writers. Every float is written with 17 significant
//! digits so that reports round-trip exactly.

use std::io::Write;
use std::str::FromStr;

use serde::Serialize;
use serde_json::{Number, Value};

use crate::error::Result;
use crate::pipeline::{ConfidentialTrace, EstimandOutcome, PipelineConfig};
use crate::posterior::SamplerMode;
use crate::privacy::{sensitivity_tau, LedgerSnapshot};
use crate::simlab::{StudySummary, HISTOGRAM_BINS};
use crate::wate::{Estimand, VarianceMode};

pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn normalize(value: Value) -> Value {
    match value {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => match n.as_f64() {
            Some(x) if x.is_finite() => Value::Number(Number::from_str(&fmt_f64(x)).expect("valid JSON number")),
            _ => Value::Number(n),
        },
        Value::Array(items) => Value::Array(items.into_iter().map(normalize).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, normalize(v))).collect()),
        other => other,
    }
}

/// Pretty JSON with floats in 17-significant-digit scientific notation.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(&normalize(serde_json::to_value(value)?))?;
    text.push('\n');
    Ok(text)
}

#[derive(Debug, Clone, Serialize)]
pub struct PublicParameters {
    pub m: usize,
    pub a: f64,
    pub epsilon: f64,
    pub pi: f64,
    pub draws: usize,
    pub sampler: SamplerMode,
    pub variance_mode: VarianceMode,
    pub allow_fallback: bool,
    pub n: usize,
    pub n_partition: usize,
}

impl PublicParameters {
    pub fn new(cfg: &PipelineConfig, n: usize) -> Self {
        Self {
            m: cfg.m,
            a: cfg.truncation.value(),
            epsilon: cfg.budget.epsilon(),
            pi: cfg.budget.pi(),
            draws: cfg.posterior.draws,
            sampler: cfg.posterior.sampler,
            variance_mode: cfg.variance_mode,
            allow_fallback: cfg.allow_fallback,
            n,
            n_partition: n / cfg.m,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimandReport {
    pub estimand: Estimand,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    /// Noisy released aggregates; safe to publish.
    pub released_tau: f64,
    pub released_variance: f64,
    pub epsilon_spent: f64,
    pub point_epsilon: f64,
    pub variance_epsilon: f64,
    pub sensitivity_point: f64,
    pub sensitivity_variance: f64,
    pub scale_point: f64,
    pub scale_variance: f64,
    pub fallback_used: bool,
}

impl EstimandReport {
    pub fn new(outcome: &EstimandOutcome) -> Self {
        let r = &outcome.release;
        let b = r.budget();
        Self {
            estimand: r.estimand(),
            point: outcome.summary.point,
            lower: outcome.summary.lower,
            upper: outcome.summary.upper,
            released_tau: r.tau_private(),
            released_variance: r.v_private(),
            epsilon_spent: b.epsilon(),
            point_epsilon: b.point_epsilon(),
            variance_epsilon: b.variance_epsilon(),
            sensitivity_point: sensitivity_tau(r.m()),
            sensitivity_variance: r.sensitivity_v(),
            scale_point: r.scale_tau(),
            scale_variance: r.scale_v(),
            fallback_used: r.fallback_used(),
        }
    }
}

/// Confidential material, present only when explicitly requested.
#[derive(Debug, Clone, Serialize)]
pub struct DebugSection {
    pub warning: &'static str,
    pub seed: u64,
    pub traces: Vec<DebugTrace>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DebugTrace {
    pub estimand: Estimand,
    #[serde(flatten)]
    pub trace: ConfidentialTrace,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub parameters: PublicParameters,
    pub rows_read: usize,
    pub rows_dropped_missing: usize,
    pub estimates: Vec<EstimandReport>,
    pub ledger: LedgerSnapshot,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unsafe_debug: Option<DebugSection>,
}

pub const DEBUG_WARNING: &str = "contains confidential statistics; do not publish";

pub fn write_study_csv<W: Write>(studies: &[StudySummary], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "scenario",
        "n",
        "eta",
        "gamma",
        "m",
        "a",
        "epsilon",
        "pi",
        "estimand",
        "pipeline",
        "replications",
        "failures",
        "rmse",
        "coverage",
        "mean_ci_length",
        "mean_true_tau",
        "sd_true_tau",
        "mean_abs_diff_nonprivate",
        "fallback_replications",
    ])?;
    for s in studies {
        let c = &s.config;
        for row in &s.summaries {
            w.write_record([
                c.name.clone(),
                c.n.to_string(),
                fmt_f64(c.eta),
                fmt_f64(c.gamma),
                c.m.to_string(),
                fmt_f64(c.a),
                fmt_f64(c.epsilon),
                fmt_f64(c.pi),
                row.estimand.to_string(),
                row.pipeline.as_str().to_string(),
                row.replications.to_string(),
                s.failures.to_string(),
                fmt_f64(row.rmse),
                fmt_f64(row.coverage),
                fmt_f64(row.mean_ci_length),
                fmt_f64(row.mean_true_tau),
                fmt_f64(row.sd_true_tau),
                row.mean_abs_diff_nonprivate.map(fmt_f64).unwrap_or_default(),
                row.fallback_replications.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_overlap_csv<W: Write>(studies: &[StudySummary], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["scenario", "bin_lower", "bin_upper", "treated", "control"])?;
    for s in studies {
        let h = &s.overlap;
        for k in 0..HISTOGRAM_BINS {
            w.write_record([
                s.config.name.clone(),
                fmt_f64(h.bin_edges[k]),
                fmt_f64(h.bin_edges[k + 1]),
                h.treated[k].to_string(),
                h.control[k].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_with_17_digits() {
        let x = 0.1 + 0.2;
        let text = to_json_string(&serde_json::json!({ "x": x, "k": 3, "v": [1.5, -2.0e-300] })).unwrap();
        assert!(text.contains("3.0000000000000004e-1"), "{text}");
        assert!(text.contains("\"k\": 3"));
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["x"].as_f64().unwrap(), x);
        assert_eq!(back["v"][1].as_f64().unwrap(), -2.0e-300);
        assert_eq!(fmt_f64(0.25), "2.5000000000000000e-1");
    }
}
