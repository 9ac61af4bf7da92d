//! KL divergence between the private and non-private normal approximations,
//! the concentration bound for it, and the planner for `M`.

use serde::Serialize;

use crate::error::{param, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KlDiagnostic {
    pub tau_bar: f64,
    pub v_bar: f64,
    pub tau: f64,
    pub v: f64,
    pub kl_value: f64,
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
}

/// KL divergence of `N(tau_bar, v_bar)` from `N(tau, v)`.
pub fn kl_normal(tau_bar: f64, v_bar: f64, tau: f64, v: f64) -> Result<KlDiagnostic> {
    if !(v > 0.0 && v_bar > 0.0 && v.is_finite() && v_bar.is_finite()) {
        return param(format!("variances must be positive and finite (v={v}, v_bar={v_bar})"));
    }
    if !(tau.is_finite() && tau_bar.is_finite()) {
        return param("means must be finite");
    }
    let u1 = (tau_bar - tau).powi(2) / (2.0 * v);
    let ratio = v_bar / v;
    let u2 = ratio / 2.0 - 0.5;
    let u3 = -0.5 * ratio.ln();
    Ok(KlDiagnostic { tau_bar, v_bar, tau, v, kl_value: u1 + u2 + u3, u1, u2, u3 })
}

fn check_bound_inputs(m: usize, epsilon: f64, pi: f64, v: f64, c: f64) -> Result<()> {
    if m < 1 {
        return param("M must be at least 1");
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return param(format!("epsilon={epsilon} must be positive"));
    }
    if !(pi > 0.0 && pi < 1.0) {
        return param(format!("pi={pi} must lie in (0, 1)"));
    }
    if !(v > 0.0 && v.is_finite()) {
        return param(format!("V={v} must be positive"));
    }
    if !(c > 0.0 && c.is_finite()) {
        return param(format!("c={c} must be positive"));
    }
    Ok(())
}

/// Upper bound on `P(KL > c)` for the private approximation.
/// Values at or above 1 are vacuous.
pub fn kl_tail_bound(m: usize, epsilon: f64, pi: f64, v: f64, c: f64) -> Result<f64> {
    check_bound_inputs(m, epsilon, pi, v, c)?;
    let me = m as f64 * epsilon;
    let t1 = 2.0 * (-me * (1.0 - pi) * (2.0 * v * c).sqrt() / (6.0 * 3f64.sqrt())).exp();
    let t2 = 4.0 * (-me * pi * v * c / 9.0).exp();
    Ok(t1 + t2)
}

/// Single-term tail bounds for the noisy mean and variance deviating by
/// more than `c`: `(point, variance)`.
pub fn release_tail_bounds(m: usize, epsilon: f64, pi: f64, c: f64) -> Result<(f64, f64)> {
    check_bound_inputs(m, epsilon, pi, 1.0, c)?;
    let me = m as f64 * epsilon;
    Ok((2.0 * (-me * (1.0 - pi) * c / 6.0).exp(), 2.0 * (-me * pi * c / 6.0).exp()))
}

/// Fraction of `values` strictly above `c`.
pub fn exceedance_frequency(values: &[f64], c: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().filter(|&&v| v > c).count() as f64 / values.len() as f64
}

pub const DEFAULT_PLAN_TRUNCATION: f64 = 0.1;
pub const MINIMUM_RECOMMENDED_M: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlanInput {
    pub epsilon: f64,
    pub pi: f64,
    pub a: f64,
    pub n: usize,
    pub delta: f64,
    /// Expected treated share, used only for the degenerate-partition risk.
    pub treated_fraction: f64,
    /// Use the simplified formula when the full one has no solution.
    pub allow_simplified: bool,
}

impl PlanInput {
    pub fn new(epsilon: f64, pi: f64, a: f64, n: usize, delta: f64) -> Self {
        Self { epsilon, pi, a, n, delta, treated_fraction: 0.5, allow_simplified: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanReport {
    pub input: PlanInput,
    pub simplified_value: f64,
    pub m_simplified: usize,
    pub full_feasible: bool,
    pub full_value: Option<f64>,
    pub m_full: Option<usize>,
    pub recommended_m: usize,
    pub meets_minimum: bool,
    pub partition_size: usize,
    /// Probability that at least one partition has fewer than two treated or
    /// two control records, under independent assignment.
    pub degenerate_risk: f64,
    pub warnings: Vec<String>,
}

// Formula values that are integral up to rounding must not be bumped up by
// the ceiling.
fn ceil_tolerant(x: f64) -> usize {
    ((x - 1e-9).ceil() as usize).max(1)
}

fn binomial_low_tail(s: usize, q: f64) -> f64 {
    // P(X <= 1) for X ~ Binomial(s, q)
    if s == 0 {
        return 1.0;
    }
    let r = 1.0 - q;
    r.powi(s as i32) + s as f64 * q * r.powi(s as i32 - 1)
}

/// Rule-of-thumb number of partitions for a target interval half-width
/// `delta`.
pub fn plan_m(input: PlanInput) -> Result<PlanReport> {
    let PlanInput { epsilon, pi, a, n, delta, treated_fraction, allow_simplified } = input;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return param(format!("epsilon={epsilon} must be positive"));
    }
    if !(pi > 0.0 && pi < 1.0) {
        return param(format!("pi={pi} must lie in (0, 1)"));
    }
    if !(a > 0.0 && a < 0.5) {
        return param(format!("truncation level a={a} must lie in (0, 1/2)"));
    }
    if n < 1 {
        return param("n must be positive");
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return param(format!("delta={delta} must be positive"));
    }
    if !(treated_fraction > 0.0 && treated_fraction < 1.0) {
        return param(format!("treated fraction {treated_fraction} must lie in (0, 1)"));
    }

    let scale = epsilon * (1.0 - pi);
    let simplified_value = 4.0 / (scale * delta);
    let m_simplified = ceil_tolerant(simplified_value);
    let floor = 1.0 / (2.0 * a * n as f64);
    let gap = delta * delta / 4.0 - floor;
    let full_feasible = gap > 0.0;
    let mut warnings = Vec::new();
    let (full_value, m_full) = if full_feasible {
        let v = 2.0 / scale / gap.sqrt();
        (Some(v), Some(ceil_tolerant(v)))
    } else {
        let msg = format!(
            "constraint delta^2/4 > 1/(2an) fails: delta^2/4 = {:.6e}, 1/(2an) = {floor:.6e}",
            delta * delta / 4.0
        );
        if !allow_simplified {
            return Err(Error::Planning(msg));
        }
        warnings.push(format!("{msg}; falling back to the simplified formula"));
        (None, None)
    };
    let recommended_m = m_full.unwrap_or(m_simplified);
    if recommended_m > n {
        warnings.push(format!("recommended M={recommended_m} exceeds n={n}"));
    }
    let meets_minimum = recommended_m >= MINIMUM_RECOMMENDED_M;
    if !meets_minimum {
        warnings
            .push(format!("recommended M={recommended_m} is below the suggested minimum of {MINIMUM_RECOMMENDED_M}"));
    }
    let partition_size = n / recommended_m.max(1);
    let q = treated_fraction;
    let per_partition = binomial_low_tail(partition_size, q) + binomial_low_tail(partition_size, 1.0 - q);
    let degenerate_risk = 1.0 - (1.0 - per_partition.min(1.0)).powi(recommended_m.min(i32::MAX as usize) as i32);
    if degenerate_risk > 0.01 {
        warnings.push(format!(
            "partitions of about {partition_size} records risk having fewer than two records in an arm (probability {degenerate_risk:.3})"
        ));
    }
    Ok(PlanReport {
        input,
        simplified_value,
        m_simplified,
        full_feasible,
        full_value,
        m_full,
        recommended_m,
        meets_minimum,
        partition_size,
        degenerate_risk,
        warnings,
    })
}
