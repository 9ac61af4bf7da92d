//! Bayesian post-processing of a private release.
//!
//! Under a uniform prior and a Laplace likelihood, the posteriors of the
//! average effect and the average variance are Laplace distributions
//! truncated to the prior support. They are sampled exactly by inverse CDF;
//! a slice-sampling mode targets the same densities by MCMC.

use std::str::FromStr;

use rand::distr::Open01;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::privacy::PrivateRelease;

/// Laplace(center, scale) restricted to the open interval `(lower, upper)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedLaplace {
    center: f64,
    scale: f64,
    lower: f64,
    upper: f64,
}

impl TruncatedLaplace {
    pub fn new(center: f64, scale: f64, lower: f64, upper: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return param(format!("scale {scale} must be positive and finite"));
        }
        if lower >= upper || !lower.is_finite() || !upper.is_finite() {
            return param(format!("support ({lower}, {upper}) is empty or unbounded"));
        }
        if !center.is_finite() {
            return param("center must be finite");
        }
        Ok(Self { center, scale, lower, upper })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    /// Unnormalized log density; `-inf` outside the open support.
    pub fn ln_density(&self, x: f64) -> f64 {
        if x > self.lower && x < self.upper {
            -(x - self.center).abs() / self.scale
        } else {
            f64::NEG_INFINITY
        }
    }

    // Support endpoints in standardized units y = (x - center) / scale.
    fn std_bounds(&self) -> (f64, f64) {
        ((self.lower - self.center) / self.scale, (self.upper - self.center) / self.scale)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lower {
            return 0.0;
        }
        if x >= self.upper {
            return 1.0;
        }
        let (lo, hi) = self.std_bounds();
        let y = (x - self.center) / self.scale;
        let c = if hi <= 0.0 {
            // increasing exponential piece only
            ((y - hi).exp() - (lo - hi).exp()) / -(lo - hi).exp_m1()
        } else if lo >= 0.0 {
            (-(y - lo)).exp_m1() / (-(hi - lo)).exp_m1()
        } else {
            let left = -lo.exp_m1();
            let right = -(-hi).exp_m1();
            if y <= 0.0 {
                (y.exp() - lo.exp()) / (left + right)
            } else {
                (left - (-y).exp_m1()) / (left + right)
            }
        };
        c.clamp(0.0, 1.0)
    }

    pub fn inverse_cdf(&self, u: f64) -> f64 {
        let (lo, hi) = self.std_bounds();
        let y = if hi <= 0.0 {
            hi + ((lo - hi).exp() - u * (lo - hi).exp_m1()).ln()
        } else if lo >= 0.0 {
            lo - (u * (-(hi - lo)).exp_m1()).ln_1p()
        } else {
            let left = -lo.exp_m1();
            let right = -(-hi).exp_m1();
            let t = u * (left + right);
            if t <= left {
                (t + lo.exp()).ln()
            } else {
                -(-(t - left)).ln_1p()
            }
        };
        let x = self.center + self.scale * y;
        x.clamp(self.lower.next_up(), self.upper.next_down())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.inverse_cdf(rng.sample(Open01))
    }
}

/// One slice-sampling update (stepping out, then shrinkage) for a density on
/// a bounded interval.
pub fn slice_step<R: Rng + ?Sized>(target: &TruncatedLaplace, x0: f64, width: f64, rng: &mut R) -> f64 {
    const MAX_STEPS: usize = 32;
    let level = target.ln_density(x0) - rng.sample::<f64, _>(rand_distr::Exp1);
    let u: f64 = rng.sample(Open01);
    let mut left = x0 - width * u;
    let mut right = left + width;
    let j = (MAX_STEPS as f64 * rng.random::<f64>()) as usize;
    let mut k = MAX_STEPS - 1 - j;
    let mut j = j;
    while j > 0 && left > target.lower && target.ln_density(left) > level {
        left -= width;
        j -= 1;
    }
    while k > 0 && right < target.upper && target.ln_density(right) > level {
        right += width;
        k -= 1;
    }
    left = left.max(target.lower);
    right = right.min(target.upper);
    loop {
        let x1 = left + rng.sample::<f64, _>(Open01) * (right - left);
        if target.ln_density(x1) > level {
            return x1;
        }
        if x1 < x0 {
            left = x1;
        } else {
            right = x1;
        }
    }
}

/// Slice-sampler chain on `target`, returning `draws` values after
/// `burn_in` discarded ones, keeping every `thin`-th state.
pub fn slice_chain<R: Rng + ?Sized>(
    target: &TruncatedLaplace,
    draws: usize,
    burn_in: usize,
    thin: usize,
    rng: &mut R,
) -> Vec<f64> {
    let width = target.scale.min(target.upper - target.lower);
    let mut x = target.center.clamp(
        target.lower + 0.01 * (target.upper - target.lower),
        target.upper - 0.01 * (target.upper - target.lower),
    );
    for _ in 0..burn_in {
        x = slice_step(target, x, width, rng);
    }
    let thin = thin.max(1);
    let mut out = Vec::with_capacity(draws);
    while out.len() < draws {
        for _ in 0..thin {
            x = slice_step(target, x, width, rng);
        }
        out.push(x);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    #[default]
    Exact,
    Mcmc,
}

impl FromStr for SamplerMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" | "exact-inverse-cdf" => Ok(SamplerMode::Exact),
            "mcmc" => Ok(SamplerMode::Mcmc),
            other => Err(Error::Parameter(format!("unknown sampler `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorConfig {
    pub draws: usize,
    pub burn_in: usize,
    pub sampler: SamplerMode,
    /// Slice-sampler thinning interval (MCMC mode only).
    pub thin: usize,
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        Self { draws: 10_000, burn_in: 0, sampler: SamplerMode::Exact, thin: 1 }
    }
}

impl PosteriorConfig {
    pub fn mcmc() -> Self {
        Self { draws: 10_000, burn_in: 1_000, sampler: SamplerMode::Mcmc, thin: 2 }
    }

    pub fn with_sampler(sampler: SamplerMode, draws: usize) -> Self {
        match sampler {
            SamplerMode::Exact => Self { draws, ..Self::default() },
            SamplerMode::Mcmc => Self { draws, ..Self::mcmc() },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.draws < 1 {
            return param("number of posterior draws must be at least 1");
        }
        Ok(())
    }
}

/// Posterior of the average effect: Laplace centered at the noisy value,
/// restricted to `(-1, 1)`.
pub fn tau_bar_posterior(release: &PrivateRelease) -> TruncatedLaplace {
    TruncatedLaplace::new(release.tau_private(), release.scale_tau(), -1.0, 1.0)
        .expect("release carries a positive finite scale")
}

/// Posterior of the average variance, restricted to `(0, S_V / 2)`.
pub fn v_bar_posterior(release: &PrivateRelease) -> TruncatedLaplace {
    TruncatedLaplace::new(release.v_private(), release.scale_v(), 0.0, release.v_upper())
        .expect("release carries a positive finite scale")
}

pub fn posterior_tau_bar<R: Rng + ?Sized>(release: &PrivateRelease, rng: &mut R) -> f64 {
    tau_bar_posterior(release).sample(rng)
}

pub fn posterior_v_bar<R: Rng + ?Sized>(release: &PrivateRelease, rng: &mut R) -> f64 {
    v_bar_posterior(release).sample(rng)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorSummary {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub draws_count: usize,
    pub sampler: SamplerMode,
    #[serde(skip)]
    pub draws: Vec<f64>,
    #[serde(skip)]
    pub tau_bar_draws: Vec<f64>,
    #[serde(skip)]
    pub v_bar_draws: Vec<f64>,
}

impl PosteriorSummary {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// Draws `(tau_bar, v_bar)` from their posteriors, then
/// `tau ~ N(tau_bar, v_bar)`; summarizes by the mean and the 2.5% / 97.5%
/// empirical quantiles.
pub fn summarize<R: Rng + ?Sized>(
    release: &PrivateRelease,
    config: &PosteriorConfig,
    rng: &mut R,
) -> Result<PosteriorSummary> {
    config.validate()?;
    let tau_post = tau_bar_posterior(release);
    let v_post = v_bar_posterior(release);
    let l = config.draws;
    let (tau_bar_draws, v_bar_draws) = match config.sampler {
        SamplerMode::Exact => {
            let mut t = Vec::with_capacity(l);
            let mut v = Vec::with_capacity(l);
            for _ in 0..l {
                t.push(tau_post.sample(rng));
                v.push(v_post.sample(rng));
            }
            (t, v)
        }
        SamplerMode::Mcmc => (
            slice_chain(&tau_post, l, config.burn_in, config.thin, rng),
            slice_chain(&v_post, l, config.burn_in, config.thin, rng),
        ),
    };
    let draws: Vec<f64> = tau_bar_draws
        .iter()
        .zip(&v_bar_draws)
        .map(|(&t, &v)| t + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let point = draws.iter().sum::<f64>() / l as f64;
    let mut sorted = draws.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(PosteriorSummary {
        point,
        lower: quantile_sorted(&sorted, 0.025),
        upper: quantile_sorted(&sorted, 0.975),
        draws_count: l,
        sampler: config.sampler,
        draws,
        tau_bar_draws,
        v_bar_draws,
    })
}

/// Linearly interpolated empirical quantile of sorted data (the common
/// "type 7" definition).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::privacy::PrivacyBudget;
    use crate::propensity::Truncation;
    use crate::wate::Estimand;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn release(tau: f64, v: f64, epsilon: f64) -> PrivateRelease {
        PrivateRelease::from_noisy(
            Estimand::Ate,
            tau,
            v,
            PrivacyBudget::new(epsilon, 0.5).unwrap(),
            100,
            Truncation::new(0.05).unwrap(),
            10_000,
            false,
        )
        .unwrap()
    }

    #[test]
    fn cdf_inverse_round_trip() {
        for &(c, b) in &[(0.0, 0.3), (5.0, 0.2), (-3.0, 2.0), (0.9, 0.01), (-0.99, 50.0)] {
            let d = TruncatedLaplace::new(c, b, -1.0, 1.0).unwrap();
            for i in 1..20 {
                let u = i as f64 / 20.0;
                let x = d.inverse_cdf(u);
                assert!(x > -1.0 && x < 1.0);
                assert!((d.cdf(x) - u).abs() < 1e-9, "c={c} b={b} u={u} cdf={}", d.cdf(x));
            }
        }
    }

    #[test]
    fn far_center_masses_at_boundary() {
        let rel = release(5.0, 0.0, 1.0);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let draws: Vec<f64> = (0..10_000).map(|_| posterior_tau_bar(&rel, &mut rng)).collect();
        assert!(draws.iter().all(|&d| d > -1.0 && d < 1.0));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        // exponential with scale 0.04 below 1
        assert!(mean > 0.95, "mean {mean}");
    }

    #[test]
    fn negative_variance_release_masses_near_zero() {
        let rel = release(0.0, -0.5, 1.0);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let upper = rel.v_upper();
        let draws: Vec<f64> = (0..10_000).map(|_| posterior_v_bar(&rel, &mut rng)).collect();
        assert!(draws.iter().all(|&d| d > 0.0 && d < upper));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!(mean < 0.1 * upper, "mean {mean}, upper {upper}");
    }

    #[test]
    fn tiny_scale_concentrates() {
        let rel = release(0.0, 0.05, 1e6);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let draws: Vec<f64> = (0..10_000).map(|_| posterior_tau_bar(&rel, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / draws.len() as f64).sqrt();
        assert!(sd < 10.0 * rel.scale_tau());
        let vd: Vec<f64> = (0..1000).map(|_| posterior_v_bar(&rel, &mut rng)).collect();
        assert!(vd.iter().all(|v| (v - 0.05).abs() < 1e-3));
    }

    #[test]
    fn summary_half_width_matches_normal_quantile() {
        let v0 = 0.01;
        let rel = release(0.2, v0, 1e7);
        let cfg = PosteriorConfig { draws: 200_000, ..PosteriorConfig::default() };
        let s = summarize(&rel, &cfg, &mut ChaCha20Rng::seed_from_u64(4)).unwrap();
        let half = (s.upper - s.lower) / 2.0;
        let expected = 1.959_963_985 * v0.sqrt();
        assert!((half / expected - 1.0).abs() < 0.05, "half {half}");
        assert!(s.lower <= s.point && s.point <= s.upper);
    }

    #[test]
    fn summary_is_deterministic() {
        let rel = release(0.1, 0.02, 1.0);
        let cfg = PosteriorConfig::default();
        let a = summarize(&rel, &cfg, &mut ChaCha20Rng::seed_from_u64(5)).unwrap();
        let b = summarize(&rel, &cfg, &mut ChaCha20Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.tau_bar_draws.iter().all(|t| *t > -1.0 && *t < 1.0));
        assert!(a.v_bar_draws.iter().all(|v| *v > 0.0 && *v < rel.v_upper()));
    }

    #[test]
    fn quantile_type7() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
        assert!((quantile_sorted(&s, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile_sorted(&s, 0.025) - 1.075).abs() < 1e-12);
    }

    #[test]
    fn slice_chain_stays_in_support() {
        let d = TruncatedLaplace::new(0.3, 0.05, 0.0, 0.4).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let c = slice_chain(&d, 5000, 100, 1, &mut rng);
        assert!(c.iter().all(|&x| x > 0.0 && x < 0.4));
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        assert!((mean - 0.29).abs() < 0.02, "mean {mean}");
    }
}
