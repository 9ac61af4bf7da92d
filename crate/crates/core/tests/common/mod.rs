#![allow(dead_code)]

use std::f64::consts::PI;

use dpwate::dataset::CausalDataset;
use dpwate::simlab::{simulate_data, SimulationConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Simulated data at the standard design.
pub fn simulated(n: usize, eta: f64, gamma: f64, seed: u64) -> CausalDataset {
    let cfg = SimulationConfig { n, eta, gamma, ..SimulationConfig::default() };
    simulate_data(&cfg, &mut rng(seed)).unwrap().data
}

#[allow(clippy::too_many_arguments)]
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        left + right + (left + right - whole) / 15.0
    } else {
        simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Truncated Laplace CDF by direct quadrature of the unnormalized density,
/// split at the kink.
pub fn quadrature_cdf(center: f64, scale: f64, lo: f64, hi: f64) -> impl Fn(f64) -> f64 {
    // peak of 1 on the support keeps absolute tolerances meaningful
    let gap = if center < lo {
        lo - center
    } else if center > hi {
        center - hi
    } else {
        0.0
    };
    let dens = move |x: f64| (-((x - center).abs() - gap) / scale).exp();
    let piece = move |a: f64, b: f64| {
        if a < center && center < b {
            integrate(&dens, a, center, 1e-13) + integrate(&dens, center, b, 1e-13)
        } else {
            integrate(&dens, a, b, 1e-13)
        }
    };
    let total = piece(lo, hi);
    move |x: f64| piece(lo, x.clamp(lo, hi)) / total
}

/// One-sample Kolmogorov-Smirnov distance.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample KS statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_q(lambda))
}

fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// KL(N(tau_bar, v_bar) || N(tau, v)) by quadrature of p ln(p/q).
pub fn kl_quadrature(tau_bar: f64, v_bar: f64, tau: f64, v: f64) -> f64 {
    let ln_p = move |x: f64| -0.5 * (x - tau_bar).powi(2) / v_bar - 0.5 * (2.0 * PI * v_bar).ln();
    let ln_q = move |x: f64| -0.5 * (x - tau).powi(2) / v - 0.5 * (2.0 * PI * v).ln();
    let f = move |x: f64| ln_p(x).exp() * (ln_p(x) - ln_q(x));
    let sd = v_bar.sqrt();
    integrate(&f, tau_bar - 14.0 * sd, tau_bar + 14.0 * sd, 1e-12)
}
