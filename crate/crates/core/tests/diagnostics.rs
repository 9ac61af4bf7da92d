mod common;

use common::kl_quadrature;
use dpwate::diagnostics::{exceedance_frequency, kl_normal, kl_tail_bound, plan_m, PlanInput};
use dpwate::pipeline::{run_nonprivate, run_private, PipelineConfig};
use dpwate::posterior::PosteriorConfig;
use dpwate::privacy::PrivacyBudget;
use dpwate::propensity::Truncation;
use dpwate::wate::{Estimand, VarianceMode};

#[test]
fn kl_closed_form_matches_quadrature() {
    for tb in [-0.3, -0.05, 0.0, 0.1, 0.4] {
        for vb in [0.0005, 0.002, 0.01, 0.03, 0.1] {
            let k = kl_normal(tb, vb, 0.05, 0.01).unwrap();
            let q = kl_quadrature(tb, vb, 0.05, 0.01);
            assert!((k.kl_value - q).abs() < 1e-6, "({tb}, {vb}): {} vs {q}", k.kl_value);
            assert!(k.kl_value >= 0.0);
            assert!((k.u1 + k.u2 + k.u3 - k.kl_value).abs() < 1e-15);
        }
    }
}

#[test]
fn plan_m_floor_and_large_n_limit() {
    let r = plan_m(PlanInput::new(1000.0, 0.5, 0.1, 1_000_000, 0.9)).unwrap();
    assert_eq!(r.recommended_m, 1);
    let big = plan_m(PlanInput::new(1.0, 0.5, 0.1, 100_000_000_000, 0.1)).unwrap();
    let full = big.full_value.unwrap();
    assert!((full - big.simplified_value).abs() < 1e-6 * full, "{full} vs {}", big.simplified_value);
}

/// Frequencies of KL(private normal, non-private normal) > c next to the
/// bound. The bound is asymptotic in n, so nothing is asserted about the
/// comparison.
#[test]
fn kl_exceedance_report() {
    let data = common::simulated(10_000, 2.0, 1.0, 31);
    let np = run_nonprivate(&data, &[Estimand::Ate], VarianceMode::Fitted).unwrap()[0];
    let cfg = PipelineConfig {
        m: 100,
        truncation: Truncation::new(0.05).unwrap(),
        budget: PrivacyBudget::new(1.0, 0.5).unwrap(),
        variance_mode: VarianceMode::Fitted,
        posterior: PosteriorConfig { draws: 200, ..PosteriorConfig::default() },
        allow_fallback: true,
    };
    let mut kls = Vec::new();
    for seed in 0..100 {
        let out = &run_private(&data, &[Estimand::Ate], &cfg, seed, None).unwrap()[0];
        let s = &out.summary;
        for (t, v) in s.tau_bar_draws.iter().zip(&s.v_bar_draws).take(10) {
            kls.push(kl_normal(*t, *v, np.tau_hat, np.v_hat).unwrap().kl_value);
        }
    }
    for c in [1.0, 10.0, 100.0] {
        let freq = exceedance_frequency(&kls, c);
        let bound = kl_tail_bound(100, 1.0, 0.5, np.v_hat, c).unwrap();
        assert!((0.0..=1.0).contains(&freq) && bound >= 0.0);
        println!("c={c}: exceedance {freq:.3}, bound {bound:.3}");
    }
}
