mod common;

use dpwate::rng::{Stage, Streams};
use dpwate::simlab::{run_study, simulate_data, Pipeline, SimulationConfig};
use dpwate::wate::Estimand;

fn mean_truth(cfg: &SimulationConfig, reps: u64, estimand: Estimand) -> f64 {
    let total: f64 = (0..reps)
        .map(|r| {
            let sim = simulate_data(cfg, &mut Streams::new(r).stream(Stage::Simulation, 0)).unwrap();
            sim.truth.get(estimand)
        })
        .sum();
    total / reps as f64
}

#[test]
fn true_effects_match_reported_scenario_averages() {
    let base = SimulationConfig::default();
    let ate = mean_truth(&base, 20, Estimand::Ate);
    assert!((ate - 0.204).abs() < 0.015, "{ate}");
    let strong = SimulationConfig { eta: 4.0, gamma: 2.0, ..base };
    let att = mean_truth(&strong, 20, Estimand::Att);
    assert!((att - 0.348).abs() < 0.015, "{att}");
}

fn small(replications: usize) -> SimulationConfig {
    SimulationConfig { n: 2_000, m: 20, replications, draws: 1_000, ..SimulationConfig::default() }
}

#[test]
fn single_replication_study_reports_that_replication() {
    let s = run_study(&small(1)).unwrap();
    assert_eq!((s.completed, s.failures), (1, 0));
    let rep = &s.replications[0];
    for e in &rep.estimands {
        let p = s.get(e.estimand, Pipeline::Private).unwrap();
        assert_eq!(p.rmse, (e.private.point - e.true_tau).abs());
        assert_eq!(p.coverage, f64::from(u8::from(e.private_covers)));
        assert_eq!(p.mean_ci_length, e.private.length());
        let np = s.get(e.estimand, Pipeline::NonPrivate).unwrap();
        assert_eq!(np.rmse, (e.nonprivate.tau_hat - e.true_tau).abs());
        assert_eq!(np.mean_true_tau, e.true_tau);
    }
    assert_eq!(s.overlap.treated.iter().chain(&s.overlap.control).sum::<u64>(), 2_000);
}

#[test]
fn studies_are_reproducible_under_parallel_execution() {
    let a = run_study(&small(6)).unwrap();
    let b = run_study(&small(6)).unwrap();
    assert_eq!(a.summaries, b.summaries);
    assert_eq!(a.replications, b.replications);
    assert_eq!(a.replications.iter().map(|r| r.seed).collect::<Vec<_>>(), (1..=6).collect::<Vec<u64>>());
}

#[test]
fn null_effect_scenario_centers_at_zero() {
    let s = run_study(&SimulationConfig { gamma: 0.0, ..small(4) }).unwrap();
    for row in &s.summaries {
        assert_eq!(row.mean_true_tau, 0.0);
    }
}

#[test]
fn failing_replications_are_counted() {
    let cfg = SimulationConfig { n: 100, m: 25, eta: 4.0, allow_fallback: false, ..small(8) };
    let s = run_study(&cfg).unwrap();
    assert_eq!(s.completed + s.failures, 8);
    assert!(s.failures > 0);
    assert_eq!(s.failure_messages.len(), s.failures);
}
