//! Subsample-and-aggregate release with Laplace noise, and privacy budget
//! bookkeeping.

use std::path::Path;
use std::sync::Mutex;

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::propensity::Truncation;
use crate::wate::{Estimand, WateEstimate};

/// Total budget `epsilon`, of which `pi * epsilon` goes to the variance and
/// `(1 - pi) * epsilon` to the point estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    epsilon: f64,
    pi: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, pi: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return param(format!("epsilon={epsilon} must be a positive finite number"));
        }
        if !(pi > 0.0 && pi < 1.0) {
            return param(format!("pi={pi} must lie in (0, 1)"));
        }
        Ok(Self { epsilon, pi })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    pub fn point_epsilon(&self) -> f64 {
        (1.0 - self.pi) * self.epsilon
    }

    pub fn variance_epsilon(&self) -> f64 {
        self.pi * self.epsilon
    }
}

/// Global sensitivity of the average of `m` partition effect estimates.
pub fn sensitivity_tau(m: usize) -> f64 {
    debug_assert!(m >= 1);
    2.0 / m as f64
}

/// Global sensitivity of one variance estimate computed on `n_partition`
/// records: `1/(a n)` for the ATE, `1/(2 a^2 n)` for the ATT and ATC.
pub fn sensitivity_v(estimand: Estimand, a: Truncation, n_partition: usize) -> Result<f64> {
    if n_partition < 4 {
        return param(format!("partition size {n_partition} is below the minimum of 4"));
    }
    Ok(2.0 * estimand.variance_bound(a, n_partition))
}

#[derive(Debug, Clone, PartialEq)]
pub enum PartitionOutcome {
    Estimate(WateEstimate),
    /// Too few treated or control records to estimate anything.
    Degenerate,
}

/// Per-partition estimates and their averages. Confidential.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionEstimates {
    /// `(tau_hat, v_hat)` per partition, after fallback substitution.
    pub per_partition: Vec<(f64, f64)>,
    pub tau_bar: f64,
    pub v_bar: f64,
    pub fallback_indices: Vec<usize>,
}

/// Averages the partition estimates. Degenerate partitions are replaced by
/// `tau ~ U[-1, 1]` and `v ~ U[0, fallback_v_bound]` drawn from `rng`.
pub fn aggregate<R: Rng + ?Sized>(
    outcomes: &[PartitionOutcome],
    rng: &mut R,
    fallback_v_bound: f64,
) -> Result<PartitionEstimates> {
    if outcomes.is_empty() {
        return param("no partitions to aggregate");
    }
    if outcomes.iter().all(|o| matches!(o, PartitionOutcome::Degenerate)) {
        return Err(Error::DegeneratePartitions(format!("all {} partitions are degenerate", outcomes.len())));
    }
    let mut per_partition = Vec::with_capacity(outcomes.len());
    let mut fallback_indices = Vec::new();
    for (k, o) in outcomes.iter().enumerate() {
        match o {
            PartitionOutcome::Estimate(e) => per_partition.push((e.tau_hat, e.v_hat)),
            PartitionOutcome::Degenerate => {
                let tau = rng.random_range(-1.0..=1.0);
                let v = rng.random_range(0.0..=fallback_v_bound);
                per_partition.push((tau, v));
                fallback_indices.push(k);
            }
        }
    }
    let m = per_partition.len() as f64;
    let tau_bar = per_partition.iter().map(|p| p.0).sum::<f64>() / m;
    let v_bar = per_partition.iter().map(|p| p.1).sum::<f64>() / m;
    Ok(PartitionEstimates { per_partition, tau_bar, v_bar, fallback_indices })
}

/// Inverse CDF of the zero-centered Laplace distribution with scale `scale`.
pub fn laplace_inverse_cdf(u: f64, scale: f64) -> f64 {
    let d = u - 0.5;
    -scale * d.signum() * (-2.0 * d.abs()).ln_1p()
}

pub fn laplace_sample<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> Result<f64> {
    if !(scale > 0.0 && scale.is_finite()) {
        return param(format!("Laplace scale {scale} must be positive and finite"));
    }
    let u: f64 = rng.sample(Open01);
    Ok(laplace_inverse_cdf(u, scale))
}

/// The differentially private release of one estimand, with every public
/// parameter needed to interpret it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivateRelease {
    pub(crate) estimand: Estimand,
    pub(crate) tau_private: f64,
    pub(crate) v_private: f64,
    pub(crate) scale_tau: f64,
    pub(crate) scale_v: f64,
    /// Sensitivity bound of one partition's variance estimate.
    pub(crate) sensitivity_v: f64,
    pub(crate) epsilon: f64,
    pub(crate) pi: f64,
    pub(crate) m: usize,
    pub(crate) a: Truncation,
    pub(crate) n: usize,
    pub(crate) n_partition: usize,
    pub(crate) seed: Option<u64>,
    pub(crate) fallback_used: bool,
}

impl PrivateRelease {
    pub fn estimand(&self) -> Estimand {
        self.estimand
    }
    pub fn tau_private(&self) -> f64 {
        self.tau_private
    }
    pub fn v_private(&self) -> f64 {
        self.v_private
    }
    pub fn scale_tau(&self) -> f64 {
        self.scale_tau
    }
    pub fn scale_v(&self) -> f64 {
        self.scale_v
    }
    pub fn sensitivity_v(&self) -> f64 {
        self.sensitivity_v
    }
    /// Upper end of the prior support of the average variance.
    pub fn v_upper(&self) -> f64 {
        self.sensitivity_v / 2.0
    }
    pub fn budget(&self) -> PrivacyBudget {
        PrivacyBudget { epsilon: self.epsilon, pi: self.pi }
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn a(&self) -> Truncation {
        self.a
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn n_partition(&self) -> usize {
        self.n_partition
    }
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
    pub fn fallback_used(&self) -> bool {
        self.fallback_used
    }

    /// Builds a release from already-noised statistics, e.g. ones published
    /// elsewhere. Scales are derived from the public parameters.
    #[allow(clippy::too_many_arguments)]
    pub fn from_noisy(
        estimand: Estimand,
        tau_private: f64,
        v_private: f64,
        budget: PrivacyBudget,
        m: usize,
        a: Truncation,
        n: usize,
        fallback_used: bool,
    ) -> Result<Self> {
        let (scale_tau, scale_v, sens_v, n_partition) = noise_scales(estimand, budget, m, a, n)?;
        Ok(Self {
            estimand,
            tau_private,
            v_private,
            scale_tau,
            scale_v,
            sensitivity_v: sens_v,
            epsilon: budget.epsilon,
            pi: budget.pi,
            m,
            a,
            n,
            n_partition,
            seed: None,
            fallback_used,
        })
    }
}

/// `(scale_tau, scale_v, sensitivity_v, n_partition)` for a release with
/// `m` partitions over `n` records. The variance sensitivity uses the
/// smallest partition size `floor(n / m)`.
pub fn noise_scales(
    estimand: Estimand,
    budget: PrivacyBudget,
    m: usize,
    a: Truncation,
    n: usize,
) -> Result<(f64, f64, f64, usize)> {
    if m < 1 || m > n {
        return param(format!("number of partitions M={m} must lie in [1, n={n}]"));
    }
    let n_partition = n / m;
    let sens_v = sensitivity_v(estimand, a, n_partition)?;
    let scale_tau = sensitivity_tau(m) / budget.point_epsilon();
    let scale_v = sens_v / (m as f64 * budget.variance_epsilon());
    Ok((scale_tau, scale_v, sens_v, n_partition))
}

/// Adds Laplace noise to both averages. `tau_rng` and `v_rng` should be
/// independent streams.
#[allow(clippy::too_many_arguments)]
pub fn privatize<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    agg: &PartitionEstimates,
    budget: PrivacyBudget,
    estimand: Estimand,
    a: Truncation,
    n: usize,
    seed: Option<u64>,
    tau_rng: &mut R1,
    v_rng: &mut R2,
) -> Result<PrivateRelease> {
    let m = agg.per_partition.len();
    let (scale_tau, scale_v, sens_v, n_partition) = noise_scales(estimand, budget, m, a, n)?;
    let tau_private = agg.tau_bar + laplace_sample(scale_tau, tau_rng)?;
    let v_private = agg.v_bar + laplace_sample(scale_v, v_rng)?;
    Ok(PrivateRelease {
        estimand,
        tau_private,
        v_private,
        scale_tau,
        scale_v,
        sensitivity_v: sens_v,
        epsilon: budget.epsilon,
        pi: budget.pi,
        m,
        a,
        n,
        n_partition,
        seed,
        fallback_used: !agg.fallback_indices.is_empty(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub label: String,
    pub epsilon: f64,
    pub point_epsilon: f64,
    pub variance_epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub dataset: String,
    pub entries: Vec<LedgerEntry>,
    pub total_epsilon: f64,
}

/// Running total of privacy loss on one dataset under sequential
/// composition.
#[derive(Debug)]
pub struct PrivacyLedger {
    dataset: String,
    entries: Mutex<Vec<LedgerEntry>>,
}

impl PrivacyLedger {
    pub fn new(dataset: impl Into<String>) -> Self {
        Self { dataset: dataset.into(), entries: Mutex::new(Vec::new()) }
    }

    /// Records one release and returns the cumulative epsilon spent.
    pub fn record(&self, label: impl Into<String>, budget: &PrivacyBudget) -> f64 {
        let mut entries = self.entries.lock().expect("ledger lock poisoned");
        entries.push(LedgerEntry {
            label: label.into(),
            epsilon: budget.epsilon(),
            point_epsilon: budget.point_epsilon(),
            variance_epsilon: budget.variance_epsilon(),
        });
        entries.iter().map(|e| e.epsilon).sum()
    }

    pub fn total_spent(&self) -> f64 {
        self.entries.lock().expect("ledger lock poisoned").iter().map(|e| e.epsilon).sum()
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        let entries = self.entries.lock().expect("ledger lock poisoned").clone();
        let total_epsilon = entries.iter().map(|e| e.epsilon).sum();
        LedgerSnapshot { dataset: self.dataset.clone(), entries, total_epsilon }
    }

    pub fn from_snapshot(snapshot: LedgerSnapshot) -> Self {
        Self { dataset: snapshot.dataset, entries: Mutex::new(snapshot.entries) }
    }

    /// Loads a ledger file, or starts an empty ledger if it does not exist.
    pub fn load_or_new(path: &Path, dataset: &str) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::new(dataset));
        }
        let snap: LedgerSnapshot = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if snap.dataset != dataset {
            return Err(Error::Config(format!(
                "ledger {} belongs to dataset `{}`, not `{dataset}`",
                path.display(),
                snap.dataset
            )));
        }
        Ok(Self::from_snapshot(snap))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.snapshot())?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn est(tau: f64, v: f64) -> PartitionOutcome {
        PartitionOutcome::Estimate(WateEstimate {
            tau_hat: tau,
            v_hat: v,
            n_used: 100,
            estimand: Estimand::Ate,
            truncation: None,
        })
    }

    #[test]
    fn tau_sensitivity_values() {
        assert_eq!(sensitivity_tau(1), 2.0);
        assert_eq!(sensitivity_tau(100), 0.02);
        assert_eq!(sensitivity_tau(50), 0.04);
    }

    #[test]
    fn variance_sensitivity_values() {
        let a = Truncation::new(0.05).unwrap();
        assert!((sensitivity_v(Estimand::Ate, a, 10_000).unwrap() - 0.002).abs() < 1e-15);
        assert!((sensitivity_v(Estimand::Att, a, 10_000).unwrap() - 0.02).abs() < 1e-15);
        assert_eq!(sensitivity_v(Estimand::Atc, a, 10_000).unwrap(), sensitivity_v(Estimand::Att, a, 10_000).unwrap());
        assert!(sensitivity_v(Estimand::Ate, a, 3).is_err());
    }

    #[test]
    fn budget_validation_and_split() {
        assert!(PrivacyBudget::new(0.0, 0.5).is_err());
        assert!(PrivacyBudget::new(1.0, 1.0).is_err());
        assert!(PrivacyBudget::new(1.0, 0.0).is_err());
        let b = PrivacyBudget::new(1.3, 0.3).unwrap();
        assert!((b.point_epsilon() + b.variance_epsilon() - b.epsilon()).abs() < 1e-15);
    }

    #[test]
    fn aggregate_means() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let agg = aggregate(&[est(0.1, 0.01), est(0.2, 0.01), est(0.3, 0.01)], &mut rng, 1.0).unwrap();
        assert!((agg.tau_bar - 0.2).abs() < 1e-15);
        assert!((agg.v_bar - 0.01).abs() < 1e-15);
        assert!(agg.fallback_indices.is_empty());
    }

    #[test]
    fn aggregate_fallback_is_seeded() {
        let outcomes = [est(0.5, 0.02), PartitionOutcome::Degenerate];
        let a = aggregate(&outcomes, &mut ChaCha20Rng::seed_from_u64(7), 0.04).unwrap();
        let b = aggregate(&outcomes, &mut ChaCha20Rng::seed_from_u64(7), 0.04).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fallback_indices, vec![1]);
        let (t, v) = a.per_partition[1];
        assert!((-1.0..=1.0).contains(&t));
        assert!((0.0..=0.04).contains(&v));
    }

    #[test]
    fn aggregate_all_degenerate_fails() {
        let outcomes = [PartitionOutcome::Degenerate, PartitionOutcome::Degenerate];
        let r = aggregate(&outcomes, &mut ChaCha20Rng::seed_from_u64(0), 1.0);
        assert!(matches!(r, Err(Error::DegeneratePartitions(_))));
    }

    #[test]
    fn laplace_inverse_cdf_points() {
        assert_eq!(laplace_inverse_cdf(0.5, 3.0), 0.0);
        assert!((laplace_inverse_cdf(0.75, 1.0) - 2f64.ln()).abs() < 1e-15);
        assert!((laplace_inverse_cdf(0.25, 1.0) + 2f64.ln()).abs() < 1e-15);
        assert!(laplace_sample(0.0, &mut ChaCha20Rng::seed_from_u64(0)).is_err());
        assert!(laplace_sample(-1.0, &mut ChaCha20Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn laplace_variance_matches_two_scale_squared() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| laplace_sample(2.0, &mut rng).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var / 8.0 - 1.0).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn release_scales() {
        let budget = PrivacyBudget::new(1.0, 0.5).unwrap();
        let a = Truncation::new(0.05).unwrap();
        let agg = PartitionEstimates {
            per_partition: vec![(0.2, 0.01); 100],
            tau_bar: 0.2,
            v_bar: 0.01,
            fallback_indices: vec![],
        };
        let mut r1 = ChaCha20Rng::seed_from_u64(1);
        let mut r2 = ChaCha20Rng::seed_from_u64(2);
        let rel = privatize(&agg, budget, Estimand::Ate, a, 10_000, Some(3), &mut r1, &mut r2).unwrap();
        assert!((rel.scale_tau() - 0.04).abs() < 1e-15);
        // S_V = 1/(0.05 * 100) = 0.2 ; scale = 0.2 / (100 * 0.5)
        assert!((rel.scale_v() - 0.004).abs() < 1e-15);
        assert_eq!(rel.n_partition(), 100);
        assert!(!rel.fallback_used());
    }

    #[test]
    fn huge_epsilon_adds_vanishing_noise() {
        let budget = PrivacyBudget::new(1e6, 0.5).unwrap();
        let a = Truncation::new(0.05).unwrap();
        let agg = PartitionEstimates {
            per_partition: vec![(0.3, 0.02); 100],
            tau_bar: 0.3,
            v_bar: 0.02,
            fallback_indices: vec![],
        };
        for s in 0..100 {
            let mut r1 = ChaCha20Rng::seed_from_u64(s);
            let mut r2 = ChaCha20Rng::seed_from_u64(s + 1000);
            let rel = privatize(&agg, budget, Estimand::Att, a, 10_000, None, &mut r1, &mut r2).unwrap();
            assert!((rel.tau_private() - 0.3).abs() < 1e-4);
        }
    }

    #[test]
    fn ledger_accumulates() {
        let ledger = PrivacyLedger::new("d");
        let b = PrivacyBudget::new(0.5, 0.5).unwrap();
        assert_eq!(ledger.record("ate", &b), 0.5);
        assert_eq!(ledger.record("att", &b), 1.0);
        let snap = ledger.snapshot();
        assert_eq!(snap.entries.len(), 2);
        assert_eq!(snap.total_epsilon, 1.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.json");
        ledger.save(&path).unwrap();
        let back = PrivacyLedger::load_or_new(&path, "d").unwrap();
        assert_eq!(back.total_spent(), 1.0);
        assert!(PrivacyLedger::load_or_new(&path, "other").is_err());
    }

    proptest! {
        #[test]
        fn noise_is_antisymmetric(u in 1e-9f64..1.0 - 1e-9, scale in 1e-3f64..10.0) {
            prop_assert!((laplace_inverse_cdf(1.0 - u, scale) + laplace_inverse_cdf(u, scale)).abs() < 1e-9 * scale.max(1.0));
        }

        #[test]
        fn aggregating_copies_is_identity(tau in -1.0f64..1.0, v in 0.0f64..1.0, m in 1usize..50) {
            let outcomes: Vec<PartitionOutcome> = (0..m).map(|_| est(tau, v)).collect();
            let agg = aggregate(&outcomes, &mut ChaCha20Rng::seed_from_u64(0), 1.0).unwrap();
            prop_assert!((agg.tau_bar - tau).abs() < 1e-12);
            prop_assert!((agg.v_bar - v).abs() < 1e-12);
        }
    }
}
