//! Synthetic-data studies comparing the private and non-private pipelines.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::CausalDataset;
use crate::error::{param, Error, Result};
use crate::pipeline::{run_nonprivate, run_private, NonPrivateEstimate, PipelineConfig};
use crate::posterior::{PosteriorConfig, PosteriorSummary, SamplerMode};
use crate::privacy::PrivacyBudget;
use crate::propensity::{inv_logit, Truncation};
use crate::rng::{Stage, Streams};
use crate::wate::{Estimand, VarianceMode};

pub const P: usize = 4;
pub const DEFAULT_BETA: [f64; 5] = [0.15, -0.2, 0.3, -0.4, 0.6];
pub const HISTOGRAM_BINS: usize = 20;

/// Row-major `n x 4` standard normals with pairwise correlation `rho`.
pub fn generate_covariates<R: Rng + ?Sized>(n: usize, rho: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rho) {
        return param(format!("rho={rho} must lie in [0, 1)"));
    }
    let (shared, own) = (rho.sqrt(), (1.0 - rho).sqrt());
    let mut x = Vec::with_capacity(n * P);
    for _ in 0..n {
        let g: f64 = rng.sample(StandardNormal);
        for _ in 0..P {
            let e: f64 = rng.sample(StandardNormal);
            x.push(shared * g + own * e);
        }
    }
    Ok(x)
}

pub fn true_propensity(x: &[f64], eta: f64) -> f64 {
    inv_logit(0.1 + eta * (0.2 * x[0] + 0.5 * x[1] - 0.25 * x[2] - 0.45 * x[3]))
}

/// Draws treatments; returns them with the true propensities.
pub fn assign_treatment<R: Rng + ?Sized>(x: &[f64], eta: f64, rng: &mut R) -> (Vec<u8>, Vec<f64>) {
    let e: Vec<f64> = x.chunks_exact(P).map(|row| true_propensity(row, eta)).collect();
    let z = e.iter().map(|&p| u8::from(rng.random::<f64>() < p)).collect();
    (z, e)
}

pub fn outcome_probability(x: &[f64], z: u8, gamma: f64, beta: &[f64; 5]) -> f64 {
    let lin = beta[0] + beta[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
    inv_logit(lin + gamma * f64::from(z))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomes {
    pub y0: Vec<u8>,
    pub y1: Vec<u8>,
    pub y: Vec<u8>,
}

pub fn generate_outcomes<R: Rng + ?Sized>(
    x: &[f64],
    z: &[u8],
    gamma: f64,
    beta: &[f64; 5],
    rng: &mut R,
) -> PotentialOutcomes {
    let mut out = PotentialOutcomes { y0: Vec::new(), y1: Vec::new(), y: Vec::new() };
    for (row, &zi) in x.chunks_exact(P).zip(z) {
        let y0 = u8::from(rng.random::<f64>() < outcome_probability(row, 0, gamma, beta));
        let y1 = u8::from(rng.random::<f64>() < outcome_probability(row, 1, gamma, beta));
        out.y0.push(y0);
        out.y1.push(y1);
        out.y.push(if zi == 1 { y1 } else { y0 });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueEffects {
    pub ate: f64,
    pub att: f64,
    pub atc: f64,
}

impl TrueEffects {
    pub fn get(&self, estimand: Estimand) -> f64 {
        match estimand {
            Estimand::Ate => self.ate,
            Estimand::Att => self.att,
            Estimand::Atc => self.atc,
        }
    }
}

/// Averages of the conditional risk difference over all, treated and control
/// units.
pub fn true_effects(x: &[f64], z: &[u8], gamma: f64, beta: &[f64; 5]) -> Result<TrueEffects> {
    let (mut all, mut treated, mut control) = (0.0, 0.0, 0.0);
    let (mut nt, mut nc) = (0usize, 0usize);
    for (row, &zi) in x.chunks_exact(P).zip(z) {
        let d = outcome_probability(row, 1, gamma, beta) - outcome_probability(row, 0, gamma, beta);
        all += d;
        if zi == 1 {
            treated += d;
            nt += 1;
        } else {
            control += d;
            nc += 1;
        }
    }
    if nt == 0 || nc == 0 {
        return Err(Error::DegenerateSubset { treated: nt, control: nc });
    }
    Ok(TrueEffects { ate: all / z.len() as f64, att: treated / nt as f64, atc: control / nc as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub name: String,
    pub n: usize,
    pub rho: f64,
    pub eta: f64,
    pub gamma: f64,
    pub beta: [f64; 5],
    pub replications: usize,
    pub base_seed: u64,
    pub m: usize,
    pub a: f64,
    pub epsilon: f64,
    pub pi: f64,
    pub draws: usize,
    pub sampler: SamplerMode,
    pub estimands: Vec<Estimand>,
    pub variance_mode: VarianceMode,
    pub allow_fallback: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            name: "baseline".into(),
            n: 10_000,
            rho: 0.2,
            eta: 2.0,
            gamma: 1.0,
            beta: DEFAULT_BETA,
            replications: 100,
            base_seed: 1,
            m: 100,
            a: 0.05,
            epsilon: 1.0,
            pi: 0.5,
            draws: 10_000,
            sampler: SamplerMode::Exact,
            estimands: Estimand::ALL.to_vec(),
            variance_mode: VarianceMode::Fitted,
            allow_fallback: true,
        }
    }
}

impl SimulationConfig {
    pub fn pipeline(&self) -> Result<PipelineConfig> {
        if !(0.0..1.0).contains(&self.rho) {
            return param(format!("rho={} must lie in [0, 1)", self.rho));
        }
        if self.n < 100 {
            return param(format!("n={} must be at least 100", self.n));
        }
        if self.replications < 1 {
            return param("replications must be at least 1");
        }
        if self.estimands.is_empty() {
            return param("at least one estimand is required");
        }
        let cfg = PipelineConfig {
            m: self.m,
            truncation: Truncation::new(self.a)?,
            budget: PrivacyBudget::new(self.epsilon, self.pi)?,
            variance_mode: self.variance_mode,
            posterior: PosteriorConfig::with_sampler(self.sampler, self.draws),
            allow_fallback: self.allow_fallback,
        };
        cfg.validate(self.n)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub data: CausalDataset,
    pub propensity: Vec<f64>,
    pub outcomes: PotentialOutcomes,
    pub truth: TrueEffects,
}

pub fn simulate_data<R: Rng + ?Sized>(config: &SimulationConfig, rng: &mut R) -> Result<SimulatedData> {
    let x = generate_covariates(config.n, config.rho, rng)?;
    let (z, propensity) = assign_treatment(&x, config.eta, rng);
    let outcomes = generate_outcomes(&x, &z, config.gamma, &config.beta, rng);
    let truth = true_effects(&x, &z, config.gamma, &config.beta)?;
    let names = (1..=P).map(|j| format!("x{j}")).collect();
    let data = CausalDataset::with_names(outcomes.y.clone(), z, x, names)?;
    Ok(SimulatedData { data, propensity, outcomes, truth })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimandResult {
    pub estimand: Estimand,
    pub true_tau: f64,
    pub nonprivate: NonPrivateEstimate,
    pub private: PosteriorSummary,
    pub nonprivate_covers: bool,
    pub private_covers: bool,
    pub fallback_used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationResult {
    pub replication: usize,
    pub seed: u64,
    pub truth: TrueEffects,
    pub estimands: Vec<EstimandResult>,
}

pub fn run_replication(
    config: &SimulationConfig,
    pipeline: &PipelineConfig,
    replication: usize,
) -> Result<ReplicationResult> {
    let seed = config.base_seed.wrapping_add(replication as u64);
    let sim = simulate_data(config, &mut Streams::new(seed).stream(Stage::Simulation, 0))?;
    replicate_on(config, pipeline, replication, seed, &sim)
}

fn replicate_on(
    config: &SimulationConfig,
    pipeline: &PipelineConfig,
    replication: usize,
    seed: u64,
    sim: &SimulatedData,
) -> Result<ReplicationResult> {
    let nonprivate = run_nonprivate(&sim.data, &config.estimands, config.variance_mode)?;
    let private = run_private(&sim.data, &config.estimands, pipeline, seed, None)?;
    let estimands = nonprivate
        .into_iter()
        .zip(private)
        .map(|(np, p)| {
            let true_tau = sim.truth.get(np.estimand);
            EstimandResult {
                estimand: np.estimand,
                true_tau,
                nonprivate_covers: np.covers(true_tau),
                private_covers: p.summary.covers(true_tau),
                fallback_used: p.release.fallback_used(),
                nonprivate: np,
                private: p.summary,
            }
        })
        .collect();
    Ok(ReplicationResult { replication, seed, truth: sim.truth, estimands })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Private,
    NonPrivate,
}

impl Pipeline {
    pub fn as_str(self) -> &'static str {
        match self {
            Pipeline::Private => "private",
            Pipeline::NonPrivate => "non_private",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PipelineSummary {
    pub estimand: Estimand,
    pub pipeline: Pipeline,
    pub replications: usize,
    pub rmse: f64,
    pub coverage: f64,
    pub mean_ci_length: f64,
    pub mean_true_tau: f64,
    pub sd_true_tau: f64,
    /// Private only: mean absolute distance of the private point estimate
    /// from the full-data non-private estimate.
    pub mean_abs_diff_nonprivate: Option<f64>,
    pub fallback_replications: usize,
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len() as f64;
    xs.sum::<f64>() / n
}

/// Reduces replications to per-estimand, per-pipeline summaries. Panics on
/// an empty slice.
pub fn summarize_replications(results: &[ReplicationResult]) -> Vec<PipelineSummary> {
    assert!(!results.is_empty(), "no replications to summarize");
    let r = results.len();
    let mut out = Vec::new();
    for (j, first) in results[0].estimands.iter().enumerate() {
        let rows: Vec<&EstimandResult> = results.iter().map(|res| &res.estimands[j]).collect();
        let mean_true = mean(rows.iter().map(|e| e.true_tau));
        let sd_true = if r > 1 {
            (rows.iter().map(|e| (e.true_tau - mean_true).powi(2)).sum::<f64>() / (r - 1) as f64).sqrt()
        } else {
            0.0
        };
        let fallback = rows.iter().filter(|e| e.fallback_used).count();
        for pipeline in [Pipeline::Private, Pipeline::NonPrivate] {
            let (point, covers, length): (Vec<f64>, Vec<bool>, Vec<f64>) = match pipeline {
                Pipeline::Private => (
                    rows.iter().map(|e| e.private.point).collect(),
                    rows.iter().map(|e| e.private_covers).collect(),
                    rows.iter().map(|e| e.private.length()).collect(),
                ),
                Pipeline::NonPrivate => (
                    rows.iter().map(|e| e.nonprivate.tau_hat).collect(),
                    rows.iter().map(|e| e.nonprivate_covers).collect(),
                    rows.iter().map(|e| e.nonprivate.length()).collect(),
                ),
            };
            let mse = mean(point.iter().zip(&rows).map(|(p, e)| (p - e.true_tau).powi(2)));
            out.push(PipelineSummary {
                estimand: first.estimand,
                pipeline,
                replications: r,
                rmse: mse.sqrt(),
                coverage: covers.iter().filter(|&&c| c).count() as f64 / r as f64,
                mean_ci_length: mean(length.into_iter()),
                mean_true_tau: mean_true,
                sd_true_tau: sd_true,
                mean_abs_diff_nonprivate: (pipeline == Pipeline::Private)
                    .then(|| mean(rows.iter().map(|e| (e.private.point - e.nonprivate.tau_hat).abs()))),
                fallback_replications: if pipeline == Pipeline::Private { fallback } else { 0 },
            });
        }
    }
    out
}

/// Counts of true propensities in equal-width bins on `[0, 1]`, per arm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapHistogram {
    pub bin_edges: Vec<f64>,
    pub treated: Vec<u64>,
    pub control: Vec<u64>,
}

impl OverlapHistogram {
    pub fn new() -> Self {
        Self {
            bin_edges: (0..=HISTOGRAM_BINS).map(|k| k as f64 / HISTOGRAM_BINS as f64).collect(),
            treated: vec![0; HISTOGRAM_BINS],
            control: vec![0; HISTOGRAM_BINS],
        }
    }

    pub fn add(&mut self, propensity: &[f64], z: &[u8]) {
        for (&e, &zi) in propensity.iter().zip(z) {
            let bin = ((e * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
            if zi == 1 {
                self.treated[bin] += 1;
            } else {
                self.control[bin] += 1;
            }
        }
    }

    fn merge(mut self, other: &Self) -> Self {
        for k in 0..HISTOGRAM_BINS {
            self.treated[k] += other.treated[k];
            self.control[k] += other.control[k];
        }
        self
    }
}

impl Default for OverlapHistogram {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StudySummary {
    pub config: SimulationConfig,
    pub completed: usize,
    pub failures: usize,
    pub failure_messages: Vec<String>,
    pub mean_overlap_distance: f64,
    pub summaries: Vec<PipelineSummary>,
    pub overlap: OverlapHistogram,
    #[serde(skip)]
    pub replications: Vec<ReplicationResult>,
}

impl StudySummary {
    pub fn get(&self, estimand: Estimand, pipeline: Pipeline) -> Option<&PipelineSummary> {
        self.summaries.iter().find(|s| s.estimand == estimand && s.pipeline == pipeline)
    }
}

struct ReplicationOutput {
    result: Result<ReplicationResult>,
    overlap: OverlapHistogram,
    overlap_distance: f64,
}

/// Runs all replications in parallel and reduces them in replication order.
/// A failing replication is counted, not fatal.
pub fn run_study(config: &SimulationConfig) -> Result<StudySummary> {
    let pipeline = config.pipeline()?;
    let outputs: Vec<ReplicationOutput> = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let seed = config.base_seed.wrapping_add(r as u64);
            let mut overlap = OverlapHistogram::new();
            match simulate_data(config, &mut Streams::new(seed).stream(Stage::Simulation, 0)) {
                Ok(sim) => {
                    overlap.add(&sim.propensity, sim.data.treatments());
                    let overlap_distance = mean(sim.propensity.iter().map(|e| (e - 0.5).abs()));
                    ReplicationOutput {
                        result: replicate_on(config, &pipeline, r, seed, &sim),
                        overlap,
                        overlap_distance,
                    }
                }
                Err(e) => ReplicationOutput { result: Err(e), overlap, overlap_distance: f64::NAN },
            }
        })
        .collect();

    let overlap = outputs.iter().fold(OverlapHistogram::new(), |acc, o| acc.merge(&o.overlap));
    let distances: Vec<f64> = outputs.iter().map(|o| o.overlap_distance).filter(|d| d.is_finite()).collect();
    let mean_overlap_distance = if distances.is_empty() { f64::NAN } else { mean(distances.into_iter()) };
    let mut replications = Vec::new();
    let mut failure_messages = Vec::new();
    for (r, o) in outputs.into_iter().enumerate() {
        match o.result {
            Ok(res) => replications.push(res),
            Err(e) => failure_messages.push(format!("replication {r}: {e}")),
        }
    }
    let summaries = if replications.is_empty() { Vec::new() } else { summarize_replications(&replications) };
    Ok(StudySummary {
        config: config.clone(),
        completed: replications.len(),
        failures: failure_messages.len(),
        failure_messages,
        mean_overlap_distance,
        summaries,
        overlap,
        replications,
    })
}

/// A study key that is either one value or a list to sweep over.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn values(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// Flat study file. Keys given as arrays are swept; the scenarios are the
/// Cartesian product of all swept keys.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    pub name: Option<String>,
    pub n: Option<OneOrMany<usize>>,
    pub rho: Option<OneOrMany<f64>>,
    pub eta: Option<OneOrMany<f64>>,
    pub gamma: Option<OneOrMany<f64>>,
    pub m: Option<OneOrMany<usize>>,
    pub a: Option<OneOrMany<f64>>,
    pub epsilon: Option<OneOrMany<f64>>,
    pub pi: Option<OneOrMany<f64>>,
    pub beta: Option<[f64; 5]>,
    pub replications: Option<usize>,
    pub base_seed: Option<u64>,
    pub draws: Option<usize>,
    pub sampler: Option<SamplerMode>,
    pub estimands: Option<Vec<Estimand>>,
    pub variance_mode: Option<VarianceMode>,
    pub allow_fallback: Option<bool>,
}

impl StudyFile {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn scenarios(&self) -> Result<Vec<SimulationConfig>> {
        let mut base = SimulationConfig::default();
        if let Some(v) = &self.name {
            base.name = v.clone();
        }
        if let Some(v) = self.beta {
            base.beta = v;
        }
        if let Some(v) = self.replications {
            base.replications = v;
        }
        if let Some(v) = self.base_seed {
            base.base_seed = v;
        }
        if let Some(v) = self.draws {
            base.draws = v;
        }
        if let Some(v) = self.sampler {
            base.sampler = v;
        }
        if let Some(v) = &self.estimands {
            base.estimands = v.clone();
        }
        if let Some(v) = self.variance_mode {
            base.variance_mode = v;
        }
        if let Some(v) = self.allow_fallback {
            base.allow_fallback = v;
        }

        let mut scenarios = vec![(base, Vec::<String>::new())];
        fn sweep<T: Clone + std::fmt::Display>(
            scenarios: Vec<(SimulationConfig, Vec<String>)>,
            key: &str,
            values: &Option<OneOrMany<T>>,
            set: impl Fn(&mut SimulationConfig, T),
        ) -> Vec<(SimulationConfig, Vec<String>)> {
            let Some(values) = values else { return scenarios };
            let swept = matches!(values, OneOrMany::Many(_));
            let mut out = Vec::new();
            for (cfg, tags) in scenarios {
                for v in values.values() {
                    let mut c = cfg.clone();
                    let mut t = tags.clone();
                    if swept {
                        t.push(format!("{key}={v}"));
                    }
                    set(&mut c, v);
                    out.push((c, t));
                }
            }
            out
        }
        scenarios = sweep(scenarios, "n", &self.n, |c, v| c.n = v);
        scenarios = sweep(scenarios, "rho", &self.rho, |c, v| c.rho = v);
        scenarios = sweep(scenarios, "eta", &self.eta, |c, v| c.eta = v);
        scenarios = sweep(scenarios, "gamma", &self.gamma, |c, v| c.gamma = v);
        scenarios = sweep(scenarios, "m", &self.m, |c, v| c.m = v);
        scenarios = sweep(scenarios, "a", &self.a, |c, v| c.a = v);
        scenarios = sweep(scenarios, "epsilon", &self.epsilon, |c, v| c.epsilon = v);
        scenarios = sweep(scenarios, "pi", &self.pi, |c, v| c.pi = v);
        if scenarios.is_empty() {
            return Err(Error::Config("a swept key has an empty list".into()));
        }
        scenarios
            .into_iter()
            .map(|(mut cfg, tags)| {
                if !tags.is_empty() {
                    cfg.name = format!("{}[{}]", cfg.name, tags.join(","));
                }
                cfg.pipeline()?;
                Ok(cfg)
            })
            .collect()
    }
}

/// Maps scenario name to its summary, for reports.
pub fn index_by_name(studies: &[StudySummary]) -> BTreeMap<&str, &StudySummary> {
    studies.iter().map(|s| (s.config.name.as_str(), s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn corr(x: &[f64], j: usize, k: usize) -> f64 {
        let n = x.len() / P;
        let col = |c: usize| x.iter().skip(c).step_by(P).copied().collect::<Vec<_>>();
        let (a, b) = (col(j), col(k));
        let (ma, mb) = (a.iter().sum::<f64>() / n as f64, b.iter().sum::<f64>() / n as f64);
        let cov: f64 = a.iter().zip(&b).map(|(u, v)| (u - ma) * (v - mb)).sum();
        let va: f64 = a.iter().map(|u| (u - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|v| (v - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn covariate_moments() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let x = generate_covariates(100_000, 0.2, &mut rng).unwrap();
        for j in 0..P {
            for k in j + 1..P {
                assert!((corr(&x, j, k) - 0.2).abs() < 0.02);
            }
        }
        let x = generate_covariates(10_000, 0.0, &mut rng).unwrap();
        for j in 0..P {
            let m: f64 = x.iter().skip(j).step_by(P).sum::<f64>() / 10_000.0;
            assert!(m.abs() < 0.03);
            for k in j + 1..P {
                assert!(corr(&x, j, k).abs() < 0.05);
            }
        }
        assert!(generate_covariates(10, 1.0, &mut rng).is_err());
        assert!(generate_covariates(10, -0.1, &mut rng).is_err());
    }

    #[test]
    fn propensity_and_outcome_closed_forms() {
        let zero = [0.0; 4];
        assert!((true_propensity(&zero, 2.0) - 0.524_979_187_478_939_8).abs() < 1e-12);
        let d = outcome_probability(&zero, 1, 1.0, &DEFAULT_BETA) - outcome_probability(&zero, 0, 1.0, &DEFAULT_BETA);
        assert!((d - 0.2221).abs() < 1e-4);
    }

    #[test]
    fn treated_fraction_and_overlap() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let x = generate_covariates(10_000, 0.2, &mut rng).unwrap();
        let (z2, e2) = assign_treatment(&x, 2.0, &mut rng);
        let frac = z2.iter().map(|&v| f64::from(v)).sum::<f64>() / 10_000.0;
        assert!(frac > 0.45 && frac < 0.60, "{frac}");
        let (_, e4) = assign_treatment(&x, 4.0, &mut rng);
        let dist = |e: &[f64]| e.iter().map(|p| (p - 0.5).abs()).sum::<f64>() / e.len() as f64;
        assert!(dist(&e4) > dist(&e2));
    }

    #[test]
    fn outcomes_consistent_and_null_effect() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let x = generate_covariates(2_000, 0.2, &mut rng).unwrap();
        let (z, _) = assign_treatment(&x, 2.0, &mut rng);
        let o = generate_outcomes(&x, &z, 0.0, &DEFAULT_BETA, &mut rng);
        for (i, &zi) in z.iter().enumerate() {
            assert_eq!(o.y[i], if zi == 1 { o.y1[i] } else { o.y0[i] });
        }
        let t = true_effects(&x, &z, 0.0, &DEFAULT_BETA).unwrap();
        assert_eq!((t.ate, t.att, t.atc), (0.0, 0.0, 0.0));
        assert!(true_effects(&x[..8], &[1, 1], 1.0, &DEFAULT_BETA).is_err());
    }

    fn fake(true_tau: f64, np: f64, p: f64, half: f64) -> ReplicationResult {
        let nonprivate =
            NonPrivateEstimate { estimand: Estimand::Ate, tau_hat: np, v_hat: 0.0, lower: np - half, upper: np + half };
        let private = PosteriorSummary {
            point: p,
            lower: p - 2.0 * half,
            upper: p + 2.0 * half,
            draws_count: 1,
            sampler: SamplerMode::Exact,
            draws: vec![],
            tau_bar_draws: vec![],
            v_bar_draws: vec![],
        };
        ReplicationResult {
            replication: 0,
            seed: 0,
            truth: TrueEffects { ate: true_tau, att: true_tau, atc: true_tau },
            estimands: vec![EstimandResult {
                estimand: Estimand::Ate,
                true_tau,
                nonprivate_covers: nonprivate.covers(true_tau),
                private_covers: private.covers(true_tau),
                fallback_used: false,
                nonprivate,
                private,
            }],
        }
    }

    #[test]
    fn summary_of_one_replication_is_that_replication() {
        let s = summarize_replications(&[fake(0.2, 0.25, 0.1, 0.04)]);
        let np = s.iter().find(|s| s.pipeline == Pipeline::NonPrivate).unwrap();
        let p = s.iter().find(|s| s.pipeline == Pipeline::Private).unwrap();
        assert!((np.rmse - 0.05).abs() < 1e-15 && np.coverage == 0.0);
        assert!((p.rmse - 0.1).abs() < 1e-15 && p.coverage == 0.0);
        assert!((p.mean_ci_length - 0.16).abs() < 1e-15);
        assert_eq!(p.mean_true_tau, 0.2);
        assert_eq!(p.sd_true_tau, 0.0);
    }

    #[test]
    fn two_replication_hand_computation() {
        // errors 0.03 and -0.04: rmse = sqrt((0.0009 + 0.0016) / 2)
        let s = summarize_replications(&[fake(0.2, 0.23, 0.2, 0.05), fake(0.3, 0.26, 0.3, 0.05)]);
        let np = s.iter().find(|s| s.pipeline == Pipeline::NonPrivate).unwrap();
        assert!((np.rmse - (0.0025f64 / 2.0).sqrt()).abs() < 1e-15);
        assert_eq!(np.coverage, 1.0);
        assert!((np.mean_true_tau - 0.25).abs() < 1e-15);
        assert!((np.sd_true_tau - 0.005f64.sqrt()).abs() < 1e-12);
        let p = s.iter().find(|s| s.pipeline == Pipeline::Private).unwrap();
        assert!((p.mean_abs_diff_nonprivate.unwrap() - 0.035).abs() < 1e-15);
    }

    #[test]
    fn study_file_expansion() {
        let f = StudyFile::from_toml_str("name = \"sweep\"\nm = [50, 100, 200]\neta = 4\nreplications = 3\n").unwrap();
        let s = f.scenarios().unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.iter().map(|c| c.m).collect::<Vec<_>>(), vec![50, 100, 200]);
        assert!(s.iter().all(|c| c.eta == 4.0 && c.replications == 3));
        assert_eq!(s[0].name, "sweep[m=50]");
        let f = StudyFile::from_toml_str("epsilon = [0.5, 1.0]\na = [0.03, 0.1]\n").unwrap();
        assert_eq!(f.scenarios().unwrap().len(), 4);
        assert!(StudyFile::from_toml_str("unknown = 1\n").is_err());
        assert!(StudyFile::from_toml_str("rho = 1.5\n").unwrap().scenarios().is_err());
    }
}
