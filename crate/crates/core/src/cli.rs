//! Command-line front end: `analyze`, `simulate` and `plan`.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use serde::Deserialize;

use crate::dataset::{count_csv_records, random_partition, read_csv, Schema};
use crate::diagnostics::{plan_m, PlanInput, PlanReport, DEFAULT_PLAN_TRUNCATION};
use crate::error::{param, Error, Result};
use crate::pipeline::{run_private, PipelineConfig};
use crate::posterior::{PosteriorConfig, SamplerMode};
use crate::privacy::{PrivacyBudget, PrivacyLedger};
use crate::propensity::Truncation;
use crate::report::{
    to_json_string, write_overlap_csv, write_study_csv, AnalysisReport, DebugSection, DebugTrace, EstimandReport,
    PublicParameters, DEBUG_WARNING,
};
use crate::rng::{Stage, Streams};
use crate::simlab::{run_study, StudyFile, StudySummary};
use crate::wate::{Estimand, VarianceMode};

pub const DEFAULT_M: usize = 100;
pub const DEFAULT_PI: f64 = 0.5;
pub const DEFAULT_DRAWS: usize = 10_000;

#[derive(Debug, Parser)]
#[command(name = "dpwate", version, about = "Differentially private weighted average treatment effects")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Private point and interval estimates for a CSV dataset.
    Analyze(Box<AnalyzeArgs>),
    /// Run a simulation study described by a TOML file.
    Simulate(SimulateArgs),
    /// Recommend the number of partitions for a target margin of error.
    Plan(PlanArgs),
}

#[derive(Debug, Args, Default)]
pub struct AnalyzeArgs {
    /// TOML file with the same keys as the flags; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// TOML column mapping; defaults to outcome `y`, treatment `z`, all other
    /// columns numeric covariates.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long, value_parser = ["ate", "att", "atc", "all"])]
    pub estimand: Option<String>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub pi: Option<f64>,
    #[arg(long)]
    pub draws: Option<usize>,
    /// Without a seed the run is seeded from the operating system.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = ["exact", "mcmc"])]
    pub sampler: Option<String>,
    #[arg(long, value_parser = ["fitted", "conservative"])]
    pub variance_mode: Option<String>,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Cumulative privacy ledger file, created if missing.
    #[arg(long)]
    pub ledger: Option<PathBuf>,
    /// Write the (row_index, partition_index) assignment as CSV.
    #[arg(long)]
    pub partition_out: Option<PathBuf>,
    /// Include confidential intermediates and the seed in the report.
    #[arg(long)]
    pub unsafe_debug: bool,
    /// Replace degenerate partitions with uniform draws instead of failing.
    #[arg(long)]
    pub allow_fallback: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalyzeFile {
    input: Option<PathBuf>,
    schema: Option<PathBuf>,
    estimand: Option<String>,
    m: Option<usize>,
    a: Option<f64>,
    epsilon: Option<f64>,
    pi: Option<f64>,
    draws: Option<usize>,
    seed: Option<u64>,
    sampler: Option<String>,
    variance_mode: Option<String>,
    out: Option<PathBuf>,
    ledger: Option<PathBuf>,
    partition_out: Option<PathBuf>,
    unsafe_debug: Option<bool>,
    allow_fallback: Option<bool>,
}

/// Fully resolved settings of one `analyze` run.
#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub input: PathBuf,
    pub schema: Option<PathBuf>,
    pub estimands: Vec<Estimand>,
    pub pipeline: PipelineConfig,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub ledger: Option<PathBuf>,
    pub partition_out: Option<PathBuf>,
    pub unsafe_debug: bool,
}

fn parse_estimands(s: &str) -> Result<Vec<Estimand>> {
    if s.eq_ignore_ascii_case("all") {
        Ok(Estimand::ALL.to_vec())
    } else {
        Ok(vec![s.parse()?])
    }
}

fn parse_variance_mode(s: &str) -> Result<VarianceMode> {
    match s {
        "fitted" => Ok(VarianceMode::Fitted),
        "conservative" => Ok(VarianceMode::Conservative),
        other => param(format!("unknown variance mode `{other}`")),
    }
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl AnalysisConfig {
    /// Merges flags over the config file over defaults and validates every
    /// parameter that does not depend on the data.
    pub fn resolve(args: AnalyzeArgs) -> Result<Self> {
        let file: AnalyzeFile = match &args.config {
            Some(p) => read_toml(p)?,
            None => AnalyzeFile::default(),
        };
        let input = args.input.or(file.input).ok_or_else(|| Error::Parameter("--input is required".into()))?;
        let epsilon = args.epsilon.or(file.epsilon).ok_or_else(|| Error::Parameter("--epsilon is required".into()))?;
        let estimands = parse_estimands(args.estimand.as_deref().or(file.estimand.as_deref()).unwrap_or("ate"))?;
        let sampler: SamplerMode = args.sampler.as_deref().or(file.sampler.as_deref()).unwrap_or("exact").parse()?;
        let variance_mode =
            parse_variance_mode(args.variance_mode.as_deref().or(file.variance_mode.as_deref()).unwrap_or("fitted"))?;
        let m = args.m.or(file.m).unwrap_or(DEFAULT_M);
        if m < 1 {
            return param("--m must be at least 1");
        }
        let pipeline = PipelineConfig {
            m,
            truncation: Truncation::new(args.a.or(file.a).unwrap_or(DEFAULT_PLAN_TRUNCATION))?,
            budget: PrivacyBudget::new(epsilon, args.pi.or(file.pi).unwrap_or(DEFAULT_PI))?,
            variance_mode,
            posterior: PosteriorConfig::with_sampler(sampler, args.draws.or(file.draws).unwrap_or(DEFAULT_DRAWS)),
            allow_fallback: args.allow_fallback || file.allow_fallback.unwrap_or(false),
        };
        pipeline.posterior.validate()?;
        Ok(Self {
            input,
            schema: args.schema.or(file.schema),
            estimands,
            pipeline,
            seed: args.seed.or(file.seed),
            out: args.out.or(file.out),
            ledger: args.ledger.or(file.ledger),
            partition_out: args.partition_out.or(file.partition_out),
            unsafe_debug: args.unsafe_debug || file.unsafe_debug.unwrap_or(false),
        })
    }
}

/// Runs the private analysis and returns the report. Parameters are checked
/// against the record count before any value is parsed.
pub fn cmd_analyze(cfg: &AnalysisConfig) -> Result<AnalysisReport> {
    let records = count_csv_records(&cfg.input)?;
    cfg.pipeline.validate(records)?;
    let schema = match &cfg.schema {
        Some(p) => Schema::from_toml_file(p)?,
        None => Schema::default(),
    };
    let (data, summary) = read_csv(File::open(&cfg.input)?, &schema)?;
    cfg.pipeline.validate(data.len())?;

    let dataset_id = cfg.input.canonicalize().unwrap_or_else(|_| cfg.input.clone()).display().to_string();
    let ledger = match &cfg.ledger {
        Some(p) => PrivacyLedger::load_or_new(p, &dataset_id)?,
        None => PrivacyLedger::new(dataset_id),
    };
    let seed = cfg.seed.unwrap_or_else(|| rand::rng().random());
    let outcomes = run_private(&data, &cfg.estimands, &cfg.pipeline, seed, Some(&ledger))?;
    if let Some(p) = &cfg.ledger {
        ledger.save(p)?;
    }
    if let Some(p) = &cfg.partition_out {
        let parts = random_partition(data.len(), cfg.pipeline.m, &mut Streams::new(seed).stream(Stage::Partition, 0))?;
        parts.write_csv(File::create(p)?)?;
    }
    let unsafe_debug = cfg.unsafe_debug.then(|| DebugSection {
        warning: DEBUG_WARNING,
        seed,
        traces: outcomes
            .iter()
            .map(|o| DebugTrace { estimand: o.release.estimand(), trace: o.trace.clone() })
            .collect(),
    });
    Ok(AnalysisReport {
        tool: "dpwate",
        version: env!("CARGO_PKG_VERSION"),
        parameters: PublicParameters::new(&cfg.pipeline, data.len()),
        rows_read: summary.rows_read,
        rows_dropped_missing: summary.rows_dropped_missing,
        estimates: outcomes.iter().map(EstimandReport::new).collect(),
        ledger: ledger.snapshot(),
        unsafe_debug,
    })
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Study file; keys given as arrays are swept.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for study.json, study.csv and overlap.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the replication count of every scenario.
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Vec<StudySummary>> {
    let mut file = StudyFile::from_toml_file(&args.config)?;
    if args.replications.is_some() {
        file.replications = args.replications;
    }
    if args.seed.is_some() {
        file.base_seed = args.seed;
    }
    let scenarios = file.scenarios()?;
    let studies = scenarios.iter().map(run_study).collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("study.json"), to_json_string(&studies)?)?;
    write_study_csv(&studies, File::create(args.out.join("study.csv"))?)?;
    write_overlap_csv(&studies, File::create(args.out.join("overlap.csv"))?)?;
    Ok(studies)
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_PI)]
    pub pi: f64,
    #[arg(long, default_value_t = DEFAULT_PLAN_TRUNCATION)]
    pub a: f64,
    #[arg(long)]
    pub n: usize,
    /// Target half-width of the 95% interval.
    #[arg(long)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.5)]
    pub treated_fraction: f64,
    /// Fail instead of falling back to the simplified formula.
    #[arg(long)]
    pub strict: bool,
}

pub fn cmd_plan(args: &PlanArgs) -> Result<PlanReport> {
    let mut input = PlanInput::new(args.epsilon, args.pi, args.a, args.n, args.delta);
    input.treated_fraction = args.treated_fraction;
    input.allow_simplified = !args.strict;
    plan_m(input)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn error_json(kind: &str, message: &str, code: i32) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message, "exit_code": code } }).to_string()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze(args) => {
            let cfg = AnalysisConfig::resolve(*args)?;
            let report = cmd_analyze(&cfg)?;
            emit(cfg.out.as_deref(), &to_json_string(&report)?)
        }
        Command::Simulate(args) => {
            let studies = cmd_simulate(&args)?;
            let mut csv = Vec::new();
            write_study_csv(&studies, &mut csv)?;
            emit(None, &String::from_utf8_lossy(&csv))
        }
        Command::Plan(args) => emit(None, &to_json_string(&cmd_plan(&args)?)?),
    }
}

/// Parses the process arguments, runs, and returns the exit code. Errors go
/// to stderr as one JSON object.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            eprintln!("{}", error_json("usage", e.to_string().trim(), 2));
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("{}", error_json(e.kind(), &e.to_string(), code));
            code
        }
    }
}
