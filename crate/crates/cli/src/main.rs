//! `seqtte` command-line front end.
//!
//! Exit codes: 0 on success, 2 on configuration or input errors, 3 when
//! estimation fails at run time. Artifacts are written only after every
//! output has been computed.

mod artifacts;
mod presets;

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use artifacts::Artifacts;
use seqtte::benchmark::{
    run_bias_study, run_coverage_study, run_lookback_sweep, sweep_csv, BenchError, BiasStudyConfig, CoverageConfig,
    SweepConfig,
};
use seqtte::domain::{EligibilityRule, SubjectRecord};
use seqtte::expansion::{expand, Mode, PooledTable};
use seqtte::inference::{bootstrap_table, intervals, InferenceError};
use seqtte::io;
use seqtte::pipeline::{analyze_table, fit_weights, AnalysisConfig, PipelineError, WeightPlan};
use seqtte::provenance::{config_hash, Provenance};
use seqtte::simulator::{simulate, Mechanism, SimConfig};
use seqtte::weights::{summarize, WeightModelSpec, WeightTarget};

#[derive(Parser)]
#[command(
    name = "seqtte",
    version,
    about = "Sequential target-trial emulation with selection weights for missing eligibility data",
    long_about = "Sequential target-trial emulation with inverse probability weights for missing eligibility \
                  data, a plasmode simulator of health-record cohorts, and a Monte-Carlo benchmark harness.\n\n\
                  Exit codes: 0 success, 2 configuration or input error, 3 estimation failure."
)]
struct Cli {
    /// Maximum number of worker threads. Defaults to all available cores.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a cohort and write the subjects/measurements CSV pair plus provenance.json.
    Simulate(SimulateArgs),
    /// Expand a cohort into the pooled person-trial-period table.
    Expand(ExpandArgs),
    /// Fit the configured weight models and write per-row weights plus diagnostics.
    Weights(WeightsArgs),
    /// Fit the weighted marginal structural model and print the treatment log hazard ratio as JSON.
    Estimate(EstimateArgs),
    /// Subject-level bootstrap: replicate estimates plus normal, pivotal and percentile intervals.
    Bootstrap(BootstrapArgs),
    /// Monte-Carlo studies driven by the simulator.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Ascertainment counts and estimates over a grid of BMI and A1c lookback windows.
    Sweep(SweepArgs),
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Bias of each weight specification against the full-data reference value.
    Bias(BenchBiasArgs),
    /// Empirical coverage of bootstrap confidence intervals.
    Coverage(BenchCoverageArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    /// Per-protocol: follow-up is artificially censored at the first deviation from baseline treatment.
    Pp,
    /// Intention-to-treat analogue: baseline treatment only, deviations ignored.
    Itt,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Pp => Mode::Pp,
            ModeArg::Itt => Mode::Itt,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum WeightArg {
    /// No weights at all.
    None,
    /// Selection weights for ascertained eligibility (W^R).
    R,
    /// Baseline confounding weights (W^A).
    A,
    /// Non-adherence weights (W^N).
    N,
    /// Censoring weights (W^C).
    C,
}

#[derive(Clone, Copy, ValueEnum)]
enum MechanismArg {
    MBias,
    EffectHeterogeneity,
    MBiasMediator,
}

impl From<MechanismArg> for Mechanism {
    fn from(m: MechanismArg) -> Self {
        match m {
            MechanismArg::MBias => Mechanism::MBias,
            MechanismArg::EffectHeterogeneity => Mechanism::EffectHeterogeneity,
            MechanismArg::MBiasMediator => Mechanism::MBiasMediator,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation configuration JSON, or the name of a shipped preset (e.g. study1_mbias).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Name of a shipped simulation preset; used when --config is absent.
    #[arg(long, value_name = "NAME", default_value = "study1_mbias")]
    preset: String,
    /// Output directory for subjects.csv, measurements.csv and provenance.json.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Master seed; per-subject random streams are derived from (seed, subject index).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of simulated subjects K.
    #[arg(long = "subjects", value_name = "K")]
    k: Option<usize>,
    /// Also write the unmasked cohort (every monthly measurement) as full_subjects.csv and full_measurements.csv.
    #[arg(long)]
    full: bool,
}

#[derive(Args)]
struct AnalysisArgs {
    /// Analysis configuration JSON (trials, T_max, rule, mode, weights, baseline_hazard, dictionary),
    /// or a preset name such as analysis_study1. Defaults to 12 trials over 36 months, the
    /// BMI >= 35 and A1c >= 5.7 rule, per-protocol, no weights.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Eligibility rule JSON replacing the rule of --config.
    #[arg(long, value_name = "PATH")]
    rule: Option<PathBuf>,
    /// Estimand.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Number of emulated trials M; trial m starts at month m - 1.
    #[arg(long, value_name = "M")]
    trials: Option<u32>,
    /// Study length in months.
    #[arg(long, value_name = "MONTHS")]
    t_max: Option<u32>,
    /// Months before each trial start searched for the most recent BMI measurement (>= 1).
    #[arg(long, value_name = "MONTHS", allow_hyphen_values = true)]
    bmi_lookback: Option<i64>,
    /// Months before each trial start searched for the most recent A1c measurement (>= 1).
    #[arg(long, value_name = "MONTHS", allow_hyphen_values = true)]
    a1c_lookback: Option<i64>,
    /// Comma-separated weight components to fit. Components missing from --config use default covariates.
    #[arg(long, value_enum, value_delimiter = ',')]
    weights: Option<Vec<WeightArg>>,
    /// Fit the selection (R) model separately within each baseline treatment arm.
    #[arg(long)]
    stratify_r: bool,
}

#[derive(Args)]
struct ExpandArgs {
    /// Directory holding subjects.csv and measurements.csv.
    #[arg(long, value_name = "DIR")]
    in_dir: PathBuf,
    #[command(flatten)]
    analysis: AnalysisArgs,
    /// Output path of the pooled CSV.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args)]
struct WeightsArgs {
    /// Directory holding subjects.csv and measurements.csv.
    #[arg(long, value_name = "DIR")]
    in_dir: PathBuf,
    #[command(flatten)]
    analysis: AnalysisArgs,
    /// Output directory for weights.csv and diagnostics.json.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// Directory holding subjects.csv and measurements.csv.
    #[arg(long, value_name = "DIR")]
    in_dir: PathBuf,
    #[command(flatten)]
    analysis: AnalysisArgs,
    /// Write the JSON result here instead of standard output.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BootstrapArgs {
    /// Directory holding subjects.csv and measurements.csv.
    #[arg(long, value_name = "DIR")]
    in_dir: PathBuf,
    #[command(flatten)]
    analysis: AnalysisArgs,
    /// Number of bootstrap replicates B (each resamples K subjects with replacement).
    #[arg(long, value_name = "B", default_value_t = 200)]
    replicates: usize,
    /// Seed; replicate b draws from the stream (seed, b).
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Confidence level of the intervals.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Output directory for replicates.csv and intervals.json.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BenchBiasArgs {
    /// Bias-study configuration JSON (one study or a list), or a preset name.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Shipped preset: bias_study1 (BMI and A1c criteria) or bias_study2 (BMI criterion only);
    /// used when --config is absent.
    #[arg(long, value_name = "NAME", default_value = "bias_study1")]
    preset: String,
    /// Number of simulated datasets per study.
    #[arg(long)]
    replicates: Option<usize>,
    /// Base seed; replicate r simulates with a seed derived from (seed, r).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of simulated subjects K per dataset.
    #[arg(long = "subjects", value_name = "K")]
    k: Option<usize>,
    /// Run only this missingness mechanism.
    #[arg(long, value_enum)]
    mechanism: Option<MechanismArg>,
    /// Months before each trial start searched for the most recent BMI measurement (>= 1).
    #[arg(long, value_name = "MONTHS")]
    bmi_lookback: Option<u32>,
    /// Months before each trial start searched for the most recent A1c measurement (>= 1).
    #[arg(long, value_name = "MONTHS")]
    a1c_lookback: Option<u32>,
    /// Output directory for bias_table.md, bias_table.csv, per-replicate CSVs and provenance.json.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BenchCoverageArgs {
    /// Coverage-study configuration JSON (one study or a list), or a preset name.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Shipped preset, used when --config is absent.
    #[arg(long, value_name = "NAME", default_value = "coverage")]
    preset: String,
    /// Number of simulated datasets.
    #[arg(long)]
    replicates: Option<usize>,
    /// Bootstrap replicates B per dataset.
    #[arg(long = "bootstrap", value_name = "B")]
    b: Option<usize>,
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of simulated subjects K per dataset.
    #[arg(long = "subjects", value_name = "K")]
    k: Option<usize>,
    /// Run only this missingness mechanism.
    #[arg(long, value_enum)]
    mechanism: Option<MechanismArg>,
    /// Output directory for coverage.md, coverage.csv, coverage_intervals.csv and provenance.json.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep configuration JSON or preset name.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Shipped preset; used when --config is absent.
    #[arg(long, value_name = "NAME", default_value = "sweep")]
    preset: String,
    /// Number of simulated datasets.
    #[arg(long)]
    replicates: Option<usize>,
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of simulated subjects K.
    #[arg(long = "subjects", value_name = "K")]
    k: Option<usize>,
    /// Output directory for sweep.csv and provenance.json.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

/// Failure class, mapped to the process exit code.
#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Runtime(m) => write!(f, "estimation failed: {m}"),
        }
    }
}

type Out<T> = Result<T, Failure>;

fn config_err(e: impl Display) -> Failure {
    Failure::Config(e.to_string())
}

fn pipeline_err(e: PipelineError) -> Failure {
    if e.is_config() {
        Failure::Config(e.to_string())
    } else {
        Failure::Runtime(e.to_string())
    }
}

fn bench_err(e: BenchError) -> Failure {
    if e.is_config() {
        Failure::Config(e.to_string())
    } else {
        Failure::Runtime(e.to_string())
    }
}

fn io_failure(e: anyhow::Error) -> Failure {
    Failure::Runtime(format!("{e:#}"))
}

/// Parses JSON with the offending field path in the error message.
fn parse_json<T: DeserializeOwned>(source: &str, text: &str) -> Out<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Failure::Config(format!("{source}: {path}: {}", e.inner()))
    })
}

/// Reads `path` as JSON; a value naming a shipped preset loads that preset.
fn load<T: DeserializeOwned>(path: Option<&Path>, preset: Option<&str>) -> Out<(T, String)> {
    match (path, preset) {
        (Some(p), _) => {
            if !p.exists() {
                if let Some(text) = presets::get(&p.to_string_lossy()) {
                    return Ok((parse_json(&p.to_string_lossy(), text)?, p.display().to_string()));
                }
            }
            let text = std::fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            Ok((parse_json(&p.display().to_string(), &text)?, p.display().to_string()))
        }
        (None, Some(name)) => {
            let text = presets::get(name).ok_or_else(|| {
                config_err(format!("unknown preset `{name}`; available: {}", presets::names().join(", ")))
            })?;
            Ok((parse_json(name, text)?, name.to_string()))
        }
        (None, None) => Err(config_err("no configuration given")),
    }
}

/// Accepts either one configuration object or a list of them.
fn load_many<T: DeserializeOwned>(path: Option<&Path>, preset: &str) -> Out<Vec<T>> {
    let (value, source): (serde_json::Value, String) = load(path, Some(preset))?;
    let text = value.to_string();
    if value.is_array() {
        parse_json(&source, &text)
    } else {
        Ok(vec![parse_json(&source, &text)?])
    }
}

fn default_analysis() -> AnalysisConfig {
    AnalysisConfig {
        trials: 12,
        t_max: 36,
        rule: EligibilityRule::study1(),
        mode: Mode::Pp,
        weights: WeightPlan::default(),
        baseline_hazard: Default::default(),
        dictionary: Default::default(),
    }
}

fn smoking() -> Vec<String> {
    vec!["smoking_status[former]".into(), "smoking_status[current]".into()]
}

/// Covariates of a component requested on the command line but absent from the config.
fn default_spec(target: WeightTarget) -> WeightModelSpec {
    let cov = match target {
        WeightTarget::R => {
            ["gender", "race", "site", "smoking_status[former]", "smoking_status[current]", "elix_score", "insulin"]
                .map(String::from)
                .to_vec()
        }
        WeightTarget::A | WeightTarget::N | WeightTarget::C => smoking(),
    };
    WeightModelSpec::new(target, &cov)
}

fn analysis_config(a: &AnalysisArgs) -> Out<AnalysisConfig> {
    let mut cfg = match &a.config {
        Some(p) => load::<AnalysisConfig>(Some(p), None)?.0,
        None => default_analysis(),
    };
    if let Some(p) = &a.rule {
        cfg.rule = load::<EligibilityRule>(Some(p), None)?.0;
    }
    if let Some(m) = a.mode {
        cfg.mode = m.into();
    }
    if let Some(m) = a.trials {
        cfg.trials = m;
    }
    if let Some(t) = a.t_max {
        cfg.t_max = t;
    }
    if let Some(l) = a.bmi_lookback {
        cfg.rule.bmi_lookback = l;
    }
    if let Some(l) = a.a1c_lookback {
        cfg.rule.a1c_lookback = l;
    }
    if let Some(list) = &a.weights {
        let old = std::mem::take(&mut cfg.weights);
        if !list.contains(&WeightArg::None) {
            let pick = |arg: WeightArg, have: Option<WeightModelSpec>, target: WeightTarget| {
                list.contains(&arg).then(|| have.unwrap_or_else(|| default_spec(target)))
            };
            cfg.weights = WeightPlan {
                a: pick(WeightArg::A, old.a, WeightTarget::A),
                c: pick(WeightArg::C, old.c, WeightTarget::C),
                n: pick(WeightArg::N, old.n, WeightTarget::N),
                r: pick(WeightArg::R, old.r, WeightTarget::R),
            };
        }
    }
    if a.stratify_r {
        match cfg.weights.r.as_mut() {
            Some(r) => r.stratify_by_treatment = true,
            None => return Err(config_err("--stratify-r: no selection (R) weights configured")),
        }
    }
    cfg.validate().map_err(pipeline_err)?;
    Ok(cfg)
}

fn read_cohort(dir: &Path, cfg: &AnalysisConfig) -> Out<Vec<SubjectRecord>> {
    let open = |name: &str| {
        let p = dir.join(name);
        std::fs::File::open(&p).map_err(|e| config_err(format!("{}: {e}", p.display())))
    };
    io::read_cohort(open("subjects.csv")?, open("measurements.csv")?, &cfg.dictionary).map_err(config_err)
}

fn load_table(in_dir: &Path, a: &AnalysisArgs) -> Out<(AnalysisConfig, PooledTable, String)> {
    let cfg = analysis_config(a)?;
    let cohort = read_cohort(in_dir, &cfg)?;
    let table = expand(&cohort, &cfg.expand_config()).map_err(|e| pipeline_err(e.into()))?;
    let hash = config_hash(&cfg);
    Ok((cfg, table, hash))
}

fn csv_artifact(hash: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<(), io::IoError>) -> Out<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| Failure::Runtime(e.to_string()))?;
    debug_assert!(buf.starts_with(io::header_line(hash).as_bytes()));
    Ok(buf)
}

fn with_header(hash: &str, body: &str) -> Vec<u8> {
    format!("{}{body}", io::header_line(hash)).into_bytes()
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

/// Adds provenance.json (config echo plus artifact hashes) and writes everything.
fn finish<T: Serialize>(mut arts: Artifacts, out_dir: &Path, command: &str, config: &T) -> Out<()> {
    let mut prov = Provenance::new(command, config);
    for (p, b) in arts.iter() {
        prov.record(&p.file_name().unwrap_or_default().to_string_lossy(), b);
    }
    arts.add(out_dir.join("provenance.json"), json_bytes(&prov));
    for p in arts.commit().map_err(io_failure)? {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Out<()> {
    let (mut cfg, _) = load::<SimConfig>(a.config.as_deref(), Some(&a.preset))?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(k) = a.k {
        cfg.k = k;
    }
    let out = simulate(&cfg).map_err(config_err)?;
    let hash = config_hash(&cfg);
    let mut arts = Artifacts::default();
    let mut cohorts = vec![("", &out.observed)];
    if a.full {
        cohorts.push(("full_", &out.full));
    }
    for (prefix, cohort) in cohorts {
        let s = csv_artifact(&hash, |b| io::write_subjects(b, cohort, &cfg.dictionary, &hash))?;
        let m = csv_artifact(&hash, |b| io::write_measurements(b, cohort, &hash))?;
        arts.add(a.out_dir.join(format!("{prefix}subjects.csv")), s);
        arts.add(a.out_dir.join(format!("{prefix}measurements.csv")), m);
    }
    finish(arts, &a.out_dir, "simulate", &cfg)
}

fn cmd_expand(a: &ExpandArgs) -> Out<()> {
    let (_, table, hash) = load_table(&a.in_dir, &a.analysis)?;
    let mut arts = Artifacts::default();
    arts.add(&a.out, csv_artifact(&hash, |b| io::write_pooled(b, &table, &hash))?);
    arts.commit().map_err(io_failure)?;
    eprintln!("wrote {} ({} rows)", a.out.display(), table.rows.len());
    Ok(())
}

fn cmd_weights(a: &WeightsArgs) -> Out<()> {
    let (cfg, table, hash) = load_table(&a.in_dir, &a.analysis)?;
    let (set, comps) = fit_weights(&table, &cfg.weights, &cfg.dictionary, cfg.mode, None).map_err(pipeline_err)?;
    let outcome: Vec<usize> = (0..table.rows.len()).filter(|&i| table.outcome_row(&table.rows[i], cfg.mode)).collect();
    let components: Vec<serde_json::Value> = comps
        .iter()
        .map(|c| {
            let truncated = match c.target {
                WeightTarget::A => &set.w_a,
                WeightTarget::C => &set.w_c,
                WeightTarget::N => &set.w_n,
                WeightTarget::R => &set.w_r,
            };
            json!({
                "target": c.target,
                "stabilized": c.stabilized,
                "untruncated": summarize(&c.values, &outcome),
                "truncated": summarize(truncated, &outcome),
                "positivity": c.positivity,
                "models": c.fits.iter().map(|(name, f)| json!({
                    "model": name,
                    "coefficients": f.design_column_names.iter().zip(&f.coefficients).map(|(n, v)| (n.clone(), *v)).collect::<std::collections::BTreeMap<_, _>>(),
                    "converged": f.converged,
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    let diagnostics = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config_sha256": hash,
        "mode": cfg.mode,
        "n_rows": table.rows.len(),
        "n_outcome_rows": outcome.len(),
        "total": summarize(&set.w_total, &outcome),
        "components": components,
        "truncation": set.truncation,
    });
    let mut arts = Artifacts::default();
    arts.add(a.out_dir.join("weights.csv"), csv_artifact(&hash, |b| io::write_weights(b, &table, &set, &hash))?);
    arts.add(a.out_dir.join("diagnostics.json"), json_bytes(&diagnostics));
    finish(arts, &a.out_dir, "weights", &cfg)
}

fn cmd_estimate(a: &EstimateArgs) -> Out<()> {
    let (cfg, table, hash) = load_table(&a.in_dir, &a.analysis)?;
    let res = analyze_table(&table, &cfg, None).map_err(pipeline_err)?;
    let m = &res.msm;
    let out = json!({
        "estimand": m.estimand,
        "psi_hat": m.psi_hat,
        "hr": m.hr,
        "n_rows": m.n_rows,
        "n_events": m.n_events,
        "events_control": m.events_control,
        "events_treated": m.events_treated,
        "n_baseline_terms": m.n_baseline_terms,
        "converged": m.converged,
        "weight_summary": m.weight_summary,
        "version": env!("CARGO_PKG_VERSION"),
        "config_sha256": hash,
    });
    match &a.out {
        Some(p) => {
            let mut arts = Artifacts::default();
            arts.add(p, json_bytes(&out));
            arts.commit().map_err(io_failure)?;
        }
        None => print!("{}", String::from_utf8(json_bytes(&out)).expect("utf8")),
    }
    Ok(())
}

fn cmd_bootstrap(a: &BootstrapArgs) -> Out<()> {
    let (cfg, table, hash) = load_table(&a.in_dir, &a.analysis)?;
    let res = bootstrap_table(&table, &cfg, a.replicates, a.seed).map_err(|e| match e {
        InferenceError::Pipeline(p) => pipeline_err(p),
        other => config_err(other),
    })?;
    if let Some(w) = res.failure_warning() {
        eprintln!("warning: {w}");
    }
    let iv = intervals(&res.values(), res.psi_hat, a.level).map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut csv = String::from("replicate,psi_hat,error\n");
    let mut rows: Vec<(usize, String, String)> =
        res.replicates.iter().map(|(i, v)| (*i, format!("{v:?}"), String::new())).collect();
    rows.extend(res.failures.iter().map(|f| (f.replicate, String::new(), f.message.replace(['"', ','], " "))));
    rows.sort_by_key(|r| r.0);
    for (i, v, e) in rows {
        csv.push_str(&format!("{i},{v},{e}\n"));
    }
    let summary = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config_sha256": hash,
        "seed": a.seed,
        "requested": res.requested,
        "successful": res.replicates.len(),
        "failed": res.failures.len(),
        "warning": res.failure_warning(),
        "intervals": iv,
    });
    let mut arts = Artifacts::default();
    arts.add(a.out_dir.join("replicates.csv"), with_header(&hash, &csv));
    arts.add(a.out_dir.join("intervals.json"), json_bytes(&summary));
    let prov = json!({ "analysis": cfg, "replicates": a.replicates, "seed": a.seed, "level": a.level });
    finish(arts, &a.out_dir, "bootstrap", &prov)
}

fn cmd_bench_bias(a: &BenchBiasArgs) -> Out<()> {
    let mut studies: Vec<BiasStudyConfig> = load_many(a.config.as_deref(), &a.preset)?;
    if let Some(m) = a.mechanism {
        let m: Mechanism = m.into();
        studies.retain(|s| s.mechanism == m);
    }
    if studies.is_empty() {
        return Err(config_err("no bias study selected"));
    }
    for s in &mut studies {
        if let Some(r) = a.replicates {
            s.replicates = r;
        }
        if let Some(seed) = a.seed {
            s.seed = seed;
        }
        if let Some(k) = a.k {
            s.k = k;
        }
        if let Some(l) = a.bmi_lookback {
            s.bmi_lookback = l;
        }
        if let Some(l) = a.a1c_lookback {
            s.a1c_lookback = l;
        }
        s.validate().map_err(bench_err)?;
    }
    let hash = config_hash(&studies);
    let mut md = format!("<!-- seqtte {} config_sha256={hash} -->\n", env!("CARGO_PKG_VERSION"));
    let mut table_csv = String::new();
    let mut arts = Artifacts::default();
    for s in &studies {
        let t = run_bias_study(s).map_err(bench_err)?;
        md.push('\n');
        md.push_str(&t.to_markdown());
        let csv = t.to_csv();
        let body = if table_csv.is_empty() { csv.as_str() } else { csv.split_once('\n').map_or("", |x| x.1) };
        table_csv.push_str(body);
        let name = format!("bias_replicates_{}_{}.csv", s.study.as_str(), s.mechanism.as_str());
        arts.add(a.out_dir.join(name), with_header(&hash, &t.replicates_csv()));
    }
    arts.add(a.out_dir.join("bias_table.md"), md.into_bytes());
    arts.add(a.out_dir.join("bias_table.csv"), with_header(&hash, &table_csv));
    finish(arts, &a.out_dir, "bench bias", &studies)
}

fn cmd_bench_coverage(a: &BenchCoverageArgs) -> Out<()> {
    let mut studies: Vec<CoverageConfig> = load_many(a.config.as_deref(), &a.preset)?;
    if let Some(m) = a.mechanism {
        let m: Mechanism = m.into();
        studies.retain(|s| s.mechanism == m);
    }
    if studies.is_empty() {
        return Err(config_err("no coverage study selected"));
    }
    for s in &mut studies {
        if let Some(r) = a.replicates {
            s.sims = r;
        }
        if let Some(b) = a.b {
            s.b = b;
        }
        if let Some(seed) = a.seed {
            s.seed = seed;
        }
        if let Some(k) = a.k {
            s.k = k;
        }
        s.validate().map_err(bench_err)?;
    }
    let hash = config_hash(&studies);
    let mut md = format!("<!-- seqtte {} config_sha256={hash} -->\n", env!("CARGO_PKG_VERSION"));
    let mut csv = String::from("mechanism,method,coverage,mean_width,psi_pp,sims_ok,sims_failed\n");
    let mut per_sim = String::from("mechanism,sim,psi_full,psi_hat,se,method,lower,upper,covers\n");
    for s in &studies {
        let r = run_coverage_study(s).map_err(bench_err)?;
        let mech = s.mechanism.as_str();
        md.push_str(&format!("\n### {mech}\n\n{}", r.to_markdown()));
        for m in &r.methods {
            csv.push_str(&format!(
                "{mech},{},{:?},{:?},{:?},{},{}\n",
                m.method, m.coverage, m.mean_width, r.psi_pp, r.sims_ok, r.sims_failed
            ));
        }
        for sim in &r.per_sim {
            for (name, iv) in sim.intervals.methods() {
                per_sim.push_str(&format!(
                    "{mech},{},{:?},{:?},{:?},{name},{:?},{:?},{}\n",
                    sim.sim,
                    sim.psi_full,
                    sim.intervals.psi_hat,
                    sim.intervals.se,
                    iv.lower,
                    iv.upper,
                    iv.contains(r.psi_pp) as u8
                ));
            }
        }
    }
    let mut arts = Artifacts::default();
    arts.add(a.out_dir.join("coverage.md"), md.into_bytes());
    arts.add(a.out_dir.join("coverage.csv"), with_header(&hash, &csv));
    arts.add(a.out_dir.join("coverage_intervals.csv"), with_header(&hash, &per_sim));
    finish(arts, &a.out_dir, "bench coverage", &studies)
}

fn cmd_sweep(a: &SweepArgs) -> Out<()> {
    let (mut cfg, _) = load::<SweepConfig>(a.config.as_deref(), Some(&a.preset))?;
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(k) = a.k {
        cfg.k = k;
    }
    let rows = run_lookback_sweep(&cfg).map_err(bench_err)?;
    let hash = config_hash(&cfg);
    let mut arts = Artifacts::default();
    arts.add(a.out_dir.join("sweep.csv"), with_header(&hash, &sweep_csv(&rows)));
    finish(arts, &a.out_dir, "sweep", &cfg)
}

fn run(cli: &Cli) -> Out<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config_err("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(config_err)?;
    }
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Expand(a) => cmd_expand(a),
        Command::Weights(a) => cmd_weights(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Bootstrap(a) => cmd_bootstrap(a),
        Command::Bench(BenchCommand::Bias(a)) => cmd_bench_bias(a),
        Command::Bench(BenchCommand::Coverage(a)) => cmd_bench_coverage(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
