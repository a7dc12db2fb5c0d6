//! Monte-Carlo harness: bias grids over weight specifications, bootstrap
//! coverage, and lookback sweeps, all driven by the plasmode simulator.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Dictionary, EligibilityRule};
use crate::estimate::{fit_msm, BaselineHazard};
use crate::expansion::{expand, lookback_sweep, AscertainmentCounts, ExpandConfig, Mode, PooledTable};
use crate::inference::{bootstrap_table, intervals, InferenceError, Intervals};
use crate::pipeline::{AnalysisConfig, PipelineError, WeightPlan};
use crate::simulator::{simulate, Mechanism, SimConfig, SimError, Study};
use crate::stats::{mean, median, std_dev};
use crate::weights::{combine_and_truncate, fit_component, ComponentWeights, WeightModelSpec, WeightTarget};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{field}: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("every replicate failed; first error: {0}")]
    AllFailed(String),
}

impl BenchError {
    pub fn is_config(&self) -> bool {
        match self {
            BenchError::Config { .. } | BenchError::Sim(_) => true,
            BenchError::Pipeline(e) => e.is_config(),
            _ => false,
        }
    }
}

fn cfg_err(field: &str, message: impl Into<String>) -> BenchError {
    BenchError::Config { field: field.into(), message: message.into() }
}

/// Covariate set of the selection model in one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RModel {
    None,
    /// `L^RA` only.
    Ra,
    /// `L^RY` only.
    Ry,
    /// `L^R = (L^RA, L^RY)`.
    R,
    /// `L^R` plus baseline treatment.
    RPlusA,
}

impl RModel {
    pub const ALL: [RModel; 5] = [RModel::None, RModel::Ra, RModel::Ry, RModel::R, RModel::RPlusA];

    pub fn label(self) -> &'static str {
        match self {
            RModel::None => "---",
            RModel::Ra => "R ~ L^RA",
            RModel::Ry => "R ~ L^RY",
            RModel::R => "R ~ L^R",
            RModel::RPlusA => "R ~ L^R + A",
        }
    }

    pub fn covariates(self, mech: Mechanism) -> Vec<String> {
        match self {
            RModel::None => Vec::new(),
            RModel::Ra => mech.l_ra(),
            RModel::Ry => mech.l_ry(),
            RModel::R | RModel::RPlusA => {
                let mut v = mech.l_ra();
                v.extend(mech.l_ry());
                v
            }
        }
    }
}

/// One weight configuration of a bias grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCell {
    pub r: RModel,
    /// Add `N ~ L^A` adherence weights.
    pub n: bool,
    /// Fit the selection model separately within each baseline arm.
    #[serde(default)]
    pub stratified: bool,
}

impl GridCell {
    pub fn new(r: RModel, n: bool, stratified: bool) -> Self {
        Self { r, n, stratified }
    }

    pub fn label(&self) -> String {
        let strat = if self.stratified { "stratified " } else { "" };
        let n = if self.n { " + N ~ L^A" } else { "" };
        format!("{strat}{}{n}", self.r.label())
    }
}

/// The weight grid reported for each study: every selection model with and
/// without adherence weights, plus the arm-stratified fits in study 2.
pub fn default_grid(study: Study) -> Vec<GridCell> {
    let mut grid: Vec<GridCell> =
        RModel::ALL.iter().flat_map(|&r| [false, true].map(|n| GridCell::new(r, n, false))).collect();
    if study == Study::Study2 {
        for r in [RModel::Ra, RModel::Ry, RModel::R] {
            for n in [false, true] {
                grid.push(GridCell::new(r, n, true));
            }
        }
    }
    grid
}

fn default_trials() -> u32 {
    12
}

fn default_quantile() -> f64 {
    1.0
}

fn default_lookback() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasStudyConfig {
    pub study: Study,
    pub mechanism: Mechanism,
    pub replicates: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default = "default_trials")]
    pub trials: u32,
    #[serde(rename = "T_max")]
    pub t_max: u32,
    pub seed: u64,
    pub grid: Vec<GridCell>,
    #[serde(default = "default_lookback")]
    pub bmi_lookback: u32,
    #[serde(default = "default_lookback")]
    pub a1c_lookback: u32,
    /// Applied to every component; 1.0 disables truncation.
    #[serde(default = "default_quantile")]
    pub truncation_quantile: f64,
    #[serde(default)]
    pub stabilized: bool,
    #[serde(default)]
    pub baseline_hazard: BaselineHazard,
}

impl BiasStudyConfig {
    /// Desk-scale defaults: K = 5000, M = 12, T_max = 36, 200 replicates.
    pub fn desk(study: Study, mechanism: Mechanism) -> Self {
        Self {
            study,
            mechanism,
            replicates: 200,
            k: 5000,
            trials: 12,
            t_max: 36,
            seed: 20240101,
            grid: default_grid(study),
            bmi_lookback: 1,
            a1c_lookback: 1,
            truncation_quantile: 1.0,
            stabilized: false,
            baseline_hazard: BaselineHazard::default(),
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.replicates < 2 {
            return Err(cfg_err("replicates", format!("must be >= 2, got {}", self.replicates)));
        }
        if self.k == 0 {
            return Err(cfg_err("K", "must be positive"));
        }
        if self.grid.is_empty() {
            return Err(cfg_err("grid", "must contain at least one cell"));
        }
        if let Some(c) = self.grid.iter().find(|c| c.stratified && c.r == RModel::RPlusA) {
            return Err(cfg_err("grid", format!("`{}`: a stratified model cannot also include A", c.label())));
        }
        self.expand_config().validate().map_err(PipelineError::from)?;
        for cell in &self.grid {
            for spec in cell_specs(self.mechanism, cell, self.truncation_quantile, self.stabilized) {
                spec.validate(&Dictionary::default()).map_err(PipelineError::from)?;
            }
        }
        Ok(())
    }

    pub fn rule(&self) -> EligibilityRule {
        EligibilityRule {
            bmi_lookback: self.bmi_lookback as i64,
            a1c_lookback: self.a1c_lookback as i64,
            ..self.study.rule()
        }
    }

    pub fn expand_config(&self) -> ExpandConfig {
        ExpandConfig { trials: self.trials, t_max: self.t_max, rule: self.rule(), mode: Mode::Pp }
    }

    pub fn sim_config(&self, replicate: usize) -> SimConfig {
        let mut sim = SimConfig::preset(self.mechanism, self.study);
        sim.k = self.k;
        sim.t_max = self.t_max;
        sim.seed = replicate_seed(self.seed, replicate as u64);
        sim
    }
}

/// Seed of replicate `r` (a splitmix64 step), so replicate streams do not
/// overlap for nearby base seeds.
pub fn replicate_seed(base: u64, r: u64) -> u64 {
    let mut z = base.wrapping_add(r.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn adherence_spec(mech: Mechanism, q: f64, stabilized: bool) -> WeightModelSpec {
    let mut s = WeightModelSpec::new(WeightTarget::N, &mech.l_a());
    s.truncation_quantile = q;
    s.stabilized = stabilized;
    s
}

fn selection_spec(mech: Mechanism, r: RModel, stratified: bool, q: f64, stabilized: bool) -> Option<WeightModelSpec> {
    if r == RModel::None {
        return None;
    }
    let mut s = WeightModelSpec::new(WeightTarget::R, &r.covariates(mech));
    s.include_treatment = r == RModel::RPlusA;
    s.stratify_by_treatment = stratified;
    s.truncation_quantile = q;
    s.stabilized = stabilized;
    Some(s)
}

fn cell_specs(mech: Mechanism, cell: &GridCell, q: f64, stabilized: bool) -> Vec<WeightModelSpec> {
    let mut v: Vec<WeightModelSpec> =
        selection_spec(mech, cell.r, cell.stratified, q, stabilized).into_iter().collect();
    if cell.n {
        v.push(adherence_spec(mech, q, stabilized));
    }
    v
}

/// Pipeline configuration equivalent to one grid cell.
pub fn cell_analysis_config(cfg: &BiasStudyConfig, cell: &GridCell) -> AnalysisConfig {
    let q = cfg.truncation_quantile;
    AnalysisConfig {
        trials: cfg.trials,
        t_max: cfg.t_max,
        rule: cfg.rule(),
        mode: Mode::Pp,
        weights: WeightPlan {
            n: cell.n.then(|| adherence_spec(cfg.mechanism, q, cfg.stabilized)),
            r: selection_spec(cfg.mechanism, cell.r, cell.stratified, q, cfg.stabilized),
            ..Default::default()
        },
        baseline_hazard: cfg.baseline_hazard,
        dictionary: Dictionary::default(),
    }
}

/// Full-cohort PP estimate with adherence weights, before masking.
fn full_data_psi(full: &PooledTable, mech: Mechanism, hazard: BaselineHazard) -> Result<f64, PipelineError> {
    let n = fit_component(full, &adherence_spec(mech, 1.0, false), &Dictionary::default(), None)?;
    Ok(fit_msm(full, Some(&n.values), None, Mode::Pp, hazard)?.psi_hat)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub psi_pp: f64,
    pub mc_se: f64,
    pub values: Vec<f64>,
    pub failures: usize,
}

/// Reference `ψ_PP`: the average over replicates of the adherence-weighted
/// full-data estimate, computed before eligibility data are masked.
/// Replicate seeds come from [`replicate_seed`] with `sim.seed` as base.
pub fn true_psi_oracle(sim: &SimConfig, replicates: usize, trials: u32) -> Result<OracleResult, BenchError> {
    let ecfg = ExpandConfig { trials, t_max: sim.t_max, rule: sim.study.rule(), mode: Mode::Pp };
    ecfg.validate().map_err(PipelineError::from)?;
    sim.compile()?;
    let results: Vec<Result<f64, String>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut cfg = sim.clone();
            cfg.seed = replicate_seed(sim.seed, r as u64);
            let out = simulate(&cfg).map_err(|e| e.to_string())?;
            let full = expand(&out.full, &ecfg).map_err(|e| e.to_string())?;
            full_data_psi(&full, sim.mechanism, BaselineHazard::default()).map_err(|e| e.to_string())
        })
        .collect();
    let values: Vec<f64> = results.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let failures = results.len() - values.len();
    let psi_pp = mean(&values)
        .ok_or_else(|| BenchError::AllFailed(results.iter().find_map(|r| r.clone().err()).unwrap_or_default()))?;
    let mc_se = std_dev(&values).map_or(f64::NAN, |s| s / (values.len() as f64).sqrt());
    Ok(OracleResult { psi_pp, mc_se, values, failures })
}

/// Everything one bias replicate produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub seed: u64,
    /// Full-data estimate; `None` if it failed (the replicate is then dropped).
    pub psi_full: Option<f64>,
    /// One entry per grid cell.
    pub estimates: Vec<Result<f64, String>>,
}

/// Runs one replicate: simulate, expand both cohorts, fit the oracle and every grid cell.
pub fn run_bias_replicate(cfg: &BiasStudyConfig, replicate: usize) -> Result<ReplicateOutcome, BenchError> {
    let sim = cfg.sim_config(replicate);
    let out = simulate(&sim)?;
    let ecfg = cfg.expand_config();
    let full = expand(&out.full, &ecfg).map_err(PipelineError::from)?;
    let obs = expand(&out.observed, &ecfg).map_err(PipelineError::from)?;
    let dict = Dictionary::default();
    let psi_full = full_data_psi(&full, cfg.mechanism, cfg.baseline_hazard).ok();

    let q = cfg.truncation_quantile;
    let n_comp = cfg
        .grid
        .iter()
        .any(|c| c.n)
        .then(|| fit_component(&obs, &adherence_spec(cfg.mechanism, q, cfg.stabilized), &dict, None));
    let mut r_cache: Vec<((RModel, bool), Result<ComponentWeights, String>)> = Vec::new();
    let mut estimates = Vec::with_capacity(cfg.grid.len());
    for cell in &cfg.grid {
        let mut comps = Vec::new();
        if let Some(spec) = selection_spec(cfg.mechanism, cell.r, cell.stratified, q, cfg.stabilized) {
            let key = (cell.r, cell.stratified);
            if !r_cache.iter().any(|(k, _)| *k == key) {
                r_cache.push((key, fit_component(&obs, &spec, &dict, None).map_err(|e| e.to_string())));
            }
            match &r_cache.iter().find(|(k, _)| *k == key).expect("cached").1 {
                Ok(c) => comps.push(c.clone()),
                Err(e) => {
                    estimates.push(Err(e.clone()));
                    continue;
                }
            }
        }
        if cell.n {
            match n_comp.as_ref().expect("fitted when any cell needs it") {
                Ok(c) => comps.push(c.clone()),
                Err(e) => {
                    estimates.push(Err(e.to_string()));
                    continue;
                }
            }
        }
        let est = if comps.is_empty() {
            fit_msm(&obs, None, None, Mode::Pp, cfg.baseline_hazard).map(|f| f.psi_hat).map_err(|e| e.to_string())
        } else {
            combine_and_truncate(&obs, &comps, Mode::Pp, None)
                .map_err(|e| e.to_string())
                .and_then(|w| {
                    fit_msm(&obs, Some(&w.w_total), None, Mode::Pp, cfg.baseline_hazard).map_err(|e| e.to_string())
                })
                .map(|f| f.psi_hat)
        };
        estimates.push(est);
    }
    Ok(ReplicateOutcome { replicate, seed: sim.seed, psi_full, estimates })
}

/// Summary of one grid cell. `% bias` is `100 * bias / psi_pp` with the signed
/// reference value, so a negative bias on a negative effect reads positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasCell {
    pub cell: GridCell,
    pub mean_bias: f64,
    pub mean_pct_bias: f64,
    pub median_bias: f64,
    pub median_pct_bias: f64,
    /// Monte-Carlo standard error of `mean_bias` (paired with the full-data fits).
    pub mc_se: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub first_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasTable {
    pub study: Study,
    pub mechanism: Mechanism,
    pub psi_pp: f64,
    pub psi_pp_se: f64,
    pub replicates: usize,
    pub cells: Vec<BiasCell>,
    pub raw: Vec<ReplicateOutcome>,
}

pub fn pct(bias: f64, psi_pp: f64) -> f64 {
    100.0 * bias / psi_pp
}

/// Runs all replicates in parallel and summarizes each grid cell.
pub fn run_bias_study(cfg: &BiasStudyConfig) -> Result<BiasTable, BenchError> {
    cfg.validate()?;
    SimConfig::preset(cfg.mechanism, cfg.study).compile()?;
    let raw: Vec<ReplicateOutcome> =
        (0..cfg.replicates).into_par_iter().map(|r| run_bias_replicate(cfg, r)).collect::<Result<_, _>>()?;
    summarize_bias(cfg, raw)
}

/// Aggregates replicate outcomes into a table.
pub fn summarize_bias(cfg: &BiasStudyConfig, raw: Vec<ReplicateOutcome>) -> Result<BiasTable, BenchError> {
    let full: Vec<f64> = raw.iter().filter_map(|o| o.psi_full).collect();
    let psi_pp = mean(&full).ok_or_else(|| BenchError::AllFailed("full-data fit failed everywhere".into()))?;
    let psi_pp_se = std_dev(&full).map_or(f64::NAN, |s| s / (full.len() as f64).sqrt());
    let mut cells = Vec::with_capacity(cfg.grid.len());
    for (j, cell) in cfg.grid.iter().enumerate() {
        let mut diffs = Vec::new();
        let mut est = Vec::new();
        let mut n_failed = 0;
        let mut first_error = None;
        for o in &raw {
            let Some(pf) = o.psi_full else { continue };
            match &o.estimates[j] {
                Ok(v) => {
                    diffs.push(v - pf);
                    est.push(*v);
                }
                Err(e) => {
                    n_failed += 1;
                    first_error.get_or_insert_with(|| e.clone());
                }
            }
        }
        let mean_bias = mean(&diffs).unwrap_or(f64::NAN);
        let median_bias = median(&est).map_or(f64::NAN, |m| m - psi_pp);
        cells.push(BiasCell {
            cell: *cell,
            mean_bias,
            mean_pct_bias: pct(mean_bias, psi_pp),
            median_bias,
            median_pct_bias: pct(median_bias, psi_pp),
            mc_se: std_dev(&diffs).map_or(f64::NAN, |s| s / (diffs.len() as f64).sqrt()),
            n_ok: diffs.len(),
            n_failed,
            first_error,
        });
    }
    Ok(BiasTable { study: cfg.study, mechanism: cfg.mechanism, psi_pp, psi_pp_se, replicates: raw.len(), cells, raw })
}

/// Difference `|% bias(a)| - |% bias(b)|` with its Monte-Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsBiasGap {
    pub gap: f64,
    pub se: f64,
}

impl BiasTable {
    pub fn find(&self, cell: GridCell) -> Option<&BiasCell> {
        self.cells.iter().find(|c| c.cell == cell)
    }

    fn index(&self, cell: GridCell) -> Option<usize> {
        self.cells.iter().position(|c| c.cell == cell)
    }

    /// Monte-Carlo standard error of a cell's % bias.
    pub fn pct_se(&self, cell: GridCell) -> Option<f64> {
        self.find(cell).map(|c| 100.0 * c.mc_se / self.psi_pp.abs())
    }

    /// Paired comparison of two cells' absolute % bias over replicates where
    /// both succeeded. The sign of each mean bias is held fixed, so the gap is
    /// linear in the per-replicate differences and its standard error is the
    /// standard error of that linear combination.
    pub fn abs_pct_gap(&self, a: GridCell, b: GridCell) -> Option<AbsBiasGap> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let (sa, sb) = (self.cells[ia].mean_pct_bias.signum(), self.cells[ib].mean_pct_bias.signum());
        let terms: Vec<f64> = self
            .raw
            .iter()
            .filter_map(|o| {
                let pf = o.psi_full?;
                let da = o.estimates[ia].as_ref().ok()? - pf;
                let db = o.estimates[ib].as_ref().ok()? - pf;
                Some(sa * pct(da, self.psi_pp) - sb * pct(db, self.psi_pp))
            })
            .collect();
        Some(AbsBiasGap {
            gap: mean(&terms)?,
            se: std_dev(&terms).map_or(f64::NAN, |s| s / (terms.len() as f64).sqrt()),
        })
    }

    /// Table in the layout of the published bias tables.
    pub fn to_markdown(&self) -> String {
        let strat = self.study == Study::Study2;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "Study: {}, mechanism: {}, replicates: {}, psi_PP = {:.3} (MC SE {:.4})\n",
            self.study.as_str(),
            self.mechanism.as_str(),
            self.replicates,
            self.psi_pp,
            self.psi_pp_se
        );
        let head = if strat {
            "| Missingness | psi_PP | Stratification | W^R | W^N | Mean bias | Mean % bias | Median bias | Median % bias | MC SE | ok/failed |\n|---|---|---|---|---|---|---|---|---|---|---|"
        } else {
            "| Missingness | psi_PP | W^R | W^N | Mean bias | Mean % bias | Median bias | Median % bias | MC SE | ok/failed |\n|---|---|---|---|---|---|---|---|---|---|"
        };
        let _ = writeln!(s, "{head}");
        for c in &self.cells {
            let n = if c.cell.n { "N ~ L^A" } else { "---" };
            let strat_col = if strat {
                format!(" {} |", if c.cell.stratified { "Stratified by A" } else { "Unstratified" })
            } else {
                String::new()
            };
            let _ = writeln!(
                s,
                "| {} | {:.3} |{} {} | {} | {:.3} | {:.1} | {:.3} | {:.1} | {:.4} | {}/{} |",
                self.mechanism.as_str(),
                self.psi_pp,
                strat_col,
                c.cell.r.label(),
                n,
                c.mean_bias,
                c.mean_pct_bias,
                c.median_bias,
                c.median_pct_bias,
                c.mc_se,
                c.n_ok,
                c.n_failed
            );
        }
        s
    }

    pub const CSV_COLUMNS: [&'static str; 14] = [
        "study",
        "mechanism",
        "psi_pp",
        "stratified",
        "w_r",
        "w_n",
        "mean_bias",
        "mean_pct_bias",
        "median_bias",
        "median_pct_bias",
        "mc_se",
        "n_ok",
        "n_failed",
        "replicates",
    ];

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::CSV_COLUMNS).expect("in-memory write");
        for c in &self.cells {
            w.write_record([
                self.study.as_str().to_string(),
                self.mechanism.as_str().to_string(),
                format!("{:?}", self.psi_pp),
                (c.cell.stratified as u8).to_string(),
                c.cell.r.label().to_string(),
                if c.cell.n { "N ~ L^A" } else { "---" }.to_string(),
                format!("{:?}", c.mean_bias),
                format!("{:?}", c.mean_pct_bias),
                format!("{:?}", c.median_bias),
                format!("{:?}", c.median_pct_bias),
                format!("{:?}", c.mc_se),
                c.n_ok.to_string(),
                c.n_failed.to_string(),
                self.replicates.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
    }

    /// Long format: one line per replicate and cell.
    pub fn replicates_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["replicate", "seed", "psi_full", "cell", "psi_hat", "error"]).expect("in-memory write");
        for o in &self.raw {
            for (c, e) in self.cells.iter().zip(&o.estimates) {
                let (v, err) = match e {
                    Ok(v) => (format!("{v:?}"), String::new()),
                    Err(m) => (String::new(), m.clone()),
                };
                w.write_record([
                    o.replicate.to_string(),
                    o.seed.to_string(),
                    o.psi_full.map(|v| format!("{v:?}")).unwrap_or_default(),
                    c.cell.label(),
                    v,
                    err,
                ])
                .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
    }
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageConfig {
    pub mechanism: Mechanism,
    #[serde(default = "default_study")]
    pub study: Study,
    pub sims: usize,
    #[serde(rename = "B")]
    pub b: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default = "default_trials")]
    pub trials: u32,
    #[serde(rename = "T_max")]
    pub t_max: u32,
    pub seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Weights of the analysis whose intervals are checked.
    pub cell: GridCell,
    #[serde(default = "default_quantile")]
    pub truncation_quantile: f64,
}

fn default_study() -> Study {
    Study::Study1
}

impl CoverageConfig {
    /// Study 1 with `R ~ L^R + N ~ L^A` weights, K = 2000, B = 500, 500 simulations.
    pub fn desk(mechanism: Mechanism) -> Self {
        Self {
            mechanism,
            study: Study::Study1,
            sims: 500,
            b: 500,
            k: 2000,
            trials: 12,
            t_max: 36,
            seed: 20240101,
            level: 0.95,
            cell: GridCell::new(RModel::R, true, false),
            truncation_quantile: 1.0,
        }
    }

    fn as_bias(&self) -> BiasStudyConfig {
        BiasStudyConfig {
            replicates: self.sims,
            k: self.k,
            trials: self.trials,
            t_max: self.t_max,
            seed: self.seed,
            grid: vec![self.cell],
            truncation_quantile: self.truncation_quantile,
            ..BiasStudyConfig::desk(self.study, self.mechanism)
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.b < 2 {
            return Err(cfg_err("B", format!("must be >= 2, got {}", self.b)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(cfg_err("level", format!("must lie in (0, 1), got {}", self.level)));
        }
        self.as_bias().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationInterval {
    pub sim: usize,
    pub psi_full: f64,
    pub intervals: Intervals,
    pub failed_replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodCoverage {
    pub method: String,
    pub coverage: f64,
    pub mean_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub psi_pp: f64,
    pub sims_ok: usize,
    pub sims_failed: usize,
    pub methods: Vec<MethodCoverage>,
    pub per_sim: Vec<SimulationInterval>,
}

impl CoverageResult {
    pub fn coverage(&self, method: &str) -> Option<f64> {
        self.methods.iter().find(|m| m.method == method).map(|m| m.coverage)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "coverage", "mean_width", "psi_pp", "sims_ok", "sims_failed"]).expect("in-memory");
        for m in &self.methods {
            w.write_record([
                m.method.clone(),
                format!("{:?}", m.coverage),
                format!("{:?}", m.mean_width),
                format!("{:?}", self.psi_pp),
                self.sims_ok.to_string(),
                self.sims_failed.to_string(),
            ])
            .expect("in-memory");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!(
            "psi_PP = {:.3}, simulations = {} ({} failed)\n\n| Method | Coverage | Mean width |\n|---|---|---|\n",
            self.psi_pp, self.sims_ok, self.sims_failed
        );
        for m in &self.methods {
            let _ = writeln!(s, "| {} | {:.3} | {:.3} |", m.method, m.coverage, m.mean_width);
        }
        s
    }
}

/// Fraction of intervals containing `truth`, per method, with mean widths.
pub fn coverage_of(sets: &[Intervals], truth: f64) -> Vec<MethodCoverage> {
    ["normal", "pivotal", "percentile"]
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let n = sets.len().max(1) as f64;
            let hits = sets.iter().filter(|s| s.methods()[j].1.contains(truth)).count() as f64;
            let width = sets.iter().map(|s| s.methods()[j].1.width()).sum::<f64>() / n;
            MethodCoverage { method: name.to_string(), coverage: hits / n, mean_width: width }
        })
        .collect()
}

/// One coverage simulation: simulate, point estimate, bootstrap, intervals.
pub fn run_coverage_sim(cfg: &CoverageConfig, sim_index: usize) -> Result<SimulationInterval, String> {
    let bias = cfg.as_bias();
    let sim = bias.sim_config(sim_index);
    let out = simulate(&sim).map_err(|e| e.to_string())?;
    let ecfg = bias.expand_config();
    let full = expand(&out.full, &ecfg).map_err(|e| e.to_string())?;
    let psi_full = full_data_psi(&full, cfg.mechanism, bias.baseline_hazard).map_err(|e| e.to_string())?;
    let obs = expand(&out.observed, &ecfg).map_err(|e| e.to_string())?;
    let acfg = cell_analysis_config(&bias, &cfg.cell);
    let boot = bootstrap_table(&obs, &acfg, cfg.b, sim.seed).map_err(|e| e.to_string())?;
    let iv = intervals(&boot.values(), boot.psi_hat, cfg.level).map_err(|e| e.to_string())?;
    Ok(SimulationInterval { sim: sim_index, psi_full, intervals: iv, failed_replicates: boot.failures.len() })
}

/// Coverage of the three interval constructions against the full-data reference.
pub fn run_coverage_study(cfg: &CoverageConfig) -> Result<CoverageResult, BenchError> {
    cfg.validate()?;
    let results: Vec<Result<SimulationInterval, String>> =
        (0..cfg.sims).into_par_iter().map(|i| run_coverage_sim(cfg, i)).collect();
    let per_sim: Vec<SimulationInterval> = results.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
    let sims_failed = results.len() - per_sim.len();
    let full: Vec<f64> = per_sim.iter().map(|s| s.psi_full).collect();
    let psi_pp = mean(&full)
        .ok_or_else(|| BenchError::AllFailed(results.iter().find_map(|r| r.clone().err()).unwrap_or_default()))?;
    let sets: Vec<Intervals> = per_sim.iter().map(|s| s.intervals).collect();
    Ok(CoverageResult { psi_pp, sims_ok: per_sim.len(), sims_failed, methods: coverage_of(&sets, psi_pp), per_sim })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub study: Study,
    pub mechanism: Mechanism,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default = "default_trials")]
    pub trials: u32,
    #[serde(rename = "T_max")]
    pub t_max: u32,
    pub seed: u64,
    pub replicates: usize,
    pub bmi_lookbacks: Vec<u32>,
    pub a1c_lookbacks: Vec<u32>,
    pub grid: Vec<GridCell>,
    #[serde(default = "default_quantile")]
    pub truncation_quantile: f64,
}

impl SweepConfig {
    pub fn desk(study: Study, mechanism: Mechanism) -> Self {
        Self {
            study,
            mechanism,
            k: 5000,
            trials: 12,
            t_max: 36,
            seed: 20240101,
            replicates: 1,
            bmi_lookbacks: vec![1, 3, 6, 12],
            a1c_lookbacks: vec![1, 3, 6, 12, 18, 24],
            grid: vec![GridCell::new(RModel::None, true, false), GridCell::new(RModel::R, true, false)],
            truncation_quantile: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.bmi_lookbacks.is_empty() || self.a1c_lookbacks.is_empty() {
            return Err(cfg_err("bmi_lookbacks", "lookback grids must be nonempty"));
        }
        for (name, grid) in [("bmi_lookbacks", &self.bmi_lookbacks), ("a1c_lookbacks", &self.a1c_lookbacks)] {
            if grid.iter().any(|&l| l < 1) {
                return Err(cfg_err(name, "lookbacks must be >= 1"));
            }
        }
        if self.replicates == 0 {
            return Err(cfg_err("replicates", "must be positive"));
        }
        let mut b = BiasStudyConfig::desk(self.study, self.mechanism);
        b.replicates = 2;
        b.k = self.k;
        b.trials = self.trials;
        b.t_max = self.t_max;
        b.grid = self.grid.clone();
        b.validate()
    }
}

/// One line of the long-format sweep output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub replicate: usize,
    pub bmi_lookback: u32,
    pub a1c_lookback: u32,
    pub eligible: u64,
    pub ineligible: u64,
    pub unascertained: u64,
    pub weights: String,
    pub psi_hat: Option<f64>,
    pub psi_full: Option<f64>,
    pub bias: Option<f64>,
    pub error: Option<String>,
}

pub const SWEEP_COLUMNS: [&str; 11] = [
    "replicate",
    "bmi_lookback",
    "a1c_lookback",
    "eligible",
    "ineligible",
    "unascertained",
    "weights",
    "psi_hat",
    "psi_full",
    "bias",
    "error",
];

/// Ascertainment counts and estimates over a lookback grid.
pub fn run_lookback_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>, BenchError> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for rep in 0..cfg.replicates {
        let mut bias = BiasStudyConfig::desk(cfg.study, cfg.mechanism);
        bias.k = cfg.k;
        bias.trials = cfg.trials;
        bias.t_max = cfg.t_max;
        bias.seed = cfg.seed;
        bias.grid = cfg.grid.clone();
        bias.truncation_quantile = cfg.truncation_quantile;
        let out = simulate(&bias.sim_config(rep))?;
        let counts: Vec<AscertainmentCounts> =
            lookback_sweep(&out.observed, cfg.trials, &cfg.study.rule(), &cfg.bmi_lookbacks, &cfg.a1c_lookbacks);
        let full = expand(&out.full, &bias.expand_config()).map_err(PipelineError::from)?;
        let psi_full = full_data_psi(&full, cfg.mechanism, bias.baseline_hazard).ok();
        let cell_rows: Vec<Vec<SweepRow>> = counts
            .par_iter()
            .map(|c| {
                let mut b = bias.clone();
                b.bmi_lookback = c.bmi_lookback;
                b.a1c_lookback = c.a1c_lookback;
                let table = expand(&out.observed, &b.expand_config());
                cfg.grid
                    .iter()
                    .map(|cell| {
                        let est = table.as_ref().map_err(|e| e.to_string()).and_then(|t| {
                            crate::pipeline::analyze_table(t, &cell_analysis_config(&b, cell), None)
                                .map(|r| r.msm.psi_hat)
                                .map_err(|e| e.to_string())
                        });
                        SweepRow {
                            replicate: rep,
                            bmi_lookback: c.bmi_lookback,
                            a1c_lookback: c.a1c_lookback,
                            eligible: c.eligible,
                            ineligible: c.ineligible,
                            unascertained: c.unascertained,
                            weights: cell.label(),
                            psi_hat: est.as_ref().ok().copied(),
                            psi_full,
                            bias: est.as_ref().ok().zip(psi_full).map(|(e, f)| e - f),
                            error: est.err(),
                        }
                    })
                    .collect()
            })
            .collect();
        rows.extend(cell_rows.into_iter().flatten());
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let f = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_COLUMNS).expect("in-memory");
    for r in rows {
        w.write_record([
            r.replicate.to_string(),
            r.bmi_lookback.to_string(),
            r.a1c_lookback.to_string(),
            r.eligible.to_string(),
            r.ineligible.to_string(),
            r.unascertained.to_string(),
            r.weights.clone(),
            f(r.psi_hat),
            f(r.psi_full),
            f(r.bias),
            r.error.clone().unwrap_or_default(),
        ])
        .expect("in-memory");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::Interval;

    fn tiny(study: Study) -> BiasStudyConfig {
        let mut c = BiasStudyConfig::desk(study, Mechanism::MBias);
        c.k = 1500;
        c.replicates = 3;
        c.trials = 6;
        c.bmi_lookback = 6;
        c.a1c_lookback = 6;
        c
    }

    #[test]
    fn grids_match_published_layout() {
        assert_eq!(default_grid(Study::Study1).len(), 10);
        assert_eq!(default_grid(Study::Study2).len(), 16);
        assert_eq!(GridCell::new(RModel::R, true, true).label(), "stratified R ~ L^R + N ~ L^A");
    }

    #[test]
    fn replicate_seeds_are_distinct() {
        let seeds: std::collections::BTreeSet<u64> = (0..1000).map(|r| replicate_seed(7, r)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(replicate_seed(7, 0), replicate_seed(8, 0));
    }

    #[test]
    fn percent_bias_sign_convention() {
        // negative bias on a negative effect reads as positive percent
        assert!((pct(-0.021, -0.322) - 6.5217).abs() < 1e-3);
        assert!(pct(0.002, -0.322) < 0.0);
    }

    #[test]
    fn bias_study_is_reproducible_and_populated() {
        let cfg = tiny(Study::Study1);
        let a = run_bias_study(&cfg).unwrap();
        let b = run_bias_study(&cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.cells.len(), 10);
        assert!(a.cells.iter().all(|c| c.n_ok + c.n_failed == 3));
        let md = a.to_markdown();
        assert_eq!(md.lines().filter(|l| l.starts_with("| m_bias")).count(), 10);
    }

    #[test]
    fn summary_uses_paired_differences() {
        let mut cfg = tiny(Study::Study1);
        cfg.grid = vec![GridCell::new(RModel::None, false, false), GridCell::new(RModel::R, false, false)];
        let raw = vec![
            ReplicateOutcome { replicate: 0, seed: 0, psi_full: Some(-0.3), estimates: vec![Ok(-0.4), Ok(-0.3)] },
            ReplicateOutcome {
                replicate: 1,
                seed: 1,
                psi_full: Some(-0.5),
                estimates: vec![Ok(-0.5), Err("x".into())],
            },
        ];
        let t = summarize_bias(&cfg, raw).unwrap();
        assert!((t.psi_pp + 0.4).abs() < 1e-12);
        assert!((t.cells[0].mean_bias + 0.05).abs() < 1e-12);
        assert!((t.cells[0].median_bias + 0.05).abs() < 1e-12);
        assert_eq!((t.cells[1].n_ok, t.cells[1].n_failed), (1, 1));
        assert!(t.cells[1].mean_bias.abs() < 1e-12);
        let gap = t.abs_pct_gap(cfg.grid[0], cfg.grid[1]).unwrap();
        // only replicate 0 is paired: |pct(-0.1)| - |pct(0)| = 25
        assert!((gap.gap - 25.0).abs() < 1e-9);
    }

    #[test]
    fn oracle_is_invariant_to_missingness_coefficients() {
        let mut sim = SimConfig::preset(Mechanism::MBias, Study::Study1);
        sim.k = 1000;
        let a = true_psi_oracle(&sim, 2, 6).unwrap();
        sim.coefficients.rho.insert("(Intercept)".into(), 1.5);
        let b = true_psi_oracle(&sim, 2, 6).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn coverage_degenerate_cases() {
        let wide = Interval { lower: f64::NEG_INFINITY, upper: f64::INFINITY };
        let iv = Intervals {
            level: 0.95,
            psi_hat: 0.0,
            n_replicates: 30,
            se: 1.0,
            normal: wide,
            pivotal: wide,
            percentile: wide,
        };
        assert!(coverage_of(&[iv; 5], -0.3).iter().all(|m| m.coverage == 1.0));
        let narrow = Interval { lower: 0.0, upper: 0.1 };
        let iv = Intervals { normal: narrow, pivotal: narrow, percentile: narrow, ..iv };
        assert!(coverage_of(&[iv; 5], 10.0).iter().all(|m| m.coverage == 0.0));
    }

    #[test]
    fn config_errors_name_fields() {
        let mut c = tiny(Study::Study1);
        c.grid.push(GridCell::new(RModel::RPlusA, false, true));
        assert!(matches!(c.validate(), Err(BenchError::Config { ref field, .. }) if field == "grid"));
        let mut c = tiny(Study::Study1);
        c.trials = 40;
        assert!(c.validate().unwrap_err().is_config());
    }

    #[test]
    fn sweep_covers_grid() {
        let mut c = SweepConfig::desk(Study::Study1, Mechanism::MBias);
        c.k = 800;
        c.trials = 4;
        c.bmi_lookbacks = vec![1, 6];
        c.a1c_lookbacks = vec![1, 12];
        let rows = run_lookback_sweep(&c).unwrap();
        assert_eq!(rows.len(), 4 * c.grid.len());
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().count(), rows.len() + 1);
    }
}
