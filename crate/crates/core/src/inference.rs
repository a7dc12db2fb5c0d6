//! Subject-level bootstrap and the normal, pivotal and percentile intervals.
//!
//! A replicate draws K subjects with replacement and reruns weight fitting and
//! the outcome model. Duplicated subjects count as distinct subjects; instead
//! of materializing the resampled cohort, the pipeline receives a per-subject
//! multiplicity vector, which gives the same fits because every estimating
//! equation is a sum over subjects (see `freq_matches_materialized_resample`).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::SubjectRecord;
use crate::expansion::{expand, PooledTable};
use crate::pipeline::{analyze_table, AnalysisConfig, PipelineError};
use crate::stats::{normal_quantile, quantile_sorted, std_dev};

/// Fewest successful replicates accepted by [`intervals`].
pub const MIN_REPLICATES: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("need at least {need} successful replicates, got {got}")]
    TooFewReplicates { got: usize, need: usize },
    #[error("replicate count B must be >= 2, got {0}")]
    ReplicateCount(usize),
    #[error("confidence level must lie in (0, 1), got {0}")]
    Level(f64),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub psi_hat: f64,
    pub requested: usize,
    /// `(replicate index, psi_hat)` for every successful replicate, in index order.
    pub replicates: Vec<(usize, f64)>,
    pub failures: Vec<ReplicateFailure>,
}

impl BootstrapResult {
    pub fn values(&self) -> Vec<f64> {
        self.replicates.iter().map(|&(_, v)| v).collect()
    }

    pub fn failure_rate(&self) -> f64 {
        self.failures.len() as f64 / self.requested.max(1) as f64
    }

    /// Failures above 1% of B are worth surfacing to the user.
    pub fn failure_warning(&self) -> Option<String> {
        (self.failure_rate() > 0.01).then(|| {
            format!("{} of {} bootstrap replicates failed and were excluded", self.failures.len(), self.requested)
        })
    }
}

/// RNG of replicate `b`; independent of scheduling.
pub fn replicate_rng(seed: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b);
    rng
}

/// Multiplicities of `n` subjects drawn `n` times with replacement.
pub fn resample_counts<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut counts = vec![0.0; n];
    for _ in 0..n {
        counts[rng.gen_range(0..n)] += 1.0;
    }
    counts
}

/// Materializes a resampled cohort with fresh subject ids `0..K`.
pub fn resample_cohort<R: Rng>(cohort: &[SubjectRecord], rng: &mut R) -> Vec<SubjectRecord> {
    let counts = resample_counts(cohort.len(), rng);
    let mut out = Vec::with_capacity(cohort.len());
    for (s, &c) in cohort.iter().zip(&counts) {
        for _ in 0..c as usize {
            let mut rec = s.clone();
            rec.subject_id = out.len() as u64;
            out.push(rec);
        }
    }
    out
}

/// Bootstrap on an already expanded table.
pub fn bootstrap_table(
    table: &PooledTable,
    cfg: &AnalysisConfig,
    b: usize,
    seed: u64,
) -> Result<BootstrapResult, InferenceError> {
    if b < 2 {
        return Err(InferenceError::ReplicateCount(b));
    }
    let psi_hat = analyze_table(table, cfg, None)?.msm.psi_hat;
    let n = table.n_subjects();
    let outcomes: Vec<(usize, Result<f64, PipelineError>)> = (0..b)
        .into_par_iter()
        .map(|i| {
            let freq = resample_counts(n, &mut replicate_rng(seed, i as u64));
            (i, analyze_table(table, cfg, Some(&freq)).map(|r| r.msm.psi_hat))
        })
        .collect();
    let mut replicates = Vec::with_capacity(b);
    let mut failures = Vec::new();
    for (i, r) in outcomes {
        match r {
            Ok(v) => replicates.push((i, v)),
            Err(e) => failures.push(ReplicateFailure { replicate: i, message: e.to_string() }),
        }
    }
    Ok(BootstrapResult { psi_hat, requested: b, replicates, failures })
}

/// Expands `cohort` once and bootstraps subjects.
pub fn bootstrap(
    cohort: &[SubjectRecord],
    cfg: &AnalysisConfig,
    b: usize,
    seed: u64,
) -> Result<BootstrapResult, InferenceError> {
    cfg.validate()?;
    let table = expand(cohort, &cfg.expand_config()).map_err(PipelineError::from)?;
    bootstrap_table(&table, cfg, b, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intervals {
    pub level: f64,
    pub psi_hat: f64,
    pub n_replicates: usize,
    pub se: f64,
    pub normal: Interval,
    pub pivotal: Interval,
    pub percentile: Interval,
}

impl Intervals {
    pub fn methods(&self) -> [(&'static str, Interval); 3] {
        [("normal", self.normal), ("pivotal", self.pivotal), ("percentile", self.percentile)]
    }
}

/// Normal, pivotal and percentile intervals from successful replicates.
/// Quantiles are type-7.
pub fn intervals(replicates: &[f64], psi_hat: f64, level: f64) -> Result<Intervals, InferenceError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(InferenceError::Level(level));
    }
    if replicates.len() < MIN_REPLICATES {
        return Err(InferenceError::TooFewReplicates { got: replicates.len(), need: MIN_REPLICATES });
    }
    let alpha = 1.0 - level;
    let mut sorted = replicates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&sorted, alpha / 2.0);
    let hi = quantile_sorted(&sorted, 1.0 - alpha / 2.0);
    let constant = sorted[0] == sorted[sorted.len() - 1];
    let se = if constant { 0.0 } else { std_dev(replicates).unwrap_or(0.0) };
    let z = normal_quantile(1.0 - alpha / 2.0);
    Ok(Intervals {
        level,
        psi_hat,
        n_replicates: replicates.len(),
        se,
        normal: Interval { lower: psi_hat - z * se, upper: psi_hat + z * se },
        pivotal: Interval { lower: 2.0 * psi_hat - hi, upper: 2.0 * psi_hat - lo },
        percentile: Interval { lower: lo, upper: hi },
    })
}
