//! Component inverse-probability weights for treatment (`A`), censoring (`C`),
//! non-adherence (`N`) and eligibility ascertainment (`R`), with
//! stabilization, per-component truncation and positivity diagnostics.
//!
//! Every fit accepts an optional per-subject frequency vector. A subject drawn
//! `f` times by the bootstrap contributes each of its rows with weight `f`,
//! which is the same likelihood as materializing `f` copies of the subject.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Dictionary, PersonTrialPeriod};
use crate::expansion::{Mode, PooledTable};
use crate::glm::{aggregate_rows, clamp_prob, fit_logistic, GlmError, GlmFit};
use crate::linalg::{dot, Matrix};
use crate::scalar::expit;
use crate::stats::quantile_with_counts;
use crate::terms::{DesignSpec, TermContext, TermError};

/// Predicted probabilities below this are positivity violations.
pub const POSITIVITY_ERROR: f64 = 1e-6;
/// Predicted probabilities below this are counted as near-violations.
pub const POSITIVITY_WARNING: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WeightTarget {
    A,
    C,
    N,
    R,
}

impl WeightTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightTarget::A => "A",
            WeightTarget::C => "C",
            WeightTarget::N => "N",
            WeightTarget::R => "R",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("{target:?} model: {source}")]
    Glm { target: WeightTarget, source: GlmError },
    #[error("{target:?} model: {source}")]
    Term { target: WeightTarget, source: TermError },
    #[error("{target:?} model: eligibility-defining covariate `{term}` may not enter the selection model")]
    Firewall { target: WeightTarget, term: String },
    #[error("{target:?} model: covariate unavailable on row {row}")]
    MissingCovariate { target: WeightTarget, row: usize },
    #[error("{target:?} model: positivity violation, predicted probability {probability:e} on row {row}")]
    Positivity { target: WeightTarget, row: usize, probability: f64 },
    #[error("{target:?} model: no ascertained subject-trials in the {stratum} stratum")]
    EmptyStratum { target: WeightTarget, stratum: &'static str },
    #[error("{field}: {message}")]
    Config { field: String, message: String },
    #[error("component {0:?} has {1} values for {2} rows")]
    MissingComponent(WeightTarget, usize, usize),
}

fn default_quantile() -> f64 {
    0.99
}

fn default_true() -> bool {
    true
}

/// Specification of one component weight model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightModelSpec {
    pub target: WeightTarget,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub stabilized: bool,
    /// Fit the selection model separately within each baseline-treatment arm.
    #[serde(default)]
    pub stratify_by_treatment: bool,
    /// Add baseline treatment `A_mk` to an unstratified selection model.
    #[serde(default)]
    pub include_treatment: bool,
    /// Numerator covariates of a stabilized weight; empty means marginal.
    #[serde(default)]
    pub numerator_covariates: Vec<String>,
    #[serde(default = "default_quantile")]
    pub truncation_quantile: f64,
    /// Drop `t = 0` from the `N`/`C` hazard fits (non-adherence is undefined there).
    #[serde(default = "default_true")]
    pub skip_baseline_period: bool,
}

impl WeightModelSpec {
    pub fn new(target: WeightTarget, covariates: &[String]) -> Self {
        Self {
            target,
            covariates: covariates.to_vec(),
            stabilized: false,
            stratify_by_treatment: false,
            include_treatment: false,
            numerator_covariates: Vec::new(),
            truncation_quantile: default_quantile(),
            skip_baseline_period: true,
        }
    }

    pub fn validate(&self, dict: &Dictionary) -> Result<(), WeightError> {
        let q = self.truncation_quantile;
        if !(q > 0.5 && q <= 1.0) {
            return Err(WeightError::Config {
                field: format!("weights.{}.truncation_quantile", self.target.as_str()),
                message: format!("must lie in (0.5, 1], got {q}"),
            });
        }
        self.designs(dict).map(|_| ())
    }

    fn designs(&self, dict: &Dictionary) -> Result<(DesignSpec, DesignSpec), WeightError> {
        let target = self.target;
        let mut cov = self.covariates.clone();
        if self.include_treatment && !cov.iter().any(|c| c == "surgery") {
            cov.push("surgery".into());
        }
        let den = DesignSpec::with_intercept(&cov, dict).map_err(|source| WeightError::Term { target, source })?;
        let num = DesignSpec::with_intercept(&self.numerator_covariates, dict)
            .map_err(|source| WeightError::Term { target, source })?;
        if target == WeightTarget::R {
            for (name, term) in den.names.iter().zip(&den.terms).chain(num.names.iter().zip(&num.terms)) {
                if term.is_eligibility_defining() {
                    return Err(WeightError::Firewall { target, term: name.clone() });
                }
            }
        }
        Ok((den, num))
    }
}

/// Counts of near-violations and the smallest predicted probability seen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub min_probability: f64,
    pub warnings: usize,
}

impl Default for PositivityReport {
    fn default() -> Self {
        Self { min_probability: 1.0, warnings: 0 }
    }
}

impl PositivityReport {
    fn check(&mut self, target: WeightTarget, row: usize, p: f64) -> Result<(), WeightError> {
        self.min_probability = self.min_probability.min(p);
        if p < POSITIVITY_ERROR {
            return Err(WeightError::Positivity { target, row, probability: p });
        }
        if p < POSITIVITY_WARNING {
            self.warnings += 1;
        }
        Ok(())
    }
}

/// Fitted values of one component, one entry per pooled row (1 where the
/// component does not apply).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentWeights {
    pub target: WeightTarget,
    pub stabilized: bool,
    pub truncation_quantile: f64,
    pub values: Vec<f64>,
    /// Fitted models, labelled by stratum and role.
    pub fits: Vec<(String, GlmFit<f64>)>,
    pub positivity: PositivityReport,
}

impl ComponentWeights {
    pub fn identity(target: WeightTarget, n_rows: usize) -> Self {
        Self {
            target,
            stabilized: false,
            truncation_quantile: 1.0,
            values: vec![1.0; n_rows],
            fits: Vec::new(),
            positivity: PositivityReport::default(),
        }
    }
}

#[inline]
fn freq_of(freq: Option<&[f64]>, row: &PersonTrialPeriod) -> f64 {
    freq.map_or(1.0, |f| f[row.subject_index as usize])
}

fn context<'a>(table: &'a PooledTable, row: &PersonTrialPeriod) -> TermContext<'a> {
    TermContext {
        base: &table.baseline[row.subject_index as usize],
        bmi: row.l_t.bmi,
        a1c: row.l_t.a1c,
        surgery: if row.a_base { 1.0 } else { 0.0 },
        surgery_type: None,
        period: row.period as f64,
        trial: row.trial as f64,
    }
}

/// Fits `P(y = 1 | design)` on the listed rows.
fn fit_binary(
    table: &PooledTable,
    design: &DesignSpec,
    rows: &[usize],
    y: impl Fn(&PersonTrialPeriod) -> bool,
    freq: Option<&[f64]>,
    target: WeightTarget,
) -> Result<GlmFit<f64>, WeightError> {
    let p = design.terms.len();
    let mut data = Vec::with_capacity(rows.len() * p);
    let mut ys = Vec::with_capacity(rows.len());
    let mut ws = Vec::with_capacity(rows.len());
    for &i in rows {
        let r = &table.rows[i];
        let w = freq_of(freq, r);
        if w == 0.0 {
            continue;
        }
        design.row(&context(table, r), &mut data).ok_or(WeightError::MissingCovariate { target, row: i })?;
        ys.push(if y(r) { 1.0 } else { 0.0 });
        ws.push(w);
    }
    let x = Matrix::from_row_major(ys.len(), p, data).expect("row length matches design");
    let (xa, ya, wa, _) = aggregate_rows(&x, &ys, &ws);
    fit_logistic(&xa, &ya, &wa, &design.names).map_err(|source| WeightError::Glm { target, source })
}

fn predict(
    fit: &GlmFit<f64>,
    design: &DesignSpec,
    cx: &TermContext<'_>,
    buf: &mut Vec<f64>,
    target: WeightTarget,
    row: usize,
) -> Result<f64, WeightError> {
    buf.clear();
    design.row(cx, buf).ok_or(WeightError::MissingCovariate { target, row })?;
    Ok(clamp_prob(expit(dot(buf, &fit.coefficients))))
}

/// Weighted fraction of rows with `y = 1`; `None` if no weight.
fn weighted_rate(
    table: &PooledTable,
    rows: &[usize],
    y: impl Fn(&PersonTrialPeriod) -> bool,
    freq: Option<&[f64]>,
) -> Option<f64> {
    let (mut sw, mut swy) = (0.0, 0.0);
    for &i in rows {
        let r = &table.rows[i];
        let w = freq_of(freq, r);
        sw += w;
        if y(r) {
            swy += w;
        }
    }
    (sw > 0.0).then(|| swy / sw)
}

/// Copies the value at each `t = 0` row to the later rows of its subject-trial.
fn spread_baseline(table: &PooledTable, at_baseline: &[Option<f64>]) -> Vec<f64> {
    let mut out = vec![1.0; table.rows.len()];
    let mut current = 1.0;
    for (i, r) in table.rows.iter().enumerate() {
        if r.period == 0 {
            current = at_baseline[i].unwrap_or(1.0);
        }
        out[i] = current;
    }
    out
}

/// Selection weights `W^R = 1 / P(R = 1 | L^R [, A])`, fitted on every candidate
/// baseline row and carried by all rows of ascertained subject-trials.
pub fn fit_selection_weights(
    table: &PooledTable,
    spec: &WeightModelSpec,
    dict: &Dictionary,
    freq: Option<&[f64]>,
) -> Result<ComponentWeights, WeightError> {
    let target = WeightTarget::R;
    spec.validate(dict)?;
    let (den, num) = spec.designs(dict)?;
    let base_rows: Vec<usize> = table.baseline_rows().map(|(i, _)| i).collect();
    let strata: Vec<(&'static str, Vec<usize>)> = if spec.stratify_by_treatment {
        let (t, c): (Vec<usize>, Vec<usize>) = base_rows.iter().partition(|&&i| table.rows[i].a_base);
        vec![("control", c), ("treated", t)]
    } else {
        vec![("pooled", base_rows)]
    };
    let mut at_base = vec![None; table.rows.len()];
    let mut fits = Vec::new();
    let mut positivity = PositivityReport::default();
    let mut buf = Vec::new();
    for (label, rows) in strata {
        let Some(rate) = weighted_rate(table, &rows, |r| r.r, freq) else { continue };
        if rate == 1.0 {
            // every subject-trial in this stratum is ascertained, so W^R = 1
            continue;
        }
        if rate == 0.0 {
            return Err(WeightError::EmptyStratum { target, stratum: label });
        }
        let fit = fit_binary(table, &den, &rows, |r| r.r, freq, target)?;
        let num_fit = if spec.stabilized { Some(fit_binary(table, &num, &rows, |r| r.r, freq, target)?) } else { None };
        for &i in &rows {
            let r = &table.rows[i];
            let cx = context(table, r);
            let p = predict(&fit, &den, &cx, &mut buf, target, i)?;
            if freq_of(freq, r) > 0.0 {
                positivity.check(target, i, p)?;
            }
            if r.r {
                let numer = match &num_fit {
                    Some(nf) => predict(nf, &num, &cx, &mut buf, target, i)?,
                    None => 1.0,
                };
                at_base[i] = Some(numer / p);
            }
        }
        fits.push((format!("{label}/denominator"), fit));
        if let Some(nf) = num_fit {
            fits.push((format!("{label}/numerator"), nf));
        }
    }
    Ok(ComponentWeights {
        target,
        stabilized: spec.stabilized,
        truncation_quantile: spec.truncation_quantile,
        values: spread_baseline(table, &at_base),
        fits,
        positivity,
    })
}

/// Treatment weights `W^A = 1 / P(A = a | L)` among eligible, ascertained
/// baseline rows.
pub fn fit_treatment_weights(
    table: &PooledTable,
    spec: &WeightModelSpec,
    dict: &Dictionary,
    freq: Option<&[f64]>,
) -> Result<ComponentWeights, WeightError> {
    let target = WeightTarget::A;
    spec.validate(dict)?;
    let (den, num) = spec.designs(dict)?;
    let rows: Vec<usize> = table.baseline_rows().filter(|(_, r)| r.in_followup()).map(|(i, _)| i).collect();
    let mut at_base = vec![None; table.rows.len()];
    let mut fits = Vec::new();
    let mut positivity = PositivityReport::default();
    if let Some(rate) = weighted_rate(table, &rows, |r| r.a_base, freq) {
        if rate == 0.0 || rate == 1.0 {
            return Err(WeightError::Positivity { target, row: rows[0], probability: 0.0 });
        }
        let fit = fit_binary(table, &den, &rows, |r| r.a_base, freq, target)?;
        let num_fit =
            if spec.stabilized { Some(fit_binary(table, &num, &rows, |r| r.a_base, freq, target)?) } else { None };
        let mut buf = Vec::new();
        for &i in &rows {
            let r = &table.rows[i];
            let cx = context(table, r);
            let p1 = predict(&fit, &den, &cx, &mut buf, target, i)?;
            if freq_of(freq, r) > 0.0 {
                positivity.check(target, i, p1.min(1.0 - p1))?;
            }
            let p = if r.a_base { p1 } else { 1.0 - p1 };
            let numer = match &num_fit {
                Some(nf) => {
                    let q = predict(nf, &num, &cx, &mut buf, target, i)?;
                    if r.a_base {
                        q
                    } else {
                        1.0 - q
                    }
                }
                None => 1.0,
            };
            at_base[i] = Some(numer / p);
        }
        fits.push(("denominator".to_string(), fit));
        if let Some(nf) = num_fit {
            fits.push(("numerator".to_string(), nf));
        }
    }
    Ok(ComponentWeights {
        target,
        stabilized: spec.stabilized,
        truncation_quantile: spec.truncation_quantile,
        values: spread_baseline(table, &at_base),
        fits,
        positivity,
    })
}

/// Shared machinery of the cumulative `N` and `C` weights.
fn fit_cumulative(
    table: &PooledTable,
    spec: &WeightModelSpec,
    dict: &Dictionary,
    freq: Option<&[f64]>,
    target: WeightTarget,
    applies: impl Fn(&PersonTrialPeriod) -> bool,
    event: impl Fn(&PersonTrialPeriod) -> bool + Copy,
) -> Result<ComponentWeights, WeightError> {
    spec.validate(dict)?;
    let (den, num) = spec.designs(dict)?;
    // at-risk rows: follow-up rows of applicable subject-trials up to and
    // including the first event
    let mut at_risk = vec![false; table.rows.len()];
    let mut risk_rows = Vec::new();
    let mut done = false;
    for (i, r) in table.rows.iter().enumerate() {
        if r.period == 0 {
            done = false;
        }
        if !r.in_followup() || !applies(r) || done {
            continue;
        }
        if !(spec.skip_baseline_period && r.period == 0) {
            at_risk[i] = true;
            risk_rows.push(i);
        }
        if event(r) {
            done = true;
        }
    }
    let mut values = vec![1.0; table.rows.len()];
    let mut fits = Vec::new();
    let mut positivity = PositivityReport::default();
    let rate = weighted_rate(table, &risk_rows, event, freq).unwrap_or(0.0);
    if rate > 0.0 {
        let fit = fit_binary(table, &den, &risk_rows, event, freq, target)?;
        let num_fit =
            if spec.stabilized { Some(fit_binary(table, &num, &risk_rows, event, freq, target)?) } else { None };
        let mut buf = Vec::new();
        let mut cum = 1.0;
        for (i, r) in table.rows.iter().enumerate() {
            if r.period == 0 {
                cum = 1.0;
            }
            if at_risk[i] {
                let cx = context(table, r);
                let p0 = 1.0 - predict(&fit, &den, &cx, &mut buf, target, i)?;
                if freq_of(freq, r) > 0.0 {
                    positivity.check(target, i, p0)?;
                }
                let numer = match &num_fit {
                    Some(nf) => 1.0 - predict(nf, &num, &cx, &mut buf, target, i)?,
                    None => 1.0,
                };
                cum *= numer / p0;
            }
            values[i] = cum;
        }
        fits.push(("denominator".to_string(), fit));
        if let Some(nf) = num_fit {
            fits.push(("numerator".to_string(), nf));
        }
    }
    Ok(ComponentWeights {
        target,
        stabilized: spec.stabilized,
        truncation_quantile: spec.truncation_quantile,
        values,
        fits,
        positivity,
    })
}

/// Cumulative adherence weights `W^N_t = Π_{i≤t} 1 / P(N_i = 0 | L)` for
/// controls; initiators keep `W^N = 1`.
pub fn fit_adherence_weights(
    table: &PooledTable,
    spec: &WeightModelSpec,
    dict: &Dictionary,
    freq: Option<&[f64]>,
) -> Result<ComponentWeights, WeightError> {
    fit_cumulative(table, spec, dict, freq, WeightTarget::N, |r| !r.a_base, |r| r.n)
}

/// Cumulative censoring weights `W^C_t = Π_{i≤t} 1 / P(C_i = 0 | L)`.
pub fn fit_censoring_weights(
    table: &PooledTable,
    spec: &WeightModelSpec,
    dict: &Dictionary,
    freq: Option<&[f64]>,
) -> Result<ComponentWeights, WeightError> {
    fit_cumulative(table, spec, dict, freq, WeightTarget::C, |_| true, |r| r.c)
}

pub fn fit_component(
    table: &PooledTable,
    spec: &WeightModelSpec,
    dict: &Dictionary,
    freq: Option<&[f64]>,
) -> Result<ComponentWeights, WeightError> {
    match spec.target {
        WeightTarget::A => fit_treatment_weights(table, spec, dict, freq),
        WeightTarget::C => fit_censoring_weights(table, spec, dict, freq),
        WeightTarget::N => fit_adherence_weights(table, spec, dict, freq),
        WeightTarget::R => fit_selection_weights(table, spec, dict, freq),
    }
}

/// Effect of truncating one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub target: WeightTarget,
    pub quantile: f64,
    pub threshold: Option<f64>,
    pub rows_capped: usize,
    /// Sum of `value - threshold` over capped outcome rows (frequency weighted).
    pub mass_removed: f64,
}

/// Final per-row weights; each component is 1 where it was not requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub w_a: Vec<f64>,
    pub w_c: Vec<f64>,
    pub w_n: Vec<f64>,
    pub w_r: Vec<f64>,
    pub stabilized: bool,
    pub w_total: Vec<f64>,
    pub truncation: Vec<TruncationReport>,
    pub positivity: Vec<(WeightTarget, PositivityReport)>,
}

impl WeightSet {
    pub fn identity(n_rows: usize) -> Self {
        Self {
            w_a: vec![1.0; n_rows],
            w_c: vec![1.0; n_rows],
            w_n: vec![1.0; n_rows],
            w_r: vec![1.0; n_rows],
            stabilized: false,
            w_total: vec![1.0; n_rows],
            truncation: Vec::new(),
            positivity: Vec::new(),
        }
    }
}

/// Truncates each component at its own frequency-weighted quantile over the
/// outcome rows, then multiplies.
pub fn combine_and_truncate(
    table: &PooledTable,
    components: &[ComponentWeights],
    mode: Mode,
    freq: Option<&[f64]>,
) -> Result<WeightSet, WeightError> {
    let n = table.rows.len();
    let mut set = WeightSet::identity(n);
    let outcome: Vec<usize> = (0..n).filter(|&i| table.outcome_row(&table.rows[i], mode)).collect();
    let counts: Vec<f64> = outcome.iter().map(|&i| freq_of(freq, &table.rows[i])).collect();
    for comp in components {
        if comp.values.len() != n {
            return Err(WeightError::MissingComponent(comp.target, comp.values.len(), n));
        }
        let mut values = comp.values.clone();
        let mut report = TruncationReport {
            target: comp.target,
            quantile: comp.truncation_quantile,
            threshold: None,
            rows_capped: 0,
            mass_removed: 0.0,
        };
        if comp.truncation_quantile < 1.0 {
            let vals: Vec<f64> = outcome.iter().map(|&i| values[i]).collect();
            if let Some(th) = quantile_with_counts(&vals, &counts, comp.truncation_quantile) {
                report.threshold = Some(th);
                for (j, &i) in outcome.iter().enumerate() {
                    if values[i] > th {
                        report.rows_capped += 1;
                        report.mass_removed += counts[j] * (values[i] - th);
                    }
                }
                for v in values.iter_mut() {
                    if *v > th {
                        *v = th;
                    }
                }
            }
        }
        set.stabilized |= comp.stabilized;
        set.positivity.push((comp.target, comp.positivity));
        set.truncation.push(report);
        match comp.target {
            WeightTarget::A => set.w_a = values,
            WeightTarget::C => set.w_c = values,
            WeightTarget::N => set.w_n = values,
            WeightTarget::R => set.w_r = values,
        }
    }
    for i in 0..n {
        set.w_total[i] = set.w_a[i] * set.w_c[i] * set.w_n[i] * set.w_r[i];
    }
    Ok(set)
}

/// Quantile summary of a weight vector over a subset of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub q01: f64,
    pub q50: f64,
    pub q99: f64,
    pub max: f64,
}

pub fn summarize(values: &[f64], rows: &[usize]) -> Option<WeightSummary> {
    let mut v: Vec<f64> = rows.iter().map(|&i| values[i]).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let q = |p: f64| crate::stats::quantile_sorted(&v, p);
    Some(WeightSummary {
        n: v.len(),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        min: v[0],
        q01: q(0.01),
        q50: q(0.5),
        q99: q(0.99),
        max: v[v.len() - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BaselineCovariates, EligibilitySnapshot, Smoking};

    fn base(smoking: Smoking, elix: f64) -> BaselineCovariates {
        BaselineCovariates {
            gender: 0,
            race: 0,
            site: 0,
            smoking_status: smoking,
            elix_score: elix,
            insulin: 0,
            bmi0: 40.0,
            a1c0: 6.0,
        }
    }

    fn row(trial: u32, k: u32, t: u32) -> PersonTrialPeriod {
        PersonTrialPeriod {
            trial,
            subject_id: k as u64,
            subject_index: k,
            period: t,
            y: false,
            a_base: false,
            n: false,
            c: false,
            e: Some(true),
            r: true,
            l_base: EligibilitySnapshot { bmi: Some(40.0), a1c: Some(6.0) },
            l_t: EligibilitySnapshot { bmi: Some(40.0), a1c: Some(6.0) },
        }
    }

    fn table(rows: Vec<PersonTrialPeriod>, baseline: Vec<BaselineCovariates>) -> PooledTable {
        let ids = (0..baseline.len() as u64).collect();
        PooledTable { rows, trials: 1, t_max: 36, mode: Mode::Pp, baseline, subject_ids: ids }
    }

    #[test]
    fn intercept_only_selection_weight_is_marginal_reciprocal() {
        let n = 100;
        let rows: Vec<_> = (0..n)
            .map(|k| {
                let mut r = row(1, k, 0);
                if k % 5 >= 3 {
                    r.r = false;
                    r.e = None;
                }
                r
            })
            .collect();
        let t = table(rows, (0..n).map(|_| base(Smoking::Never, 0.0)).collect());
        let spec = WeightModelSpec::new(WeightTarget::R, &[]);
        let w = fit_selection_weights(&t, &spec, &Dictionary::default(), None).unwrap();
        for (r, v) in t.rows.iter().zip(&w.values) {
            if r.r {
                assert!((v - 1.0 / 0.6).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn stratified_treated_arm_without_missingness_gets_unit_weights() {
        let n = 200;
        let rows: Vec<_> = (0..n)
            .map(|k| {
                let mut r = row(1, k, 0);
                r.a_base = k % 4 == 0;
                if !r.a_base && k % 3 == 0 {
                    r.r = false;
                    r.e = None;
                }
                r
            })
            .collect();
        let t = table(rows, (0..n).map(|k| base(Smoking::Never, (k % 7) as f64 / 7.0)).collect());
        let mut spec = WeightModelSpec::new(WeightTarget::R, &["elix_score".into()]);
        spec.stratify_by_treatment = true;
        let w = fit_selection_weights(&t, &spec, &Dictionary::default(), None).unwrap();
        for (r, v) in t.rows.iter().zip(&w.values) {
            if r.a_base {
                assert_eq!(*v, 1.0);
            }
        }
        assert_eq!(w.fits.len(), 1);
    }

    #[test]
    fn firewall_rejects_eligibility_covariates() {
        let spec = WeightModelSpec::new(WeightTarget::R, &["elix_score".into(), "bmi".into()]);
        assert!(matches!(spec.validate(&Dictionary::default()), Err(WeightError::Firewall { .. })));
        let spec = WeightModelSpec::new(WeightTarget::A, &["bmi".into()]);
        assert!(spec.validate(&Dictionary::default()).is_ok());
    }

    #[test]
    fn intercept_only_treatment_weights() {
        let n = 100;
        let rows: Vec<_> = (0..n)
            .map(|k| {
                let mut r = row(1, k, 0);
                r.a_base = k < 20;
                r
            })
            .collect();
        let t = table(rows, (0..n).map(|_| base(Smoking::Never, 0.0)).collect());
        let w = fit_treatment_weights(&t, &WeightModelSpec::new(WeightTarget::A, &[]), &Dictionary::default(), None)
            .unwrap();
        for (r, v) in t.rows.iter().zip(&w.values) {
            let expected = if r.a_base { 5.0 } else { 1.25 };
            assert!((v - expected).abs() < 1e-8);
        }
    }

    #[test]
    fn geometric_adherence_weights() {
        // each control has 10 periods; one in eight at-risk rows initiates
        let mut rows = Vec::new();
        let mut k = 0u32;
        let mut baseline = Vec::new();
        for subj in 0..400u32 {
            let stop = if subj % 2 == 0 { 10 } else { 1 + subj % 9 };
            for t in 0..=stop.min(9) {
                let mut r = row(1, k, t);
                r.n = subj % 2 == 1 && t == stop;
                rows.push(r);
            }
            baseline.push(base(Smoking::Never, 0.0));
            k += 1;
        }
        let t = table(rows, baseline);
        let spec = WeightModelSpec::new(WeightTarget::N, &[]);
        let w = fit_adherence_weights(&t, &spec, &Dictionary::default(), None).unwrap();
        let risk: Vec<&PersonTrialPeriod> = t.rows.iter().filter(|r| r.period >= 1).collect();
        let h = risk.iter().filter(|r| r.n).count() as f64 / risk.len() as f64;
        for (r, v) in t.rows.iter().zip(&w.values) {
            let expected = (1.0 - h).powi(-(r.period as i32));
            assert!((v - expected).abs() < 1e-8 * expected, "{v} vs {expected}");
        }
    }

    #[test]
    fn no_censoring_gives_identity_weights() {
        let rows: Vec<_> = (0..30).flat_map(|k| (0..5).map(move |t| row(1, k, t))).collect();
        let t = table(rows, (0..30).map(|_| base(Smoking::Never, 0.0)).collect());
        let w = fit_censoring_weights(&t, &WeightModelSpec::new(WeightTarget::C, &[]), &Dictionary::default(), None)
            .unwrap();
        assert!(w.values.iter().all(|&v| v == 1.0));
        let n = fit_adherence_weights(&t, &WeightModelSpec::new(WeightTarget::N, &[]), &Dictionary::default(), None)
            .unwrap();
        assert!(n.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn truncation_caps_top_order_statistics() {
        let n = 1000u32;
        let rows: Vec<_> = (0..n).map(|k| row(1, k, 0)).collect();
        let t = table(rows, (0..n).map(|_| base(Smoking::Never, 0.0)).collect());
        let mut values: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 / 1000.0).collect();
        values[999] = 1e6;
        let comp = ComponentWeights {
            target: WeightTarget::R,
            stabilized: false,
            truncation_quantile: 0.99,
            values: values.clone(),
            fits: Vec::new(),
            positivity: PositivityReport::default(),
        };
        let set = combine_and_truncate(&t, &[comp.clone()], Mode::Pp, None).unwrap();
        let rep = &set.truncation[0];
        assert_eq!(rep.rows_capped, 10);
        let th = rep.threshold.unwrap();
        assert!(th >= values[989] && th < values[990]);
        assert!(set.w_total[..990].iter().zip(&values[..990]).all(|(a, b)| a == b));
        assert!(set.w_total[990..].iter().all(|&v| v == th));

        let none =
            combine_and_truncate(&t, &[ComponentWeights { truncation_quantile: 1.0, ..comp }], Mode::Pp, None).unwrap();
        assert_eq!(none.w_total, values);
        assert_eq!(none.truncation[0].rows_capped, 0);
    }

    #[test]
    fn identity_components_multiply_to_one() {
        let rows: Vec<_> = (0..10).map(|k| row(1, k, 0)).collect();
        let t = table(rows, (0..10).map(|_| base(Smoking::Never, 0.0)).collect());
        let comps: Vec<_> =
            [WeightTarget::A, WeightTarget::R].iter().map(|&g| ComponentWeights::identity(g, 10)).collect();
        let set = combine_and_truncate(&t, &comps, Mode::Pp, None).unwrap();
        assert!(set.w_total.iter().all(|&v| v == 1.0));
        let bad = ComponentWeights::identity(WeightTarget::N, 3);
        assert!(matches!(combine_and_truncate(&t, &[bad], Mode::Pp, None), Err(WeightError::MissingComponent(..))));
    }

    #[test]
    fn frequency_vector_equals_duplicated_subjects() {
        // weights from a frequency vector agree with a table that repeats subjects
        let n = 60u32;
        let bases: Vec<_> = (0..n).map(|k| base(Smoking::ALL[(k % 3) as usize], (k as f64 * 0.37).sin())).collect();
        let mk = |k: u32, idx: u32| {
            let mut r = row(1, idx, 0);
            r.r = (k * 7 + 3) % 5 < 3;
            if !r.r {
                r.e = None;
            }
            r
        };
        let freq: Vec<f64> = (0..n).map(|k| (k % 3) as f64).collect();
        let t = table((0..n).map(|k| mk(k, k)).collect(), bases.clone());
        let mut dup_rows = Vec::new();
        let mut dup_base = Vec::new();
        for k in 0..n {
            for _ in 0..freq[k as usize] as usize {
                dup_rows.push(mk(k, dup_base.len() as u32));
                dup_base.push(bases[k as usize].clone());
            }
        }
        let td = table(dup_rows, dup_base);
        let spec = WeightModelSpec::new(WeightTarget::R, &["elix_score".into(), "smoking_status[current]".into()]);
        let a = fit_selection_weights(&t, &spec, &Dictionary::default(), Some(&freq)).unwrap();
        let b = fit_selection_weights(&td, &spec, &Dictionary::default(), None).unwrap();
        for (ca, cb) in a.fits[0].1.coefficients.iter().zip(&b.fits[0].1.coefficients) {
            assert!((ca - cb).abs() < 1e-10);
        }
    }
}
