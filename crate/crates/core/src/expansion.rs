//! Sequential trial expansion: eligibility ascertainment with lookback
//! windows and construction of the pooled person-trial-period table.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BaselineCovariates, EligibilityRule, EligibilitySnapshot, PersonTrialPeriod, SubjectRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExpansionError {
    #[error("{field}: {message}")]
    Config { field: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Itt,
    #[default]
    Pp,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Itt => "itt",
            Mode::Pp => "pp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "itt" => Some(Mode::Itt),
            "pp" => Some(Mode::Pp),
            _ => None,
        }
    }
}

/// Outcome of ascertaining one subject at one trial start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ascertainment {
    pub r: bool,
    pub e: Option<bool>,
    pub snapshot: EligibilitySnapshot,
}

/// Ascertains eligibility at `trial_start` from the latest measurements inside
/// each criterion's lookback window.
pub fn ascertain_eligibility(record: &SubjectRecord, trial_start: u32, rule: &EligibilityRule) -> Ascertainment {
    let bmi = SubjectRecord::latest_in_window(&record.bmi_series, trial_start, rule.bmi_lookback.max(1) as u32);
    let a1c = SubjectRecord::latest_in_window(&record.a1c_series, trial_start, rule.a1c_lookback.max(1) as u32);
    let snapshot = EligibilitySnapshot { bmi, a1c };
    let initiates = record.surgery_time == Some(trial_start);
    let prior = record.surgery_time.is_some_and(|s| s < trial_start);
    let bmi_by_construction = rule.treated_implies_eligible && initiates;

    let mut ascertained = true;
    let mut eligible = true;
    if let Some(th) = rule.bmi_threshold {
        if !bmi_by_construction {
            match bmi {
                Some(v) => eligible &= v >= th,
                None => ascertained = false,
            }
        }
    }
    if let Some(th) = rule.a1c_threshold {
        match a1c {
            Some(v) => eligible &= v >= th,
            None => ascertained = false,
        }
    }
    if rule.require_no_prior_surgery && prior {
        eligible = false;
    }
    if ascertained {
        Ascertainment { r: true, e: Some(eligible), snapshot }
    } else {
        Ascertainment { r: false, e: None, snapshot }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpandConfig {
    /// Number of trials `M`.
    pub trials: u32,
    #[serde(rename = "T_max")]
    pub t_max: u32,
    pub rule: EligibilityRule,
    #[serde(default)]
    pub mode: Mode,
}

impl ExpandConfig {
    pub fn validate(&self) -> Result<(), ExpansionError> {
        let err = |f: &str, m: String| Err(ExpansionError::Config { field: f.into(), message: m });
        if let Some((f, m)) = self.rule.validate().into_iter().next() {
            return err(&f, m);
        }
        if self.trials == 0 {
            return err("trials", "must be positive".into());
        }
        if self.trials > self.t_max {
            return err("trials", format!("M = {} exceeds T_max = {}", self.trials, self.t_max));
        }
        Ok(())
    }
}

/// Pooled analysis table plus the per-subject data the weight models read.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledTable {
    /// Rows in canonical `(m, k, t)` order.
    pub rows: Vec<PersonTrialPeriod>,
    pub trials: u32,
    pub t_max: u32,
    pub mode: Mode,
    /// Baseline covariates indexed by `subject_index`.
    pub baseline: Vec<BaselineCovariates>,
    pub subject_ids: Vec<u64>,
}

impl PooledTable {
    pub fn n_subjects(&self) -> usize {
        self.baseline.len()
    }

    /// Baseline `t = 0` rows of every candidate subject-trial.
    pub fn baseline_rows(&self) -> impl Iterator<Item = (usize, &PersonTrialPeriod)> {
        self.rows.iter().enumerate().filter(|(_, r)| r.period == 0)
    }

    /// Rows the outcome model may consume under `mode`.
    pub fn outcome_row(&self, row: &PersonTrialPeriod, mode: Mode) -> bool {
        row.in_followup() && !row.c && (mode == Mode::Itt || !row.n)
    }
}

/// Candidate status of subject `k` at trial start `s`: excluded if treated
/// earlier, or if an event or censoring was recorded at or before `s`.
fn is_candidate(rec: &SubjectRecord, s: u32) -> bool {
    !rec.surgery_time.is_some_and(|v| v < s)
        && !rec.event_time.is_some_and(|e| e <= s)
        && !rec.censor_time.is_some_and(|c| c <= s)
}

fn subject_trial_rows(rec: &SubjectRecord, index: u32, m: u32, cfg: &ExpandConfig, out: &mut Vec<PersonTrialPeriod>) {
    let start = m - 1;
    // row t needs the outcome month start + t + 1 inside the study
    if start + 1 >= cfg.t_max || !is_candidate(rec, start) {
        return;
    }
    let asc = ascertain_eligibility(rec, start, &cfg.rule);
    let a_base = rec.surgery_time == Some(start);
    let follow = asc.r && asc.e == Some(true);
    let mut t = 0u32;
    loop {
        let month = start + t;
        let y = rec.event_time == Some(month + 1);
        let c = rec.censor_time == Some(month + 1);
        let n = !a_base && rec.treated_by(month);
        let l_t = if t == 0 {
            asc.snapshot
        } else {
            EligibilitySnapshot {
                bmi: SubjectRecord::latest_in_window(&rec.bmi_series, month, cfg.rule.bmi_lookback.max(1) as u32),
                a1c: SubjectRecord::latest_in_window(&rec.a1c_series, month, cfg.rule.a1c_lookback.max(1) as u32),
            }
        };
        out.push(PersonTrialPeriod {
            trial: m,
            subject_id: rec.subject_id,
            subject_index: index,
            period: t,
            y: y && !c,
            a_base,
            n,
            c,
            e: asc.e,
            r: asc.r,
            l_base: asc.snapshot,
            l_t,
        });
        let stop = !follow || y || c || (cfg.mode == Mode::Pp && n) || month + 2 >= cfg.t_max;
        if stop {
            break;
        }
        t += 1;
    }
}

/// Builds the pooled table over trials `1..=M`.
///
/// Every candidate subject-trial contributes its `t = 0` row, including those
/// with `R = 0` or `E = 0`, so that selection models can be fitted; only
/// `R = 1, E = 1` subject-trials receive follow-up rows.
pub fn expand(cohort: &[SubjectRecord], cfg: &ExpandConfig) -> Result<PooledTable, ExpansionError> {
    cfg.validate()?;
    let per_trial: Vec<Vec<PersonTrialPeriod>> = (1..=cfg.trials)
        .into_par_iter()
        .map(|m| {
            let mut rows = Vec::new();
            for (k, rec) in cohort.iter().enumerate() {
                subject_trial_rows(rec, k as u32, m, cfg, &mut rows);
            }
            rows
        })
        .collect();
    let total = per_trial.iter().map(Vec::len).sum();
    let mut rows = Vec::with_capacity(total);
    for r in per_trial {
        rows.extend(r);
    }
    Ok(PooledTable {
        rows,
        trials: cfg.trials,
        t_max: cfg.t_max,
        mode: cfg.mode,
        baseline: cohort.iter().map(|r| r.baseline.clone()).collect(),
        subject_ids: cohort.iter().map(|r| r.subject_id).collect(),
    })
}

/// Closed-form pooled size with no attrition: `K·M·(T_max − (M+1)/2)` rows,
/// i.e. `K·Σ_m (T_max − m)`.
pub fn expected_rows_no_attrition(k: u64, m: u64, t_max: u64) -> u64 {
    // M*(2*T_max - M - 1) is always even
    k * m * (2 * t_max - m - 1) / 2
}

/// Counts of candidate subject-trials by ascertainment status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AscertainmentCounts {
    pub bmi_lookback: u32,
    pub a1c_lookback: u32,
    pub eligible: u64,
    pub ineligible: u64,
    pub unascertained: u64,
}

impl AscertainmentCounts {
    pub fn ascertained(&self) -> u64 {
        self.eligible + self.ineligible
    }
}

/// Joint `(R, E)` distribution of subject-trials on a lookback grid.
pub fn lookback_sweep(
    cohort: &[SubjectRecord],
    trials: u32,
    rule: &EligibilityRule,
    bmi_lookbacks: &[u32],
    a1c_lookbacks: &[u32],
) -> Vec<AscertainmentCounts> {
    let cells: Vec<(u32, u32)> =
        bmi_lookbacks.iter().flat_map(|&b| a1c_lookbacks.iter().map(move |&a| (b, a))).collect();
    cells
        .into_par_iter()
        .map(|(b, a)| {
            let r = EligibilityRule { bmi_lookback: b as i64, a1c_lookback: a as i64, ..rule.clone() };
            let mut c = AscertainmentCounts { bmi_lookback: b, a1c_lookback: a, ..Default::default() };
            for rec in cohort {
                for m in 1..=trials {
                    if !is_candidate(rec, m - 1) {
                        continue;
                    }
                    match ascertain_eligibility(rec, m - 1, &r).e {
                        Some(true) => c.eligible += 1,
                        Some(false) => c.ineligible += 1,
                        None => c.unascertained += 1,
                    }
                }
            }
            c
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Measurement, Smoking, SurgeryType};

    fn subject(id: u64, bmi: &[(u32, f64)], a1c: &[(u32, f64)]) -> SubjectRecord {
        SubjectRecord {
            subject_id: id,
            baseline: BaselineCovariates {
                gender: 0,
                race: 0,
                site: 0,
                smoking_status: Smoking::Never,
                elix_score: 0.0,
                insulin: 0,
                bmi0: 40.0,
                a1c0: 6.0,
            },
            bmi_series: bmi.iter().map(|&(month, value)| Measurement { month, value }).collect(),
            a1c_series: a1c.iter().map(|&(month, value)| Measurement { month, value }).collect(),
            surgery_time: None,
            surgery_type: None,
            event_time: None,
            censor_time: None,
            censor_reason: None,
        }
    }

    fn full(id: u64, t_max: u32) -> SubjectRecord {
        let bmi: Vec<_> = (0..t_max).map(|m| (m, 40.0)).collect();
        let a1c: Vec<_> = (0..t_max).map(|m| (m, 6.0)).collect();
        subject(id, &bmi, &a1c)
    }

    fn rule(lb: i64) -> EligibilityRule {
        EligibilityRule { bmi_lookback: lb, a1c_lookback: lb, ..EligibilityRule::study1() }
    }

    #[test]
    fn missing_component_is_unascertained() {
        let rec = subject(1, &[(8, 36.0)], &[]);
        let a = ascertain_eligibility(&rec, 10, &rule(3));
        assert!(!a.r);
        assert_eq!(a.e, None);
    }

    #[test]
    fn both_criteria_met() {
        let rec = subject(1, &[(8, 36.0)], &[(9, 5.9)]);
        let a = ascertain_eligibility(&rec, 10, &rule(3));
        assert!(a.r);
        assert_eq!(a.e, Some(true));
        let low = subject(1, &[(8, 34.9)], &[(9, 5.9)]);
        assert_eq!(ascertain_eligibility(&low, 10, &rule(3)).e, Some(false));
    }

    #[test]
    fn surgery_establishes_bmi_criterion_in_study2() {
        let mut rec = subject(1, &[], &[]);
        rec.surgery_time = Some(4);
        rec.surgery_type = Some(SurgeryType::Rygb);
        let a = ascertain_eligibility(&rec, 4, &EligibilityRule::study2());
        assert!(a.r);
        assert_eq!(a.e, Some(true));
        // study 1 still needs A1c
        assert!(!ascertain_eligibility(&rec, 4, &EligibilityRule::study1()).r);
    }

    #[test]
    fn small_enumeration() {
        let cohort = vec![full(0, 3)];
        let cfg = ExpandConfig { trials: 1, t_max: 3, rule: rule(1), mode: Mode::Pp };
        let t = expand(&cohort, &cfg).unwrap();
        // months 0 and 1 are trial periods; the month-2 outcome closes period 1
        assert_eq!(t.rows.len(), 2);
        assert_eq!(expected_rows_no_attrition(1, 1, 3), 2);
    }

    #[test]
    fn closed_form_matches_enumeration() {
        let cohort: Vec<_> = (0..4).map(|k| full(k, 10)).collect();
        for m in 1..=10 {
            let cfg = ExpandConfig { trials: m, t_max: 10, rule: rule(1), mode: Mode::Itt };
            let t = expand(&cohort, &cfg).unwrap();
            assert_eq!(t.rows.len() as u64, expected_rows_no_attrition(4, m as u64, 10));
        }
    }

    #[test]
    fn control_artificially_censored_at_surgery() {
        let mut rec = full(0, 12);
        rec.surgery_time = Some(5);
        rec.surgery_type = Some(SurgeryType::Vsg);
        let cfg = ExpandConfig { trials: 1, t_max: 12, rule: rule(1), mode: Mode::Pp };
        let t = expand(&[rec.clone()], &cfg).unwrap();
        let trial1: Vec<_> = t.rows.iter().filter(|r| r.trial == 1).collect();
        assert_eq!(trial1.len(), 6);
        assert!(trial1[..5].iter().all(|r| !r.n && !r.a_base));
        assert!(trial1[5].n);
        let outcome: Vec<_> = trial1.iter().filter(|r| t.outcome_row(r, Mode::Pp)).collect();
        assert_eq!(outcome.len(), 5);
        // the surgery trial lists the subject as an initiator exactly once
        let cfg6 = ExpandConfig { trials: 12, ..cfg };
        let t6 = expand(&[rec], &cfg6).unwrap();
        let starts: Vec<_> = t6.rows.iter().filter(|r| r.a_base && r.period == 0).map(|r| r.trial).collect();
        assert_eq!(starts, vec![6]);
    }

    #[test]
    fn m_above_t_max_rejected() {
        let cfg = ExpandConfig { trials: 5, t_max: 4, rule: rule(1), mode: Mode::Pp };
        assert!(expand(&[], &cfg).is_err());
        let bad = ExpandConfig { trials: 2, t_max: 4, rule: rule(0), mode: Mode::Pp };
        let ExpansionError::Config { field, .. } = expand(&[], &bad).unwrap_err();
        assert_eq!(field, "rule.bmi_lookback");
    }

    #[test]
    fn events_stop_follow_up_and_exclude_later_trials() {
        let mut rec = full(0, 10);
        rec.event_time = Some(3);
        let cfg = ExpandConfig { trials: 6, t_max: 10, rule: rule(1), mode: Mode::Pp };
        let t = expand(&[rec], &cfg).unwrap();
        assert!(t.rows.iter().all(|r| r.month() <= 2));
        assert_eq!(t.rows.iter().filter(|r| r.y).count(), 3);
        assert!(t.rows.iter().all(|r| r.trial <= 3));
    }

    #[test]
    fn sweep_counts_nested_windows() {
        let rec = subject(0, &[(0, 40.0), (6, 40.0)], &[(2, 6.0)]);
        let grid = lookback_sweep(&[rec], 8, &EligibilityRule::study1(), &[1, 3, 12], &[1, 12]);
        for b in 0..3 {
            assert!(grid[b * 2 + 1].ascertained() >= grid[b * 2].ascertained());
        }
        for a in 0..2 {
            assert!(grid[2 * 2 + a].ascertained() >= grid[a].ascertained());
        }
        let cohort: Vec<_> = (0..3).map(|k| full(k, 8)).collect();
        let g = lookback_sweep(&cohort, 8, &EligibilityRule::study1(), &[1, 4], &[1]);
        assert!(g.iter().all(|c| c.unascertained == 0 && c.eligible == 24));
    }
}
