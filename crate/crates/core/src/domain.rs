//! Subject-level records, person-trial-period rows, eligibility rules and the
//! categorical data dictionary shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoking {
    Never,
    Former,
    Current,
}

impl Smoking {
    pub const ALL: [Smoking; 3] = [Smoking::Never, Smoking::Former, Smoking::Current];

    pub fn as_str(self) -> &'static str {
        match self {
            Smoking::Never => "never",
            Smoking::Former => "former",
            Smoking::Current => "current",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurgeryType {
    Rygb,
    Vsg,
}

impl SurgeryType {
    pub fn as_str(self) -> &'static str {
        match self {
            SurgeryType::Rygb => "rygb",
            SurgeryType::Vsg => "vsg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rygb" => Some(SurgeryType::Rygb),
            "vsg" => Some(SurgeryType::Vsg),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensorReason {
    Death,
    Disenrollment,
    Cancer,
    MeasurementGap,
    EndOfStudy,
    Other,
}

impl CensorReason {
    const ALL: [CensorReason; 6] = [
        CensorReason::Death,
        CensorReason::Disenrollment,
        CensorReason::Cancer,
        CensorReason::MeasurementGap,
        CensorReason::EndOfStudy,
        CensorReason::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CensorReason::Death => "death",
            CensorReason::Disenrollment => "disenrollment",
            CensorReason::Cancer => "cancer",
            CensorReason::MeasurementGap => "measurement_gap",
            CensorReason::EndOfStudy => "end_of_study",
            CensorReason::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

/// Declared levels of the free categorical covariates. Values are stored as
/// level indices; a bare categorical name in a model term evaluates to that index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    pub race: Vec<String>,
    pub site: Vec<String>,
}

impl Default for Dictionary {
    fn default() -> Self {
        Self { race: vec!["white".into(), "non_white".into()], site: vec!["site_a".into(), "site_b".into()] }
    }
}

impl Dictionary {
    pub fn race_index(&self, level: &str) -> Option<u32> {
        self.race.iter().position(|l| l == level).map(|i| i as u32)
    }

    pub fn site_index(&self, level: &str) -> Option<u32> {
        self.site.iter().position(|l| l == level).map(|i| i as u32)
    }
}

/// Time-invariant covariates `L_k0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineCovariates {
    pub gender: u8,
    pub race: u32,
    pub site: u32,
    pub smoking_status: Smoking,
    pub elix_score: f64,
    pub insulin: u8,
    pub bmi0: f64,
    pub a1c0: f64,
}

/// One observed value at a study month.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub month: u32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: u64,
    pub baseline: BaselineCovariates,
    /// Sorted by month (stable with respect to load order within a month).
    pub bmi_series: Vec<Measurement>,
    pub a1c_series: Vec<Measurement>,
    pub surgery_time: Option<u32>,
    pub surgery_type: Option<SurgeryType>,
    pub event_time: Option<u32>,
    pub censor_time: Option<u32>,
    pub censor_reason: Option<CensorReason>,
}

impl SubjectRecord {
    /// Most recent measurement in the half-open window `(start - lookback, start]`.
    /// Later entries win ties within a month.
    pub fn latest_in_window(series: &[Measurement], start: u32, lookback: u32) -> Option<f64> {
        let lo = start as i64 - lookback as i64;
        series.iter().rev().find(|m| (m.month as i64) > lo && m.month <= start).map(|m| m.value)
    }

    /// Treatment status at `month` (surgery is irreversible).
    pub fn treated_by(&self, month: u32) -> bool {
        self.surgery_time.is_some_and(|v| v <= month)
    }
}

/// A single invariant failure found by [`validate_subject`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self { field: field.into(), rule: rule.into() }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Checks every record invariant and returns the violations found.
pub fn validate_subject(record: &SubjectRecord, t_max: u32, dict: &Dictionary) -> Vec<Violation> {
    let mut out = Vec::new();
    let b = &record.baseline;
    if !(b.bmi0.is_finite() && b.bmi0 > 0.0) {
        out.push(Violation::new("baseline.bmi0", "must be finite and positive"));
    }
    if !(b.a1c0.is_finite() && b.a1c0 > 0.0) {
        out.push(Violation::new("baseline.a1c0", "must be finite and positive"));
    }
    if b.gender > 1 {
        out.push(Violation::new("baseline.gender", "must be 0 or 1"));
    }
    if b.insulin > 1 {
        out.push(Violation::new("baseline.insulin", "must be 0 or 1"));
    }
    if !b.elix_score.is_finite() {
        out.push(Violation::new("baseline.elix_score", "must be finite"));
    }
    if b.race as usize >= dict.race.len() {
        out.push(Violation::new("baseline.race", "level not in dictionary"));
    }
    if b.site as usize >= dict.site.len() {
        out.push(Violation::new("baseline.site", "level not in dictionary"));
    }
    for (name, series) in [("bmi_series", &record.bmi_series), ("a1c_series", &record.a1c_series)] {
        for m in series.iter() {
            if m.month > t_max {
                out.push(Violation::new(name, format!("month {} outside [0, {t_max}]", m.month)));
            }
            if !(m.value.is_finite() && m.value > 0.0) {
                out.push(Violation::new(name, format!("nonpositive measurement at month {}", m.month)));
            }
        }
        if series.windows(2).any(|w| w[0].month > w[1].month) {
            out.push(Violation::new(name, "months must be sorted"));
        }
    }
    for (name, t) in
        [("surgery_time", record.surgery_time), ("event_time", record.event_time), ("censor_time", record.censor_time)]
    {
        if let Some(t) = t {
            if t > t_max {
                out.push(Violation::new(name, format!("month {t} outside [0, {t_max}]")));
            }
        }
    }
    if record.surgery_time.is_some() && record.surgery_type.is_none() {
        out.push(Violation::new("surgery_type", "missing surgery_type while surgery_time is present"));
    }
    if record.surgery_time.is_none() && record.surgery_type.is_some() {
        out.push(Violation::new("surgery_type", "surgery_type present without surgery_time"));
    }
    if record.censor_reason.is_some() && record.censor_time.is_none() {
        out.push(Violation::new("censor_reason", "censor_reason present without censor_time"));
    }
    out
}

/// Deterministic eligibility rule `E = g(L^e)` with lookback windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EligibilityRule {
    pub bmi_threshold: Option<f64>,
    pub a1c_threshold: Option<f64>,
    #[serde(default = "default_true")]
    pub require_no_prior_surgery: bool,
    #[serde(default = "default_lookback")]
    pub bmi_lookback: i64,
    #[serde(default = "default_lookback")]
    pub a1c_lookback: i64,
    #[serde(default)]
    pub treated_implies_eligible: bool,
}

fn default_true() -> bool {
    true
}

fn default_lookback() -> i64 {
    1
}

impl EligibilityRule {
    /// BMI >= 35 and A1c >= 5.7, treatment initiation establishes the BMI criterion.
    pub fn study1() -> Self {
        Self {
            bmi_threshold: Some(35.0),
            a1c_threshold: Some(5.7),
            require_no_prior_surgery: true,
            bmi_lookback: 1,
            a1c_lookback: 1,
            treated_implies_eligible: true,
        }
    }

    /// BMI >= 35 only.
    pub fn study2() -> Self {
        Self { a1c_threshold: None, ..Self::study1() }
    }

    /// Returns `(field, message)` pairs describing every invalid setting.
    pub fn validate(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if self.bmi_threshold.is_none() && self.a1c_threshold.is_none() {
            out.push(("rule".into(), "at least one of bmi_threshold, a1c_threshold is required".into()));
        }
        if self.bmi_lookback < 1 {
            out.push(("rule.bmi_lookback".into(), format!("must be >= 1, got {}", self.bmi_lookback)));
        }
        if self.a1c_lookback < 1 {
            out.push(("rule.a1c_lookback".into(), format!("must be >= 1, got {}", self.a1c_lookback)));
        }
        for (name, v) in [("rule.bmi_threshold", self.bmi_threshold), ("rule.a1c_threshold", self.a1c_threshold)] {
            if let Some(v) = v {
                if !v.is_finite() {
                    out.push((name.into(), "must be finite".into()));
                }
            }
        }
        out
    }
}

/// Eligibility-defining covariate snapshot (`L^e`), absent where unmeasured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EligibilitySnapshot {
    pub bmi: Option<f64>,
    pub a1c: Option<f64>,
}

/// One row `(m, k, t)` of the pooled analysis data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersonTrialPeriod {
    pub trial: u32,
    pub subject_id: u64,
    /// Position of the subject in the cohort the table was built from.
    pub subject_index: u32,
    pub period: u32,
    /// Outcome `Y_{t+1}`: event recorded at calendar month `m - 1 + t + 1`.
    pub y: bool,
    pub a_base: bool,
    pub n: bool,
    pub c: bool,
    pub e: Option<bool>,
    pub r: bool,
    pub l_base: EligibilitySnapshot,
    pub l_t: EligibilitySnapshot,
}

impl PersonTrialPeriod {
    /// Rows of subject-trials that entered follow-up (`R = 1`, `E = 1`).
    #[inline]
    pub fn in_followup(&self) -> bool {
        self.r && self.e == Some(true)
    }

    /// Calendar month covered by this row.
    #[inline]
    pub fn month(&self) -> u32 {
        self.trial - 1 + self.period
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_record() -> SubjectRecord {
        SubjectRecord {
            subject_id: 7,
            baseline: BaselineCovariates {
                gender: 1,
                race: 0,
                site: 1,
                smoking_status: Smoking::Former,
                elix_score: 0.4,
                insulin: 0,
                bmi0: 38.0,
                a1c0: 6.1,
            },
            bmi_series: vec![Measurement { month: 0, value: 38.0 }, Measurement { month: 4, value: 37.2 }],
            a1c_series: vec![Measurement { month: 4, value: 6.0 }],
            surgery_time: Some(12),
            surgery_type: Some(SurgeryType::Vsg),
            event_time: None,
            censor_time: None,
            censor_reason: None,
        }
    }

    #[test]
    fn consistent_record_has_no_violations() {
        assert!(validate_subject(&sample_record(), 36, &Dictionary::default()).is_empty());
    }

    #[test]
    fn missing_surgery_type_is_reported() {
        let mut r = sample_record();
        r.surgery_type = None;
        let v = validate_subject(&r, 36, &Dictionary::default());
        assert_eq!(v, vec![Violation::new("surgery_type", "missing surgery_type while surgery_time is present")]);
    }

    #[test]
    fn negative_measurement_is_reported() {
        let mut r = sample_record();
        r.bmi_series[1].value = -3.0;
        let v = validate_subject(&r, 36, &Dictionary::default());
        assert_eq!(v.len(), 1);
        assert!(v[0].rule.contains("nonpositive measurement"));
    }

    #[test]
    fn window_is_half_open_and_latest_wins() {
        let s = vec![
            Measurement { month: 2, value: 1.0 },
            Measurement { month: 5, value: 2.0 },
            Measurement { month: 5, value: 3.0 },
        ];
        assert_eq!(SubjectRecord::latest_in_window(&s, 5, 1), Some(3.0));
        assert_eq!(SubjectRecord::latest_in_window(&s, 4, 2), None);
        assert_eq!(SubjectRecord::latest_in_window(&s, 4, 3), Some(1.0));
        assert_eq!(SubjectRecord::latest_in_window(&s, 5, 3), Some(3.0));
    }

    #[test]
    fn rule_validation_names_field() {
        let mut rule = EligibilityRule::study1();
        rule.bmi_lookback = -2;
        let errs = rule.validate();
        assert_eq!(errs[0].0, "rule.bmi_lookback");
    }

    #[test]
    fn serde_round_trip() {
        let r = sample_record();
        let s = serde_json::to_string(&r).unwrap();
        let back: SubjectRecord = serde_json::from_str(&s).unwrap();
        assert_eq!(r, back);
    }
}
