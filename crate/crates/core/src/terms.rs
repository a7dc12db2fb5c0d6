//! Model-term language shared by the simulator coefficient blocks and the
//! weight-model covariate lists.
//!
//! Names follow R's model-matrix conventions: `(Intercept)`, a bare variable
//! (`elix_score`, `site`), an indicator `variable[level]`, and products
//! `a:b`. A bare categorical name evaluates to its level index.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BaselineCovariates, Dictionary, Smoking, SurgeryType};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TermError {
    #[error("unknown term `{0}`")]
    Unknown(String),
    #[error("unknown level `{level}` for `{variable}`")]
    UnknownLevel { variable: String, level: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Term {
    Intercept,
    Gender,
    Race,
    RaceLevel(u32),
    Site,
    SiteLevel(u32),
    Insulin,
    Elix,
    Smoking,
    SmokingLevel(Smoking),
    /// Current BMI.
    Bmi,
    /// Current A1c.
    A1c,
    Bmi0,
    A1c0,
    /// Current treatment status `A_kt` (or baseline `A_mk` in analysis models).
    Surgery,
    BsType(SurgeryType),
    Period,
    Trial,
    Product(Vec<Term>),
}

/// Values a term may read.
#[derive(Debug, Clone, Copy)]
pub struct TermContext<'a> {
    pub base: &'a BaselineCovariates,
    pub bmi: Option<f64>,
    pub a1c: Option<f64>,
    pub surgery: f64,
    pub surgery_type: Option<SurgeryType>,
    pub period: f64,
    pub trial: f64,
}

impl<'a> TermContext<'a> {
    pub fn baseline(base: &'a BaselineCovariates) -> Self {
        Self { base, bmi: None, a1c: None, surgery: 0.0, surgery_type: None, period: 0.0, trial: 0.0 }
    }
}

impl Term {
    pub fn parse(name: &str, dict: &Dictionary) -> Result<Term, TermError> {
        let name = name.trim();
        if name.contains(':') {
            let parts = name.split(':').map(|p| Term::parse(p, dict)).collect::<Result<Vec<_>, _>>()?;
            return Ok(Term::Product(parts));
        }
        if let Some((var, rest)) = name.split_once('[') {
            let level = rest.strip_suffix(']').ok_or_else(|| TermError::Unknown(name.to_string()))?;
            let bad = || TermError::UnknownLevel { variable: var.to_string(), level: level.to_string() };
            return match var {
                "smoking_status" => Smoking::parse(level).map(Term::SmokingLevel).ok_or_else(bad),
                "race" => dict.race_index(level).map(Term::RaceLevel).ok_or_else(bad),
                "site" => dict.site_index(level).map(Term::SiteLevel).ok_or_else(bad),
                "bs_type" => SurgeryType::parse(level).map(Term::BsType).ok_or_else(bad),
                _ => Err(TermError::Unknown(name.to_string())),
            };
        }
        Ok(match name {
            "(Intercept)" => Term::Intercept,
            "gender" => Term::Gender,
            "race" => Term::Race,
            "site" => Term::Site,
            "insulin" => Term::Insulin,
            "elix_score" => Term::Elix,
            "smoking_status" => Term::Smoking,
            "bmi" => Term::Bmi,
            "hgba1c" => Term::A1c,
            "bmi0" => Term::Bmi0,
            "hgba1c0" => Term::A1c0,
            "surgery" => Term::Surgery,
            "period" => Term::Period,
            "trial" => Term::Trial,
            _ => return Err(TermError::Unknown(name.to_string())),
        })
    }

    /// Value of the term, or `None` when it reads an unmeasured covariate.
    pub fn eval(&self, cx: &TermContext<'_>) -> Option<f64> {
        let b = cx.base;
        let ind = |c: bool| if c { 1.0 } else { 0.0 };
        Some(match self {
            Term::Intercept => 1.0,
            Term::Gender => b.gender as f64,
            Term::Race => b.race as f64,
            Term::RaceLevel(l) => ind(b.race == *l),
            Term::Site => b.site as f64,
            Term::SiteLevel(l) => ind(b.site == *l),
            Term::Insulin => b.insulin as f64,
            Term::Elix => b.elix_score,
            Term::Smoking => b.smoking_status.index() as f64,
            Term::SmokingLevel(s) => ind(b.smoking_status == *s),
            Term::Bmi => cx.bmi?,
            Term::A1c => cx.a1c?,
            Term::Bmi0 => b.bmi0,
            Term::A1c0 => b.a1c0,
            Term::Surgery => cx.surgery,
            Term::BsType(t) => ind(cx.surgery_type == Some(*t)),
            Term::Period => cx.period,
            Term::Trial => cx.trial,
            Term::Product(parts) => {
                let mut v = 1.0;
                for p in parts {
                    v *= p.eval(cx)?;
                }
                v
            }
        })
    }

    /// True for covariates that define eligibility and so may not enter a
    /// selection model.
    pub fn is_eligibility_defining(&self) -> bool {
        match self {
            Term::Bmi | Term::A1c | Term::Bmi0 | Term::A1c0 => true,
            Term::Product(parts) => parts.iter().any(Term::is_eligibility_defining),
            _ => false,
        }
    }

    pub fn uses_treatment(&self) -> bool {
        match self {
            Term::Surgery | Term::BsType(_) => true,
            Term::Product(parts) => parts.iter().any(Term::uses_treatment),
            _ => false,
        }
    }
}

/// A compiled `name -> coefficient` block.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor {
    terms: Vec<(Term, f64)>,
}

impl LinearPredictor {
    pub fn compile(block: &BTreeMap<String, f64>, dict: &Dictionary) -> Result<Self, TermError> {
        let terms = block
            .iter()
            .filter(|(_, &v)| v != 0.0)
            .map(|(k, &v)| Term::parse(k, dict).map(|t| (t, v)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { terms })
    }

    pub fn constant(value: f64) -> Self {
        Self { terms: vec![(Term::Intercept, value)] }
    }

    /// Linear predictor; unmeasured covariates read as NaN.
    pub fn eval(&self, cx: &TermContext<'_>) -> f64 {
        self.terms.iter().map(|(t, c)| c * t.eval(cx).unwrap_or(f64::NAN)).sum()
    }

    pub fn terms(&self) -> &[(Term, f64)] {
        &self.terms
    }
}

/// An ordered design specification: parsed terms plus their display names.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    pub names: Vec<String>,
    pub terms: Vec<Term>,
}

impl DesignSpec {
    /// Builds a design with an intercept followed by `covariates`.
    pub fn with_intercept(covariates: &[String], dict: &Dictionary) -> Result<Self, TermError> {
        let mut names = vec!["(Intercept)".to_string()];
        let mut terms = vec![Term::Intercept];
        for c in covariates {
            if c == "(Intercept)" {
                continue;
            }
            terms.push(Term::parse(c, dict)?);
            names.push(c.clone());
        }
        Ok(Self { names, terms })
    }

    pub fn row(&self, cx: &TermContext<'_>, out: &mut Vec<f64>) -> Option<()> {
        for t in &self.terms {
            out.push(t.eval(cx)?);
        }
        Some(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> BaselineCovariates {
        BaselineCovariates {
            gender: 1,
            race: 1,
            site: 1,
            smoking_status: Smoking::Current,
            elix_score: 2.0,
            insulin: 1,
            bmi0: 40.0,
            a1c0: 6.5,
        }
    }

    #[test]
    fn parses_and_evaluates_table_names() {
        let dict = Dictionary::default();
        let b = base();
        let mut cx = TermContext::baseline(&b);
        cx.surgery = 1.0;
        cx.bmi = Some(35.0);
        let eval = |n: &str| Term::parse(n, &dict).unwrap().eval(&cx);
        assert_eq!(eval("(Intercept)"), Some(1.0));
        assert_eq!(eval("smoking_status[current]"), Some(1.0));
        assert_eq!(eval("smoking_status[former]"), Some(0.0));
        assert_eq!(eval("surgery:elix_score"), Some(2.0));
        assert_eq!(eval("site"), Some(1.0));
        assert_eq!(eval("race[non_white]"), Some(1.0));
        assert_eq!(eval("bmi"), Some(35.0));
        assert_eq!(eval("hgba1c"), None);
        assert!(Term::parse("foo", &dict).is_err());
        assert!(Term::parse("site[nowhere]", &dict).is_err());
    }

    #[test]
    fn outcome_example_arithmetic() {
        // -9.21 + 0.10 * 35 + 0.18 * 6 = -4.63
        let dict = Dictionary::default();
        let block: BTreeMap<String, f64> = [("(Intercept)", -9.21), ("bmi", 0.10), ("hgba1c", 0.18)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        let lp = LinearPredictor::compile(&block, &dict).unwrap();
        let b = base();
        let mut cx = TermContext::baseline(&b);
        cx.bmi = Some(35.0);
        cx.a1c = Some(6.0);
        let eta = lp.eval(&cx);
        assert!((eta + 4.63).abs() < 1e-12);
        let p = crate::scalar::expit(eta);
        assert!((p - 0.0097).abs() < 5e-5);
    }

    #[test]
    fn firewall_flags_eligibility_columns() {
        let dict = Dictionary::default();
        assert!(Term::parse("bmi", &dict).unwrap().is_eligibility_defining());
        assert!(Term::parse("elix_score:hgba1c", &dict).unwrap().is_eligibility_defining());
        assert!(!Term::parse("insulin", &dict).unwrap().is_eligibility_defining());
    }
}
