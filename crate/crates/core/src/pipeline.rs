//! End-to-end analysis: expansion, component weights, MSM.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Dictionary, EligibilityRule, SubjectRecord};
use crate::estimate::{fit_msm, BaselineHazard, EstimateError, MsmFit};
use crate::expansion::{expand, ExpandConfig, ExpansionError, Mode, PooledTable};
use crate::weights::{combine_and_truncate, fit_component, ComponentWeights, WeightError, WeightModelSpec, WeightSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Expansion(#[from] ExpansionError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
}

impl PipelineError {
    /// True for configuration problems (as opposed to estimation failures).
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            PipelineError::Expansion(_)
                | PipelineError::Weight(WeightError::Config { .. })
                | PipelineError::Weight(WeightError::Term { .. })
                | PipelineError::Weight(WeightError::Firewall { .. })
        )
    }
}

/// Which component weights to fit; absent components are identically 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightPlan {
    #[serde(default)]
    pub a: Option<WeightModelSpec>,
    #[serde(default)]
    pub c: Option<WeightModelSpec>,
    #[serde(default)]
    pub n: Option<WeightModelSpec>,
    #[serde(default)]
    pub r: Option<WeightModelSpec>,
}

impl WeightPlan {
    pub fn specs(&self) -> impl Iterator<Item = &WeightModelSpec> {
        [&self.a, &self.c, &self.n, &self.r].into_iter().flatten()
    }

    pub fn is_empty(&self) -> bool {
        self.specs().next().is_none()
    }
}

fn default_trials() -> u32 {
    12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_trials")]
    pub trials: u32,
    #[serde(rename = "T_max")]
    pub t_max: u32,
    pub rule: EligibilityRule,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub weights: WeightPlan,
    #[serde(default)]
    pub baseline_hazard: BaselineHazard,
    #[serde(default)]
    pub dictionary: Dictionary,
}

impl AnalysisConfig {
    pub fn expand_config(&self) -> ExpandConfig {
        ExpandConfig { trials: self.trials, t_max: self.t_max, rule: self.rule.clone(), mode: self.mode }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.expand_config().validate()?;
        for s in self.weights.specs() {
            s.validate(&self.dictionary)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AnalysisResult {
    pub msm: MsmFit,
    pub weights: WeightSet,
    pub components: Vec<ComponentWeights>,
}

/// Fits the planned weights on an expanded table.
pub fn fit_weights(
    table: &PooledTable,
    plan: &WeightPlan,
    dict: &Dictionary,
    mode: Mode,
    freq: Option<&[f64]>,
) -> Result<(WeightSet, Vec<ComponentWeights>), PipelineError> {
    let comps = plan.specs().map(|s| fit_component(table, s, dict, freq)).collect::<Result<Vec<_>, _>>()?;
    let set = combine_and_truncate(table, &comps, mode, freq)?;
    Ok((set, comps))
}

/// Weights plus outcome model on an expanded table, with optional
/// per-subject bootstrap multiplicities.
pub fn analyze_table(
    table: &PooledTable,
    cfg: &AnalysisConfig,
    freq: Option<&[f64]>,
) -> Result<AnalysisResult, PipelineError> {
    let (weights, components) = fit_weights(table, &cfg.weights, &cfg.dictionary, cfg.mode, freq)?;
    let w = if cfg.weights.is_empty() { None } else { Some(weights.w_total.as_slice()) };
    let msm = fit_msm(table, w, freq, cfg.mode, cfg.baseline_hazard)?;
    Ok(AnalysisResult { msm, weights, components })
}

pub fn run_analysis(cohort: &[SubjectRecord], cfg: &AnalysisConfig) -> Result<AnalysisResult, PipelineError> {
    cfg.validate()?;
    let table = expand(cohort, &cfg.expand_config())?;
    analyze_table(&table, cfg, None)
}
