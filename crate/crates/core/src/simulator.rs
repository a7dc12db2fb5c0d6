//! Plasmode-style data-generating process: synthetic baseline covariates,
//! pre- and post-surgery BMI/A1c trajectories, surgery assignment, latent
//! post-surgical classes, monthly outcomes and ascertainment masking.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BaselineCovariates, Dictionary, Measurement, Smoking, SubjectRecord, SurgeryType};
use crate::linalg::{Cholesky, Matrix};
use crate::scalar::expit;
use crate::spline::{NaturalSpline, SplineError};
use crate::stats::{normal_cdf, normal_quantile};
use crate::terms::{LinearPredictor, TermContext, TermError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{field}: {message}")]
    Config { field: String, message: String },
    #[error("{field}: {source}")]
    Term { field: String, source: TermError },
    #[error("{field}: {source}")]
    Spline { field: String, source: SplineError },
    #[error("treatment sampled with BMI {bmi:.2} below the gate {gate}")]
    TreatmentGate { bmi: f64, gate: f64 },
}

fn cfg_err(field: &str, message: impl Into<String>) -> SimError {
    SimError::Config { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    MBias,
    EffectHeterogeneity,
    MBiasMediator,
}

impl Mechanism {
    pub const ALL: [Mechanism; 3] = [Mechanism::MBias, Mechanism::EffectHeterogeneity, Mechanism::MBiasMediator];

    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::MBias => "m_bias",
            Mechanism::EffectHeterogeneity => "effect_heterogeneity",
            Mechanism::MBiasMediator => "m_bias_mediator",
        }
    }

    /// Covariates tied to both selection and treatment (`L^RA`).
    pub fn l_ra(self) -> Vec<String> {
        match self {
            Mechanism::MBias | Mechanism::EffectHeterogeneity => {
                vec!["smoking_status[former]".into(), "smoking_status[current]".into(), "site".into()]
            }
            Mechanism::MBiasMediator => vec!["site".into()],
        }
    }

    /// Covariates tied to both selection and outcome (`L^RY`).
    pub fn l_ry(self) -> Vec<String> {
        match self {
            Mechanism::MBias | Mechanism::EffectHeterogeneity => vec!["elix_score".into()],
            Mechanism::MBiasMediator => vec!["elix_score".into(), "insulin".into()],
        }
    }

    /// Covariates driving treatment (`L^A`).
    pub fn l_a(self) -> Vec<String> {
        vec!["smoking_status[former]".into(), "smoking_status[current]".into()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    Study1,
    Study2,
}

impl Study {
    pub fn as_str(self) -> &'static str {
        match self {
            Study::Study1 => "study1",
            Study::Study2 => "study2",
        }
    }

    pub fn rule(self) -> crate::domain::EligibilityRule {
        match self {
            Study::Study1 => crate::domain::EligibilityRule::study1(),
            Study::Study2 => crate::domain::EligibilityRule::study2(),
        }
    }
}

/// How the three pre-surgery random-effect entries are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpreadScale {
    #[default]
    Variance,
    StandardDeviation,
}

pub type Block = BTreeMap<String, f64>;

fn block(entries: &[(&str, f64)]) -> Block {
    entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientBlock {
    pub beta1: Block,
    pub beta2: Block,
    pub delta: Block,
    pub sigma2_bmi: f64,
    pub tau1_sq: f64,
    pub tau2_sq: f64,
    pub beta3: Block,
    pub sigma2_a1c_scale: f64,
    pub tau3_sq: f64,
    /// Interpretation of `tau1_sq`, `tau2_sq`, `tau3_sq`.
    #[serde(default)]
    pub pre_surgery_tau_scale: SpreadScale,
    pub alpha: Block,
    pub pi: Block,
    pub lambda_cutpoints: Vec<f64>,
    pub lambda1: Block,
    pub tau4_sq: f64,
    pub phi_cutpoints: Vec<f64>,
    pub phi1: Block,
    pub tau5_sq: f64,
    pub omega: Block,
    pub rho: Block,
}

impl CoefficientBlock {
    /// Coefficient values of each missingness mechanism.
    pub fn for_mechanism(mechanism: Mechanism) -> Self {
        let c = mechanism == Mechanism::MBiasMediator;
        let z = |v: f64| if c { v } else { 0.0 };
        let (omega, rho) = match mechanism {
            Mechanism::MBias => (
                block(&[("(Intercept)", -4.18), ("elix_score", 1.20), ("surgery", -0.36)]),
                block(&[
                    ("(Intercept)", -2.44),
                    ("elix_score", 0.80),
                    ("site", 0.50),
                    ("smoking_status[former]", -0.50),
                    ("smoking_status[current]", -1.00),
                ]),
            ),
            Mechanism::EffectHeterogeneity => (
                block(&[("(Intercept)", -3.66), ("elix_score", 0.25), ("surgery", -0.36), ("surgery:elix_score", 0.1)]),
                block(&[
                    ("(Intercept)", -2.44),
                    ("elix_score", 0.50),
                    ("site", 0.25),
                    ("smoking_status[former]", -0.50),
                    ("smoking_status[current]", -1.00),
                ]),
            ),
            Mechanism::MBiasMediator => (
                block(&[("(Intercept)", -9.21), ("bmi", 0.10), ("hgba1c", 0.18)]),
                block(&[("(Intercept)", -1.10), ("elix_score", 0.60), ("site", -0.55), ("insulin", 0.50)]),
            ),
        };
        let post_shift = block(&[("elix_score", z(-5.0)), ("bs_type[rygb]", z(4.0)), ("insulin", z(-3.0))]);
        Self {
            beta1: block(&[("(Intercept)", -5e-4), ("gender", z(-1e-4)), ("race", z(-2e-4)), ("insulin", z(5e-4))]),
            beta2: block(&[("(Intercept)", 0.0), ("insulin", z(1e-5))]),
            delta: block(&[("(Intercept)", -1.10), ("insulin", z(0.50))]),
            sigma2_bmi: 3.2e-3,
            tau1_sq: 5e-4,
            tau2_sq: 2e-5,
            beta3: block(&[("(Intercept)", 0.0), ("insulin", z(-1e-3))]),
            sigma2_a1c_scale: 1e-3,
            tau3_sq: 3e-4,
            pre_surgery_tau_scale: SpreadScale::StandardDeviation,
            alpha: block(&[
                ("(Intercept)", -3.18),
                ("smoking_status[current]", -2.00),
                ("smoking_status[former]", -0.75),
            ]),
            pi: block(&[("(Intercept)", 0.41), ("site", 0.69)]),
            lambda_cutpoints: vec![-2.94, -1.10, 1.10, 2.94],
            lambda1: post_shift.clone(),
            tau4_sq: 2.5e-2,
            phi_cutpoints: if c { vec![-1.39, -0.20, 1.73, 2.94] } else { vec![-2.94, -1.10, 1.10, 2.94] },
            phi1: post_shift,
            tau5_sq: 2.5e-2,
            omega,
            rho,
        }
    }

    fn pre_sd(&self, v: f64) -> f64 {
        match self.pre_surgery_tau_scale {
            SpreadScale::Variance => v.sqrt(),
            SpreadScale::StandardDeviation => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplineSpec {
    pub interior_knots: Vec<f64>,
    #[serde(default = "default_boundary")]
    pub boundary_knots: (f64, f64),
    /// One coefficient vector per latent class (5 classes).
    pub class_coefficients: Vec<Vec<f64>>,
}

fn default_boundary() -> (f64, f64) {
    (0.0, 60.0)
}

impl SplineSpec {
    pub fn bmi_default() -> Self {
        let rows: [[f64; 5]; 11] = [
            [-0.181, -0.186, -0.191, -0.196, -0.201],
            [-0.205, -0.221, -0.232, -0.245, -0.256],
            [-0.198, -0.225, -0.243, -0.263, -0.281],
            [-0.178, -0.216, -0.240, -0.268, -0.292],
            [-0.154, -0.204, -0.234, -0.269, -0.300],
            [-0.125, -0.175, -0.225, -0.268, -0.305],
            [-0.111, -0.161, -0.211, -0.261, -0.305],
            [-0.096, -0.140, -0.184, -0.241, -0.292],
            [-0.047, -0.085, -0.122, -0.187, -0.244],
            [-0.207, -0.238, -0.269, -0.342, -0.405],
            [0.003, -0.022, -0.047, -0.127, -0.197],
        ];
        Self {
            interior_knots: vec![3.0, 6.0, 9.0, 12.0, 15.0, 18.0, 21.0, 24.0, 36.0, 48.0],
            boundary_knots: default_boundary(),
            class_coefficients: transpose(&rows),
        }
    }

    pub fn a1c_default() -> Self {
        let rows: [[f64; 5]; 6] = [
            [-0.110, -0.115, -0.120, -0.125, -0.130],
            [-0.093, -0.104, -0.117, -0.129, -0.141],
            [-0.067, -0.084, -0.105, -0.124, -0.143],
            [-0.008, -0.031, -0.060, -0.086, -0.112],
            [-0.130, -0.159, -0.196, -0.229, -0.262],
            [0.024, -0.011, -0.056, -0.096, -0.136],
        ];
        Self {
            interior_knots: vec![3.0, 9.0, 15.0, 30.0, 48.0],
            boundary_knots: default_boundary(),
            class_coefficients: transpose(&rows),
        }
    }

    fn validate(&self, field: &str) -> Result<NaturalSpline, SimError> {
        let spline = NaturalSpline::new(&self.interior_knots, self.boundary_knots)
            .map_err(|source| SimError::Spline { field: field.to_string(), source })?;
        if self.class_coefficients.len() != 5 {
            return Err(cfg_err(field, format!("expected 5 class vectors, got {}", self.class_coefficients.len())));
        }
        for (j, c) in self.class_coefficients.iter().enumerate() {
            if c.len() != spline.dim() {
                return Err(cfg_err(
                    &format!("{field}.class_coefficients[{j}]"),
                    format!("expected {} coefficients, got {}", spline.dim(), c.len()),
                ));
            }
        }
        Ok(spline)
    }
}

fn transpose<const R: usize>(rows: &[[f64; 5]; R]) -> Vec<Vec<f64>> {
    (0..5).map(|j| rows.iter().map(|r| r[j]).collect()).collect()
}

/// Marginal distribution of one baseline covariate, sampled by inverse CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Marginal {
    PointMass {
        value: f64,
    },
    Bernoulli {
        p: f64,
    },
    /// Level probabilities in dictionary order.
    Categorical {
        probs: Vec<f64>,
    },
    Normal {
        mean: f64,
        sd: f64,
        #[serde(default)]
        lower: Option<f64>,
        #[serde(default)]
        upper: Option<f64>,
    },
    LogNormal {
        meanlog: f64,
        sdlog: f64,
        #[serde(default)]
        shift: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
}

impl Marginal {
    /// Inverse CDF at `u` in (0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            Marginal::PointMass { value } => *value,
            Marginal::Bernoulli { p } => {
                if u > 1.0 - p {
                    1.0
                } else {
                    0.0
                }
            }
            Marginal::Categorical { probs } => {
                let mut acc = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u <= acc {
                        return i as f64;
                    }
                }
                (probs.len() - 1) as f64
            }
            Marginal::Normal { mean, sd, lower, upper } => {
                let lo = lower.map_or(0.0, |l| normal_cdf((l - mean) / sd));
                let hi = upper.map_or(1.0, |h| normal_cdf((h - mean) / sd));
                let v = (lo + u * (hi - lo)).clamp(1e-15, 1.0 - 1e-15);
                let x = mean + sd * normal_quantile(v);
                x.clamp(lower.unwrap_or(f64::NEG_INFINITY), upper.unwrap_or(f64::INFINITY))
            }
            Marginal::LogNormal { meanlog, sdlog, shift } => shift + (meanlog + sdlog * normal_quantile(u)).exp(),
            Marginal::Uniform { low, high } => low + u * (high - low),
        }
    }

    fn validate(&self, field: &str) -> Result<(), SimError> {
        let ok = match self {
            Marginal::PointMass { value } => value.is_finite(),
            Marginal::Bernoulli { p } => (0.0..=1.0).contains(p),
            Marginal::Categorical { probs } => {
                !probs.is_empty() && probs.iter().all(|p| *p >= 0.0) && (probs.iter().sum::<f64>() - 1.0).abs() < 1e-9
            }
            Marginal::Normal { mean, sd, lower, upper } => {
                mean.is_finite() && *sd > 0.0 && lower.zip(*upper).map_or(true, |(l, h)| l < h)
            }
            Marginal::LogNormal { meanlog, sdlog, shift } => meanlog.is_finite() && *sdlog > 0.0 && shift.is_finite(),
            Marginal::Uniform { low, high } => low < high,
        };
        if ok {
            Ok(())
        } else {
            Err(cfg_err(field, "invalid marginal parameters"))
        }
    }
}

pub const BASELINE_ORDER: [&str; 8] =
    ["gender", "race", "site", "smoking_status", "elix_score", "insulin", "bmi0", "a1c0"];

/// Gaussian-copula sampler for `L_k0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineDistribution {
    pub gender: Marginal,
    pub race: Marginal,
    pub site: Marginal,
    pub smoking_status: Marginal,
    pub elix_score: Marginal,
    pub insulin: Marginal,
    pub bmi0: Marginal,
    pub a1c0: Marginal,
    /// Spearman rank correlations in [`BASELINE_ORDER`].
    pub rank_correlation: Vec<Vec<f64>>,
}

impl Default for BaselineDistribution {
    fn default() -> Self {
        let mut corr = vec![vec![0.0; 8]; 8];
        for (i, row) in corr.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        let mut set = |a: usize, b: usize, v: f64| {
            corr[a][b] = v;
            corr[b][a] = v;
        };
        set(6, 7, 0.10); // bmi0 - a1c0
        set(7, 5, 0.35); // a1c0 - insulin
        set(4, 5, 0.20); // elix - insulin
        Self {
            gender: Marginal::Bernoulli { p: 0.7 },
            race: Marginal::Categorical { probs: vec![0.65, 0.35] },
            site: Marginal::Categorical { probs: vec![0.5, 0.5] },
            smoking_status: Marginal::Categorical { probs: vec![0.55, 0.30, 0.15] },
            elix_score: Marginal::Normal { mean: 0.0, sd: 1.0, lower: None, upper: None },
            insulin: Marginal::Bernoulli { p: 0.25 },
            bmi0: Marginal::Normal { mean: 40.0, sd: 5.0, lower: Some(30.0), upper: Some(70.0) },
            a1c0: Marginal::Normal { mean: 6.6, sd: 1.0, lower: Some(4.5), upper: Some(14.0) },
            rank_correlation: corr,
        }
    }
}

/// Validated copula state: marginals plus the Cholesky factor of the latent
/// Gaussian correlation.
#[derive(Debug, Clone)]
pub struct CopulaSampler {
    marginals: Vec<Marginal>,
    lower: Matrix<f64>,
}

impl CopulaSampler {
    pub fn new(dist: &BaselineDistribution, dict: &Dictionary) -> Result<Self, SimError> {
        let marginals = vec![
            dist.gender.clone(),
            dist.race.clone(),
            dist.site.clone(),
            dist.smoking_status.clone(),
            dist.elix_score.clone(),
            dist.insulin.clone(),
            dist.bmi0.clone(),
            dist.a1c0.clone(),
        ];
        for (m, name) in marginals.iter().zip(BASELINE_ORDER) {
            m.validate(&format!("baseline_sampler.{name}"))?;
        }
        let levels = |m: &Marginal| match m {
            Marginal::Categorical { probs } => Some(probs.len()),
            _ => None,
        };
        for (m, name, n) in [
            (&dist.race, "race", dict.race.len()),
            (&dist.site, "site", dict.site.len()),
            (&dist.smoking_status, "smoking_status", 3),
        ] {
            if let Some(k) = levels(m) {
                if k != n {
                    return Err(cfg_err(
                        &format!("baseline_sampler.{name}"),
                        format!("{k} probabilities for {n} declared levels"),
                    ));
                }
            }
        }
        let rc = &dist.rank_correlation;
        if rc.len() != 8 || rc.iter().any(|r| r.len() != 8) {
            return Err(cfg_err("baseline_sampler.rank_correlation", "must be 8x8"));
        }
        let mut latent = Matrix::<f64>::zeros(8, 8);
        for i in 0..8 {
            if (rc[i][i] - 1.0).abs() > 1e-12 {
                return Err(cfg_err("baseline_sampler.rank_correlation", "diagonal must be 1"));
            }
            for j in 0..8 {
                if (rc[i][j] - rc[j][i]).abs() > 1e-12 || rc[i][j].abs() > 1.0 {
                    return Err(cfg_err(
                        "baseline_sampler.rank_correlation",
                        "must be symmetric with entries in [-1, 1]",
                    ));
                }
                // Spearman to Pearson for a Gaussian copula.
                latent[(i, j)] = if i == j { 1.0 } else { 2.0 * (std::f64::consts::PI * rc[i][j] / 6.0).sin() };
            }
        }
        let chol = Cholesky::factor(&latent, 1e-12);
        let l = chol.lower();
        for i in 0..8 {
            for j in 0..8 {
                let s: f64 = (0..8).map(|k| l[(i, k)] * l[(j, k)]).sum();
                if (s - latent[(i, j)]).abs() > 1e-8 {
                    return Err(cfg_err("baseline_sampler.rank_correlation", "not positive semidefinite"));
                }
            }
        }
        Ok(Self { marginals, lower: l.clone() })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> BaselineCovariates {
        let z: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
        let mut x = [0.0; 8];
        for i in 0..8 {
            let zi: f64 = (0..=i).map(|k| self.lower[(i, k)] * z[k]).sum();
            let u = normal_cdf(zi).clamp(1e-16, 1.0 - 1e-16);
            x[i] = self.marginals[i].quantile(u);
        }
        BaselineCovariates {
            gender: x[0] as u8,
            race: x[1] as u32,
            site: x[2] as u32,
            smoking_status: Smoking::ALL[(x[3] as usize).min(2)],
            elix_score: x[4],
            insulin: x[5] as u8,
            bmi0: x[6],
            a1c0: x[7],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T_max")]
    pub t_max: u32,
    pub mechanism: Mechanism,
    pub study: Study,
    pub seed: u64,
    #[serde(default)]
    pub dictionary: Dictionary,
    pub coefficients: CoefficientBlock,
    pub spline_bmi: SplineSpec,
    pub spline_a1c: SplineSpec,
    #[serde(default)]
    pub baseline_sampler: BaselineDistribution,
    /// Treatment may only be sampled in months with BMI at or above this value.
    #[serde(default = "default_gate")]
    pub treatment_bmi_gate: f64,
    /// Floor on the relative multiplier `1 + ...` of simulated measurements.
    #[serde(default = "default_floor")]
    pub min_relative_level: f64,
}

fn default_gate() -> f64 {
    35.0
}

fn default_floor() -> f64 {
    0.05
}

impl SimConfig {
    pub fn preset(mechanism: Mechanism, study: Study) -> Self {
        Self {
            k: 5000,
            t_max: 36,
            mechanism,
            study,
            seed: 20240101,
            dictionary: Dictionary::default(),
            coefficients: CoefficientBlock::for_mechanism(mechanism),
            spline_bmi: SplineSpec::bmi_default(),
            spline_a1c: SplineSpec::a1c_default(),
            baseline_sampler: BaselineDistribution::default(),
            treatment_bmi_gate: default_gate(),
            min_relative_level: default_floor(),
        }
    }

    pub fn compile(&self) -> Result<CompiledSim, SimError> {
        let c = &self.coefficients;
        if self.k == 0 {
            return Err(cfg_err("K", "must be positive"));
        }
        if self.t_max == 0 {
            return Err(cfg_err("T_max", "must be positive"));
        }
        for (name, v) in [
            ("coefficients.sigma2_bmi", c.sigma2_bmi),
            ("coefficients.tau1_sq", c.tau1_sq),
            ("coefficients.tau2_sq", c.tau2_sq),
            ("coefficients.sigma2_a1c_scale", c.sigma2_a1c_scale),
            ("coefficients.tau3_sq", c.tau3_sq),
            ("coefficients.tau4_sq", c.tau4_sq),
            ("coefficients.tau5_sq", c.tau5_sq),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(cfg_err(name, format!("variance must be finite and non-negative, got {v}")));
            }
        }
        for (name, cuts) in
            [("coefficients.lambda_cutpoints", &c.lambda_cutpoints), ("coefficients.phi_cutpoints", &c.phi_cutpoints)]
        {
            if cuts.len() != 4 {
                return Err(cfg_err(name, "expected 4 cutpoints"));
            }
            if cuts.windows(2).any(|w| w[0] > w[1]) {
                return Err(cfg_err(name, "cutpoints must be nondecreasing"));
            }
        }
        let d = &self.dictionary;
        let lp = |name: &str, b: &Block| {
            LinearPredictor::compile(b, d)
                .map_err(|source| SimError::Term { field: format!("coefficients.{name}"), source })
        };
        Ok(CompiledSim {
            config: self.clone(),
            beta1: lp("beta1", &c.beta1)?,
            beta2: lp("beta2", &c.beta2)?,
            delta: lp("delta", &c.delta)?,
            beta3: lp("beta3", &c.beta3)?,
            alpha: lp("alpha", &c.alpha)?,
            pi: lp("pi", &c.pi)?,
            lambda1: lp("lambda1", &c.lambda1)?,
            phi1: lp("phi1", &c.phi1)?,
            omega: lp("omega", &c.omega)?,
            rho: lp("rho", &c.rho)?,
            bmi_basis: basis_table(&self.spline_bmi.validate("spline_bmi")?, self.t_max),
            a1c_basis: basis_table(&self.spline_a1c.validate("spline_a1c")?, self.t_max),
            copula: CopulaSampler::new(&self.baseline_sampler, d)?,
        })
    }
}

/// Basis rows for integer lags `0..=t_max`.
fn basis_table(spline: &NaturalSpline, t_max: u32) -> Vec<Vec<f64>> {
    (0..=t_max).map(|lag| spline.eval(lag as f64)).collect()
}

/// A validated configuration with parsed coefficient blocks.
#[derive(Debug, Clone)]
pub struct CompiledSim {
    pub config: SimConfig,
    beta1: LinearPredictor,
    beta2: LinearPredictor,
    delta: LinearPredictor,
    beta3: LinearPredictor,
    alpha: LinearPredictor,
    pi: LinearPredictor,
    lambda1: LinearPredictor,
    phi1: LinearPredictor,
    omega: LinearPredictor,
    rho: LinearPredictor,
    bmi_basis: Vec<Vec<f64>>,
    a1c_basis: Vec<Vec<f64>>,
    copula: CopulaSampler,
}

/// Subject-specific pre-surgery quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreSurgeryState {
    pub q: bool,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub slope_bmi: f64,
    pub quad_bmi: f64,
    pub slope_a1c: f64,
}

/// Latent quantities that the emitted records do not carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectLatent {
    pub pre: PreSurgeryState,
    pub bmi_class: Option<u8>,
    pub a1c_class: Option<u8>,
    pub true_bmi: Vec<f64>,
    pub true_a1c: Vec<f64>,
    pub ascertained: Vec<bool>,
}

/// Simulated cohort in both its complete and its ascertainment-masked form.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub full: Vec<SubjectRecord>,
    pub observed: Vec<SubjectRecord>,
    pub latent: Vec<SubjectLatent>,
}

/// Per-subject generator seeded from `(seed, k)`.
pub fn subject_rng(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

#[inline]
fn normal<R: Rng>(rng: &mut R, sd: f64) -> f64 {
    if sd == 0.0 {
        0.0
    } else {
        sd * rng.sample::<f64, _>(StandardNormal)
    }
}

#[inline]
fn bernoulli<R: Rng>(rng: &mut R, p: f64) -> bool {
    rng.gen::<f64>() < p
}

impl CompiledSim {
    pub fn sample_baseline<R: Rng>(&self, rng: &mut R) -> BaselineCovariates {
        self.copula.sample(rng)
    }

    /// Draws `q_k` and the pre-surgery random effects.
    pub fn presurgery_state<R: Rng>(&self, base: &BaselineCovariates, rng: &mut R) -> PreSurgeryState {
        let c = &self.config.coefficients;
        let cx = TermContext::baseline(base);
        let q = bernoulli(rng, expit(self.delta.eval(&cx)));
        let gamma1 = normal(rng, c.pre_sd(c.tau1_sq));
        let gamma2 = normal(rng, c.pre_sd(c.tau2_sq));
        let gamma3 = normal(rng, c.pre_sd(c.tau3_sq));
        PreSurgeryState {
            q,
            gamma1,
            gamma2,
            gamma3,
            slope_bmi: self.beta1.eval(&cx) + gamma1,
            quad_bmi: if q { self.beta2.eval(&cx) + gamma2 } else { 0.0 },
            slope_a1c: self.beta3.eval(&cx) + gamma3,
        }
    }

    fn floor(&self, rel: f64) -> f64 {
        rel.max(self.config.min_relative_level)
    }

    /// Pre-surgery BMI and A1c at month `t`, noise included.
    pub fn presurgery_values<R: Rng>(
        &self,
        base: &BaselineCovariates,
        st: &PreSurgeryState,
        t: u32,
        rng: &mut R,
    ) -> (f64, f64) {
        let c = &self.config.coefficients;
        let tf = t as f64;
        let eb = normal(rng, c.sigma2_bmi.sqrt());
        let ea = normal(rng, (c.sigma2_a1c_scale * base.a1c0 * base.a1c0).sqrt());
        let bmi = base.bmi0 * self.floor(1.0 + st.slope_bmi * tf + st.quad_bmi * tf * tf + eb);
        let a1c = base.a1c0 * self.floor(1.0 + st.slope_a1c * tf + ea);
        (bmi, a1c)
    }

    /// Surgery draw for an untreated subject whose current BMI passes the gate.
    pub fn sample_treatment<R: Rng>(
        &self,
        base: &BaselineCovariates,
        bmi: f64,
        a1c: f64,
        rng: &mut R,
    ) -> Result<Option<SurgeryType>, SimError> {
        let gate = self.config.treatment_bmi_gate;
        if bmi < gate {
            return Err(SimError::TreatmentGate { bmi, gate });
        }
        let mut cx = TermContext::baseline(base);
        cx.bmi = Some(bmi);
        cx.a1c = Some(a1c);
        if !bernoulli(rng, expit(self.alpha.eval(&cx))) {
            return Ok(None);
        }
        cx.surgery = 1.0;
        let rygb = bernoulli(rng, expit(self.pi.eval(&cx)));
        Ok(Some(if rygb { SurgeryType::Rygb } else { SurgeryType::Vsg }))
    }

    /// Class probabilities of a cumulative-logit model.
    pub fn class_probabilities(cutpoints: &[f64], shift: f64) -> [f64; 5] {
        let mut out = [0.0; 5];
        let mut prev = 0.0;
        for j in 0..4 {
            let cum = expit(cutpoints[j] + shift);
            out[j] = (cum - prev).max(0.0);
            prev = cum.max(prev);
        }
        out[4] = 1.0 - prev;
        out
    }

    fn draw_class<R: Rng>(cutpoints: &[f64], shift: f64, rng: &mut R) -> u8 {
        let u: f64 = rng.gen();
        for (j, &c) in cutpoints.iter().enumerate() {
            if u <= expit(c + shift) {
                return j as u8 + 1;
            }
        }
        5
    }

    /// Latent BMI and A1c classes (1..=5) at surgery.
    pub fn sample_latent_classes<R: Rng>(
        &self,
        base: &BaselineCovariates,
        bmi_nu: f64,
        a1c_nu: f64,
        surgery_type: SurgeryType,
        rng: &mut R,
    ) -> (u8, u8) {
        let c = &self.config.coefficients;
        let mut cx = TermContext::baseline(base);
        cx.bmi = Some(bmi_nu);
        cx.a1c = Some(a1c_nu);
        cx.surgery = 1.0;
        cx.surgery_type = Some(surgery_type);
        let eta = Self::draw_class(&c.lambda_cutpoints, self.lambda1.eval(&cx), rng);
        let xi = Self::draw_class(&c.phi_cutpoints, self.phi1.eval(&cx), rng);
        (eta, xi)
    }

    /// Mean relative change `b(lag)'(beta_class + gamma 1)` of a post-surgery curve.
    ///
    /// The random effect is a scalar added to every spline coefficient of the
    /// selected class, i.e. a level shift of the basis sum.
    pub fn post_curve(&self, bmi: bool, class: u8, gamma: f64, lag: u32) -> f64 {
        let (table, spec) =
            if bmi { (&self.bmi_basis, &self.config.spline_bmi) } else { (&self.a1c_basis, &self.config.spline_a1c) };
        let b = &table[lag as usize];
        let coef = &spec.class_coefficients[class as usize - 1];
        b.iter().zip(coef).map(|(bi, ci)| bi * (ci + gamma)).sum()
    }

    /// Simulates one subject; returns the complete record, the masked record and latent state.
    pub fn simulate_subject(&self, k: u64) -> (SubjectRecord, SubjectRecord, SubjectLatent) {
        let cfg = &self.config;
        let c = &cfg.coefficients;
        let mut rng = subject_rng(cfg.seed, k);
        let base = self.sample_baseline(&mut rng);
        let pre = self.presurgery_state(&base, &mut rng);

        let mut full = SubjectRecord {
            subject_id: k,
            baseline: base.clone(),
            bmi_series: Vec::new(),
            a1c_series: Vec::new(),
            surgery_time: None,
            surgery_type: None,
            event_time: None,
            censor_time: None,
            censor_reason: None,
        };
        let mut observed_bmi = Vec::new();
        let mut observed_a1c = Vec::new();
        let mut latent = SubjectLatent {
            pre,
            bmi_class: None,
            a1c_class: None,
            true_bmi: Vec::new(),
            true_a1c: Vec::new(),
            ascertained: Vec::new(),
        };
        // state at surgery: (month, bmi, a1c, classes, gamma4, gamma5)
        let mut post: Option<(u32, f64, f64, u8, u8, f64, f64)> = None;

        for s in 0..cfg.t_max {
            let (bmi, a1c) = match post {
                Some((nu, bmi_nu, a1c_nu, eta, xi, g4, g5)) if s > nu => {
                    let lag = s - nu;
                    let eb = normal(&mut rng, c.sigma2_bmi.sqrt());
                    let ea = normal(&mut rng, (c.sigma2_a1c_scale * base.a1c0 * base.a1c0).sqrt());
                    (
                        bmi_nu * self.floor(1.0 + self.post_curve(true, eta, g4, lag) + eb),
                        a1c_nu * self.floor(1.0 + self.post_curve(false, xi, g5, lag) + ea),
                    )
                }
                _ => self.presurgery_values(&base, &pre, s, &mut rng),
            };

            if full.surgery_time.is_none() && bmi >= cfg.treatment_bmi_gate {
                if let Some(kind) = self.sample_treatment(&base, bmi, a1c, &mut rng).expect("gate checked") {
                    full.surgery_time = Some(s);
                    full.surgery_type = Some(kind);
                    let (eta, xi) = self.sample_latent_classes(&base, bmi, a1c, kind, &mut rng);
                    let g4 = normal(&mut rng, c.tau4_sq.sqrt());
                    let g5 = normal(&mut rng, c.tau5_sq.sqrt());
                    latent.bmi_class = Some(eta);
                    latent.a1c_class = Some(xi);
                    post = Some((s, bmi, a1c, eta, xi, g4, g5));
                }
            }

            let mut cx = TermContext::baseline(&base);
            cx.bmi = Some(bmi);
            cx.a1c = Some(a1c);
            cx.surgery = if full.surgery_time.is_some() { 1.0 } else { 0.0 };
            cx.surgery_type = full.surgery_type;
            cx.period = s as f64;
            let event = bernoulli(&mut rng, expit(self.omega.eval(&cx)));
            let ascertained = bernoulli(&mut rng, expit(self.rho.eval(&cx)));

            full.bmi_series.push(Measurement { month: s, value: bmi });
            full.a1c_series.push(Measurement { month: s, value: a1c });
            if ascertained {
                observed_bmi.push(Measurement { month: s, value: bmi });
                observed_a1c.push(Measurement { month: s, value: a1c });
            }
            latent.true_bmi.push(bmi);
            latent.true_a1c.push(a1c);
            latent.ascertained.push(ascertained);
            if event {
                full.event_time = Some(s);
                break;
            }
        }
        let observed = SubjectRecord { bmi_series: observed_bmi, a1c_series: observed_a1c, ..full.clone() };
        (full, observed, latent)
    }

    /// Simulates the whole cohort in parallel; output order is by subject id.
    pub fn simulate(&self) -> SimOutput {
        let results: Vec<_> = (0..self.config.k as u64).into_par_iter().map(|k| self.simulate_subject(k)).collect();
        let mut out = SimOutput {
            full: Vec::with_capacity(results.len()),
            observed: Vec::with_capacity(results.len()),
            latent: Vec::with_capacity(results.len()),
        };
        for (f, o, l) in results {
            out.full.push(f);
            out.observed.push(o);
            out.latent.push(l);
        }
        out
    }
}

/// Convenience wrapper: validate and simulate.
pub fn simulate(config: &SimConfig) -> Result<SimOutput, SimError> {
    Ok(config.compile()?.simulate())
}
