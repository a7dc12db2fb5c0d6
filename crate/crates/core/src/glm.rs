//! Weighted binary logistic regression fitted by Newton/IRLS with step-halving.
//!
//! The response may be a proportion in `[0, 1]` so that rows sharing a design
//! pattern can be collapsed into one row carrying the summed weight; the
//! likelihood is unchanged by that aggregation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, Cholesky, Matrix};
use crate::scalar::{expit, log1p_exp, Scalar};

/// Probabilities handed to reciprocal-weight code are kept this far from 0 and 1.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlmError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("row {row}: response must lie in [0, 1], got {value}")]
    InvalidResponse { row: usize, value: f64 },
    #[error("row {row}: weight must be finite and non-negative, got {value}")]
    InvalidWeight { row: usize, value: f64 },
    #[error("no rows with positive weight")]
    Empty,
    #[error("design is rank deficient; aliased columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },
    #[error("perfect or quasi separation detected on column `{column}` (coefficient {coefficient:.3})")]
    Separation { column: String, coefficient: f64 },
    #[error("no convergence after {iterations} iterations (max |gradient| {gradient:e})")]
    NotConverged { iterations: usize, gradient: f64 },
}

/// Solver controls. Defaults follow the documented convergence rule.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GlmOptions {
    pub max_iterations: usize,
    pub gradient_tol: f64,
    pub rel_deviance_tol: f64,
    pub separation_bound: f64,
    pub rank_tol: f64,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tol: 1e-8,
            rel_deviance_tol: 1e-12,
            separation_bound: 30.0,
            rank_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit<T> {
    pub coefficients: Vec<T>,
    pub converged: bool,
    pub iterations: usize,
    pub final_deviance: T,
    pub design_column_names: Vec<String>,
    /// Deviance after each accepted iterate, starting from the zero vector.
    pub deviance_trace: Vec<T>,
    pub max_abs_gradient: T,
}

impl<T: Scalar> GlmFit<T> {
    pub fn coefficient(&self, name: &str) -> Option<T> {
        self.design_column_names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }

    pub fn linear_predictor(&self, row: &[T]) -> Result<T, GlmError> {
        if row.len() != self.coefficients.len() {
            return Err(GlmError::Dimension(format!(
                "row has {} entries, model has {} coefficients",
                row.len(),
                self.coefficients.len()
            )));
        }
        Ok(dot(row, &self.coefficients))
    }
}

/// Fitted probability `expit(x'b)` clamped to `[1e-12, 1 - 1e-12]`.
pub fn predict_prob<T: Scalar>(fit: &GlmFit<T>, row: &[T]) -> Result<T, GlmError> {
    let eta = fit.linear_predictor(row)?;
    Ok(clamp_prob(expit(eta)))
}

#[inline]
pub fn clamp_prob<T: Scalar>(p: T) -> T {
    let lo = T::lit(PROB_CLAMP);
    p.max(lo).min(T::one() - lo)
}

pub fn fit_logistic<T: Scalar>(
    design: &Matrix<T>,
    y: &[T],
    weights: &[T],
    names: &[String],
) -> Result<GlmFit<T>, GlmError> {
    fit_logistic_with(design, y, weights, names, &GlmOptions::default())
}

/// Per-row contribution to `-2 log L`.
#[inline]
fn row_deviance<T: Scalar>(eta: T, y: T) -> T {
    // -[y*eta - log(1+e^eta)]
    let two = T::lit(2.0);
    two * (log1p_exp(eta) - y * eta)
}

fn deviance<T: Scalar>(design: &Matrix<T>, y: &[T], w: &[T], beta: &[T]) -> T {
    let mut dev = T::zero();
    for i in 0..design.rows() {
        if w[i] > T::zero() {
            dev += w[i] * row_deviance(dot(design.row(i), beta), y[i]);
        }
    }
    dev
}

pub fn fit_logistic_with<T: Scalar>(
    design: &Matrix<T>,
    y: &[T],
    weights: &[T],
    names: &[String],
    opts: &GlmOptions,
) -> Result<GlmFit<T>, GlmError> {
    let n = design.rows();
    let p = design.cols();
    if y.len() != n || weights.len() != n {
        return Err(GlmError::Dimension(format!(
            "design has {n} rows, y has {}, weights has {}",
            y.len(),
            weights.len()
        )));
    }
    if names.len() != p {
        return Err(GlmError::Dimension(format!("design has {p} columns but {} names", names.len())));
    }
    for i in 0..n {
        let (yi, wi) = (y[i], weights[i]);
        if !(yi >= T::zero() && yi <= T::one()) {
            return Err(GlmError::InvalidResponse { row: i, value: yi.to_f64_lossy() });
        }
        if !(wi.is_finite() && wi >= T::zero()) {
            return Err(GlmError::InvalidWeight { row: i, value: wi.to_f64_lossy() });
        }
    }
    let total_w: T = weights.iter().copied().sum();
    if total_w <= T::zero() {
        return Err(GlmError::Empty);
    }

    // Floating-point floor for the gradient test: sums over many weighted rows
    // cannot be resolved below a few ulps of their magnitude.
    let mut grad_scale = T::zero();
    for i in 0..n {
        let xmax = design.row(i).iter().fold(T::zero(), |m, &x| m.max(x.abs()));
        grad_scale += weights[i] * xmax;
    }
    let eps = T::epsilon();
    let grad_tol = T::lit(opts.gradient_tol).max(T::lit(1e3) * eps * grad_scale.max(T::one()));
    let dev_tol = T::lit(opts.rel_deviance_tol).max(T::lit(16.0) * eps);

    let mut beta = vec![T::zero(); p];
    let mut dev = deviance(design, y, weights, &beta);
    let mut trace = vec![dev];
    let mut last_rel_change: Option<T> = None;
    let mut grad = vec![T::zero(); p];

    for iter in 0..opts.max_iterations {
        let mut hess = Matrix::zeros(p, p);
        grad.iter_mut().for_each(|g| *g = T::zero());
        for i in 0..n {
            let wi = weights[i];
            if wi <= T::zero() {
                continue;
            }
            let x = design.row(i);
            let mu = expit(dot(x, &beta));
            let r = wi * (y[i] - mu);
            let v = wi * mu * (T::one() - mu);
            for a in 0..p {
                let xa = x[a];
                if xa == T::zero() {
                    continue;
                }
                grad[a] += r * xa;
                let vx = v * xa;
                for b in 0..=a {
                    hess[(a, b)] += vx * x[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                hess[(b, a)] = hess[(a, b)];
            }
        }
        let gmax = grad.iter().fold(T::zero(), |m, &g| m.max(g.abs()));

        if gmax <= grad_tol && last_rel_change.map_or(true, |c| c <= dev_tol) {
            return finish(beta, true, iter, dev, names, trace, gmax, opts);
        }

        let chol = Cholesky::factor(&hess, T::lit(opts.rank_tol));
        if !chol.is_full_rank() {
            check_separation(&beta, names, opts)?;
            return Err(GlmError::RankDeficient {
                columns: chol.deficient.iter().map(|&j| names[j].clone()).collect(),
            });
        }
        let step = chol.solve(&grad);

        // Step-halving until the deviance does not increase.
        // Near the optimum the deviance cannot resolve a Newton step, so increases
        // at rounding level are not treated as ascent.
        let slack = T::lit(64.0) * eps * (dev.abs() + T::one());
        let mut scale = T::one();
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<T> = beta.iter().zip(&step).map(|(&b, &s)| b + scale * s).collect();
            let cand_dev = deviance(design, y, weights, &cand);
            if cand_dev.is_finite() && cand_dev <= dev + slack {
                accepted = Some((cand, cand_dev));
                break;
            }
            scale = scale * T::lit(0.5);
        }
        let Some((cand, cand_dev)) = accepted else {
            // No descent possible in floating point: we are at the optimum up to rounding.
            let converged = gmax <= grad_tol * T::lit(1e2);
            check_separation(&beta, names, opts)?;
            if converged {
                return finish(beta, true, iter, dev, names, trace, gmax, opts);
            }
            return Err(GlmError::NotConverged { iterations: iter, gradient: gmax.to_f64_lossy() });
        };
        let rel = (dev - cand_dev).abs() / (cand_dev.abs() + T::lit(0.1));
        last_rel_change = Some(rel);
        beta = cand;
        dev = cand_dev;
        trace.push(dev);
        check_separation(&beta, names, opts)?;
    }
    let gmax = grad.iter().fold(T::zero(), |m, &g| m.max(g.abs()));
    Err(GlmError::NotConverged { iterations: opts.max_iterations, gradient: gmax.to_f64_lossy() })
}

fn check_separation<T: Scalar>(beta: &[T], names: &[String], opts: &GlmOptions) -> Result<(), GlmError> {
    let (j, b) =
        beta.iter().enumerate().fold((0, T::zero()), |acc, (j, &b)| if b.abs() > acc.1.abs() { (j, b) } else { acc });
    if b.abs() > T::lit(opts.separation_bound) {
        return Err(GlmError::Separation { column: names[j].clone(), coefficient: b.to_f64_lossy() });
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn finish<T: Scalar>(
    beta: Vec<T>,
    converged: bool,
    iterations: usize,
    dev: T,
    names: &[String],
    trace: Vec<T>,
    gmax: T,
    opts: &GlmOptions,
) -> Result<GlmFit<T>, GlmError> {
    check_separation(&beta, names, opts)?;
    Ok(GlmFit {
        coefficients: beta,
        converged,
        iterations,
        final_deviance: dev,
        design_column_names: names.to_vec(),
        deviance_trace: trace,
        max_abs_gradient: gmax,
    })
}

/// Collapses rows with bit-identical design vectors into one row whose weight is
/// the summed weight and whose response is the weighted mean response.
/// Returns the reduced problem plus, for each input row, its group index.
pub fn aggregate_rows(design: &Matrix<f64>, y: &[f64], w: &[f64]) -> (Matrix<f64>, Vec<f64>, Vec<f64>, Vec<usize>) {
    let p = design.cols();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut rows: Vec<f64> = Vec::new();
    let mut sw: Vec<f64> = Vec::new();
    let mut swy: Vec<f64> = Vec::new();
    let mut group_of = Vec::with_capacity(design.rows());
    for i in 0..design.rows() {
        let key: Vec<u64> = design.row(i).iter().map(|v| v.to_bits()).collect();
        let g = *index.entry(key).or_insert_with(|| {
            rows.extend_from_slice(design.row(i));
            sw.push(0.0);
            swy.push(0.0);
            sw.len() - 1
        });
        sw[g] += w[i];
        swy[g] += w[i] * y[i];
        group_of.push(g);
    }
    let ybar = sw.iter().zip(&swy).map(|(&a, &b)| if a > 0.0 { (b / a).clamp(0.0, 1.0) } else { 0.0 }).collect();
    let m = Matrix::from_row_major(sw.len(), p, rows).expect("consistent row length");
    (m, ybar, sw, group_of)
}
