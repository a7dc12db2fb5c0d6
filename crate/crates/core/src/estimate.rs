//! Weighted pooled-logistic marginal structural model for the per-protocol or
//! intention-to-treat log discrete hazard ratio.
//!
//! Rows only enter through sufficient statistics per `(trial, period, arm)`,
//! so the fit is exact for any weight vector and costs nothing per row beyond
//! one accumulation pass.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expansion::{Mode, PooledTable};
use crate::glm::{fit_logistic, GlmError};
use crate::linalg::Matrix;
use crate::scalar::{expit, log1p_exp, logit};
use crate::weights::{summarize, WeightSummary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("no outcome events in the {arm} arm")]
    NoEvents { arm: &'static str },
    #[error("no outcome rows with positive weight")]
    Empty,
    #[error("weights have {0} entries for {1} rows")]
    Dimension(usize, usize),
    #[error("weight {value} on row {row} is not finite and non-negative")]
    InvalidWeight { row: usize, value: f64 },
    #[error("treatment coefficient diverged ({0:.3}); arms are separated")]
    Separation(f64),
    #[error("outcome model did not converge after {0} iterations")]
    NotConverged(usize),
    #[error(transparent)]
    Glm(#[from] GlmError),
}

fn default_min_events() -> usize {
    5
}

/// Functional form of the baseline hazard `ψ₀,ₜ⁽ᵐ⁾`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaselineHazard {
    /// One indicator per `(m, t)` cell; sparse cells are collapsed until each
    /// holds at least `min_events` events.
    PerTrialSaturated {
        #[serde(default = "default_min_events")]
        min_events: usize,
    },
    /// Indicators per period shared by all trials, with the same collapsing.
    Shared {
        #[serde(default = "default_min_events")]
        min_events: usize,
    },
    /// A polynomial in `t` of the given degree for every trial.
    PerTrialPolynomial { degree: usize },
}

impl Default for BaselineHazard {
    fn default() -> Self {
        BaselineHazard::PerTrialSaturated { min_events: default_min_events() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsmFit {
    pub estimand: Mode,
    pub psi_hat: f64,
    pub hr: f64,
    pub n_rows: usize,
    pub n_events: f64,
    pub events_control: f64,
    pub events_treated: f64,
    pub n_baseline_terms: usize,
    pub baseline_coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_deviance: f64,
    pub weight_summary: Option<WeightSummary>,
}

/// Per-`(m, t, a)` sufficient statistics of the outcome rows.
#[derive(Debug, Clone)]
struct CellStats {
    trials: usize,
    periods: usize,
    /// index `((m-1) * periods + t) * 2 + a`
    sw: Vec<f64>,
    swy: Vec<f64>,
    events: Vec<f64>,
    present: Vec<bool>,
}

impl CellStats {
    fn idx(&self, m: usize, t: usize, a: usize) -> usize {
        (m * self.periods + t) * 2 + a
    }
}

fn accumulate(
    table: &PooledTable,
    weights: Option<&[f64]>,
    freq: Option<&[f64]>,
    mode: Mode,
) -> Result<(CellStats, usize, Vec<usize>), EstimateError> {
    let n = table.rows.len();
    if let Some(w) = weights {
        if w.len() != n {
            return Err(EstimateError::Dimension(w.len(), n));
        }
    }
    let trials = table.trials as usize;
    let periods = table.t_max as usize;
    let size = trials * periods * 2;
    let mut st = CellStats {
        trials,
        periods,
        sw: vec![0.0; size],
        swy: vec![0.0; size],
        events: vec![0.0; size],
        present: vec![false; size],
    };
    let mut n_rows = 0;
    let mut used = Vec::new();
    for (i, r) in table.rows.iter().enumerate() {
        if !table.outcome_row(r, mode) {
            continue;
        }
        let f = freq.map_or(1.0, |f| f[r.subject_index as usize]);
        if f == 0.0 {
            continue;
        }
        let w = weights.map_or(1.0, |w| w[i]);
        if !(w.is_finite() && w >= 0.0) {
            return Err(EstimateError::InvalidWeight { row: i, value: w });
        }
        let k = st.idx(r.trial as usize - 1, r.period as usize, r.a_base as usize);
        st.sw[k] += f * w;
        st.present[k] = true;
        if r.y {
            st.swy[k] += f * w;
            st.events[k] += f;
        }
        n_rows += 1;
        used.push(i);
    }
    Ok((st, n_rows, used))
}

/// Groups consecutive items so each group holds at least `min` events; a
/// deficient tail joins the previous group.
fn collapse(counts: &[f64], min: f64) -> Vec<usize> {
    let mut group = vec![0; counts.len()];
    let mut g = 0;
    let mut acc = 0.0;
    let mut last_closed: Option<usize> = None;
    for (i, &c) in counts.iter().enumerate() {
        group[i] = g;
        acc += c;
        if acc >= min {
            last_closed = Some(g);
            g += 1;
            acc = 0.0;
        }
    }
    // items after the last closed group fold into it
    if let Some(lc) = last_closed {
        for x in group.iter_mut() {
            if *x > lc {
                *x = lc;
            }
        }
    }
    group
}

/// Cell id for every `(m, t)`; `None` where neither arm has rows.
fn saturated_cells(st: &CellStats, min_events: usize, shared: bool) -> (Vec<Option<usize>>, usize) {
    let min = min_events as f64;
    let ev_mt = |m: usize, t: usize| st.events[st.idx(m, t, 0)] + st.events[st.idx(m, t, 1)];
    let has = |m: usize, t: usize| st.present[st.idx(m, t, 0)] || st.present[st.idx(m, t, 1)];
    let trial_groups: Vec<usize> = if shared {
        vec![0; st.trials]
    } else {
        let per_trial: Vec<f64> = (0..st.trials).map(|m| (0..st.periods).map(|t| ev_mt(m, t)).sum()).collect();
        collapse(&per_trial, min)
    };
    let n_groups = trial_groups.iter().copied().max().map_or(0, |g| g + 1);
    let mut cell = vec![None; st.trials * st.periods];
    let mut next = 0;
    for g in 0..n_groups {
        let members: Vec<usize> = (0..st.trials).filter(|&m| trial_groups[m] == g).collect();
        let active: Vec<usize> = (0..st.periods).filter(|&t| members.iter().any(|&m| has(m, t))).collect();
        if active.is_empty() {
            continue;
        }
        let counts: Vec<f64> = active.iter().map(|&t| members.iter().map(|&m| ev_mt(m, t)).sum()).collect();
        let blocks = collapse(&counts, min);
        let nb = blocks.iter().copied().max().unwrap_or(0) + 1;
        for (j, &t) in active.iter().enumerate() {
            for &m in &members {
                if has(m, t) {
                    cell[m * st.periods + t] = Some(next + blocks[j]);
                }
            }
        }
        next += nb;
    }
    (cell, next)
}

struct ArrowFit {
    alpha: Vec<f64>,
    psi: f64,
    iterations: usize,
    deviance: f64,
}

/// Newton solver for `logit p = α_c + ψ a` on aggregated `(cell, arm)` data.
///
/// The information matrix is diagonal in `α` bordered by the `ψ` row, so each
/// step is solved through the Schur complement in `O(cells)`.
fn fit_arrow(sw: &[[f64; 2]], swy: &[[f64; 2]]) -> Result<ArrowFit, EstimateError> {
    let nc = sw.len();
    let dev_of = |alpha: &[f64], psi: f64| -> f64 {
        let mut d = 0.0;
        for c in 0..nc {
            for a in 0..2 {
                if sw[c][a] > 0.0 {
                    let eta = alpha[c] + psi * a as f64;
                    d += 2.0 * (sw[c][a] * log1p_exp(eta) - swy[c][a] * eta);
                }
            }
        }
        d
    };
    let mut alpha: Vec<f64> = (0..nc)
        .map(|c| {
            let (w, wy) = (sw[c][0] + sw[c][1], swy[c][0] + swy[c][1]);
            logit((wy / w).clamp(1e-6, 1.0 - 1e-6))
        })
        .collect();
    let mut psi = 0.0;
    let mut dev = dev_of(&alpha, psi);
    let total_w: f64 = sw.iter().map(|s| s[0] + s[1]).sum();
    let grad_tol = 1e-8f64.max(1e3 * f64::EPSILON * total_w);
    let mut last_rel = f64::INFINITY;
    for iter in 1..=100 {
        let mut g = vec![0.0; nc];
        let mut h = vec![0.0; nc];
        let mut v = vec![0.0; nc];
        let mut g_psi = 0.0;
        for c in 0..nc {
            for a in 0..2 {
                if sw[c][a] > 0.0 {
                    let p = expit(alpha[c] + psi * a as f64);
                    let r = swy[c][a] - sw[c][a] * p;
                    let q = sw[c][a] * p * (1.0 - p);
                    g[c] += r;
                    h[c] += q;
                    if a == 1 {
                        g_psi += r;
                        v[c] += q;
                    }
                }
            }
        }
        let gmax = g.iter().fold(g_psi.abs(), |m, x| m.max(x.abs()));
        if gmax <= grad_tol && last_rel <= 1e-12f64.max(16.0 * f64::EPSILON) {
            return Ok(ArrowFit { alpha, psi, iterations: iter - 1, deviance: dev });
        }
        let mut s = 0.0;
        let mut rhs = g_psi;
        for c in 0..nc {
            s += v[c];
            if h[c] > 0.0 {
                s -= v[c] * v[c] / h[c];
                rhs -= v[c] * g[c] / h[c];
            }
        }
        let d_psi = if s > 0.0 { rhs / s } else { 0.0 };
        let d_alpha: Vec<f64> = (0..nc).map(|c| if h[c] > 0.0 { (g[c] - v[c] * d_psi) / h[c] } else { 0.0 }).collect();
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let na: Vec<f64> = alpha.iter().zip(&d_alpha).map(|(a, d)| a + step * d).collect();
            let np = psi + step * d_psi;
            let nd = dev_of(&na, np);
            if nd.is_finite() && nd <= dev + 64.0 * f64::EPSILON * (dev.abs() + 1.0) {
                last_rel = (dev - nd).abs() / (nd.abs() + 0.1);
                alpha = na;
                psi = np;
                dev = nd;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if psi.abs() > 30.0 {
            return Err(EstimateError::Separation(psi));
        }
        if !accepted {
            // no representable improvement: the current iterate is the optimum
            last_rel = 0.0;
            if gmax <= grad_tol * 1e3 {
                return Ok(ArrowFit { alpha, psi, iterations: iter, deviance: dev });
            }
        }
    }
    Err(EstimateError::NotConverged(100))
}

/// Fits the weighted MSM `logit P(Y_{t+1} = 1) = ψ₀,ₜ⁽ᵐ⁾ + ψ A_mk`.
///
/// `weights` is aligned with `table.rows`; `freq` holds per-subject
/// multiplicities. In PP mode only adherent, uncensored rows are consumed; in
/// ITT mode `N` is ignored.
pub fn fit_msm(
    table: &PooledTable,
    weights: Option<&[f64]>,
    freq: Option<&[f64]>,
    mode: Mode,
    hazard: BaselineHazard,
) -> Result<MsmFit, EstimateError> {
    let (st, n_rows, used) = accumulate(table, weights, freq, mode)?;
    if n_rows == 0 {
        return Err(EstimateError::Empty);
    }
    let arm_events = |a: usize| -> f64 {
        (0..st.trials).flat_map(|m| (0..st.periods).map(move |t| (m, t))).map(|(m, t)| st.events[st.idx(m, t, a)]).sum()
    };
    let (e0, e1) = (arm_events(0), arm_events(1));
    if e0 == 0.0 {
        return Err(EstimateError::NoEvents { arm: "control" });
    }
    if e1 == 0.0 {
        return Err(EstimateError::NoEvents { arm: "treated" });
    }

    let (psi, baseline, iterations, deviance) = match hazard {
        BaselineHazard::PerTrialSaturated { min_events } | BaselineHazard::Shared { min_events } => {
            let shared = matches!(hazard, BaselineHazard::Shared { .. });
            let (cell, nc) = saturated_cells(&st, min_events, shared);
            let mut sw = vec![[0.0; 2]; nc];
            let mut swy = vec![[0.0; 2]; nc];
            for m in 0..st.trials {
                for t in 0..st.periods {
                    if let Some(c) = cell[m * st.periods + t] {
                        for a in 0..2 {
                            sw[c][a] += st.sw[st.idx(m, t, a)];
                            swy[c][a] += st.swy[st.idx(m, t, a)];
                        }
                    }
                }
            }
            let fit = fit_arrow(&sw, &swy)?;
            (fit.psi, fit.alpha, fit.iterations, fit.deviance)
        }
        BaselineHazard::PerTrialPolynomial { degree } => {
            let trials_used: Vec<usize> = (0..st.trials)
                .filter(|&m| (0..st.periods).any(|t| st.present[st.idx(m, t, 0)] || st.present[st.idx(m, t, 1)]))
                .collect();
            let p = trials_used.len() * (degree + 1) + 1;
            let scale = st.periods.max(1) as f64;
            let mut data = Vec::new();
            let (mut ys, mut ws) = (Vec::new(), Vec::new());
            for (j, &m) in trials_used.iter().enumerate() {
                for t in 0..st.periods {
                    for a in 0..2 {
                        let k = st.idx(m, t, a);
                        if st.sw[k] <= 0.0 {
                            continue;
                        }
                        let mut row = vec![0.0; p];
                        for d in 0..=degree {
                            row[j * (degree + 1) + d] = (t as f64 / scale).powi(d as i32);
                        }
                        row[p - 1] = a as f64;
                        data.extend(row);
                        ys.push(st.swy[k] / st.sw[k]);
                        ws.push(st.sw[k]);
                    }
                }
            }
            let mut names: Vec<String> =
                trials_used.iter().flat_map(|m| (0..=degree).map(move |d| format!("trial{}:t^{d}", m + 1))).collect();
            names.push("A".into());
            let x = Matrix::from_row_major(ys.len(), p, data).expect("consistent design");
            let fit = fit_logistic(&x, &ys, &ws, &names)?;
            let psi = fit.coefficients[p - 1];
            (psi, fit.coefficients[..p - 1].to_vec(), fit.iterations, fit.final_deviance)
        }
    };
    let weight_summary = weights.and_then(|w| summarize(w, &used));
    Ok(MsmFit {
        estimand: mode,
        psi_hat: psi,
        hr: psi.exp(),
        n_rows,
        n_events: e0 + e1,
        events_control: e0,
        events_treated: e1,
        n_baseline_terms: baseline.len(),
        baseline_coefficients: baseline,
        converged: true,
        iterations,
        final_deviance: deviance,
        weight_summary,
    })
}
