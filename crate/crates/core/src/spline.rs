//! Natural cubic spline basis with the same parameterization as R's
//! `splines::ns(x, knots, Boundary.knots, intercept = FALSE)`.
//!
//! The basis is built from order-4 B-splines, projected onto the null space
//! of the second-derivative constraints at both boundary knots using the
//! Householder QR of LINPACK `dqrdc2`, so post-surgical curves built from
//! published coefficient tables line up with fits made in R.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("interior knots must be strictly increasing and inside the boundary knots")]
    BadKnots,
    #[error("boundary knots must satisfy lower < upper")]
    BadBoundary,
}

/// Evaluator for a natural cubic spline basis of dimension `interior + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalSpline {
    interior: Vec<f64>,
    boundary: (f64, f64),
    /// Full order-4 knot sequence.
    knots: Vec<f64>,
    /// Householder vectors of the constraint QR (columns of length nb-1).
    qr: Vec<Vec<f64>>,
    qraux: Vec<f64>,
}

impl NaturalSpline {
    pub fn new(interior: &[f64], boundary: (f64, f64)) -> Result<Self, SplineError> {
        if !(boundary.0 < boundary.1) {
            return Err(SplineError::BadBoundary);
        }
        if interior.windows(2).any(|w| w[0] >= w[1]) || interior.iter().any(|&k| k <= boundary.0 || k >= boundary.1) {
            return Err(SplineError::BadKnots);
        }
        let mut knots = vec![boundary.0; 4];
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat(boundary.1).take(4));
        let nb = knots.len() - 4;

        // Second derivatives of each B-spline at the two boundaries, first column dropped.
        let c0: Vec<f64> = (1..nb).map(|i| bspline(&knots, i, 4, boundary.0, 2, false)).collect();
        let c1: Vec<f64> = (1..nb).map(|i| bspline(&knots, i, 4, boundary.1, 2, true)).collect();
        let (qr, qraux) = householder_qr(vec![c0, c1]);
        Ok(Self { interior: interior.to_vec(), boundary, knots, qr, qraux })
    }

    pub fn dim(&self) -> usize {
        self.interior.len() + 1
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior
    }

    pub fn boundary_knots(&self) -> (f64, f64) {
        self.boundary
    }

    /// Basis row at `x`. Outside the boundary knots the basis is extended
    /// linearly, as R does.
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let (lo, hi) = self.boundary;
        if x < lo || x > hi {
            let b = if x < lo { lo } else { hi };
            let v = self.eval(b);
            let d = self.eval_deriv(b);
            return v.iter().zip(&d).map(|(v, d)| v + (x - b) * d).collect();
        }
        let right = x >= hi;
        let nb = self.knots.len() - 4;
        let raw: Vec<f64> = (1..nb).map(|i| bspline(&self.knots, i, 4, x, 0, right)).collect();
        self.project(raw)
    }

    fn eval_deriv(&self, x: f64) -> Vec<f64> {
        let right = x >= self.boundary.1;
        let nb = self.knots.len() - 4;
        let raw: Vec<f64> = (1..nb).map(|i| bspline(&self.knots, i, 4, x, 1, right)).collect();
        self.project(raw)
    }

    fn project(&self, mut v: Vec<f64>) -> Vec<f64> {
        // qr.qty: apply H_1 then H_2
        for (j, col) in self.qr.iter().enumerate() {
            if self.qraux[j] == 0.0 {
                continue;
            }
            let mut h = col.clone();
            h[j] = self.qraux[j];
            let t = -h[j..].iter().zip(&v[j..]).map(|(a, b)| a * b).sum::<f64>() / h[j];
            for i in j..v.len() {
                v[i] += t * h[i];
            }
        }
        v.split_off(2)
    }

    /// Linear combination `b(x)' coef` in the requested scalar type.
    pub fn combine<T: Scalar>(&self, x: f64, coef: &[T]) -> T {
        self.eval(x).iter().zip(coef).fold(T::zero(), |acc, (&b, &c)| acc + T::lit(b) * c)
    }
}

/// LINPACK `dqrdc2`-style Householder QR of a column-major matrix without pivoting.
/// Returns the overwritten columns (Householder vectors below the diagonal) and `qraux`.
fn householder_qr(mut cols: Vec<Vec<f64>>) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = cols[0].len();
    let p = cols.len();
    let mut qraux = vec![0.0; p];
    for l in 0..p.min(n) {
        let mut nrmxl = cols[l][l..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if nrmxl == 0.0 {
            continue;
        }
        if cols[l][l] != 0.0 {
            nrmxl = nrmxl.abs().copysign(cols[l][l]);
        }
        for v in &mut cols[l][l..] {
            *v /= nrmxl;
        }
        cols[l][l] += 1.0;
        for j in (l + 1)..p {
            let t = -cols[l][l..].iter().zip(&cols[j][l..]).map(|(a, b)| a * b).sum::<f64>() / cols[l][l];
            for i in l..n {
                let d = t * cols[l][i];
                cols[j][i] += d;
            }
        }
        qraux[l] = cols[l][l];
        cols[l][l] = -nrmxl;
    }
    (cols, qraux)
}

/// Value (or `deriv`-th derivative) of B-spline `i` of order `k` at `x`.
/// `right_closed` makes the last non-empty interval closed on the right.
fn bspline(t: &[f64], i: usize, k: usize, x: f64, deriv: usize, right_closed: bool) -> f64 {
    if deriv > 0 {
        let km1 = (k - 1) as f64;
        let left = {
            let d = t[i + k - 1] - t[i];
            if d > 0.0 {
                bspline(t, i, k - 1, x, deriv - 1, right_closed) / d
            } else {
                0.0
            }
        };
        let rightv = {
            let d = t[i + k] - t[i + 1];
            if d > 0.0 {
                bspline(t, i + 1, k - 1, x, deriv - 1, right_closed) / d
            } else {
                0.0
            }
        };
        return km1 * (left - rightv);
    }
    if k == 1 {
        let (a, b) = (t[i], t[i + 1]);
        if a < b && ((x >= a && x < b) || (right_closed && x == b && b == *t.last().unwrap())) {
            return 1.0;
        }
        return 0.0;
    }
    let mut out = 0.0;
    let d1 = t[i + k - 1] - t[i];
    if d1 > 0.0 {
        out += (x - t[i]) / d1 * bspline(t, i, k - 1, x, 0, right_closed);
    }
    let d2 = t[i + k] - t[i + 1];
    if d2 > 0.0 {
        out += (t[i + k] - x) / d2 * bspline(t, i + 1, k - 1, x, 0, right_closed);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const BMI_KNOTS: [f64; 10] = [3.0, 6.0, 9.0, 12.0, 15.0, 18.0, 21.0, 24.0, 36.0, 48.0];

    /// Truncated-power natural cubic spline basis over all knots (boundary included).
    fn truncated_power_basis(all_knots: &[f64], x: f64) -> Vec<f64> {
        let kk = all_knots.len();
        let pos3 = |v: f64| if v > 0.0 { v * v * v } else { 0.0 };
        let d = |k: usize| (pos3(x - all_knots[k]) - pos3(x - all_knots[kk - 1])) / (all_knots[kk - 1] - all_knots[k]);
        let mut out = vec![1.0, x];
        for k in 0..(kk - 2) {
            out.push(d(k) - d(kk - 2));
        }
        out
    }

    fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let piv = (c..n).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap()).unwrap();
            a.swap(c, piv);
            b.swap(c, piv);
            for r in (c + 1)..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = ((r + 1)..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    #[test]
    fn dimension_and_zero_at_origin() {
        let s = NaturalSpline::new(&BMI_KNOTS, (0.0, 60.0)).unwrap();
        assert_eq!(s.dim(), 11);
        assert!(s.eval(0.0).iter().all(|v| v.abs() < 1e-15));
        let a1c = NaturalSpline::new(&[3.0, 9.0, 15.0, 30.0, 48.0], (0.0, 60.0)).unwrap();
        assert_eq!(a1c.dim(), 6);
    }

    #[test]
    fn basis_matches_truncated_power_construction() {
        // A natural cubic spline is determined by its values at the knots, so each
        // basis column is interpolated at the knots in the truncated-power basis
        // and both constructions are compared everywhere on a fine grid.
        let s = NaturalSpline::new(&BMI_KNOTS, (0.0, 60.0)).unwrap();
        let mut all = vec![0.0];
        all.extend_from_slice(&BMI_KNOTS);
        all.push(60.0);
        let unit: Vec<f64> = all.iter().map(|k| k / 60.0).collect();
        let interp: Vec<Vec<f64>> = unit.iter().map(|&x| truncated_power_basis(&unit, x)).collect();
        for col in 0..s.dim() {
            let at_knots: Vec<f64> = all.iter().map(|&x| s.eval(x)[col]).collect();
            let coef = solve_dense(interp.clone(), at_knots);
            for i in 0..=240 {
                let x = i as f64 * 0.25;
                let oracle: f64 = truncated_power_basis(&unit, x / 60.0).iter().zip(&coef).map(|(a, b)| a * b).sum();
                let err = (oracle - s.eval(x)[col]).abs();
                assert!(err < 1e-10, "column {col} at {x}: {err}");
            }
        }
    }

    #[test]
    fn linear_beyond_boundary() {
        let s = NaturalSpline::new(&[3.0, 9.0, 15.0, 30.0, 48.0], (0.0, 60.0)).unwrap();
        let (a, b, c) = (s.eval(60.0), s.eval(65.0), s.eval(70.0));
        for j in 0..s.dim() {
            assert!(((c[j] - b[j]) - (b[j] - a[j])).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_knots() {
        assert_eq!(NaturalSpline::new(&[3.0, 3.0], (0.0, 60.0)), Err(SplineError::BadKnots));
        assert_eq!(NaturalSpline::new(&[70.0], (0.0, 60.0)), Err(SplineError::BadKnots));
        assert_eq!(NaturalSpline::new(&[3.0], (5.0, 5.0)), Err(SplineError::BadBoundary));
    }
}
