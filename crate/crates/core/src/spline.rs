//! Cubic smoothing spline in Reinsch form.
//!
//! Minimises `Σ wᵢ (yᵢ − f(xᵢ))² + λ ∫ f''(x)² dx` over natural cubic splines
//! with knots at the (distinct) abscissae. The second-derivative vector solves
//! the pentadiagonal system `(R + λ QᵀW⁻¹Q) γ = Qᵀy`, factored with a banded
//! Cholesky; fitted values are `f = y − λ W⁻¹ Q γ`. `λ = 0` interpolates.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    /// Second derivatives at the knots; zero at both ends.
    second: Vec<f64>,
}

/// Merge equal abscissae into a single weighted point (mean ordinate, summed weight).
fn collapse_ties(x: &[f64], y: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let (mut xs, mut ys, mut ws) = (Vec::new(), Vec::<f64>::new(), Vec::<f64>::new());
    for i in idx {
        if xs.last() == Some(&x[i]) {
            let k = ys.len() - 1;
            let wt = ws[k] + w[i];
            ys[k] = (ys[k] * ws[k] + y[i] * w[i]) / wt;
            ws[k] = wt;
        } else {
            xs.push(x[i]);
            ys.push(y[i]);
            ws.push(w[i]);
        }
    }
    (xs, ys, ws)
}

/// In-place Cholesky of a symmetric band matrix stored as `band[d][i] = A[i][i+d]`.
/// Returns the failing row and pivot on a non-positive pivot.
fn band_cholesky(band: &mut [Vec<f64>]) -> std::result::Result<(), (usize, f64)> {
    let bw = band.len() - 1;
    let n = band[0].len();
    for i in 0..n {
        // L[i][i]
        let mut d = band[0][i];
        for k in 1..=bw.min(i) {
            d -= band[k][i - k] * band[k][i - k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err((i, d));
        }
        let d = d.sqrt();
        band[0][i] = d;
        // L[i+m][i] stored at band[m][i]
        for m in 1..=bw {
            if i + m >= n {
                break;
            }
            let mut s = band[m][i];
            for k in 1..=bw {
                if k > i || m + k > bw {
                    break;
                }
                s -= band[m + k][i - k] * band[k][i - k];
            }
            band[m][i] = s / d;
        }
    }
    Ok(())
}

fn band_solve(band: &[Vec<f64>], rhs: &mut [f64]) {
    let bw = band.len() - 1;
    let n = rhs.len();
    for i in 0..n {
        let mut s = rhs[i];
        for k in 1..=bw.min(i) {
            s -= band[k][i - k] * rhs[i - k];
        }
        rhs[i] = s / band[0][i];
    }
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for k in 1..=bw {
            if i + k >= n {
                break;
            }
            s -= band[k][i] * rhs[i + k];
        }
        rhs[i] = s / band[0][i];
    }
}

impl SmoothingSpline {
    /// Fit with unit weights.
    pub fn fit(x: &[f64], y: &[f64], lambda: f64) -> Result<Self> {
        Self::fit_weighted(x, y, &vec![1.0; x.len()], lambda)
    }

    pub fn fit_weighted(x: &[f64], y: &[f64], w: &[f64], lambda: f64) -> Result<Self> {
        if x.len() != y.len() || x.len() != w.len() {
            return Err(Error::Precondition("spline inputs differ in length".into()));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid("smoothing", format!("{lambda} is not a finite non-negative value")));
        }
        if x.iter().chain(y).chain(w).any(|v| !v.is_finite()) || w.iter().any(|&v| v <= 0.0) {
            return Err(Error::Precondition("spline inputs must be finite with positive weights".into()));
        }
        let (x, y, w) = collapse_ties(x, y, w);
        let n = x.len();
        if n < 3 {
            return Err(Error::Precondition(format!("spline needs at least 3 distinct abscissae, got {n}")));
        }
        let h: Vec<f64> = x.windows(2).map(|p| p[1] - p[0]).collect();
        let m = n - 2;
        // Column j of Q (j = 0..m) touches rows j, j+1, j+2.
        let q = |j: usize| -> [f64; 3] { [1.0 / h[j], -1.0 / h[j] - 1.0 / h[j + 1], 1.0 / h[j + 1]] };
        let mut band = vec![vec![0.0; m]; 3];
        for j in 0..m {
            band[0][j] = (h[j] + h[j + 1]) / 3.0;
            if j + 1 < m {
                band[1][j] = h[j + 1] / 6.0;
            }
        }
        if lambda > 0.0 {
            for j in 0..m {
                let qj = q(j);
                for d in 0..=2 {
                    if j + d >= m {
                        break;
                    }
                    let qk = q(j + d);
                    // Shared rows between column j (rows j..j+2) and column j+d (rows j+d..j+d+2).
                    let mut s = 0.0;
                    for r in (j + d)..=(j + 2) {
                        s += qj[r - j] * qk[r - j - d] / w[r];
                    }
                    band[d][j] += lambda * s;
                }
            }
        }
        let mut rhs: Vec<f64> = (0..m)
            .map(|j| {
                let qj = q(j);
                qj[0] * y[j] + qj[1] * y[j + 1] + qj[2] * y[j + 2]
            })
            .collect();
        band_cholesky(&mut band).map_err(|(row, pivot)| Error::SplineSolve {
            row,
            pivot,
            smoothing: lambda,
        })?;
        band_solve(&band, &mut rhs);
        let mut second = vec![0.0; n];
        second[1..=m].copy_from_slice(&rhs);
        let mut values = y.clone();
        if lambda > 0.0 {
            let mut qg = vec![0.0; n];
            for (j, g) in rhs.iter().enumerate() {
                for (d, qv) in q(j).iter().enumerate() {
                    qg[j + d] += qv * g;
                }
            }
            for r in 0..n {
                values[r] = y[r] - lambda * qg[r] / w[r];
            }
        }
        Ok(Self {
            knots: x,
            values,
            second,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Fitted values at the knots.
    pub fn fitted(&self) -> &[f64] {
        &self.values
    }

    fn interval(&self, t: f64) -> usize {
        let n = self.knots.len();
        match self.knots.binary_search_by(|k| k.total_cmp(&t)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    /// Value at `t`; linear extrapolation outside the knot range.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.knots.len();
        let (x0, xn) = (self.knots[0], self.knots[n - 1]);
        if t < x0 {
            return self.values[0] + (t - x0) * self.deriv(x0);
        }
        if t > xn {
            return self.values[n - 1] + (t - xn) * self.deriv(xn);
        }
        let i = self.interval(t);
        let h = self.knots[i + 1] - self.knots[i];
        let a = (self.knots[i + 1] - t) / h;
        let b = (t - self.knots[i]) / h;
        a * self.values[i]
            + b * self.values[i + 1]
            + ((a * a * a - a) * self.second[i] + (b * b * b - b) * self.second[i + 1]) * h * h / 6.0
    }

    /// First derivative at `t`; constant outside the knot range.
    pub fn deriv(&self, t: f64) -> f64 {
        let n = self.knots.len();
        let t = t.clamp(self.knots[0], self.knots[n - 1]);
        let i = self.interval(t);
        let h = self.knots[i + 1] - self.knots[i];
        let a = (self.knots[i + 1] - t) / h;
        let b = (t - self.knots[i]) / h;
        (self.values[i + 1] - self.values[i]) / h
            - (3.0 * a * a - 1.0) / 6.0 * h * self.second[i]
            + (3.0 * b * b - 1.0) / 6.0 * h * self.second[i + 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_matrix_fit(x: &[f64], y: &[f64], lambda: f64) -> Vec<f64> {
        // Independent dense solve of the same normal equations.
        use nalgebra::{DMatrix, DVector};
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|p| p[1] - p[0]).collect();
        let mut q = DMatrix::zeros(n, n - 2);
        let mut r = DMatrix::zeros(n - 2, n - 2);
        for j in 0..n - 2 {
            q[(j, j)] = 1.0 / h[j];
            q[(j + 1, j)] = -1.0 / h[j] - 1.0 / h[j + 1];
            q[(j + 2, j)] = 1.0 / h[j + 1];
            r[(j, j)] = (h[j] + h[j + 1]) / 3.0;
            if j + 1 < n - 2 {
                r[(j, j + 1)] = h[j + 1] / 6.0;
                r[(j + 1, j)] = h[j + 1] / 6.0;
            }
        }
        let yv = DVector::from_column_slice(y);
        let a = &r + lambda * q.transpose() * &q;
        let g = a.lu().solve(&(q.transpose() * &yv)).unwrap();
        (yv - lambda * q * g).iter().copied().collect()
    }

    #[test]
    fn matches_dense_solve() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 * 0.1 + (i as f64 * 0.37).sin() * 0.02).collect();
        let y: Vec<f64> = x.iter().map(|v| (2.0 * v).sin() + 0.1 * (13.0 * v).cos()).collect();
        for lambda in [1e-4, 1e-2, 1.0] {
            let s = SmoothingSpline::fit(&x, &y, lambda).unwrap();
            let dense = dense_matrix_fit(&x, &y, lambda);
            for (a, b) in s.fitted().iter().zip(&dense) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_smoothing_interpolates() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sqrt()).collect();
        let s = SmoothingSpline::fit(&x, &y, 0.0).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert!((s.eval(*xi) - yi).abs() < 1e-12);
        }
    }

    #[test]
    fn reproduces_cubic_free_linear() {
        // Lines have zero curvature penalty, so any λ returns the line.
        let x: Vec<f64> = (0..30).map(|i| i as f64 / 7.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 3.0 * v).collect();
        let s = SmoothingSpline::fit(&x, &y, 1e3).unwrap();
        assert!((s.eval(1.234) - (2.0 - 3.0 * 1.234)).abs() < 1e-9);
        assert!((s.deriv(2.5) + 3.0).abs() < 1e-9);
        assert!((s.eval(-1.0) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn ties_are_merged() {
        let x = [0.0, 1.0, 1.0, 2.0, 3.0];
        let y = [0.0, 0.5, 1.5, 2.0, 3.0];
        let s = SmoothingSpline::fit(&x, &y, 0.0).unwrap();
        assert_eq!(s.knots().len(), 4);
        assert!((s.eval(1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn band_cholesky_reports_pivot() {
        let mut band = vec![vec![1.0, 1.0], vec![2.0, 0.0], vec![0.0, 0.0]];
        assert_eq!(band_cholesky(&mut band).unwrap_err().0, 1);
    }
}
