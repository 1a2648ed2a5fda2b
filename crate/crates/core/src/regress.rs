//! Point-estimate lifetime models: elastic net by cyclic coordinate descent,
//! its cross-validated hyperparameter search, and the dummy and
//! cycling-conditions baselines.
//!
//! The elastic-net objective on standardised features `Z` is
//!
//! ```text
//! ‖y − β0 − Zβ‖² + λ((1 − α)/2 ‖β‖² + α ‖β‖₁)
//! ```
//!
//! with the intercept unpenalised. Targets are log lifetimes; predictions are
//! exponentiated back to weeks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::{rmse_slices, FoldPlan};
use crate::error::{Error, Result};
use crate::stats;
use crate::types::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetFit {
    pub feature_names: Vec<String>,
    pub intercept: f64,
    /// Coefficients on the standardised scale.
    pub coef: Vec<f64>,
    pub mean: Vec<f64>,
    /// Population std of each training column; 1 for zero-variance columns.
    pub std: Vec<f64>,
    pub alpha: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub objective: f64,
    pub kkt_residual: f64,
    pub warnings: Vec<String>,
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Objective value for standardised data.
pub fn objective(z: &[Vec<f64>], y: &[f64], intercept: f64, beta: &[f64], alpha: f64, lambda: f64) -> f64 {
    let rss: f64 = z
        .iter()
        .zip(y)
        .map(|(r, t)| {
            let f = intercept + r.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
            (t - f).powi(2)
        })
        .sum();
    let l2: f64 = beta.iter().map(|b| b * b).sum();
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    rss + lambda * ((1.0 - alpha) / 2.0 * l2 + alpha * l1)
}

/// Column means and population stds of `x`. Zero-variance columns get std 1
/// and are reported in the returned index list.
pub fn standardization(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let p = x.first().map_or(0, |r| r.len());
    let mut mean = vec![0.0; p];
    let mut std = vec![1.0; p];
    let mut constant = vec![];
    for j in 0..p {
        let col: Vec<f64> = x.iter().map(|r| r[j]).collect();
        mean[j] = stats::mean(&col);
        let v = stats::variance(&col);
        if v > 0.0 && v.is_finite() {
            std[j] = v.sqrt();
        } else {
            constant.push(j);
        }
    }
    (mean, std, constant)
}

/// Largest curvature-scaled KKT violation of `beta` for standardised `z`.
pub fn kkt_residual(z: &[Vec<f64>], y: &[f64], intercept: f64, beta: &[f64], alpha: f64, lambda: f64, skip: &[usize]) -> f64 {
    let resid: Vec<f64> = z
        .iter()
        .zip(y)
        .map(|(r, t)| t - intercept - r.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let mut worst: f64 = 0.0;
    for j in 0..beta.len() {
        if skip.contains(&j) {
            continue;
        }
        let zz: f64 = z.iter().map(|r| r[j] * r[j]).sum();
        let curv = 2.0 * zz + lambda * (1.0 - alpha);
        let g = -2.0 * z.iter().zip(&resid).map(|(r, e)| r[j] * e).sum::<f64>() + lambda * (1.0 - alpha) * beta[j];
        let v = if beta[j] == 0.0 {
            (g.abs() - lambda * alpha).max(0.0)
        } else {
            (g + lambda * alpha * beta[j].signum()).abs()
        };
        worst = worst.max(v / curv);
    }
    worst
}

const POLISH_EVERY: usize = 50;

/// Exact solve on the current active set with its signs held fixed. Accepted
/// only when the signs survive and the full KKT residual is within `tol`.
#[allow(clippy::too_many_arguments)]
fn polish(
    z: &[Vec<f64>],
    y: &[f64],
    intercept: f64,
    beta: &[f64],
    alpha: f64,
    lambda: f64,
    skip: &[usize],
    tol: f64,
) -> Option<(Vec<f64>, f64)> {
    let active: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
    let mut out = vec![0.0; beta.len()];
    if !active.is_empty() {
        let m = active.len();
        let a = nalgebra::DMatrix::from_fn(m, m, |r, c| {
            let (i, j) = (active[r], active[c]);
            let g: f64 = z.iter().map(|row| row[i] * row[j]).sum();
            2.0 * g + if r == c { lambda * (1.0 - alpha) } else { 0.0 }
        });
        let b = nalgebra::DVector::from_iterator(
            m,
            active.iter().map(|&j| {
                2.0 * z.iter().zip(y).map(|(row, t)| row[j] * (t - intercept)).sum::<f64>() - lambda * alpha * beta[j].signum()
            }),
        );
        let sol = a.cholesky()?.solve(&b);
        for (r, &j) in active.iter().enumerate() {
            if sol[r].signum() != beta[j].signum() || !sol[r].is_finite() {
                return None;
            }
            out[j] = sol[r];
        }
    }
    let k = kkt_residual(z, y, intercept, &out, alpha, lambda, skip);
    (k <= tol).then_some((out, k))
}

/// Fit on raw rows `x` (n × p) with log-lifetime targets `y`.
pub fn fit_elastic_net(
    names: &[String],
    x: &[Vec<f64>],
    y: &[f64],
    alpha: f64,
    lambda: f64,
    opts: SolverOptions,
) -> Result<ElasticNetFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::Precondition(format!("elastic net needs ≥ 2 aligned rows, got {n}")));
    }
    if !(0.0..=1.0).contains(&alpha) || !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("alpha/lambda", format!("alpha {alpha} lambda {lambda}")));
    }
    let p = names.len();
    if x.iter().any(|r| r.len() != p) {
        return Err(Error::Precondition("row width differs from feature names".into()));
    }
    let (mean, std, constant) = standardization(x);
    let mut warnings: Vec<String> = constant
        .iter()
        .map(|&j| format!("{}: zero variance on training rows, coefficient fixed at 0", names[j]))
        .collect();
    let z: Vec<Vec<f64>> = x
        .iter()
        .map(|r| (0..p).map(|j| if constant.contains(&j) { 0.0 } else { (r[j] - mean[j]) / std[j] }).collect())
        .collect();
    let intercept = stats::mean(y);
    let mut beta = vec![0.0; p];
    let mut resid: Vec<f64> = y.iter().map(|t| t - intercept).collect();
    let zz: Vec<f64> = (0..p).map(|j| z.iter().map(|r| r[j] * r[j]).sum()).collect();
    let mut iterations = 0;
    let mut last_change = f64::INFINITY;
    let mut kkt = f64::INFINITY;
    let active: Vec<usize> = (0..p).filter(|j| !constant.contains(j)).collect();
    while iterations < opts.max_iter {
        iterations += 1;
        last_change = 0.0;
        for &j in &active {
            let rho: f64 = z.iter().zip(&resid).map(|(r, e)| r[j] * e).sum::<f64>() + zz[j] * beta[j];
            let new = soft_threshold(2.0 * rho, lambda * alpha) / (2.0 * zz[j] + lambda * (1.0 - alpha));
            let d = new - beta[j];
            if d != 0.0 {
                for (e, r) in resid.iter_mut().zip(&z) {
                    *e -= r[j] * d;
                }
                beta[j] = new;
            }
            last_change = last_change.max(d.abs());
        }
        if last_change < opts.tol {
            kkt = kkt_residual(&z, y, intercept, &beta, alpha, lambda, &constant);
            if kkt <= opts.tol {
                break;
            }
        }
        if iterations % POLISH_EVERY == 0 || last_change < opts.tol {
            if let Some((b, k)) = polish(&z, y, intercept, &beta, alpha, lambda, &constant, opts.tol) {
                beta = b;
                kkt = k;
                last_change = 0.0;
                break;
            }
        }
    }
    let obj = objective(&z, y, intercept, &beta, alpha, lambda);
    if !(last_change < opts.tol && kkt <= opts.tol) {
        return Err(Error::NotConverged {
            iterations,
            objective: obj,
            last_change,
        });
    }
    if p > 0 && beta.iter().all(|b| *b == 0.0) && !active.is_empty() && lambda > 0.0 && alpha > 0.0 {
        warnings.push("all coefficients shrunk to zero".into());
    }
    Ok(ElasticNetFit {
        feature_names: names.to_vec(),
        intercept,
        coef: beta,
        mean,
        std,
        alpha,
        lambda,
        iterations,
        objective: obj,
        kkt_residual: kkt,
        warnings,
    })
}

impl ElasticNetFit {
    /// Log-scale prediction for one row ordered like `feature_names`.
    pub fn predict_log_row(&self, row: &[f64]) -> f64 {
        self.intercept
            + row
                .iter()
                .enumerate()
                .map(|(j, v)| self.coef[j] * (v - self.mean[j]) / self.std[j])
                .sum::<f64>()
    }

    /// Lifetimes in weeks for the rows of `m`, columns aligned by name.
    pub fn predict(&self, m: &FeatureMatrix) -> Result<Vec<f64>> {
        let rows = m.select_columns(&self.feature_names)?;
        Ok(rows.iter().map(|r| self.predict_log_row(r).exp()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    pub alphas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub k: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl TuneConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            alphas: (0..=10).map(|i| i as f64 / 10.0).collect(),
            lambdas: log_space(1e-4, 1e1, 31),
            k: 5,
            repeats: 5,
            seed,
        }
    }
}

pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1).max(1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub alpha: f64,
    pub lambda: f64,
    pub cv_rmse_mean: f64,
    pub cv_rmse_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub alpha: f64,
    pub lambda: f64,
    pub table: Vec<CvCell>,
}

/// Grid search over (α, λ) by repeated group-stratified k-fold CV on the log
/// scale. Ties go to the larger λ, then the earlier α.
pub fn cv_tune(m: &FeatureMatrix, y: &[f64], config: &TuneConfig, opts: SolverOptions) -> Result<TuneResult> {
    if config.alphas.is_empty() || config.lambdas.is_empty() {
        return Err(Error::invalid("tune", "grids must be non-empty"));
    }
    let plan = FoldPlan::new(&m.cell_keys, config.k, config.repeats, config.seed)?;
    let splits = plan.splits();
    let grid: Vec<(f64, f64)> = config
        .alphas
        .iter()
        .flat_map(|&a| config.lambdas.iter().map(move |&l| (a, l)))
        .collect();
    let table: Vec<CvCell> = grid
        .par_iter()
        .map(|&(alpha, lambda)| {
            let scores: Vec<f64> = splits
                .iter()
                .map(|(train, test)| {
                    let xt: Vec<Vec<f64>> = train.iter().map(|&i| m.values[i].clone()).collect();
                    let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
                    match fit_elastic_net(&m.feature_names, &xt, &yt, alpha, lambda, opts) {
                        Ok(f) => {
                            let pred: Vec<f64> = test.iter().map(|&i| f.predict_log_row(&m.values[i])).collect();
                            let truth: Vec<f64> = test.iter().map(|&i| y[i]).collect();
                            rmse_slices(&pred, &truth)
                        }
                        Err(_) => f64::INFINITY,
                    }
                })
                .collect();
            let (mean, std) = if scores.iter().all(|s| s.is_finite()) {
                (stats::mean(&scores), stats::sample_std(&scores))
            } else {
                (f64::INFINITY, f64::INFINITY)
            };
            CvCell { alpha, lambda, cv_rmse_mean: mean, cv_rmse_std: std }
        })
        .collect();
    let best = table
        .iter()
        .enumerate()
        .filter(|(_, c)| c.cv_rmse_mean.is_finite())
        .min_by(|(ia, a), (ib, b)| {
            a.cv_rmse_mean
                .total_cmp(&b.cv_rmse_mean)
                .then(b.lambda.total_cmp(&a.lambda))
                .then(ia.cmp(ib))
        })
        .map(|(_, c)| c.clone())
        .ok_or_else(|| Error::Precondition("no (alpha, lambda) pair converged in CV".into()))?;
    Ok(TuneResult {
        alpha: best.alpha,
        lambda: best.lambda,
        table,
    })
}

/// Tune on the training matrix, then refit on all its rows.
pub fn tuned_elastic_net(m: &FeatureMatrix, y: &[f64], config: &TuneConfig, opts: SolverOptions) -> Result<(ElasticNetFit, TuneResult)> {
    let tune = cv_tune(m, y, config, opts)?;
    let fit = fit_elastic_net(&m.feature_names, &m.values, y, tune.alpha, tune.lambda, opts)?;
    Ok((fit, tune))
}

/// Predicts the mean training lifetime in weeks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DummyModel {
    pub mean_weeks: f64,
}

impl DummyModel {
    pub fn fit(lifetimes_weeks: &[f64]) -> Result<Self> {
        if lifetimes_weeks.is_empty() {
            return Err(Error::Precondition("dummy model needs a training cell".into()));
        }
        Ok(Self { mean_weeks: stats::mean(lifetimes_weeks) })
    }

    pub fn predict(&self, n: usize) -> Vec<f64> {
        vec![self.mean_weeks; n]
    }
}
