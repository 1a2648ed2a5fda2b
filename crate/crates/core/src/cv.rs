//! Group-stratified repeated k-fold partitions and the in-fold OLS scorer used
//! by forward selection.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::CellKey;

/// Fold membership for every repeat: `assignments[r][i]` is the fold of row `i`
/// in repeat `r`. All rows of one group share a fold within a repeat.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<Vec<usize>>,
}

impl FoldPlan {
    /// Groups are shuffled per repeat (ChaCha8 seeded with `seed`, stream =
    /// repeat index) and each goes to the currently smallest fold.
    pub fn new(keys: &[CellKey], k: usize, repeats: usize, seed: u64) -> Result<Self> {
        if k < 2 || repeats == 0 {
            return Err(Error::invalid("cv", "need k ≥ 2 and repeats ≥ 1"));
        }
        let mut groups: Vec<u32> = keys.iter().map(|c| c.group_id).collect();
        groups.sort_unstable();
        groups.dedup();
        if groups.len() < k {
            return Err(Error::Precondition(format!(
                "{} groups cannot fill {k} folds",
                groups.len()
            )));
        }
        let mut assignments = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut order = groups.clone();
            order.shuffle(&mut rng);
            let mut sizes = vec![0usize; k];
            let mut fold_of_group = std::collections::HashMap::new();
            for g in order {
                let n = keys.iter().filter(|c| c.group_id == g).count();
                let f = (0..k).min_by_key(|&f| (sizes[f], f)).unwrap();
                sizes[f] += n;
                fold_of_group.insert(g, f);
            }
            assignments.push(keys.iter().map(|c| fold_of_group[&c.group_id]).collect());
        }
        Ok(Self { k, assignments })
    }

    /// (train rows, held-out rows) for every repeat × fold, repeat-major.
    pub fn splits(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        let mut out = Vec::with_capacity(self.k * self.assignments.len());
        for a in &self.assignments {
            for f in 0..self.k {
                let (test, train): (Vec<usize>, Vec<usize>) = (0..a.len()).partition(|&i| a[i] == f);
                out.push((train, test));
            }
        }
        out
    }
}

/// OLS on standardised columns with an unpenalised intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsModel {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub coef: Vec<f64>,
    pub intercept: f64,
}

/// Reciprocal condition threshold below which the Gram matrix counts as singular.
const RCOND_MIN: f64 = 1e-12;

impl OlsModel {
    /// Fit on `rows` of `x` restricted to `cols`. `None` when the design is
    /// singular (constant column, too few rows or collinear columns).
    pub fn fit(x: &[Vec<f64>], y: &[f64], rows: &[usize], cols: &[usize]) -> Option<Self> {
        let n = rows.len();
        let p = cols.len();
        if n < p + 1 {
            return None;
        }
        let ybar = rows.iter().map(|&i| y[i]).sum::<f64>() / n as f64;
        let mut mean = vec![0.0; p];
        let mut std = vec![0.0; p];
        for (j, &c) in cols.iter().enumerate() {
            let m = rows.iter().map(|&i| x[i][c]).sum::<f64>() / n as f64;
            let v = rows.iter().map(|&i| (x[i][c] - m).powi(2)).sum::<f64>() / n as f64;
            if !(v > 0.0) {
                return None;
            }
            mean[j] = m;
            std[j] = v.sqrt();
        }
        if p == 0 {
            return Some(Self { mean, std, coef: vec![], intercept: ybar });
        }
        let z = DMatrix::from_fn(n, p, |r, j| (x[rows[r]][cols[j]] - mean[j]) / std[j]);
        let yc = DVector::from_fn(n, |r, _| y[rows[r]] - ybar);
        let gram = z.transpose() * &z;
        let eig = gram.clone().symmetric_eigen();
        let (lo, hi) = eig
            .eigenvalues
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
        if !(lo > RCOND_MIN * hi) {
            return None;
        }
        let coef = gram.cholesky()?.solve(&(z.transpose() * yc));
        Some(Self {
            mean,
            std,
            coef: coef.iter().copied().collect(),
            intercept: ybar,
        })
    }

    pub fn predict_row(&self, row: &[f64], cols: &[usize]) -> f64 {
        self.intercept
            + cols
                .iter()
                .enumerate()
                .map(|(j, &c)| self.coef[j] * (row[c] - self.mean[j]) / self.std[j])
                .sum::<f64>()
    }
}

pub fn rmse_slices(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Per-split held-out RMSE on the log scale and on the linear (exp) scale.
/// A singular training design scores +∞ for that split.
pub fn cv_ols_scores(
    x: &[Vec<f64>],
    y: &[f64],
    cols: &[usize],
    splits: &[(Vec<usize>, Vec<usize>)],
) -> (Vec<f64>, Vec<f64>) {
    let mut log_scores = Vec::with_capacity(splits.len());
    let mut lin_scores = Vec::with_capacity(splits.len());
    for (train, test) in splits {
        match OlsModel::fit(x, y, train, cols) {
            Some(m) => {
                let pred: Vec<f64> = test.iter().map(|&i| m.predict_row(&x[i], cols)).collect();
                let truth: Vec<f64> = test.iter().map(|&i| y[i]).collect();
                log_scores.push(rmse_slices(&pred, &truth));
                let pe: Vec<f64> = pred.iter().map(|v| v.exp()).collect();
                let te: Vec<f64> = truth.iter().map(|v| v.exp()).collect();
                lin_scores.push(rmse_slices(&pe, &te));
            }
            None => {
                log_scores.push(f64::INFINITY);
                lin_scores.push(f64::INFINITY);
            }
        }
    }
    (log_scores, lin_scores)
}
