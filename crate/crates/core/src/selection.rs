//! Stepwise forward selection scored by repeated group-stratified k-fold CV of
//! an OLS model on the log-lifetime target.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::{cv_ols_scores, FoldPlan};
use crate::error::{Error, Result};
use crate::stats;
use crate::types::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub k: usize,
    pub repeats: usize,
    pub max_features: usize,
    pub seed: u64,
    /// Runner-up candidates recorded per step.
    pub runners_up: usize,
}

impl SelectionConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            k: 5,
            repeats: 5,
            max_features: 10,
            seed,
            runners_up: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub feature: String,
    pub cv_rmse_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub feature: String,
    /// Mean and sample std of held-out RMSE (log weeks) over repeats × folds.
    pub cv_rmse_mean: f64,
    pub cv_rmse_std: f64,
    /// Same statistic with predictions and targets exponentiated to weeks.
    pub cv_rmse_linear_mean: f64,
    pub runner_up: Vec<CandidateScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub steps: Vec<SelectionStep>,
    pub config: SelectionConfig,
    pub metric_scale: String,
    pub n_rows: usize,
}

impl SelectionTrace {
    pub fn features(&self, n: usize) -> Vec<String> {
        self.steps.iter().take(n).map(|s| s.feature.clone()).collect()
    }
}

fn summarize(scores: &[f64]) -> (f64, f64) {
    if scores.iter().any(|s| !s.is_finite()) {
        return (f64::INFINITY, f64::INFINITY);
    }
    (stats::mean(scores), stats::sample_std(scores))
}

/// Greedy forward selection. At each step every unchosen column is appended
/// to the current set and scored; the lowest mean CV RMSE wins (ties go to the
/// earlier column). Stops at `max_features` or when no candidate has a finite
/// score.
pub fn forward_select(matrix: &FeatureMatrix, targets: &[f64], config: &SelectionConfig) -> Result<SelectionTrace> {
    matrix.validate()?;
    if targets.len() != matrix.n_rows() {
        return Err(Error::Precondition("targets and matrix rows differ".into()));
    }
    if matrix.n_rows() < config.k {
        return Err(Error::Precondition(format!(
            "{} rows cannot fill {} folds",
            matrix.n_rows(),
            config.k
        )));
    }
    let plan = FoldPlan::new(&matrix.cell_keys, config.k, config.repeats, config.seed)?;
    let splits = plan.splits();
    let x = &matrix.values;
    let p = matrix.feature_names.len();
    let mut chosen: Vec<usize> = Vec::new();
    let mut steps = Vec::new();
    while chosen.len() < config.max_features.min(p) {
        let candidates: Vec<usize> = (0..p).filter(|j| !chosen.contains(j)).collect();
        let scored: Vec<(usize, f64, f64, f64)> = candidates
            .par_iter()
            .map(|&j| {
                let mut cols = chosen.clone();
                cols.push(j);
                let (log_s, lin_s) = cv_ols_scores(x, targets, &cols, &splits);
                let (m, s) = summarize(&log_s);
                let (ml, _) = summarize(&lin_s);
                (j, m, s, ml)
            })
            .collect();
        let mut order: Vec<&(usize, f64, f64, f64)> = scored.iter().filter(|c| c.1.is_finite()).collect();
        order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let Some(&&(best, mean, std, lin)) = order.first() else { break };
        chosen.push(best);
        steps.push(SelectionStep {
            feature: matrix.feature_names[best].clone(),
            cv_rmse_mean: mean,
            cv_rmse_std: std,
            cv_rmse_linear_mean: lin,
            runner_up: order
                .iter()
                .skip(1)
                .take(config.runners_up)
                .map(|c| CandidateScore {
                    feature: matrix.feature_names[c.0].clone(),
                    cv_rmse_mean: c.1,
                })
                .collect(),
        });
    }
    if steps.is_empty() {
        return Err(Error::Precondition("no candidate produced a finite CV score".into()));
    }
    Ok(SelectionTrace {
        steps,
        config: config.clone(),
        metric_scale: "log_weeks".into(),
        n_rows: matrix.n_rows(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountPolicy {
    /// Smallest n whose mean is within one std (of the minimising step) of the
    /// minimum mean. When the minimum sits at the last step the last step is
    /// returned.
    OneStd,
    LowestMean,
    LowestStd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureCountChoice {
    pub chosen: usize,
    pub lowest_mean: usize,
    pub lowest_std: usize,
}

pub fn pick_feature_count(trace: &SelectionTrace, policy: CountPolicy) -> Result<FeatureCountChoice> {
    let s = &trace.steps;
    if s.is_empty() {
        return Err(Error::Precondition("empty selection trace".into()));
    }
    let argmin = |f: &dyn Fn(&SelectionStep) -> f64| {
        (0..s.len())
            .min_by(|&a, &b| f(&s[a]).total_cmp(&f(&s[b])).then(a.cmp(&b)))
            .unwrap()
    };
    let lm = argmin(&|x| x.cv_rmse_mean);
    let ls = argmin(&|x| x.cv_rmse_std);
    let chosen = match policy {
        CountPolicy::LowestMean => lm,
        CountPolicy::LowestStd => ls,
        CountPolicy::OneStd => {
            if lm + 1 == s.len() {
                lm
            } else {
                let bound = s[lm].cv_rmse_mean + s[lm].cv_rmse_std;
                (0..s.len()).find(|&i| s[i].cv_rmse_mean <= bound).unwrap()
            }
        }
    };
    Ok(FeatureCountChoice {
        chosen: chosen + 1,
        lowest_mean: lm + 1,
        lowest_std: ls + 1,
    })
}
