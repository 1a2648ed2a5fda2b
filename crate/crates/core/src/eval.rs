//! Lifetime error metrics on the week scale and the per-split model
//! comparison table.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CellKey, SplitAssignment, SplitTag};

/// Mean absolute percentage error in percent.
pub fn mape(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check(y_true, y_pred)?;
    if let Some(i) = y_true.iter().position(|&y| !(y > 0.0)) {
        return Err(Error::invalid("y_true", format!("non-positive lifetime {} at index {i}", y_true[i])));
    }
    let s: f64 = y_true.iter().zip(y_pred).map(|(y, p)| ((y - p) / y).abs()).sum();
    Ok(s / y_true.len() as f64 * 100.0)
}

/// Root mean squared error in weeks.
pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check(y_true, y_pred)?;
    let s: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok((s / y_true.len() as f64).sqrt())
}

fn check(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Precondition(format!("{} targets vs {} predictions", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Precondition("no predictions to score".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub n: usize,
    pub mape: f64,
    pub rmse: f64,
}

/// One row of the comparison table. `None` marks a split with no predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub n_features: usize,
    pub train: Option<SplitMetrics>,
    pub test_high_dod: Option<SplitMetrics>,
    pub test_low_dod: Option<SplitMetrics>,
}

impl MetricsRow {
    pub fn split(&self, tag: SplitTag) -> Option<SplitMetrics> {
        match tag {
            SplitTag::Train => self.train,
            SplitTag::TestHighDod => self.test_high_dod,
            SplitTag::TestLowDod => self.test_low_dod,
        }
    }
}

/// Week-scale predictions of one model. Training rows are in-sample fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPredictions {
    pub model: String,
    pub n_features: usize,
    /// (cell, predicted weeks, true weeks).
    pub rows: Vec<(CellKey, f64, f64)>,
}

pub fn score_split(preds: &ModelPredictions, splits: &SplitAssignment, tag: SplitTag) -> Result<Option<SplitMetrics>> {
    let (p, t): (Vec<f64>, Vec<f64>) = preds
        .rows
        .iter()
        .filter(|(k, _, _)| splits.get(k) == Some(tag))
        .map(|(_, p, t)| (*p, *t))
        .unzip();
    if p.is_empty() {
        return Ok(None);
    }
    Ok(Some(SplitMetrics { n: p.len(), mape: mape(&t, &p)?, rmse: rmse(&t, &p)? }))
}

pub fn comparison_table(models: &[ModelPredictions], splits: &SplitAssignment) -> Result<Vec<MetricsRow>> {
    models
        .iter()
        .map(|m| {
            if let Some((k, _, _)) = m.rows.iter().find(|(k, _, _)| splits.get(k).is_none()) {
                return Err(Error::Precondition(format!("model {} predicts cell {k} with no split", m.model)));
            }
            Ok(MetricsRow {
                model: m.model.clone(),
                n_features: m.n_features,
                train: score_split(m, splits, SplitTag::Train)?,
                test_high_dod: score_split(m, splits, SplitTag::TestHighDod)?,
                test_low_dod: score_split(m, splits, SplitTag::TestLowDod)?,
            })
        })
        .collect()
}

pub const TABLE_COLUMNS: [&str; 8] = [
    "model",
    "n_features",
    "train_mape_pct",
    "test_high_dod_mape_pct",
    "test_low_dod_mape_pct",
    "train_rmse_weeks",
    "test_high_dod_rmse_weeks",
    "test_low_dod_rmse_weeks",
];

/// CSV with `absent` for missing splits. Training metrics are in-sample.
pub fn write_table_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&TABLE_COLUMNS.join(","));
    out.push('\n');
    let fmt = |m: Option<SplitMetrics>, f: fn(SplitMetrics) -> f64| m.map_or("absent".to_string(), |m| format!("{:.6}", f(m)));
    for r in rows {
        let cells = [
            r.model.clone(),
            r.n_features.to_string(),
            fmt(r.train, |m| m.mape),
            fmt(r.test_high_dod, |m| m.mape),
            fmt(r.test_low_dod, |m| m.mape),
            fmt(r.train, |m| m.rmse),
            fmt(r.test_high_dod, |m| m.rmse),
            fmt(r.test_low_dod, |m| m.rmse),
        ];
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Predictions keyed by cell, for joining model outputs.
pub fn by_cell(p: &ModelPredictions) -> BTreeMap<CellKey, (f64, f64)> {
    p.rows.iter().map(|(k, a, b)| (*k, (*a, *b))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        assert_eq!(mape(&[10.0, 20.0], &[10.0, 20.0]).unwrap(), 0.0);
        assert!((mape(&[10.0, 20.0], &[11.0, 18.0]).unwrap() - 10.0).abs() < 1e-12);
        assert!((mape(&[3.0, 7.0], &[6.0, 14.0]).unwrap() - 100.0).abs() < 1e-12);
        assert!(mape(&[0.0, 1.0], &[1.0, 1.0]).is_err());
        assert!((rmse(&[0.0, 0.0], &[3.0, -4.0]).unwrap() - 3.5355339059327378).abs() < 1e-12);
        assert!((rmse(&[1.0, 5.0, 9.0], &[3.5, 7.5, 11.5]).unwrap() - 2.5).abs() < 1e-12);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[]).is_err());
    }

    #[test]
    fn table_marks_absent_splits() {
        let k = |c| CellKey::new(1, c);
        let splits = SplitAssignment::from_entries(vec![
            (k(1), SplitTag::Train),
            (k(2), SplitTag::Train),
            (k(3), SplitTag::TestHighDod),
        ])
        .unwrap();
        let m = ModelPredictions { model: "a".into(), n_features: 1, rows: vec![(k(1), 10.0, 10.0), (k(2), 11.0, 10.0), (k(3), 5.0, 4.0)] };
        let mut twin = m.clone();
        twin.model = "b".into();
        let rows = comparison_table(&[m, twin], &splits).unwrap();
        assert!(rows[0].test_low_dod.is_none());
        assert_eq!(rows[0].train.unwrap().n, 2);
        assert!((rows[0].test_high_dod.unwrap().mape - 25.0).abs() < 1e-12);
        assert_eq!(rows[0].train, rows[1].train);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_table_csv(&rows, &p).unwrap();
        let s = std::fs::read_to_string(&p).unwrap();
        assert!(s.lines().nth(1).unwrap().ends_with("absent"));
    }
}
