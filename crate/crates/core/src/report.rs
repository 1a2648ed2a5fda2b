//! Plot-ready data files. Each writer emits one CSV with a fixed header and
//! rows in a deterministic order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::selection::SelectionTrace;
use crate::types::{CellKey, SplitAssignment, SplitTag};

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let wrap = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.write_record(&r).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn split_name(splits: &SplitAssignment, k: &CellKey) -> &'static str {
    splits.get(k).map_or("unassigned", |t| t.as_str())
}

/// Fixed-width bins from floor(min) to ceil(max) of the values.
pub fn bin_edges(values: &[f64], width: f64) -> Vec<f64> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || !(width > 0.0) {
        return vec![];
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min).floor();
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil().max(lo + width);
    let n = ((hi - lo) / width).ceil() as usize;
    (0..=n).map(|i| lo + i as f64 * width).collect()
}

fn bin_of(edges: &[f64], v: f64) -> Option<usize> {
    if edges.len() < 2 || v < edges[0] || v > edges[edges.len() - 1] {
        return None;
    }
    Some(edges.partition_point(|e| *e <= v).saturating_sub(1).min(edges.len() - 2))
}

/// Columns `bin_lo,bin_hi,train,test_high_dod,test_low_dod`.
pub fn write_lifetime_histogram(table: &FeatureTable, splits: &SplitAssignment, width: f64, path: &Path) -> Result<()> {
    let lives: Vec<(f64, Option<SplitTag>)> = table
        .cell_keys
        .iter()
        .zip(&table.lifetimes)
        .filter_map(|(k, l)| l.map(|l| (l, splits.get(k))))
        .collect();
    let edges = bin_edges(&lives.iter().map(|l| l.0).collect::<Vec<_>>(), width);
    let mut counts = vec![[0usize; 3]; edges.len().saturating_sub(1)];
    for (l, t) in &lives {
        if let (Some(b), Some(t)) = (bin_of(&edges, *l), t) {
            counts[b][SplitTag::ALL.iter().position(|x| x == t).unwrap()] += 1;
        }
    }
    write_rows(
        path,
        &["bin_lo", "bin_hi", "train", "test_high_dod", "test_low_dod"],
        counts.iter().enumerate().map(|(i, c)| {
            vec![edges[i].to_string(), edges[i + 1].to_string(), c[0].to_string(), c[1].to_string(), c[2].to_string()]
        }),
    )
}

/// Columns `feature_value,lifetime_weeks,split`; cells lacking either value
/// are skipped.
pub fn write_feature_scatter(table: &FeatureTable, splits: &SplitAssignment, feature: &str, path: &Path) -> Result<()> {
    let col = table.column(feature).ok_or_else(|| Error::MissingFeature(feature.into()))?;
    let rows = table.cell_keys.iter().enumerate().filter_map(|(i, k)| {
        let (v, l) = (col.values[i]?, table.lifetimes[i]?);
        Some(vec![v.to_string(), l.to_string(), split_name(splits, k).to_string()])
    });
    write_rows(path, &["feature_value", "lifetime_weeks", "split"], rows)
}

/// Columns `step,feature,cv_rmse_mean,cv_rmse_std,cv_rmse_linear_mean`.
pub fn write_selection_trace(trace: &SelectionTrace, path: &Path) -> Result<()> {
    let rows = trace.steps.iter().enumerate().map(|(i, s)| {
        vec![
            (i + 1).to_string(),
            s.feature.clone(),
            s.cv_rmse_mean.to_string(),
            s.cv_rmse_std.to_string(),
            s.cv_rmse_linear_mean.to_string(),
        ]
    });
    write_rows(path, &["step", "feature", "cv_rmse_mean", "cv_rmse_std", "cv_rmse_linear_mean"], rows)
}

/// Columns `cell,split,true_weeks,pred_weeks,residual_weeks` plus a residual
/// histogram `bin_lo,bin_hi,count` at `hist_path`.
pub fn write_predicted_vs_true(
    rows: &[(CellKey, f64, f64)],
    splits: &SplitAssignment,
    path: &Path,
    hist_path: &Path,
    bin_width: f64,
) -> Result<()> {
    write_rows(
        path,
        &["cell", "split", "true_weeks", "pred_weeks", "residual_weeks"],
        rows.iter().map(|(k, p, t)| {
            vec![k.to_string(), split_name(splits, k).to_string(), t.to_string(), p.to_string(), (p - t).to_string()]
        }),
    )?;
    let res: Vec<f64> = rows.iter().map(|(_, p, t)| p - t).collect();
    let edges = bin_edges(&res, bin_width);
    let mut counts = vec![0usize; edges.len().saturating_sub(1)];
    for r in &res {
        if let Some(b) = bin_of(&edges, *r) {
            counts[b] += 1;
        }
    }
    write_rows(
        hist_path,
        &["bin_lo", "bin_hi", "count"],
        counts.iter().enumerate().map(|(i, c)| vec![edges[i].to_string(), edges[i + 1].to_string(), c.to_string()]),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRow {
    pub cell: CellKey,
    pub cluster: usize,
    pub pred_mean: f64,
    pub pred_lo: f64,
    pub pred_hi: f64,
    pub truth: f64,
}

/// Columns `cell,cluster,pred_mean,pred_lo,pred_hi,true`.
pub fn write_intervals(rows: &[IntervalRow], path: &Path) -> Result<()> {
    write_rows(
        path,
        &["cell", "cluster", "pred_mean", "pred_lo", "pred_hi", "true"],
        rows.iter().map(|r| {
            vec![
                r.cell.to_string(),
                r.cluster.to_string(),
                r.pred_mean.to_string(),
                r.pred_lo.to_string(),
                r.pred_hi.to_string(),
                r.truth.to_string(),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edges_cover_range() {
        let e = bin_edges(&[1.5, 60.9, 20.0], 2.0);
        assert_eq!(e[0], 1.0);
        assert!(*e.last().unwrap() >= 60.9);
        assert_eq!(bin_of(&e, 1.5), Some(0));
        assert_eq!(bin_of(&e, 60.9), Some(e.len() - 2));
        assert_eq!(bin_of(&e, 0.5), None);
    }

    #[test]
    fn interval_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.csv");
        let r = IntervalRow { cell: CellKey::new(2, 3), cluster: 1, pred_mean: 10.0, pred_lo: 8.0, pred_hi: 12.0, truth: 9.0 };
        write_intervals(&[r], &p).unwrap();
        let s = std::fs::read_to_string(&p).unwrap();
        assert!(s.starts_with("cell,cluster,pred_mean,pred_lo,pred_hi,true\n"));
    }
}
