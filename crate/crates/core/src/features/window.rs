//! Exhaustive voltage-window search over the incremental-capacity difference
//! curve. Every window on a fixed lattice is scored by |Pearson r| between the
//! log_abs window statistic and log lifetime.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curves::DeltaCurve;
use crate::error::{Error, Result};
use crate::names::{Statistic, VoltageWindow};
use crate::stats::pearson;
use crate::types::{CellKey, SplitAssignment, SplitTag};

use super::log_abs;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSearchConfig {
    pub v_min: f64,
    pub v_max: f64,
    pub step: f64,
    pub min_width: f64,
    pub min_cells: usize,
    /// |r| values closer than this are treated as tied.
    pub tie_tolerance: f64,
}

impl Default for WindowSearchConfig {
    fn default() -> Self {
        Self {
            v_min: 3.0,
            v_max: 4.2,
            step: 0.01,
            min_width: 0.02,
            min_cells: 10,
            tie_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub window: VoltageWindow,
    pub statistic: Statistic,
    /// `None` when the feature column is constant over the cells.
    pub pearson_r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSearchResult {
    pub best_window: VoltageWindow,
    pub best_statistic: Statistic,
    pub best_abs_pearson: f64,
    pub best_pearson: f64,
    pub full_grid: Vec<WindowScore>,
}

/// One training cell's Δ dQ/dV curve and lifetime.
pub struct SearchInput<'a> {
    pub key: CellKey,
    pub delta: &'a DeltaCurve,
    pub lifetime_weeks: f64,
}

/// Lattice windows `(lo_index, hi_index)` in units of `step` from `v_min`.
fn lattice(config: &WindowSearchConfig) -> Vec<(usize, usize)> {
    let n = ((config.v_max - config.v_min) / config.step).round() as usize;
    let min_w = (config.min_width / config.step).round() as usize;
    let mut out = Vec::new();
    for a in 0..=n {
        for b in (a + min_w.max(1))..=n {
            out.push((a, b));
        }
    }
    out
}

/// Prefix sums of x and x² (after centring on the curve mean) for O(1)
/// window mean and variance.
struct Prefix {
    s1: Vec<f64>,
    s2: Vec<f64>,
    shift: f64,
}

impl Prefix {
    fn new(x: &[f64]) -> Self {
        let shift = crate::stats::mean(x);
        let mut s1 = Vec::with_capacity(x.len() + 1);
        let mut s2 = Vec::with_capacity(x.len() + 1);
        s1.push(0.0);
        s2.push(0.0);
        for v in x {
            let d = v - shift;
            s1.push(s1.last().unwrap() + d);
            s2.push(s2.last().unwrap() + d * d);
        }
        Self { s1, s2, shift }
    }

    fn mean_var(&self, r: std::ops::Range<usize>) -> Option<(f64, f64)> {
        let n = r.len();
        if n == 0 {
            return None;
        }
        let m = (self.s1[r.end] - self.s1[r.start]) / n as f64;
        let q = (self.s2[r.end] - self.s2[r.start]) / n as f64;
        Some((m + self.shift, (q - m * m).max(0.0)))
    }
}

pub fn window_grid_search(
    cells: &[SearchInput<'_>],
    splits: &SplitAssignment,
    config: &WindowSearchConfig,
) -> Result<WindowSearchResult> {
    for c in cells {
        match splits.get(&c.key) {
            Some(SplitTag::Train) => {}
            other => {
                return Err(Error::Leakage(format!(
                    "window search received {} tagged {:?}",
                    c.key,
                    other.map(|t| t.as_str()).unwrap_or("unassigned")
                )))
            }
        }
    }
    if cells.len() < config.min_cells {
        return Err(Error::Precondition(format!(
            "window search needs at least {} cells, got {}",
            config.min_cells,
            cells.len()
        )));
    }
    let grid = cells[0].delta.grid;
    if cells.iter().any(|c| c.delta.grid != grid) {
        return Err(Error::GridMismatch("window search curves differ in grid".into()));
    }
    if cells.iter().any(|c| !(c.lifetime_weeks > 0.0)) {
        return Err(Error::Precondition("window search needs positive lifetimes".into()));
    }
    let log_life: Vec<f64> = cells.iter().map(|c| c.lifetime_weeks.ln()).collect();
    let prefixes: Vec<Prefix> = cells.iter().map(|c| Prefix::new(&c.delta.values)).collect();
    let windows = lattice(config);
    let scored: Vec<[WindowScore; 2]> = windows
        .par_iter()
        .map(|&(a, b)| {
            let window = VoltageWindow::new(
                config.v_min + a as f64 * config.step,
                config.v_min + b as f64 * config.step,
            );
            let range = grid.index_range(window.lo, window.hi);
            let stats: Option<Vec<(f64, f64)>> =
                prefixes.iter().map(|p| p.mean_var(range.clone())).collect();
            let (mean_r, var_r) = match stats {
                Some(s) => {
                    let means: Vec<f64> = s.iter().map(|x| log_abs(x.0)).collect();
                    let vars: Vec<f64> = s.iter().map(|x| log_abs(x.1)).collect();
                    (pearson(&means, &log_life), pearson(&vars, &log_life))
                }
                None => (None, None),
            };
            [
                WindowScore { window, statistic: Statistic::Mean, pearson_r: mean_r },
                WindowScore { window, statistic: Statistic::Var, pearson_r: var_r },
            ]
        })
        .collect();
    let full_grid: Vec<WindowScore> = scored.into_iter().flatten().collect();

    let mut best: Option<&WindowScore> = None;
    for s in &full_grid {
        let Some(r) = s.pearson_r else { continue };
        let better = match best {
            None => true,
            Some(b) => {
                let br = b.pearson_r.unwrap().abs();
                if (r.abs() - br).abs() <= config.tie_tolerance {
                    let (w, bw) = (s.window.hi - s.window.lo, b.window.hi - b.window.lo);
                    w > bw + 1e-9 || ((w - bw).abs() <= 1e-9 && s.window.lo < b.window.lo - 1e-9)
                } else {
                    r.abs() > br
                }
            }
        };
        if better {
            best = Some(s);
        }
    }
    let best = best.ok_or_else(|| Error::Precondition("every window gave a constant feature".into()))?;
    let r = best.pearson_r.unwrap();
    Ok(WindowSearchResult {
        best_window: best.window,
        best_statistic: best.statistic,
        best_abs_pearson: r.abs(),
        best_pearson: r,
        full_grid,
    })
}

pub fn write_audit_csv(result: &WindowSearchResult, path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serialization(e.to_string()))?;
    w.write_record(["v_lo", "v_hi", "statistic", "pearson_r"])
        .map_err(|e| Error::Serialization(e.to_string()))?;
    for s in &result.full_grid {
        w.write_record([
            format!("{:.2}", s.window.lo),
            format!("{:.2}", s.window.hi),
            s.statistic.as_str().to_string(),
            s.pearson_r.map(|r| r.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| Error::Serialization(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
