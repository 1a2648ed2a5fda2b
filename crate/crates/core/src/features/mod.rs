//! Early-life feature catalog: week-pair statistics of the Q(V) and dQ/dV
//! difference curves, CV hold times, capacities, DVA landmark shifts and
//! cycling-condition stress proxies.
//!
//! Features are first gathered into a [`FeatureTable`] whose entries may be
//! missing; [`assemble_matrix`] turns a column subset into a dense
//! [`FeatureMatrix`] under an imputation policy.

pub mod window;

pub use window::{
    window_grid_search, write_audit_csv, SearchInput, WindowScore, WindowSearchConfig,
    WindowSearchResult,
};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::curves::{delta_curve, CellCurves, CurveSet, DeltaCurve};
use crate::error::{Error, Result};
use crate::names::{
    ConditionKind, FeatureDescriptor, Statistic, StressKind, VoltageWindow, WeekPair,
};
use crate::stats;
use crate::types::{CellKey, CyclingCondition, FeatureMatrix, SplitAssignment, SplitTag, Transform};

/// Offset inside `log_abs` that keeps exact zeros finite.
pub const LOG_ABS_EPSILON: f64 = 1e-12;

pub fn log_abs(x: f64) -> f64 {
    (x.abs() + LOG_ABS_EPSILON).ln()
}

/// Apply a transform. `Log` of a non-positive value has no result.
pub fn apply_transform(t: Transform, x: f64) -> Option<f64> {
    match t {
        Transform::Identity => Some(x),
        Transform::Log => (x > 0.0).then(|| x.ln()),
        Transform::LogAbs => Some(log_abs(x)),
    }
}

pub fn default_windows() -> Vec<VoltageWindow> {
    vec![
        VoltageWindow::new(3.00, 3.60),
        VoltageWindow::new(3.60, 3.90),
        VoltageWindow::new(3.90, 4.20),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Imputation {
    /// Drop any row with a missing value in a requested column.
    Drop,
    /// Replace missing values with the column median over the rows present.
    ImputeMedian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub weeks: WeekPair,
    pub windows: Vec<VoltageWindow>,
    pub imputation: Imputation,
    /// Run the window search on training cells and add its best window.
    pub search_window: bool,
    pub search: WindowSearchConfig,
    /// Also emit untransformed window means of Δ dQ/dV.
    pub raw_window_columns: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            weeks: WeekPair::default(),
            windows: default_windows(),
            imputation: Imputation::Drop,
            search_window: true,
            search: WindowSearchConfig::default(),
            raw_window_columns: false,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.weeks.later > self.weeks.earlier) || self.weeks.earlier < 0.0 {
            return Err(Error::invalid("features.weeks", "need later > earlier ≥ 0"));
        }
        if self.windows.iter().any(|w| !(w.hi > w.lo)) {
            return Err(Error::invalid("features.windows", "each window needs lo < hi"));
        }
        Ok(())
    }
}

/// One feature column over the table's cells. Values are already transformed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub transform: Transform,
    pub values: Vec<Option<f64>>,
    /// Entries whose raw value was exactly zero under `log_abs`; stored at log(ε).
    pub degenerate: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub cell_keys: Vec<CellKey>,
    pub lifetimes: Vec<Option<f64>>,
    pub columns: Vec<FeatureColumn>,
}

impl FeatureTable {
    pub fn column(&self, name: &str) -> Option<&FeatureColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn row_index(&self, key: &CellKey) -> Option<usize> {
        self.cell_keys.iter().position(|k| k == key)
    }

    /// Rows whose key passes `keep`, order preserved.
    pub fn filter_rows(&self, keep: impl Fn(&CellKey) -> bool) -> FeatureTable {
        let idx: Vec<usize> = (0..self.cell_keys.len()).filter(|&i| keep(&self.cell_keys[i])).collect();
        FeatureTable {
            cell_keys: idx.iter().map(|&i| self.cell_keys[i]).collect(),
            lifetimes: idx.iter().map(|&i| self.lifetimes[i]).collect(),
            columns: self
                .columns
                .iter()
                .map(|c| FeatureColumn {
                    name: c.name.clone(),
                    transform: c.transform,
                    values: idx.iter().map(|&i| c.values[i]).collect(),
                    degenerate: idx.iter().map(|&i| c.degenerate[i]).collect(),
                })
                .collect(),
        }
    }

    /// Rows in the given split that have a lifetime.
    pub fn split_rows(&self, splits: &SplitAssignment, tag: SplitTag) -> FeatureTable {
        let t = self.filter_rows(|k| splits.get(k) == Some(tag));
        let keep: Vec<CellKey> = t
            .cell_keys
            .iter()
            .zip(&t.lifetimes)
            .filter(|(_, l)| l.is_some())
            .map(|(k, _)| *k)
            .collect();
        t.filter_rows(|k| keep.contains(k))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serialization(e.to_string()))?;
        let mut header = vec!["group_id".to_string(), "cell_id".into(), "lifetime_weeks".into()];
        header.extend(self.names());
        w.write_record(&header).map_err(|e| Error::Serialization(e.to_string()))?;
        for (i, k) in self.cell_keys.iter().enumerate() {
            let mut rec = vec![
                k.group_id.to_string(),
                k.cell_id.to_string(),
                self.lifetimes[i].map(|l| l.to_string()).unwrap_or_default(),
            ];
            rec.extend(
                self.columns
                    .iter()
                    .map(|c| c.values[i].map(|v| v.to_string()).unwrap_or_default()),
            );
            w.write_record(&rec).map_err(|e| Error::Serialization(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Read a features CSV. Transforms are recovered from the name prefix and
    /// degenerate flags from entries equal to log(ε).
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = path.display().to_string();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Parse { file: file.clone(), line: 1, message: e.to_string() })?
            .clone();
        for (i, want) in ["group_id", "cell_id", "lifetime_weeks"].iter().enumerate() {
            if headers.get(i) != Some(*want) {
                return Err(Error::MissingColumn { file: file.clone(), column: (*want).into() });
            }
        }
        let names: Vec<String> = headers.iter().skip(3).map(String::from).collect();
        let mut table = FeatureTable {
            cell_keys: vec![],
            lifetimes: vec![],
            columns: names
                .iter()
                .map(|n| FeatureColumn {
                    name: n.clone(),
                    transform: transform_from_name(n),
                    values: vec![],
                    degenerate: vec![],
                })
                .collect(),
        };
        let floor = log_abs(0.0);
        for (r, rec) in rdr.records().enumerate() {
            let line = r as u64 + 2;
            let rec = rec.map_err(|e| Error::Parse { file: file.clone(), line, message: e.to_string() })?;
            let num = |i: usize| -> Result<Option<f64>> {
                let s = rec.get(i).unwrap_or("");
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                    file: file.clone(),
                    line,
                    message: format!("cannot parse `{s}` in column {}", headers.get(i).unwrap_or("?")),
                })
            };
            let g = num(0)?.ok_or_else(|| Error::invalid("group_id", format!("empty on line {line}")))?;
            let c = num(1)?.ok_or_else(|| Error::invalid("cell_id", format!("empty on line {line}")))?;
            table.cell_keys.push(CellKey::new(g as u32, c as u32));
            table.lifetimes.push(num(2)?);
            for (j, col) in table.columns.iter_mut().enumerate() {
                let v = num(j + 3)?;
                col.degenerate.push(col.transform == Transform::LogAbs && v == Some(floor));
                col.values.push(v);
            }
        }
        Ok(table)
    }
}

fn transform_from_name(name: &str) -> Transform {
    if name.starts_with("log_abs.") {
        Transform::LogAbs
    } else if name.starts_with("log.") {
        Transform::Log
    } else {
        Transform::Identity
    }
}

/// Builds one column from raw per-cell values.
struct ColumnBuilder {
    name: String,
    transform: Transform,
    values: Vec<Option<f64>>,
    degenerate: Vec<bool>,
}

impl ColumnBuilder {
    fn new(d: FeatureDescriptor) -> Result<Self> {
        Ok(Self {
            name: d.name()?,
            transform: d.transform_or_identity(),
            values: vec![],
            degenerate: vec![],
        })
    }

    fn push(&mut self, raw: Option<f64>) {
        let raw = raw.filter(|v| v.is_finite());
        self.degenerate
            .push(self.transform == Transform::LogAbs && raw == Some(0.0));
        self.values
            .push(raw.and_then(|v| apply_transform(self.transform, v)));
    }

    fn finish(self) -> FeatureColumn {
        FeatureColumn {
            name: self.name,
            transform: self.transform,
            values: self.values,
            degenerate: self.degenerate,
        }
    }
}

/// (Stress_chg, Stress_dchg, Stress_avg, Stress_mult) using measured DoD.
pub fn stress_features(c: &CyclingCondition) -> [f64; 4] {
    let chg = (c.c_chg * c.dod_measured).sqrt();
    let dchg = (c.c_dis * c.dod_measured).sqrt();
    [chg, dchg, 0.5 * (chg + dchg), chg * dchg]
}

/// Mean and population variance of a curve restricted to a voltage window.
pub fn window_stats(curve: &DeltaCurve, window: VoltageWindow) -> Option<(f64, f64)> {
    let r = curve.grid.index_range(window.lo, window.hi);
    if r.is_empty() {
        return None;
    }
    let x = &curve.values[r];
    Some((stats::mean(x), stats::variance(x)))
}

/// Per-cell quantities for one week pair, `None` where a week is missing.
struct PairData {
    dq: Option<DeltaCurve>,
    ddqdv: Option<DeltaCurve>,
}

fn pair_data(cell: &CellCurves, weeks: WeekPair) -> Result<PairData> {
    match (cell.week(weeks.later), cell.week(weeks.earlier)) {
        (Some(j), Some(i)) => Ok(PairData {
            dq: Some(delta_curve(&j.qv, &i.qv, weeks)?),
            ddqdv: Some(delta_curve(&j.ica, &i.ica, weeks)?),
        }),
        _ => Ok(PairData { dq: None, ddqdv: None }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureOutput {
    pub table: FeatureTable,
    pub search: Option<WindowSearchResult>,
    pub warnings: Vec<String>,
}

/// Compute the full catalog for every cell in `curves`. The window search, when
/// enabled, uses only cells tagged `train` in `splits`.
pub fn compute_features(
    curves: &CurveSet,
    config: &FeatureConfig,
    splits: Option<&SplitAssignment>,
) -> Result<FeatureOutput> {
    config.validate()?;
    let w = config.weeks;
    let mut warnings = Vec::new();
    let pairs: Vec<PairData> = curves
        .cells
        .iter()
        .map(|c| pair_data(c, w))
        .collect::<Result<_>>()?;
    for (c, p) in curves.cells.iter().zip(&pairs) {
        if p.dq.is_none() {
            warnings.push(format!("{}: missing RPT for {w}, week-pair features absent", c.key));
        }
    }

    let search = if config.search_window {
        let splits = splits.ok_or_else(|| {
            Error::Precondition("window search needs a split assignment".into())
        })?;
        let inputs: Vec<SearchInput<'_>> = curves
            .cells
            .iter()
            .zip(&pairs)
            .filter(|(c, _)| splits.get(&c.key) == Some(SplitTag::Train))
            .filter_map(|(c, p)| {
                Some(SearchInput {
                    key: c.key,
                    delta: p.ddqdv.as_ref()?,
                    lifetime_weeks: c.lifetime_weeks?,
                })
            })
            .collect();
        Some(window_grid_search(&inputs, splits, &config.search)?)
    } else {
        None
    };

    let mut cols: Vec<ColumnBuilder> = Vec::new();
    let mut add = |d: FeatureDescriptor, vals: Vec<Option<f64>>| -> Result<()> {
        let mut b = ColumnBuilder::new(d)?;
        for v in vals {
            b.push(v);
        }
        cols.push(b);
        Ok(())
    };
    let over_pairs = |f: &dyn Fn(&DeltaCurve) -> Option<f64>, which: fn(&PairData) -> Option<&DeltaCurve>| -> Vec<Option<f64>> {
        pairs.iter().map(|p| which(p).and_then(f)).collect()
    };
    let dq_of: fn(&PairData) -> Option<&DeltaCurve> = |p| p.dq.as_ref();
    let ica_of: fn(&PairData) -> Option<&DeltaCurve> = |p| p.ddqdv.as_ref();

    // Δ dQ/dV window statistics.
    let mut windows = config.windows.clone();
    if let Some(s) = &search {
        let dup = windows
            .iter()
            .any(|x| (x.lo - s.best_window.lo).abs() < 1e-9 && (x.hi - s.best_window.hi).abs() < 1e-9);
        if !dup {
            windows.push(s.best_window);
        }
    }
    for win in &windows {
        for (stat, pick) in [(Statistic::Mean, 0usize), (Statistic::Var, 1)] {
            let vals = over_pairs(&|d| window_stats(d, *win).map(|s| if pick == 0 { s.0 } else { s.1 }), ica_of);
            add(FeatureDescriptor::dqdv_delta(w, Some(*win), stat, Transform::LogAbs), vals)?;
        }
        if config.raw_window_columns {
            let vals = over_pairs(&|d| window_stats(d, *win).map(|s| s.0), ica_of);
            add(FeatureDescriptor::dqdv_delta(w, Some(*win), Statistic::Mean, Transform::Identity), vals)?;
        }
    }

    // Δ Q(V) full-curve statistics.
    let dq_stats: [(Statistic, fn(&[f64]) -> f64); 5] = [
        (Statistic::Mean, stats::mean),
        (Statistic::Var, stats::variance),
        (Statistic::Min, |x| x.iter().copied().fold(f64::INFINITY, f64::min)),
        (Statistic::Skew, stats::skewness),
        (Statistic::Kurtosis, stats::kurtosis),
    ];
    for (stat, f) in dq_stats {
        let vals = over_pairs(&|d| Some(f(&d.values)), dq_of);
        add(FeatureDescriptor::delta_q(w, stat, Transform::LogAbs), vals)?;
    }

    // CV hold time.
    let cv = |c: &CellCurves, wk: f64| c.week(wk).map(|x| x.cv_hold_seconds);
    for wk in [w.earlier, w.later] {
        let vals: Vec<_> = curves.cells.iter().map(|c| cv(c, wk)).collect();
        add(FeatureDescriptor::cv_time(wk), vals)?;
    }
    let vals: Vec<_> = curves
        .cells
        .iter()
        .map(|c| Some(cv(c, w.later)? - cv(c, w.earlier)?))
        .collect();
    add(FeatureDescriptor::delta_cv_time(w), vals)?;

    // Capacities.
    let full = |c: &CellCurves, wk: f64| c.week(wk).map(|x| x.full_capacity_mah);
    let vals: Vec<_> = curves.cells.iter().map(|c| full(c, w.earlier)).collect();
    add(FeatureDescriptor::capacity(w.earlier), vals.clone())?;
    let mut raw_q = FeatureDescriptor::capacity(w.earlier);
    raw_q.transform = Some(Transform::Identity);
    add(raw_q, vals)?;
    for win in &config.windows {
        let vals: Vec<_> = curves
            .cells
            .iter()
            .map(|c| {
                let qv = &c.week(w.earlier)?.qv;
                let r = qv.grid.index_range(win.lo, win.hi);
                if r.is_empty() {
                    return None;
                }
                Some(qv.capacity[r.start] - qv.capacity[r.end - 1])
            })
            .collect();
        add(FeatureDescriptor::capacity_window(w.earlier, *win), vals)?;
    }
    let vals: Vec<_> = curves
        .cells
        .iter()
        .map(|c| Some(full(c, w.later)? - full(c, w.earlier)?))
        .collect();
    add(FeatureDescriptor::capacity_fade(w), vals)?;

    // DVA landmark shifts.
    for k in 0..4usize {
        let vals: Vec<_> = curves
            .cells
            .iter()
            .map(|c| Some(c.week(w.later)?.landmarks[k]? - c.week(w.earlier)?.landmarks[k]?))
            .collect();
        add(FeatureDescriptor::dva_delta(k as u8 + 1, w), vals)?;
    }

    // Cycling conditions.
    let st: Vec<[f64; 4]> = curves.cells.iter().map(|c| stress_features(&c.condition)).collect();
    for (i, kind) in [StressKind::Chg, StressKind::Dchg, StressKind::Avg, StressKind::Mult]
        .into_iter()
        .enumerate()
    {
        add(FeatureDescriptor::stress(kind), st.iter().map(|s| Some(s[i])).collect())?;
    }
    let conds: [(ConditionKind, fn(&CyclingCondition) -> f64); 3] = [
        (ConditionKind::CChg, |c| c.c_chg),
        (ConditionKind::CDis, |c| c.c_dis),
        (ConditionKind::Dod, |c| c.dod_measured),
    ];
    for (kind, f) in conds {
        add(
            FeatureDescriptor::condition(kind),
            curves.cells.iter().map(|c| Some(f(&c.condition))).collect(),
        )?;
    }

    let columns: Vec<FeatureColumn> = cols.into_iter().map(ColumnBuilder::finish).collect();
    for c in &columns {
        let n = c.degenerate.iter().filter(|d| **d).count();
        if n > 0 {
            warnings.push(format!("{}: {n} degenerate zero entries set to log(ε)", c.name));
        }
    }
    Ok(FeatureOutput {
        table: FeatureTable {
            cell_keys: curves.cells.iter().map(|c| c.key).collect(),
            lifetimes: curves.cells.iter().map(|c| c.lifetime_weeks).collect(),
            columns,
        },
        search,
        warnings,
    })
}

/// The five discharge-curve replication features: log|min|, log|var|,
/// log|skew|, log|kurt| of ΔQ and the initial capacity.
pub fn discharge_model_features(weeks: WeekPair) -> Vec<String> {
    let mut out: Vec<String> = [Statistic::Min, Statistic::Var, Statistic::Skew, Statistic::Kurtosis]
        .into_iter()
        .map(|s| FeatureDescriptor::delta_q(weeks, s, Transform::LogAbs).name().unwrap())
        .collect();
    let mut q = FeatureDescriptor::capacity(weeks.earlier);
    q.transform = Some(Transform::Identity);
    out.push(q.name().unwrap());
    out
}

/// Condition columns used by the conditions baseline.
pub fn condition_features() -> Vec<String> {
    [ConditionKind::CChg, ConditionKind::CDis, ConditionKind::Dod]
        .into_iter()
        .map(|k| FeatureDescriptor::condition(k).name().unwrap())
        .collect()
}

/// Columns offered to forward selection: everything except the higher-moment
/// and minimum ΔQ statistics and the untransformed initial capacity, which
/// only serve the discharge-curve baseline.
pub fn default_selection_candidates(table: &FeatureTable, weeks: WeekPair) -> Vec<String> {
    let exclude: Vec<String> = {
        let mut e = discharge_model_features(weeks);
        e.retain(|n| !n.contains(".var."));
        e
    };
    table
        .names()
        .into_iter()
        .filter(|n| !exclude.contains(n))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssemblyReport {
    pub dropped: Vec<CellKey>,
    /// (cell, column) pairs filled by imputation.
    pub imputed: Vec<(CellKey, String)>,
    pub degenerate: usize,
}

/// Dense matrix over `names` for the rows of `table`, plus log lifetimes of
/// the kept rows (rows without a lifetime are dropped).
pub fn assemble_matrix(
    table: &FeatureTable,
    names: &[String],
    policy: Imputation,
) -> Result<(FeatureMatrix, Vec<f64>, AssemblyReport)> {
    let medians = column_medians(table, names)?;
    assemble_matrix_with(table, names, policy, &medians)
}

/// Median of the present values of each named column (NaN when none).
pub fn column_medians(table: &FeatureTable, names: &[String]) -> Result<Vec<f64>> {
    names
        .iter()
        .map(|n| {
            let c = table.column(n).ok_or_else(|| Error::MissingFeature(n.clone()))?;
            let present: Vec<f64> = c.values.iter().flatten().copied().collect();
            Ok(stats::median(&present))
        })
        .collect()
}

/// As [`assemble_matrix`] with imputation medians supplied by the caller,
/// e.g. computed on training rows only.
pub fn assemble_matrix_with(
    table: &FeatureTable,
    names: &[String],
    policy: Imputation,
    medians: &[f64],
) -> Result<(FeatureMatrix, Vec<f64>, AssemblyReport)> {
    let cols: Vec<&FeatureColumn> = names
        .iter()
        .map(|n| table.column(n).ok_or_else(|| Error::MissingFeature(n.clone())))
        .collect::<Result<_>>()?;
    if medians.len() != cols.len() {
        return Err(Error::Precondition("one median per column required".into()));
    }
    let mut report = AssemblyReport::default();
    let mut keys = Vec::new();
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (i, key) in table.cell_keys.iter().enumerate() {
        let Some(life) = table.lifetimes[i] else { continue };
        let mut row = Vec::with_capacity(cols.len());
        let mut ok = true;
        for (c, med) in cols.iter().zip(medians) {
            match c.values[i] {
                Some(v) => {
                    if c.degenerate[i] {
                        report.degenerate += 1;
                    }
                    row.push(v);
                }
                None => match policy {
                    Imputation::ImputeMedian if med.is_finite() => {
                        report.imputed.push((*key, c.name.clone()));
                        row.push(*med);
                    }
                    _ => {
                        ok = false;
                        break;
                    }
                },
            }
        }
        if ok {
            keys.push(*key);
            rows.push(row);
            targets.push(life.ln());
        } else {
            report.dropped.push(*key);
        }
    }
    if keys.is_empty() {
        return Err(Error::Precondition(format!(
            "no cells have every requested feature ({} columns)",
            names.len()
        )));
    }
    let m = FeatureMatrix {
        feature_names: names.to_vec(),
        values: rows,
        cell_keys: keys,
        transforms: cols.iter().map(|c| c.transform).collect(),
    };
    m.validate()?;
    Ok((m, targets, report))
}
