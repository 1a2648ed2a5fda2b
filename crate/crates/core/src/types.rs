//! Shared domain types: cycling conditions, RPT records, cells, resampled curves,
//! feature matrices and the train/test partition.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rated capacity of the cell family, mAh (1C = 250 mA).
pub const RATED_CAPACITY_MAH: f64 = 250.0;
/// End-of-life threshold, 80% of rated capacity.
pub const EOL_THRESHOLD_MAH: f64 = 200.0;
/// Lower cutoff voltage of the discharge window.
pub const V_MIN: f64 = 3.0;
/// Upper cutoff voltage of the charge window.
pub const V_MAX: f64 = 4.2;
/// Allowed slack when checking that a discharge covers [V_MIN, V_MAX].
pub const SPAN_TOLERANCE_V: f64 = 0.05;
/// Default number of points on the global voltage grid.
pub const DEFAULT_GRID_POINTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub group_id: u32,
    pub cell_id: u32,
}

impl CellKey {
    pub fn new(group_id: u32, cell_id: u32) -> Self {
        Self { group_id, cell_id }
    }
}

impl std::str::FromStr for CellKey {
    type Err = Error;

    /// Parses the `G<group>C<cell>` form.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid("cell", format!("expected G<group>C<cell>, got {s:?}"));
        let (g, c) = s.strip_prefix('G').and_then(|r| r.split_once('C')).ok_or_else(bad)?;
        Ok(Self::new(g.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?))
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "G{}C{}", self.group_id, self.cell_id)
    }
}

/// Charge rate, discharge rate and depth of discharge a cell was cycled at.
///
/// `dod_measured` is the value every downstream computation uses; `dod_design`
/// is kept as metadata only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CyclingCondition {
    pub c_chg: f64,
    pub c_dis: f64,
    pub dod_design: f64,
    pub dod_measured: f64,
}

impl CyclingCondition {
    pub fn new(c_chg: f64, c_dis: f64, dod_design: f64, dod_measured: f64) -> Result<Self> {
        let cond = Self {
            c_chg,
            c_dis,
            dod_design,
            dod_measured,
        };
        cond.validate()?;
        Ok(cond)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_chg > 0.0 && self.c_chg <= 4.0) {
            return Err(Error::invalid("c_chg", format!("{} outside (0, 4]", self.c_chg)));
        }
        if !(self.c_dis > 0.0 && self.c_dis <= 4.0) {
            return Err(Error::invalid("c_dis", format!("{} outside (0, 4]", self.c_dis)));
        }
        if !(0.0..=1.0).contains(&self.dod_design) {
            return Err(Error::invalid(
                "dod_design",
                format!("{} outside [0, 1]", self.dod_design),
            ));
        }
        if !(self.dod_measured > 0.0 && self.dod_measured <= 1.05) {
            return Err(Error::invalid(
                "dod_measured",
                format!("{} outside (0, 1.05]", self.dod_measured),
            ));
        }
        Ok(())
    }
}

/// One tester sample: voltage (V), capacity (mAh), time (s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub voltage: f64,
    pub capacity: f64,
    pub time: f64,
}

impl Sample {
    pub fn new(voltage: f64, capacity: f64, time: f64) -> Self {
        Self {
            voltage,
            capacity,
            time,
        }
    }
}

/// A single reference performance test: the designated slow discharge, the
/// preceding charge and the scalars derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RptRecord {
    pub week_index: f64,
    pub discharge: Vec<Sample>,
    pub charge: Vec<Sample>,
    pub cv_hold_seconds: f64,
    pub full_capacity_mah: f64,
}

impl RptRecord {
    pub fn validate(&self) -> Result<()> {
        if self.discharge.is_empty() {
            return Err(Error::invalid(
                "discharge_samples",
                format!("week {} has no discharge samples", self.week_index),
            ));
        }
        let (lo, hi) = self
            .discharge
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                (lo.min(s.voltage), hi.max(s.voltage))
            });
        if lo > V_MIN + SPAN_TOLERANCE_V || hi < V_MAX - SPAN_TOLERANCE_V {
            return Err(Error::invalid(
                "discharge_samples",
                format!(
                    "week {} discharge spans [{lo:.3}, {hi:.3}] V, expected [{V_MIN}, {V_MAX}] ± {SPAN_TOLERANCE_V}",
                    self.week_index
                ),
            ));
        }
        let mut prev = f64::NEG_INFINITY;
        for s in &self.discharge {
            if s.capacity < 0.0 || s.capacity < prev {
                return Err(Error::invalid(
                    "discharge_samples",
                    format!(
                        "week {} capacity is negative or decreasing along the discharge",
                        self.week_index
                    ),
                ));
            }
            prev = s.capacity;
        }
        Ok(())
    }

    /// Discharge samples as (voltage, capacity) pairs.
    pub fn discharge_qv(&self) -> Vec<(f64, f64)> {
        self.discharge.iter().map(|s| (s.voltage, s.capacity)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub key: CellKey,
    pub condition: CyclingCondition,
    pub rpts: Vec<RptRecord>,
    pub lifetime_weeks: Option<f64>,
}

impl CellRecord {
    pub fn validate(&self) -> Result<()> {
        self.condition.validate()?;
        match self.rpts.first() {
            Some(r) if r.week_index == 0.0 => {}
            _ => {
                return Err(Error::invalid(
                    "rpts",
                    format!("{} has no week-0 RPT", self.key),
                ))
            }
        }
        if self
            .rpts
            .windows(2)
            .any(|w| w[1].week_index <= w[0].week_index)
        {
            return Err(Error::invalid(
                "rpts",
                format!("{} RPTs are not sorted by week", self.key),
            ));
        }
        if let Some(l) = self.lifetime_weeks {
            if !(l > 0.0) {
                return Err(Error::invalid(
                    "lifetime_weeks",
                    format!("{} has non-positive lifetime {l}", self.key),
                ));
            }
        }
        Ok(())
    }

    pub fn rpt_at(&self, week: f64) -> Option<&RptRecord> {
        self.rpts.iter().find(|r| (r.week_index - week).abs() < 1e-9)
    }
}

/// Uniform voltage lattice shared by every resampled curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltageGrid {
    pub v_min: f64,
    pub v_max: f64,
    pub points: usize,
}

impl Default for VoltageGrid {
    fn default() -> Self {
        Self {
            v_min: V_MIN,
            v_max: V_MAX,
            points: DEFAULT_GRID_POINTS,
        }
    }
}

impl VoltageGrid {
    pub fn with_points(points: usize) -> Result<Self> {
        if points < 3 {
            return Err(Error::invalid("grid_points", "need at least 3 points"));
        }
        Ok(Self {
            points,
            ..Self::default()
        })
    }

    pub fn step(&self) -> f64 {
        (self.v_max - self.v_min) / (self.points - 1) as f64
    }

    pub fn value(&self, i: usize) -> f64 {
        if i + 1 == self.points {
            self.v_max
        } else {
            self.v_min + i as f64 * self.step()
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.value(i)).collect()
    }

    /// Index range of grid points lying inside `[lo, hi]` (inclusive, with a
    /// small tolerance so lattice-aligned bounds behave predictably).
    pub fn index_range(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        const EPS: f64 = 1e-9;
        let h = self.step();
        let first = (((lo - self.v_min) / h) - EPS).ceil().max(0.0) as usize;
        let last = (((hi - self.v_min) / h) + EPS).floor();
        if last < 0.0 {
            return 0..0;
        }
        let end = (last as usize + 1).min(self.points);
        first.min(end)..end
    }
}

/// Capacity-vs-voltage curve resampled onto the global grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QvCurve {
    pub grid: VoltageGrid,
    pub capacity: Vec<f64>,
}

impl QvCurve {
    pub fn new(grid: VoltageGrid, capacity: Vec<f64>) -> Result<Self> {
        if capacity.len() != grid.points {
            return Err(Error::invalid(
                "capacity",
                format!("{} values for a {}-point grid", capacity.len(), grid.points),
            ));
        }
        if capacity.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("capacity", "non-finite value"));
        }
        Ok(Self { grid, capacity })
    }

    pub fn voltage_grid(&self) -> Vec<f64> {
        self.grid.values()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Log,
    LogAbs,
}

/// Cells × features matrix, rows aligned with `cell_keys`, columns with
/// `feature_names`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub feature_names: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub cell_keys: Vec<CellKey>,
    pub transforms: Vec<Transform>,
}

impl FeatureMatrix {
    pub fn validate(&self) -> Result<()> {
        if self.transforms.len() != self.feature_names.len() {
            return Err(Error::invalid("transforms", "length differs from feature_names"));
        }
        if self.values.len() != self.cell_keys.len() {
            return Err(Error::invalid("values", "row count differs from cell_keys"));
        }
        for (row, key) in self.values.iter().zip(&self.cell_keys) {
            if row.len() != self.feature_names.len() {
                return Err(Error::invalid("values", format!("row {key} has wrong width")));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("values", format!("row {key} has NaN/Inf")));
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.cell_keys.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .column_index(name)
            .ok_or_else(|| Error::MissingFeature(name.to_string()))?;
        Ok(self.values.iter().map(|r| r[j]).collect())
    }

    /// Rows restricted to the named columns, in the order given.
    pub fn select_columns(&self, names: &[String]) -> Result<Vec<Vec<f64>>> {
        let idx = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| Error::MissingFeature(n.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self
            .values
            .iter()
            .map(|r| idx.iter().map(|&j| r[j]).collect())
            .collect())
    }

    /// Sub-matrix holding only the listed rows (by key, order preserved).
    pub fn filter_rows(&self, keep: impl Fn(&CellKey) -> bool) -> FeatureMatrix {
        let (keys, rows): (Vec<_>, Vec<_>) = self
            .cell_keys
            .iter()
            .zip(&self.values)
            .filter(|(k, _)| keep(k))
            .map(|(k, r)| (*k, r.clone()))
            .unzip();
        FeatureMatrix {
            feature_names: self.feature_names.clone(),
            values: rows,
            cell_keys: keys,
            transforms: self.transforms.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    TestHighDod,
    TestLowDod,
}

impl SplitTag {
    pub const ALL: [SplitTag; 3] = [SplitTag::Train, SplitTag::TestHighDod, SplitTag::TestLowDod];

    pub fn as_str(&self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::TestHighDod => "test_high_dod",
            SplitTag::TestLowDod => "test_low_dod",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "test_high_dod" => Ok(SplitTag::TestHighDod),
            "test_low_dod" => Ok(SplitTag::TestLowDod),
            other => Err(Error::invalid("split", format!("unknown tag `{other}`"))),
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-cell split tags, sorted by cell key.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    entries: Vec<(CellKey, SplitTag)>,
}

impl SplitAssignment {
    pub fn from_entries(mut entries: Vec<(CellKey, SplitTag)>) -> Result<Self> {
        entries.sort_by_key(|(k, _)| *k);
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid(
                "splits",
                format!("cell {} tagged more than once", w[0].0),
            ));
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &CellKey) -> Option<SplitTag> {
        self.entries
            .binary_search_by_key(key, |(k, _)| *k)
            .ok()
            .map(|i| self.entries[i].1)
    }

    pub fn entries(&self) -> &[(CellKey, SplitTag)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, tag: SplitTag) -> usize {
        self.entries.iter().filter(|(_, t)| *t == tag).count()
    }

    pub fn keys_with(&self, tag: SplitTag) -> Vec<CellKey> {
        self.entries
            .iter()
            .filter(|(_, t)| *t == tag)
            .map(|(k, _)| *k)
            .collect()
    }
}
