//! Parsing of the canonical per-cell CSV files into [`CellRecord`]s, lifetime
//! labels, measured depth of discharge and the group-level train/test split.
//!
//! Per-cell files are named `G{group}C{cell}.csv` and carry the header
//! `week_index,phase,step,voltage_V,current_mA,capacity_mAh,time_s`, where
//! `phase` is `rpt` or `cycling` and `step` is `charge_cc`, `charge_cv` or
//! `discharge`. Within one discharge step `capacity_mAh` counts up from the
//! start of the step. `time_s` is the cumulative test time and must never
//! decrease.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    CellKey, CellRecord, CyclingCondition, RptRecord, Sample, SplitAssignment, SplitTag,
    EOL_THRESHOLD_MAH, RATED_CAPACITY_MAH,
};

pub const CELL_COLUMNS: [&str; 7] = [
    "week_index",
    "phase",
    "step",
    "voltage_V",
    "current_mA",
    "capacity_mAh",
    "time_s",
];
pub const MANIFEST_COLUMNS: [&str; 4] = ["group_id", "c_chg", "c_dis", "dod_design"];

/// Boundary between the high- and low-DoD regions.
pub const DOD_BOUNDARY: f64 = 0.40;
/// Train share of high-DoD cells (116 of 176 on the published dataset).
pub const DEFAULT_TRAIN_FRACTION_HIGH_DOD: f64 = 116.0 / 176.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub group_id: u32,
    pub c_chg: f64,
    pub c_dis: f64,
    pub dod_design: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub groups: Vec<ManifestRow>,
    pub rated_capacity_mah: f64,
    pub eol_threshold_mah: f64,
}

impl DatasetManifest {
    pub fn new(groups: Vec<ManifestRow>) -> Self {
        Self {
            groups,
            rated_capacity_mah: RATED_CAPACITY_MAH,
            eol_threshold_mah: EOL_THRESHOLD_MAH,
        }
    }

    pub fn group(&self, id: u32) -> Option<&ManifestRow> {
        self.groups.iter().find(|g| g.group_id == id)
    }

    pub fn validate(&self) -> Result<()> {
        if (self.eol_threshold_mah - 0.8 * self.rated_capacity_mah).abs() > 1e-9 {
            return Err(Error::invalid(
                "eol_threshold_mah",
                "must equal 0.8 × rated capacity",
            ));
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, &path.display().to_string())
    }

    pub fn from_reader(reader: impl Read, file: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| csv_err(file, 1, e))?.clone();
        let idx = column_indices(&headers, &MANIFEST_COLUMNS, file)?;
        let mut groups = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i as u64 + 2;
            let rec = rec.map_err(|e| csv_err(file, line, e))?;
            let field = |k: usize| rec.get(idx[k]).unwrap_or("");
            let group_id = parse_num::<u32>(field(0), file, line, "group_id")?;
            let row = ManifestRow {
                group_id,
                c_chg: parse_num(field(1), file, line, "c_chg")?,
                c_dis: parse_num(field(2), file, line, "c_dis")?,
                dod_design: parse_num(field(3), file, line, "dod_design")?,
            };
            if !(0.0..=1.0).contains(&row.dod_design) {
                return Err(Error::Parse {
                    file: file.into(),
                    line,
                    message: format!("dod_design {} is not a fraction in [0, 1]", row.dod_design),
                });
            }
            groups.push(row);
        }
        groups.sort_by_key(|g| g.group_id);
        if let Some(w) = groups.windows(2).find(|w| w[0].group_id == w[1].group_id) {
            return Err(Error::Parse {
                file: file.into(),
                line: 0,
                message: format!("group {} listed twice", w[0].group_id),
            });
        }
        Ok(Self::new(groups))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serialization(e.to_string()))?;
        w.write_record(MANIFEST_COLUMNS)
            .map_err(|e| Error::Serialization(e.to_string()))?;
        for g in &self.groups {
            w.write_record([
                g.group_id.to_string(),
                g.c_chg.to_string(),
                g.c_dis.to_string(),
                g.dod_design.to_string(),
            ])
            .map_err(|e| Error::Serialization(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_err(file: &str, line: u64, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(line);
    Error::Parse {
        file: file.into(),
        line,
        message: e.to_string(),
    }
}

fn column_indices(headers: &csv::StringRecord, names: &[&str], file: &str) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h == *n)
                .ok_or_else(|| Error::MissingColumn {
                    file: file.into(),
                    column: (*n).into(),
                })
        })
        .collect()
}

fn parse_num<T: std::str::FromStr>(s: &str, file: &str, line: u64, col: &str) -> Result<T> {
    s.parse::<T>().map_err(|_| Error::Parse {
        file: file.into(),
        line,
        message: format!("cannot parse `{s}` in column {col}"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Rpt,
    Cycling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    ChargeCc,
    ChargeCv,
    Discharge,
}

#[derive(Default)]
struct RptBuilder {
    discharge: Vec<Sample>,
    charge: Vec<Sample>,
    cv_times: Vec<f64>,
}

/// A cell file after parsing, before lifetime and DoD are derived.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCell {
    pub key: CellKey,
    pub rpts: Vec<RptRecord>,
    /// Discharged capacity of every regular cycle in the first cycling week, mAh.
    pub first_week_cycle_discharges: Vec<f64>,
}

/// Parse one canonical per-cell CSV.
pub fn parse_cell_csv(reader: impl Read, file: &str, key: CellKey) -> Result<ParsedCell> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_err(file, 1, e))?.clone();
    let idx = column_indices(&headers, &CELL_COLUMNS, file)?;

    // Week indices are rational; key maps on the exact bit pattern after a
    // round-trip through a fixed decimal precision.
    let week_key = |w: f64| (w * 1e6).round() as i64;
    let mut rpts: BTreeMap<i64, (f64, RptBuilder)> = BTreeMap::new();
    let mut cycling: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    let mut last_time = f64::NEG_INFINITY;
    let mut segment: Option<(i64, f64, f64)> = None; // (week, min cap, max cap)

    let close_segment = |seg: &mut Option<(i64, f64, f64)>, cycling: &mut BTreeMap<i64, Vec<f64>>| {
        if let Some((w, lo, hi)) = seg.take() {
            cycling.entry(w).or_default().push(hi - lo);
        }
    };

    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| csv_err(file, line, e))?;
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let week: f64 = parse_num(field(0), file, line, "week_index")?;
        let phase = match field(1) {
            "rpt" => Phase::Rpt,
            "cycling" => Phase::Cycling,
            other => {
                return Err(Error::Parse {
                    file: file.into(),
                    line,
                    message: format!("unknown phase `{other}`"),
                })
            }
        };
        let step = match field(2) {
            "charge_cc" => Step::ChargeCc,
            "charge_cv" => Step::ChargeCv,
            "discharge" => Step::Discharge,
            other => {
                return Err(Error::Parse {
                    file: file.into(),
                    line,
                    message: format!("unknown step `{other}`"),
                })
            }
        };
        let voltage: f64 = parse_num(field(3), file, line, "voltage_V")?;
        let _current: f64 = parse_num(field(4), file, line, "current_mA")?;
        let capacity: f64 = parse_num(field(5), file, line, "capacity_mAh")?;
        let time: f64 = parse_num(field(6), file, line, "time_s")?;
        if !(voltage.is_finite() && capacity.is_finite() && time.is_finite() && week.is_finite()) {
            return Err(Error::Parse {
                file: file.into(),
                line,
                message: "non-finite value".into(),
            });
        }
        if time < last_time {
            return Err(Error::Parse {
                file: file.into(),
                line,
                message: format!("timestamp {time} s goes backwards (previous {last_time} s)"),
            });
        }
        last_time = time;

        let wk = week_key(week);
        match phase {
            Phase::Rpt => {
                close_segment(&mut segment, &mut cycling);
                let entry = rpts.entry(wk).or_insert_with(|| (week, RptBuilder::default()));
                let s = Sample::new(voltage, capacity, time);
                match step {
                    Step::Discharge => entry.1.discharge.push(s),
                    Step::ChargeCc => entry.1.charge.push(s),
                    Step::ChargeCv => {
                        entry.1.charge.push(s);
                        entry.1.cv_times.push(time);
                    }
                }
            }
            Phase::Cycling => match step {
                Step::Discharge => match &mut segment {
                    Some((w, lo, hi)) if *w == wk => {
                        *lo = lo.min(capacity);
                        *hi = hi.max(capacity);
                    }
                    _ => {
                        close_segment(&mut segment, &mut cycling);
                        segment = Some((wk, capacity, capacity));
                    }
                },
                _ => close_segment(&mut segment, &mut cycling),
            },
        }
    }
    close_segment(&mut segment, &mut cycling);

    let rpts: Vec<RptRecord> = rpts
        .into_values()
        .map(|(week, b)| {
            let full = b.discharge.iter().map(|s| s.capacity).fold(0.0, f64::max);
            let cv = match (b.cv_times.first(), b.cv_times.last()) {
                (Some(a), Some(z)) => z - a,
                _ => 0.0,
            };
            RptRecord {
                week_index: week,
                discharge: b.discharge,
                charge: b.charge,
                cv_hold_seconds: cv,
                full_capacity_mah: full,
            }
        })
        .collect();

    match rpts.first() {
        Some(r) if r.week_index == 0.0 => {}
        _ => {
            return Err(Error::Parse {
                file: file.into(),
                line: 0,
                message: format!("{key} has no week-0 RPT"),
            })
        }
    }
    for r in &rpts {
        r.validate().map_err(|e| Error::Parse {
            file: file.into(),
            line: 0,
            message: e.to_string(),
        })?;
    }

    let first_week_cycle_discharges = cycling.into_values().next().unwrap_or_default();
    Ok(ParsedCell {
        key,
        rpts,
        first_week_cycle_discharges,
    })
}

/// Outcome of the lifetime computation for one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Lifetime {
    /// First threshold crossing, linearly interpolated between bracketing RPTs.
    Reached(f64),
    /// Capacity was already at or below the threshold at week 0 (lifetime 0,
    /// reported with a warning).
    AtStart,
    /// Capacity never reached the threshold.
    Censored,
}

impl Lifetime {
    pub fn weeks(&self) -> Option<f64> {
        match self {
            Lifetime::Reached(w) => Some(*w),
            Lifetime::AtStart => Some(0.0),
            Lifetime::Censored => None,
        }
    }

    pub fn is_warning(&self) -> bool {
        matches!(self, Lifetime::AtStart)
    }
}

/// Lifetime from (week, full capacity) pairs sorted by week. Capacity equal to
/// the threshold counts as end of life.
pub fn compute_lifetime(capacity_by_week: &[(f64, f64)], threshold_mah: f64) -> Result<Lifetime> {
    if capacity_by_week.len() < 2 {
        return Err(Error::Precondition(format!(
            "lifetime needs at least 2 RPTs, got {}",
            capacity_by_week.len()
        )));
    }
    let (_, q0) = capacity_by_week[0];
    if q0 <= threshold_mah {
        return Ok(Lifetime::AtStart);
    }
    for w in capacity_by_week.windows(2) {
        let (w0, q_a) = w[0];
        let (w1, q_b) = w[1];
        if q_b <= threshold_mah {
            let frac = (q_a - threshold_mah) / (q_a - q_b);
            return Ok(Lifetime::Reached(w0 + frac * (w1 - w0)));
        }
    }
    Ok(Lifetime::Censored)
}

pub fn cell_lifetime(rpts: &[RptRecord], threshold_mah: f64) -> Result<Lifetime> {
    let series: Vec<(f64, f64)> = rpts
        .iter()
        .map(|r| (r.week_index, r.full_capacity_mah))
        .collect();
    compute_lifetime(&series, threshold_mah)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DodEstimate {
    pub value: f64,
    /// True when no cycling data was available and `dod_design` was passed through.
    pub fallback: bool,
}

/// Mean per-cycle discharged capacity over the first cycling week divided by
/// the week-0 RPT capacity, clipped to (0, 1.2].
pub fn measure_dod(week0_full_capacity: f64, cycle_discharges: &[f64], dod_design: f64) -> DodEstimate {
    let valid: Vec<f64> = cycle_discharges
        .iter()
        .copied()
        .filter(|c| c.is_finite() && *c > 0.0)
        .collect();
    if valid.is_empty() || !(week0_full_capacity > 0.0) {
        return DodEstimate {
            value: dod_design,
            fallback: true,
        };
    }
    let ratio = crate::stats::mean(&valid) / week0_full_capacity;
    DodEstimate {
        value: ratio.min(1.2),
        fallback: false,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestOutput {
    pub cells: Vec<CellRecord>,
    pub warnings: Vec<String>,
}

/// Locate `G{g}C{c}.csv` files under `dir` for the groups in the manifest.
pub fn discover_cell_files(manifest: &DatasetManifest, dir: &Path) -> Result<Vec<(CellKey, PathBuf)>> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(key) = parse_cell_file_name(&name) {
            if manifest.group(key.group_id).is_some() {
                out.push((key, entry.path()));
            }
        }
    }
    out.sort_by_key(|(k, _)| *k);
    Ok(out)
}

pub fn parse_cell_file_name(name: &str) -> Option<CellKey> {
    let stem = name.strip_suffix(".csv")?.strip_prefix('G')?;
    let (g, c) = stem.split_once('C')?;
    Some(CellKey::new(g.parse().ok()?, c.parse().ok()?))
}

pub fn cell_file_name(key: CellKey) -> String {
    format!("G{}C{}.csv", key.group_id, key.cell_id)
}

/// Derive measured DoD and lifetime for a parsed cell.
pub fn build_cell(
    parsed: ParsedCell,
    group: &ManifestRow,
    threshold_mah: f64,
    warnings: &mut Vec<String>,
) -> Result<CellRecord> {
    let key = parsed.key;
    let q0 = parsed.rpts[0].full_capacity_mah;
    let dod = measure_dod(q0, &parsed.first_week_cycle_discharges, group.dod_design);
    if dod.fallback {
        warnings.push(format!("{key}: no first-week cycling data, using design DoD {}", group.dod_design));
    }
    let mut dod_value = dod.value;
    if dod_value > 1.05 {
        warnings.push(format!("{key}: measured DoD {dod_value:.4} clamped to 1.05"));
        dod_value = 1.05;
    }
    if !(dod_value > 0.0) {
        return Err(Error::invalid("dod_measured", format!("{key}: non-positive DoD")));
    }
    let condition = CyclingCondition::new(group.c_chg, group.c_dis, group.dod_design, dod_value)?;
    let lifetime = match cell_lifetime(&parsed.rpts, threshold_mah) {
        Ok(Lifetime::Reached(w)) if w > 0.0 => Some(w),
        Ok(Lifetime::Reached(_)) | Ok(Lifetime::AtStart) => {
            warnings.push(format!("{key}: capacity at or below threshold at week 0, excluded"));
            None
        }
        Ok(Lifetime::Censored) => {
            warnings.push(format!("{key}: censored (never reached end of life)"));
            None
        }
        Err(e) => {
            warnings.push(format!("{key}: {e}; treated as censored"));
            None
        }
    };
    let cell = CellRecord {
        key,
        condition,
        rpts: parsed.rpts,
        lifetime_weeks: lifetime,
    };
    cell.validate()?;
    Ok(cell)
}

/// Parse every cell file for the manifest's groups. Files are parsed in
/// parallel; output is ordered by (group, cell).
pub fn parse_cell_files(manifest: &DatasetManifest, dir: &Path) -> Result<IngestOutput> {
    manifest.validate()?;
    let files = discover_cell_files(manifest, dir)?;
    let parsed: Vec<Result<(CellRecord, Vec<String>)>> = files
        .par_iter()
        .map(|(key, path)| {
            let name = path.display().to_string();
            let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
            let parsed = parse_cell_csv(std::io::BufReader::new(f), &name, *key)?;
            let group = manifest
                .group(key.group_id)
                .expect("discovered files belong to manifest groups");
            let mut warnings = Vec::new();
            let cell = build_cell(parsed, group, manifest.eol_threshold_mah, &mut warnings)?;
            Ok((cell, warnings))
        })
        .collect();
    let mut out = IngestOutput::default();
    for r in parsed {
        let (cell, w) = r?;
        out.cells.push(cell);
        out.warnings.extend(w);
    }
    for g in &manifest.groups {
        if !out.cells.iter().any(|c| c.key.group_id == g.group_id) {
            out.warnings.push(format!("group {} has no cell files", g.group_id));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub assignment: SplitAssignment,
    pub warnings: Vec<String>,
}

/// Group-level partition of uncensored cells.
///
/// A group goes to `test_low_dod` if any of its cells measured below
/// `dod_boundary`. Remaining groups are shuffled with `seed` and taken into
/// `test_high_dod` while that keeps the test count at or below
/// `round(n_high × (1 − train_fraction_high_dod))`; the rest train.
pub fn assign_splits(
    cells: &[CellRecord],
    dod_boundary: f64,
    train_fraction_high_dod: f64,
    seed: u64,
) -> Result<SplitOutcome> {
    let mut warnings = Vec::new();
    let mut groups: BTreeMap<u32, Vec<&CellRecord>> = BTreeMap::new();
    for c in cells.iter().filter(|c| c.lifetime_weeks.is_some()) {
        groups.entry(c.key.group_id).or_default().push(c);
    }
    let mut entries = Vec::new();
    let mut high: Vec<(u32, usize)> = Vec::new();
    for (gid, members) in &groups {
        if members.iter().any(|c| c.condition.dod_measured < dod_boundary) {
            entries.extend(members.iter().map(|c| (c.key, SplitTag::TestLowDod)));
        } else {
            high.push((*gid, members.len()));
        }
    }
    if high.is_empty() {
        return Err(Error::Precondition("no groups in the high-DoD region".into()));
    }
    if entries.is_empty() {
        warnings.push("no groups below the DoD boundary; low-DoD test set is empty".into());
    }
    let n_high: usize = high.iter().map(|(_, n)| n).sum();
    let target_test = (n_high as f64 * (1.0 - train_fraction_high_dod)).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    high.shuffle(&mut rng);
    let mut n_test = 0;
    for (gid, n) in high {
        let tag = if n_test + n <= target_test {
            n_test += n;
            SplitTag::TestHighDod
        } else {
            SplitTag::Train
        };
        entries.extend(groups[&gid].iter().map(|c| (c.key, tag)));
    }
    if n_test != target_test {
        warnings.push(format!(
            "high-DoD test set holds {n_test} cells, target was {target_test}"
        ));
    }
    Ok(SplitOutcome {
        assignment: SplitAssignment::from_entries(entries)?,
        warnings,
    })
}

pub fn write_splits_csv(splits: &SplitAssignment, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serialization(e.to_string()))?;
    w.write_record(["group_id", "cell_id", "split"])
        .map_err(|e| Error::Serialization(e.to_string()))?;
    for (k, t) in splits.entries() {
        w.write_record([k.group_id.to_string(), k.cell_id.to_string(), t.to_string()])
            .map_err(|e| Error::Serialization(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_splits_csv(path: &Path) -> Result<SplitAssignment> {
    let file = path.display().to_string();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
    let headers = rdr.headers().map_err(|e| csv_err(&file, 1, e))?.clone();
    let idx = column_indices(&headers, &["group_id", "cell_id", "split"], &file)?;
    let mut entries = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| csv_err(&file, line, e))?;
        let g = parse_num(rec.get(idx[0]).unwrap_or(""), &file, line, "group_id")?;
        let c = parse_num(rec.get(idx[1]).unwrap_or(""), &file, line, "cell_id")?;
        let tag = SplitTag::parse(rec.get(idx[2]).unwrap_or(""))?;
        entries.push((CellKey::new(g, c), tag));
    }
    SplitAssignment::from_entries(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell_csv(weeks: &[f64], extra_cycling: bool) -> String {
        let mut s = String::from("week_index,phase,step,voltage_V,current_mA,capacity_mAh,time_s\n");
        let mut t = 0.0;
        for (wi, &w) in weeks.iter().enumerate() {
            let cap = 240.0 - 10.0 * wi as f64;
            // charge
            for k in 0..5 {
                t += 60.0;
                s += &format!("{w},rpt,charge_cc,{},50,{},{t}\n", 3.5 + 0.1 * k as f64, 10.0 * k as f64);
            }
            for _ in 0..3 {
                t += 100.0;
                s += &format!("{w},rpt,charge_cv,4.2,10,0,{t}\n");
            }
            for k in 0..=60 {
                t += 60.0;
                let v = 4.2 - 1.2 * k as f64 / 60.0;
                s += &format!("{w},rpt,discharge,{v},-50,{},{t}\n", cap * k as f64 / 60.0);
            }
            if extra_cycling && wi == 0 {
                for _cycle in 0..4 {
                    t += 10.0;
                    s += &format!("0,cycling,charge_cc,3.9,250,0,{t}\n");
                    for k in 0..3 {
                        t += 10.0;
                        s += &format!("0,cycling,discharge,{},-250,{},{t}\n", 4.0 - 0.1 * k as f64, 60.0 * k as f64);
                    }
                }
            }
        }
        s
    }

    #[test]
    fn parses_two_rpts() {
        let csv = cell_csv(&[0.0, 3.0], true);
        let p = parse_cell_csv(csv.as_bytes(), "G1C1.csv", CellKey::new(1, 1)).unwrap();
        assert_eq!(p.rpts.len(), 2);
        assert_eq!(p.rpts[0].week_index, 0.0);
        assert_eq!(p.rpts[1].week_index, 3.0);
        assert!((p.rpts[0].full_capacity_mah - 240.0).abs() < 1e-9);
        assert!((p.rpts[0].cv_hold_seconds - 200.0).abs() < 1e-9);
        assert_eq!(p.first_week_cycle_discharges, vec![120.0; 4]);
    }

    #[test]
    fn keeps_half_week_rpt() {
        let csv = cell_csv(&[0.0, 0.5, 1.0], false);
        let p = parse_cell_csv(csv.as_bytes(), "G20C1.csv", CellKey::new(20, 1)).unwrap();
        let weeks: Vec<f64> = p.rpts.iter().map(|r| r.week_index).collect();
        assert_eq!(weeks, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn missing_voltage_column_is_named() {
        let csv = "week_index,phase,step,current_mA,capacity_mAh,time_s\n0,rpt,discharge,1,1,1\n";
        match parse_cell_csv(csv.as_bytes(), "G1C1.csv", CellKey::new(1, 1)) {
            Err(Error::MissingColumn { column, .. }) => assert_eq!(column, "voltage_V"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_week_zero_is_an_error() {
        let csv = cell_csv(&[1.0, 2.0], false);
        let err = parse_cell_csv(csv.as_bytes(), "G1C1.csv", CellKey::new(1, 1)).unwrap_err();
        assert!(err.to_string().contains("week-0"), "{err}");
    }

    #[test]
    fn backwards_time_is_an_error() {
        let mut csv = cell_csv(&[0.0, 1.0], false);
        csv += "1,rpt,discharge,3.0,-50,200,1\n";
        let err = parse_cell_csv(csv.as_bytes(), "G1C1.csv", CellKey::new(1, 1)).unwrap_err();
        assert!(err.to_string().contains("backwards"), "{err}");
    }

    #[test]
    fn lifetime_interpolates() {
        let l = compute_lifetime(&[(0.0, 240.0), (1.0, 210.0), (2.0, 190.0)], 200.0).unwrap();
        assert_eq!(l, Lifetime::Reached(1.5));
    }

    #[test]
    fn lifetime_censored_and_boundary() {
        let l = compute_lifetime(&[(0.0, 240.0), (1.0, 220.0), (2.0, 201.0)], 200.0).unwrap();
        assert_eq!(l, Lifetime::Censored);
        let l = compute_lifetime(&[(0.0, 250.0), (1.0, 200.0)], 200.0).unwrap();
        assert_eq!(l, Lifetime::Reached(1.0));
        let l = compute_lifetime(&[(0.0, 199.0), (1.0, 190.0)], 200.0).unwrap();
        assert_eq!(l, Lifetime::AtStart);
        assert_eq!(l.weeks(), Some(0.0));
        assert!(l.is_warning());
        assert!(compute_lifetime(&[(0.0, 240.0)], 200.0).is_err());
    }

    #[test]
    fn dod_ratio_and_fallback() {
        let d = measure_dod(245.0, &[120.0, 120.0], 0.5);
        assert!((d.value - 0.489_795_918_367_346_9).abs() < 1e-12);
        assert!(!d.fallback);
        let d = measure_dod(245.0, &[], 0.5);
        assert_eq!(d.value, 0.5);
        assert!(d.fallback);
        assert_eq!(measure_dod(100.0, &[150.0], 1.0).value, 1.2);
    }

    fn cell(g: u32, c: u32, dod: f64, life: Option<f64>) -> CellRecord {
        CellRecord {
            key: CellKey::new(g, c),
            condition: CyclingCondition::new(1.0, 1.0, dod, dod).unwrap(),
            rpts: vec![],
            lifetime_weeks: life,
        }
    }

    #[test]
    fn splits_are_group_level_and_deterministic() {
        let mut cells = vec![];
        for g in 1..=12u32 {
            let dod = if g <= 3 { 0.27 } else { 0.5 + 0.04 * g as f64 };
            for c in 1..=4 {
                cells.push(cell(g, c, dod.min(1.0), Some(10.0)));
            }
        }
        cells.push(cell(13, 1, 0.6, None));
        let a = assign_splits(&cells, 0.40, 0.75, 7).unwrap();
        let b = assign_splits(&cells, 0.40, 0.75, 7).unwrap();
        assert_eq!(a.assignment, b.assignment);
        assert_eq!(a.assignment.len(), 48);
        assert_eq!(a.assignment.count(SplitTag::TestLowDod), 12);
        assert_eq!(a.assignment.count(SplitTag::TestHighDod), 8);
        assert_eq!(a.assignment.count(SplitTag::Train), 28);
        for g in 1..=12u32 {
            let tags: std::collections::HashSet<_> = (1..=4)
                .map(|c| a.assignment.get(&CellKey::new(g, c)).unwrap())
                .collect();
            assert_eq!(tags.len(), 1);
        }
        assert_eq!(a.assignment.get(&CellKey::new(1, 1)), Some(SplitTag::TestLowDod));
    }

    #[test]
    fn all_high_dod_warns() {
        let cells: Vec<_> = (1..=4).map(|g| cell(g, 1, 0.8, Some(5.0))).collect();
        let out = assign_splits(&cells, 0.40, 0.5, 1).unwrap();
        assert_eq!(out.assignment.count(SplitTag::TestLowDod), 0);
        assert!(!out.warnings.is_empty());
        let low: Vec<_> = (1..=4).map(|g| cell(g, 1, 0.2, Some(5.0))).collect();
        assert!(assign_splits(&low, 0.40, 0.5, 1).is_err());
    }

    #[test]
    fn file_names() {
        assert_eq!(parse_cell_file_name("G12C3.csv"), Some(CellKey::new(12, 3)));
        assert_eq!(parse_cell_file_name("manifest.csv"), None);
        assert_eq!(cell_file_name(CellKey::new(4, 2)), "G4C2.csv");
    }
}
