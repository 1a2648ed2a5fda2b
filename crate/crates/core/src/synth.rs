//! Synthetic datasets in the canonical on-disk layout.
//!
//! Each cell's discharge dQ/dV is three Gaussian peaks (3.45, 3.75, 4.0 V) on
//! a flat baseline. Only the middle peak loses capacity, by k·f(w) mAh at week
//! w, where f is piecewise linear with per-stage rate multipliers. The fade
//! rate follows `ln k = c0 + c1·Stress_avg + latent`, so for a single stage
//! lifetime is `(Q0 − EOL)/k` and log lifetime is linear in log k. The outer
//! peaks drift per cell without changing capacity, and the CV hold grows with
//! the faded capacity.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{cell_file_name, DatasetManifest, ManifestRow, CELL_COLUMNS};
use crate::types::{CellKey, EOL_THRESHOLD_MAH, RATED_CAPACITY_MAH, V_MAX, V_MIN};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const TRUTH_FILE: &str = "truth.csv";

const PEAK_CENTERS: [f64; 3] = [3.45, 3.75, 4.0];
const PEAK_WIDTHS: [f64; 3] = [0.06, 0.08, 0.05];
/// Capacity share of each peak inside [V_MIN, V_MAX]; the rest is baseline.
const PEAK_SHARES: [f64; 3] = [0.28, 0.44, 0.2];
const RPT_CURRENT_MA: f64 = 0.2 * RATED_CAPACITY_MAH;
const SECONDS_PER_WEEK: f64 = 7.0 * 24.0 * 3600.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionDesign {
    /// Per group: DoD drawn from `dod_levels`, C-rates uniform in `c_range`.
    Random { dod_levels: Vec<f64>, c_range: (f64, f64) },
    /// Groups cycle through the listed Stress_avg tiers with C_chg = C_dis.
    Tiers { stress: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PartialSpec")]
pub struct SynthSpec {
    pub groups: u32,
    pub cells_per_group: u32,
    pub seed: u64,
    pub conditions: ConditionDesign,
    /// ln k = law_intercept + law_stress·Stress_avg + N(0, latent_sd²).
    pub law_intercept: f64,
    pub law_stress: f64,
    pub latent_sd: f64,
    /// (start week, rate multiplier) per degradation stage, starts ascending
    /// from 0.
    pub stages: Vec<(f64, f64)>,
    /// Scales every nuisance term: voltage noise (1 mV), initial capacity
    /// spread (1%), CV-hold jitter and DoD measurement error.
    pub noise: f64,
    /// Per-cell drift sd of the outer peak centres, V per week.
    pub peak_drift_sd: f64,
    pub curve_samples: usize,
    pub sparse_samples: usize,
    /// Weekly RPTs up to this week, then every `sparse_interval` weeks.
    pub dense_until: f64,
    pub sparse_interval: f64,
    pub max_weeks: f64,
    /// Groups with id at or above this also get a week-0.5 RPT.
    pub half_week_from_group: Option<u32>,
    pub cycles_first_week: usize,
}

/// Deserialization form: `seed` is required, everything else defaults.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialSpec {
    seed: u64,
    groups: Option<u32>,
    cells_per_group: Option<u32>,
    conditions: Option<ConditionDesign>,
    law_intercept: Option<f64>,
    law_stress: Option<f64>,
    latent_sd: Option<f64>,
    stages: Option<Vec<(f64, f64)>>,
    noise: Option<f64>,
    peak_drift_sd: Option<f64>,
    curve_samples: Option<usize>,
    sparse_samples: Option<usize>,
    dense_until: Option<f64>,
    sparse_interval: Option<f64>,
    max_weeks: Option<f64>,
    half_week_from_group: Option<u32>,
    cycles_first_week: Option<usize>,
}

impl TryFrom<PartialSpec> for SynthSpec {
    type Error = String;

    fn try_from(p: PartialSpec) -> std::result::Result<Self, String> {
        let mut s = SynthSpec::new(p.seed);
        if let Some(v) = p.groups {
            s.groups = v;
        }
        if let Some(v) = p.cells_per_group {
            s.cells_per_group = v;
        }
        if let Some(v) = p.conditions {
            s.conditions = v;
        }
        if let Some(v) = p.law_intercept {
            s.law_intercept = v;
        }
        if let Some(v) = p.law_stress {
            s.law_stress = v;
        }
        if let Some(v) = p.latent_sd {
            s.latent_sd = v;
        }
        if let Some(v) = p.stages {
            s.stages = v;
        }
        if let Some(v) = p.noise {
            s.noise = v;
        }
        if let Some(v) = p.peak_drift_sd {
            s.peak_drift_sd = v;
        }
        if let Some(v) = p.curve_samples {
            s.curve_samples = v;
        }
        if let Some(v) = p.sparse_samples {
            s.sparse_samples = v;
        }
        if let Some(v) = p.dense_until {
            s.dense_until = v;
        }
        if let Some(v) = p.sparse_interval {
            s.sparse_interval = v;
        }
        if let Some(v) = p.max_weeks {
            s.max_weeks = v;
        }
        if let Some(v) = p.half_week_from_group {
            s.half_week_from_group = Some(v);
        }
        if let Some(v) = p.cycles_first_week {
            s.cycles_first_week = v;
        }
        Ok(s)
    }
}

impl SynthSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            groups: 45,
            cells_per_group: 5,
            seed,
            conditions: ConditionDesign::Random {
                dod_levels: vec![0.2, 0.3, 0.5, 0.65, 0.8, 1.0],
                c_range: (0.5, 3.5),
            },
            law_intercept: -0.5,
            law_stress: 1.5,
            latent_sd: 0.25,
            stages: vec![(0.0, 1.0)],
            noise: 1.0,
            peak_drift_sd: 0.002,
            curve_samples: 300,
            sparse_samples: 24,
            dense_until: 8.0,
            sparse_interval: 2.0,
            max_weeks: 100.0,
            half_week_from_group: Some(20),
            cycles_first_week: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 || self.cells_per_group == 0 {
            return Err(Error::invalid("synth", "need at least one group and one cell"));
        }
        if self.curve_samples < crate::curves::MIN_SAMPLES || self.sparse_samples < 2 {
            return Err(Error::invalid("synth.curve_samples", "too few samples per RPT"));
        }
        if !(self.noise >= 0.0 && self.latent_sd >= 0.0 && self.peak_drift_sd >= 0.0) {
            return Err(Error::invalid("synth", "noise terms must be non-negative"));
        }
        if self.stages.first().map(|s| s.0) != Some(0.0)
            || self.stages.windows(2).any(|w| w[1].0 <= w[0].0)
            || self.stages.iter().any(|s| !(s.1 > 0.0))
        {
            return Err(Error::invalid("synth.stages", "must start at week 0, ascend and have positive rates"));
        }
        if !(self.sparse_interval > 0.0 && self.dense_until >= 1.0 && self.max_weeks > self.dense_until) {
            return Err(Error::invalid("synth", "invalid RPT schedule"));
        }
        match &self.conditions {
            ConditionDesign::Random { dod_levels, c_range } => {
                if dod_levels.is_empty() || dod_levels.iter().any(|d| !(*d > 0.0 && *d <= 1.0)) {
                    return Err(Error::invalid("synth.dod_levels", "values must lie in (0, 1]"));
                }
                if !(c_range.0 > 0.0 && c_range.1 >= c_range.0 && c_range.1 <= 4.0) {
                    return Err(Error::invalid("synth.c_range", "must lie in (0, 4]"));
                }
            }
            ConditionDesign::Tiers { stress } => {
                if stress.is_empty() || stress.iter().any(|s| !(*s > 0.0 && s * s <= 4.0)) {
                    return Err(Error::invalid("synth.tiers", "tiers must lie in (0, 2]"));
                }
            }
        }
        Ok(())
    }

    /// Cumulative stage-weighted time f(w).
    pub fn fade_clock(&self, w: f64) -> f64 {
        let mut acc = 0.0;
        for (i, &(start, rate)) in self.stages.iter().enumerate() {
            let end = self.stages.get(i + 1).map_or(f64::INFINITY, |s| s.0);
            if w <= start {
                break;
            }
            acc += rate * (w.min(end) - start);
        }
        acc
    }

    /// Inverse of [`fade_clock`](Self::fade_clock).
    pub fn clock_to_week(&self, f: f64) -> f64 {
        let mut acc = 0.0;
        for (i, &(start, rate)) in self.stages.iter().enumerate() {
            let end = self.stages.get(i + 1).map_or(f64::INFINITY, |s| s.0);
            let span = rate * (end - start);
            if f <= acc + span {
                return start + (f - acc) / rate;
            }
            acc += span;
        }
        f64::INFINITY
    }
}

/// Ground truth for one generated cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCell {
    pub key: CellKey,
    pub stress_avg: f64,
    pub tier: Option<usize>,
    pub log_k: f64,
    pub q0_mah: f64,
    /// None when the cell does not reach end of life within `max_weeks`.
    pub lifetime_weeks: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub manifest: DatasetManifest,
    pub cells: Vec<SynthCell>,
}

fn phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Discharge-curve state of one cell at one week.
struct CurveState {
    centers: [f64; 3],
    amps: [f64; 3],
    baseline: f64,
}

impl CurveState {
    /// Capacity discharged from V_MAX down to `v`.
    fn q(&self, v: f64) -> f64 {
        let mut q = self.baseline * (V_MAX - v);
        for i in 0..3 {
            let (m, s) = (self.centers[i], PEAK_WIDTHS[i]);
            let z = phi((V_MAX - m) / s) - phi((V_MIN - m) / s);
            q += self.amps[i] * (phi((V_MAX - m) / s) - phi((v - m) / s)) / z;
        }
        q
    }

    fn full(&self) -> f64 {
        self.q(V_MIN)
    }

    fn voltage_at(&self, q: f64) -> f64 {
        let (mut lo, mut hi) = (V_MIN, V_MAX);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.q(mid) > q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

fn stress_avg(c_chg: f64, c_dis: f64, dod: f64) -> f64 {
    0.5 * ((c_chg * dod).sqrt() + (c_dis * dod).sqrt())
}

fn design_groups(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> (Vec<ManifestRow>, Vec<Option<usize>>) {
    let mut rows = Vec::new();
    let mut tiers = Vec::new();
    for g in 0..spec.groups {
        let group_id = g + 1;
        match &spec.conditions {
            ConditionDesign::Random { dod_levels, c_range } => {
                let dod = dod_levels[rng.random_range(0..dod_levels.len())];
                let c_chg = rng.random_range(c_range.0..=c_range.1);
                let c_dis = rng.random_range(c_range.0..=c_range.1);
                rows.push(ManifestRow { group_id, c_chg: round4(c_chg), c_dis: round4(c_dis), dod_design: dod });
                tiers.push(None);
            }
            ConditionDesign::Tiers { stress } => {
                let t = g as usize % stress.len();
                let s2 = stress[t] * stress[t];
                let lo = (s2 / 3.5).clamp(0.15, 1.0);
                let dod = round4(rng.random_range(lo..=1.0));
                let c = s2 / dod;
                rows.push(ManifestRow { group_id, c_chg: c, c_dis: c, dod_design: dod });
                tiers.push(Some(t));
            }
        }
    }
    (rows, tiers)
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn rpt_weeks(spec: &SynthSpec, group_id: u32, last: f64) -> Vec<f64> {
    let mut w = vec![0.0];
    if spec.half_week_from_group.is_some_and(|g| group_id >= g) {
        w.push(0.5);
    }
    let mut t = 1.0;
    while t <= spec.dense_until + 1e-9 {
        w.push(t);
        t += 1.0;
    }
    let mut t = spec.dense_until + spec.sparse_interval;
    while t <= last + 1e-9 {
        w.push(t);
        t += spec.sparse_interval;
    }
    // One RPT past end of life so the crossing is bracketed.
    if t <= spec.max_weeks + 1e-9 && w.last().is_some_and(|&l| l < last) {
        w.push(t);
    }
    w
}

fn cell_csv(
    spec: &SynthSpec,
    row: &ManifestRow,
    truth: &SynthCell,
    drift: [f64; 2],
    rng: &mut ChaCha8Rng,
) -> String {
    let nz = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = String::new();
    out.push_str(&CELL_COLUMNS.join(","));
    out.push('\n');
    let k = truth.log_k.exp();
    let base_shares = PEAK_SHARES.iter().sum::<f64>();
    let baseline = truth.q0_mah * (1.0 - base_shares) / (V_MAX - V_MIN);
    let last = truth.lifetime_weeks.unwrap_or(spec.max_weeks).min(spec.max_weeks);
    let cv0 = 1800.0 * (1.0 + 0.02 * spec.noise * nz.sample(rng));
    let mut line = |w: f64, phase: &str, step: &str, v: f64, i: f64, q: f64, t: f64| {
        let _ = writeln!(out, "{w},{phase},{step},{v:.6},{i:.3},{q:.6},{t:.3}");
    };
    for (wi, &w) in rpt_weeks(spec, row.group_id, last).iter().enumerate() {
        let fade = k * spec.fade_clock(w);
        let state = CurveState {
            centers: [PEAK_CENTERS[0] + drift[0] * w, PEAK_CENTERS[1], PEAK_CENTERS[2] + drift[1] * w],
            amps: [
                truth.q0_mah * PEAK_SHARES[0],
                (truth.q0_mah * PEAK_SHARES[1] - fade).max(0.0),
                truth.q0_mah * PEAK_SHARES[2],
            ],
            baseline,
        };
        let full = state.full();
        let mut t = w * SECONDS_PER_WEEK + 60.0;
        // CC charge, then CV hold.
        let cc_rows = 10;
        let charge_cc_q = 0.9 * full;
        for j in 0..cc_rows {
            let f = j as f64 / (cc_rows - 1) as f64;
            line(w, "rpt", "charge_cc", V_MIN + f * (V_MAX - V_MIN), RPT_CURRENT_MA, f * charge_cc_q, t);
            t += charge_cc_q / (cc_rows - 1) as f64 / RPT_CURRENT_MA * 3600.0;
        }
        let cv = cv0 + 20.0 * fade + 5.0 * spec.noise * nz.sample(rng);
        line(w, "rpt", "charge_cv", V_MAX, RPT_CURRENT_MA, charge_cc_q, t);
        t += cv.max(1.0);
        line(w, "rpt", "charge_cv", V_MAX, 0.05 * RPT_CURRENT_MA, full, t);
        t += 600.0;
        let n = if w <= spec.dense_until + 1e-9 { spec.curve_samples } else { spec.sparse_samples };
        for j in 0..n {
            let q = full * j as f64 / (n - 1) as f64;
            let v = if j == 0 {
                V_MAX
            } else if j == n - 1 {
                V_MIN
            } else {
                state.voltage_at(q) + 0.001 * spec.noise * nz.sample(rng)
            };
            line(w, "rpt", "discharge", v, -RPT_CURRENT_MA, q, t + q / RPT_CURRENT_MA * 3600.0);
        }
        t += full / RPT_CURRENT_MA * 3600.0 + 600.0;
        if wi == 0 {
            let c_dis_ma = row.c_dis * RATED_CAPACITY_MAH;
            for _ in 0..spec.cycles_first_week {
                let dq = row.dod_design * full * (1.0 + 0.002 * spec.noise * nz.sample(rng));
                line(w, "cycling", "charge_cc", 3.6, row.c_chg * RATED_CAPACITY_MAH, 0.0, t);
                t += dq / (row.c_chg * RATED_CAPACITY_MAH) * 3600.0;
                line(w, "cycling", "discharge", 4.1, -c_dis_ma, 0.0, t);
                t += dq / c_dis_ma * 3600.0;
                line(w, "cycling", "discharge", 3.5, -c_dis_ma, dq, t);
                t += 60.0;
            }
            line(w, "cycling", "charge_cc", 3.5, row.c_chg * RATED_CAPACITY_MAH, 0.0, t);
        }
    }
    out
}

/// Generate a dataset into `dir`: manifest, one CSV per cell and a truth file
/// with `group_id,cell_id,stress_avg,tier,log_k,q0_mAh,lifetime_weeks`.
pub fn generate_synthetic(spec: &SynthSpec, dir: &Path) -> Result<SynthOutput> {
    spec.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (rows, tiers) = design_groups(spec, &mut rng);
    let manifest = DatasetManifest::new(rows.clone());
    manifest.write_csv(&dir.join(MANIFEST_FILE))?;
    let nz = Normal::new(0.0, 1.0).expect("unit normal");
    let mut cells = Vec::new();
    let mut truth_csv = String::from("group_id,cell_id,stress_avg,tier,log_k,q0_mAh,lifetime_weeks\n");
    for (gi, row) in rows.iter().enumerate() {
        for c in 0..spec.cells_per_group {
            let key = CellKey::new(row.group_id, c + 1);
            let mut crng = ChaCha8Rng::seed_from_u64(spec.seed);
            crng.set_stream(((row.group_id as u64) << 32) | (c as u64 + 1));
            let s = stress_avg(row.c_chg, row.c_dis, row.dod_design);
            let log_k = spec.law_intercept + spec.law_stress * s + spec.latent_sd * nz.sample(&mut crng);
            let q0 = RATED_CAPACITY_MAH * (1.0 + 0.01 * spec.noise * nz.sample(&mut crng)) + 2.0;
            let drift = [
                spec.peak_drift_sd * nz.sample(&mut crng),
                spec.peak_drift_sd * nz.sample(&mut crng),
            ];
            let budget = q0 - EOL_THRESHOLD_MAH;
            let life = spec.clock_to_week(budget / log_k.exp());
            let truth = SynthCell {
                key,
                stress_avg: s,
                tier: tiers[gi],
                log_k,
                q0_mah: q0,
                lifetime_weeks: (life <= spec.max_weeks && budget < q0 * PEAK_SHARES[1]).then_some(life),
            };
            let body = cell_csv(spec, row, &truth, drift, &mut crng);
            let path = dir.join(cell_file_name(key));
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            let _ = writeln!(
                truth_csv,
                "{},{},{},{},{},{},{}",
                key.group_id,
                key.cell_id,
                s,
                truth.tier.map_or(String::new(), |t| t.to_string()),
                log_k,
                q0,
                truth.lifetime_weeks.map_or(String::new(), |l| l.to_string())
            );
            cells.push(truth);
        }
    }
    let tp = dir.join(TRUTH_FILE);
    std::fs::write(&tp, truth_csv).map_err(|e| Error::io(&tp, e))?;
    Ok(SynthOutput { manifest, cells })
}
