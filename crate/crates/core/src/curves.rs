//! RPT discharge curves: Q(V) on the global voltage grid, incremental capacity
//! dQ/dV(V), differential voltage dV/dQ(Q), week-to-week differences and DVA
//! landmark detection.
//!
//! Splines are fitted in normalised coordinates (abscissa and ordinate mapped
//! to [0, 1], weights summing to one) so one dimensionless smoothing value
//! serves every cell regardless of sample count or capacity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::names::WeekPair;
use crate::spline::SmoothingSpline;
use crate::types::{CellKey, CellRecord, CyclingCondition, QvCurve, VoltageGrid};

/// Minimum raw samples for a curve fit.
pub const MIN_SAMPLES: usize = 50;
/// Minimum voltage span of the raw samples.
pub const MIN_SPAN_V: f64 = 1.1;
/// Default normalised smoothing. Chosen so that analytic fixtures with noise
/// at 0.1% of capacity keep dQ/dV within 2% of the truth.
pub const DEFAULT_SMOOTHING: f64 = 1e-8;
pub const DEFAULT_DVA_POINTS: usize = 500;

/// Incremental capacity on the global voltage grid (signed; negative for a
/// discharge, where capacity grows as voltage falls).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaCurve {
    pub grid: VoltageGrid,
    pub dqdv: Vec<f64>,
}

/// Differential voltage on the cell's own uniform capacity grid. `dvdq` holds
/// −dV/dQ so that it is positive along a discharge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvaCurve {
    pub capacity_grid: Vec<f64>,
    pub dvdq: Vec<f64>,
}

/// Anything stored pointwise on the global voltage grid.
pub trait GridCurve {
    fn grid(&self) -> &VoltageGrid;
    fn values(&self) -> &[f64];
}

impl GridCurve for QvCurve {
    fn grid(&self) -> &VoltageGrid {
        &self.grid
    }
    fn values(&self) -> &[f64] {
        &self.capacity
    }
}

impl GridCurve for IcaCurve {
    fn grid(&self) -> &VoltageGrid {
        &self.grid
    }
    fn values(&self) -> &[f64] {
        &self.dqdv
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaCurve {
    pub grid: VoltageGrid,
    pub values: Vec<f64>,
    pub weeks: WeekPair,
}

impl GridCurve for DeltaCurve {
    fn grid(&self) -> &VoltageGrid {
        &self.grid
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Spline fit of `y(x)` in normalised coordinates.
struct NormalizedFit {
    spline: SmoothingSpline,
    x0: f64,
    xs: f64,
    y0: f64,
    ys: f64,
}

impl NormalizedFit {
    fn new(x: &[f64], y: &[f64], smoothing: f64) -> Result<Self> {
        let (x0, x1) = min_max(x);
        let (y0, y1) = min_max(y);
        let xs = x1 - x0;
        let ys = if y1 > y0 { y1 - y0 } else { 1.0 };
        let xn: Vec<f64> = x.iter().map(|v| (v - x0) / xs).collect();
        let yn: Vec<f64> = y.iter().map(|v| (v - y0) / ys).collect();
        let w = vec![1.0 / x.len() as f64; x.len()];
        let spline = SmoothingSpline::fit_weighted(&xn, &yn, &w, smoothing)?;
        Ok(Self {
            spline,
            x0,
            xs,
            y0,
            ys,
        })
    }

    fn eval(&self, x: f64) -> f64 {
        self.y0 + self.ys * self.spline.eval((x - self.x0) / self.xs)
    }

    fn deriv(&self, x: f64) -> f64 {
        self.ys / self.xs * self.spline.deriv((x - self.x0) / self.xs)
    }
}

fn min_max(x: &[f64]) -> (f64, f64) {
    x.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
}

fn check_samples(samples: &[(f64, f64)]) -> Result<()> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::Precondition(format!(
            "curve fit needs at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|(v, q)| !v.is_finite() || !q.is_finite()) {
        return Err(Error::Precondition("non-finite discharge sample".into()));
    }
    let (lo, hi) = min_max(&samples.iter().map(|s| s.0).collect::<Vec<_>>());
    if hi - lo < MIN_SPAN_V {
        return Err(Error::Precondition(format!(
            "discharge spans {:.3} V, need at least {MIN_SPAN_V} V",
            hi - lo
        )));
    }
    Ok(())
}

/// Smoothing-spline fit of Q against V, evaluated on `grid`.
pub fn resample_qv(samples: &[(f64, f64)], grid: VoltageGrid, smoothing: f64) -> Result<QvCurve> {
    check_samples(samples)?;
    let v: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let q: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let fit = NormalizedFit::new(&v, &q, smoothing)?;
    let capacity = grid.values().into_iter().map(|x| fit.eval(x)).collect();
    QvCurve::new(grid, capacity)
}

/// Finite-difference dQ/dV: central differences inside, one-sided at the ends.
pub fn compute_dqdv(curve: &QvCurve) -> IcaCurve {
    IcaCurve {
        grid: curve.grid,
        dqdv: gradient(&curve.capacity, curve.grid.step()),
    }
}

/// Derivative of uniformly spaced samples with spacing `h`.
pub fn gradient(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    (0..n)
        .map(|i| {
            if i == 0 {
                (y[1] - y[0]) / h
            } else if i + 1 == n {
                (y[n - 1] - y[n - 2]) / h
            } else {
                (y[i + 1] - y[i - 1]) / (2.0 * h)
            }
        })
        .collect()
}

/// Differential voltage from raw discharge samples. Input order is normalised
/// so capacity increases; any decrease after that is an error.
pub fn compute_dvdq(samples: &[(f64, f64)], smoothing: f64, points: usize) -> Result<DvaCurve> {
    check_samples(samples)?;
    if points < 3 {
        return Err(Error::invalid("dva_points", "need at least 3 points"));
    }
    let mut s = samples.to_vec();
    if s.first().map(|f| f.1) > s.last().map(|l| l.1) {
        s.reverse();
    }
    if let Some(i) = s.windows(2).position(|w| w[1].1 < w[0].1) {
        return Err(Error::Precondition(format!(
            "capacity is not monotone along the discharge (sample {})",
            i + 1
        )));
    }
    let q: Vec<f64> = s.iter().map(|p| p.1).collect();
    let v: Vec<f64> = s.iter().map(|p| p.0).collect();
    let (q0, q1) = min_max(&q);
    if !(q1 > q0) {
        return Err(Error::Precondition("discharge has zero capacity span".into()));
    }
    let fit = NormalizedFit::new(&q, &v, smoothing)?;
    let step = (q1 - q0) / (points - 1) as f64;
    let capacity_grid: Vec<f64> = (0..points).map(|i| q0 + i as f64 * step).collect();
    let dvdq = capacity_grid.iter().map(|&x| -fit.deriv(x)).collect();
    Ok(DvaCurve {
        capacity_grid,
        dvdq,
    })
}

/// Pointwise `a − b` for curves on the same grid; `weeks` is (later, earlier).
pub fn delta_curve<C: GridCurve>(a: &C, b: &C, weeks: WeekPair) -> Result<DeltaCurve> {
    if a.grid() != b.grid() || a.values().len() != b.values().len() {
        return Err(Error::GridMismatch(format!(
            "{:?} vs {:?}",
            a.grid(),
            b.grid()
        )));
    }
    Ok(DeltaCurve {
        grid: *a.grid(),
        values: a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect(),
        weeks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremumKind {
    Peak,
    Valley,
}

/// Where to look for one landmark: extremum kind and a window given as
/// fractions of the curve's capacity span.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkSpec {
    pub kind: ExtremumKind,
    pub window: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandmarkConfig {
    pub landmarks: [LandmarkSpec; 4],
    /// Minimum prominence as a fraction of the dV/dQ range inside the search
    /// region; weaker extrema are ignored.
    pub min_prominence: f64,
    /// Fraction of the capacity span trimmed at each end before searching,
    /// where dV/dQ diverges.
    pub edge_trim: f64,
}

impl Default for LandmarkConfig {
    fn default() -> Self {
        use ExtremumKind::*;
        Self {
            landmarks: [
                LandmarkSpec { kind: Peak, window: (0.05, 0.40) },
                LandmarkSpec { kind: Valley, window: (0.20, 0.60) },
                LandmarkSpec { kind: Valley, window: (0.50, 0.85) },
                LandmarkSpec { kind: Peak, window: (0.60, 0.95) },
            ],
            min_prominence: 0.02,
            edge_trim: 0.02,
        }
    }
}

impl LandmarkConfig {
    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.landmarks.iter().enumerate() {
            let (a, b) = l.window;
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a >= b {
                return Err(Error::invalid(
                    format!("landmarks[{i}].window"),
                    "must satisfy 0 ≤ lo < hi ≤ 1",
                ));
            }
        }
        if !(0.0..0.5).contains(&self.edge_trim) || !(self.min_prominence >= 0.0) {
            return Err(Error::invalid("landmarks", "edge_trim in [0, 0.5), min_prominence ≥ 0"));
        }
        Ok(())
    }
}

/// Landmark capacities in mAh; `None` when no qualifying extremum exists.
pub type Landmarks = [Option<f64>; 4];

/// Topographic prominence of each strict interior local maximum of `y`.
fn peak_prominences(y: &[f64]) -> Vec<(usize, f64)> {
    let n = y.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if y[i] > y[i - 1] {
            // Walk across a flat top.
            let mut j = i;
            while j + 1 < n && y[j + 1] == y[i] {
                j += 1;
            }
            if j + 1 < n && y[j + 1] < y[i] {
                let peak = (i + j) / 2;
                let h = y[peak];
                let mut left_min = h;
                let mut k = i;
                while k > 0 {
                    k -= 1;
                    if y[k] > h {
                        break;
                    }
                    left_min = left_min.min(y[k]);
                }
                let mut right_min = h;
                let mut k = j;
                while k + 1 < n {
                    k += 1;
                    if y[k] > h {
                        break;
                    }
                    right_min = right_min.min(y[k]);
                }
                out.push((peak, h - left_min.max(right_min)));
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Vertex abscissa of the parabola through three equally spaced points.
fn parabolic_offset(ym: f64, y0: f64, yp: f64) -> f64 {
    let denom = ym - 2.0 * y0 + yp;
    if denom == 0.0 {
        0.0
    } else {
        (0.5 * (ym - yp) / denom).clamp(-0.5, 0.5)
    }
}

/// Most prominent extremum of each configured kind inside each window,
/// refined to sub-grid position by a parabola through its neighbours.
pub fn find_dva_peaks(curve: &DvaCurve, config: &LandmarkConfig) -> Landmarks {
    let n = curve.capacity_grid.len();
    let mut out = [None; 4];
    if n < 5 {
        return out;
    }
    let q0 = curve.capacity_grid[0];
    let span = curve.capacity_grid[n - 1] - q0;
    let h = span / (n - 1) as f64;
    let trim = ((config.edge_trim * (n - 1) as f64).round() as usize).min(n / 2 - 1);
    let inner = &curve.dvdq[trim..n - trim];
    let (lo, hi) = min_max(inner);
    let threshold = config.min_prominence * (hi - lo);
    for kind in [ExtremumKind::Peak, ExtremumKind::Valley] {
        let signed: Vec<f64> = match kind {
            ExtremumKind::Peak => inner.to_vec(),
            ExtremumKind::Valley => inner.iter().map(|v| -v).collect(),
        };
        let candidates = peak_prominences(&signed);
        for (slot, spec) in config.landmarks.iter().enumerate() {
            if spec.kind != kind {
                continue;
            }
            let (wlo, whi) = (q0 + spec.window.0 * span, q0 + spec.window.1 * span);
            let best = candidates
                .iter()
                .filter(|(i, p)| {
                    let q = curve.capacity_grid[i + trim];
                    *p > threshold && *p > 0.0 && q >= wlo && q <= whi
                })
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            if let Some(&(i, _)) = best {
                let off = parabolic_offset(signed[i - 1], signed[i], signed[i + 1]);
                out[slot] = Some(curve.capacity_grid[i + trim] + off * h);
            }
        }
    }
    out
}

/// Re-centre each landmark window on the extremum found in the pointwise
/// median of the given curves (mapped to a common fractional capacity axis).
/// Windows whose landmark is missing on the median curve are left unchanged.
pub fn calibrate_landmarks(curves: &[DvaCurve], base: &LandmarkConfig) -> LandmarkConfig {
    const M: usize = 401;
    if curves.is_empty() {
        return base.clone();
    }
    let mut median = vec![0.0; M];
    let mut column = Vec::with_capacity(curves.len());
    for (k, m) in median.iter_mut().enumerate() {
        let f = k as f64 / (M - 1) as f64;
        column.clear();
        for c in curves {
            let n = c.dvdq.len();
            let pos = f * (n - 1) as f64;
            let i = (pos.floor() as usize).min(n - 2);
            let t = pos - i as f64;
            column.push(c.dvdq[i] * (1.0 - t) + c.dvdq[i + 1] * t);
        }
        *m = crate::stats::median(&column);
    }
    let unit = DvaCurve {
        capacity_grid: (0..M).map(|k| k as f64 / (M - 1) as f64).collect(),
        dvdq: median,
    };
    let found = find_dva_peaks(&unit, base);
    let mut out = base.clone();
    for (spec, f) in out.landmarks.iter_mut().zip(found) {
        if let Some(f) = f {
            let half = 0.5 * (spec.window.1 - spec.window.0);
            spec.window = ((f - half).max(0.0), (f + half).min(1.0));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveConfig {
    pub grid_points: usize,
    pub smoothing: f64,
    pub dva_points: usize,
    pub dva_smoothing: f64,
    /// RPTs after this week are not turned into curves.
    pub max_curve_week: f64,
    pub landmarks: LandmarkConfig,
    /// Re-centre landmark windows on the week-0 population median curve.
    pub calibrate_landmarks: bool,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self {
            grid_points: crate::types::DEFAULT_GRID_POINTS,
            smoothing: DEFAULT_SMOOTHING,
            dva_points: DEFAULT_DVA_POINTS,
            dva_smoothing: DEFAULT_SMOOTHING,
            max_curve_week: 8.0,
            landmarks: LandmarkConfig::default(),
            calibrate_landmarks: true,
        }
    }
}

impl CurveConfig {
    pub fn grid(&self) -> Result<VoltageGrid> {
        VoltageGrid::with_points(self.grid_points)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        if !(self.smoothing >= 0.0) || !(self.dva_smoothing >= 0.0) {
            return Err(Error::invalid("smoothing", "must be non-negative"));
        }
        if self.dva_points < 5 {
            return Err(Error::invalid("dva_points", "need at least 5"));
        }
        self.landmarks.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekCurves {
    pub week: f64,
    pub qv: QvCurve,
    pub ica: IcaCurve,
    pub dva: DvaCurve,
    pub landmarks: Landmarks,
    pub cv_hold_seconds: f64,
    pub full_capacity_mah: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCurves {
    pub key: CellKey,
    pub condition: CyclingCondition,
    pub lifetime_weeks: Option<f64>,
    pub weeks: Vec<WeekCurves>,
    /// Full capacity of every RPT (including weeks beyond `max_curve_week`).
    pub capacity_fade: Vec<(f64, f64)>,
}

impl CellCurves {
    pub fn week(&self, w: f64) -> Option<&WeekCurves> {
        self.weeks.iter().find(|c| (c.week - w).abs() < 1e-9)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSet {
    pub config: CurveConfig,
    pub landmarks: LandmarkConfig,
    pub cells: Vec<CellCurves>,
    pub warnings: Vec<String>,
}

fn week_curves(
    cell: &CellRecord,
    config: &CurveConfig,
    grid: VoltageGrid,
) -> Result<Vec<WeekCurves>> {
    cell.rpts
        .iter()
        .filter(|r| r.week_index <= config.max_curve_week + 1e-9)
        .map(|r| {
            let qv_samples = r.discharge_qv();
            let ctx = |e: Error| Error::Precondition(format!("{} week {}: {e}", cell.key, r.week_index));
            let qv = resample_qv(&qv_samples, grid, config.smoothing).map_err(ctx)?;
            let ica = compute_dqdv(&qv);
            let dva = compute_dvdq(&qv_samples, config.dva_smoothing, config.dva_points).map_err(ctx)?;
            Ok(WeekCurves {
                week: r.week_index,
                qv,
                ica,
                dva,
                landmarks: [None; 4],
                cv_hold_seconds: r.cv_hold_seconds,
                full_capacity_mah: r.full_capacity_mah,
            })
        })
        .collect()
}

/// Build curves for every cell in parallel. Cells whose curves cannot be
/// fitted are dropped with a warning.
pub fn build_curve_set(cells: &[CellRecord], config: &CurveConfig) -> Result<CurveSet> {
    config.validate()?;
    let grid = config.grid()?;
    let results: Vec<(CellKey, Result<Vec<WeekCurves>>)> = cells
        .par_iter()
        .map(|c| (c.key, week_curves(c, config, grid)))
        .collect();
    let mut warnings = Vec::new();
    let mut out = Vec::new();
    for (cell, (key, res)) in cells.iter().zip(results) {
        match res {
            Ok(weeks) => out.push(CellCurves {
                key,
                condition: cell.condition,
                lifetime_weeks: cell.lifetime_weeks,
                weeks,
                capacity_fade: cell.rpts.iter().map(|r| (r.week_index, r.full_capacity_mah)).collect(),
            }),
            Err(e) => warnings.push(format!("{key}: curves skipped: {e}")),
        }
    }
    let landmarks = if config.calibrate_landmarks {
        let week0: Vec<DvaCurve> = out
            .iter()
            .filter_map(|c| c.week(0.0).map(|w| w.dva.clone()))
            .collect();
        calibrate_landmarks(&week0, &config.landmarks)
    } else {
        config.landmarks.clone()
    };
    out.par_iter_mut().for_each(|c| {
        for w in &mut c.weeks {
            w.landmarks = find_dva_peaks(&w.dva, &landmarks);
        }
    });
    Ok(CurveSet {
        config: config.clone(),
        landmarks,
        cells: out,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_samples(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let v = 4.2 - 1.2 * i as f64 / (n - 1) as f64;
                (v, a + b * v)
            })
            .collect()
    }

    #[test]
    fn too_few_points_or_span() {
        let grid = VoltageGrid::default();
        assert!(resample_qv(&line_samples(10, 0.0, 1.0), grid, 0.0).is_err());
        let narrow: Vec<_> = (0..100).map(|i| (3.5 + i as f64 * 0.001, i as f64)).collect();
        assert!(resample_qv(&narrow, grid, 0.0).is_err());
    }

    #[test]
    fn line_has_constant_derivative() {
        let grid = VoltageGrid::default();
        let c = resample_qv(&line_samples(200, 1000.0, -200.0), grid, DEFAULT_SMOOTHING).unwrap();
        let ica = compute_dqdv(&c);
        for d in &ica.dqdv {
            assert!((d + 200.0).abs() < 1e-6, "{d}");
        }
    }

    #[test]
    fn exact_grid_input_interpolates() {
        let grid = VoltageGrid::with_points(121).unwrap();
        let s: Vec<_> = grid.values().into_iter().map(|v| (v, (3.0 * v).sin() * 50.0)).collect();
        let c = resample_qv(&s, grid, 0.0).unwrap();
        for ((_, q), r) in s.iter().zip(&c.capacity) {
            assert!((q - r).abs() < 1e-9);
        }
    }

    #[test]
    fn quadratic_derivative_at_3_6() {
        let grid = VoltageGrid::default();
        let q = QvCurve::new(grid, grid.values().iter().map(|v| v * v).collect()).unwrap();
        let ica = compute_dqdv(&q);
        let i = grid.index_range(3.6, 3.6).start;
        assert!((ica.dqdv[i] - 2.0 * grid.value(i)).abs() < 1e-9);
        assert!((ica.dqdv[i] - 7.2).abs() < 2.0 * grid.step());
    }

    #[test]
    fn dvdq_is_order_invariant_and_rejects_non_monotone() {
        let s: Vec<_> = (0..100)
            .map(|i| {
                let q = i as f64 * 2.5;
                (4.2 - 0.0048 * q, q)
            })
            .collect();
        let a = compute_dvdq(&s, DEFAULT_SMOOTHING, 100).unwrap();
        let mut r = s.clone();
        r.reverse();
        let b = compute_dvdq(&r, DEFAULT_SMOOTHING, 100).unwrap();
        assert_eq!(a, b);
        for d in &a.dvdq {
            assert!((d - 0.0048).abs() < 1e-9);
        }
        let mut bad = s.clone();
        bad.swap(40, 41);
        assert!(compute_dvdq(&bad, DEFAULT_SMOOTHING, 100).is_err());
    }

    fn bumps(shift: f64) -> DvaCurve {
        let capacity_grid: Vec<f64> = (0..=480).map(|i| i as f64 * 0.5 + shift).collect();
        let dvdq = capacity_grid
            .iter()
            .map(|q| {
                let q = q - shift;
                0.001 + 0.01 * (-(q - 60.0).powi(2) / 200.0).exp() + 0.008 * (-(q - 180.0).powi(2) / 200.0).exp()
            })
            .collect();
        DvaCurve { capacity_grid, dvdq }
    }

    #[test]
    fn two_bumps_found() {
        let mut cfg = LandmarkConfig::default();
        cfg.landmarks[0].window = (0.1, 0.4);
        cfg.landmarks[3].window = (0.6, 0.9);
        let l = find_dva_peaks(&bumps(0.0), &cfg);
        assert!((l[0].unwrap() - 60.0).abs() < 2.0);
        assert!((l[3].unwrap() - 180.0).abs() < 2.0);
        assert!(l[1].is_some()); // valley between the bumps
        let s = find_dva_peaks(&bumps(5.0), &cfg);
        for k in [0, 1, 3] {
            assert!((s[k].unwrap() - l[k].unwrap() - 5.0).abs() < 1e-6);
        }
    }

    #[test]
    fn monotone_has_no_landmarks() {
        let c = DvaCurve {
            capacity_grid: (0..100).map(|i| i as f64).collect(),
            dvdq: (0..100).map(|i| (i as f64).powi(2)).collect(),
        };
        assert_eq!(find_dva_peaks(&c, &LandmarkConfig::default()), [None; 4]);
    }

    #[test]
    fn prominence_of_simple_peaks() {
        let y = [0.0, 2.0, 1.0, 3.0, 0.5];
        let p = peak_prominences(&y);
        assert_eq!(p, vec![(1, 1.0), (3, 2.5)]);
    }

    #[test]
    fn delta_mismatch_and_antisymmetry() {
        let g = VoltageGrid::with_points(11).unwrap();
        let a = QvCurve::new(g, (0..11).map(|i| i as f64).collect()).unwrap();
        let b = QvCurve::new(g, (0..11).map(|i| (i * i) as f64).collect()).unwrap();
        let w = WeekPair::default();
        let d1 = delta_curve(&a, &b, w).unwrap();
        let d2 = delta_curve(&b, &a, w).unwrap();
        assert!(d1.values.iter().zip(&d2.values).all(|(x, y)| x + y == 0.0));
        let c = QvCurve::new(VoltageGrid::with_points(12).unwrap(), vec![0.0; 12]).unwrap();
        assert!(matches!(delta_curve(&a, &c, w), Err(Error::GridMismatch(_))));
    }
}
