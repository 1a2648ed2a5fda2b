//! Stage orchestration: each stage writes its outputs plus a `stage.json`
//! manifest keyed by a content hash of its parameters and input files, so an
//! unchanged rerun skips it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, HbmSection, PipelineConfig, RegressSection, ReportSection, SweepSection};
use crate::curves::{build_curve_set, CurveSet};
use crate::error::{Error, Result};
use crate::eval::{comparison_table, write_table_csv, MetricsRow, ModelPredictions};
use crate::features::{
    assemble_matrix_with, column_medians, compute_features, condition_features, default_selection_candidates,
    discharge_model_features, FeatureConfig, FeatureTable, Imputation,
};
use crate::hbm::{constrained_kmeans, fit_hbm, posterior_predict, ClusterAssignment, HbmData, HbmPosterior, PosteriorSummary};
use crate::ingest::{assign_splits, parse_cell_files, read_splits_csv, write_splits_csv, DatasetManifest};
use crate::names::{fmt_week, WeekPair};
use crate::regress::{tuned_elastic_net, DummyModel, ElasticNetFit, TuneResult};
use crate::report;
use crate::selection::{forward_select, pick_feature_count, FeatureCountChoice, SelectionConfig, SelectionTrace};
use crate::synth::{generate_synthetic, MANIFEST_FILE};
use crate::types::{CellKey, CellRecord, SplitAssignment, SplitTag};

pub const VERSION: &str = env!("CYCLELIFE_VERSION");
pub const STAGE_FILE: &str = "stage.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub version: String,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self { config_hash: config_hash.into(), version: VERSION.into() }
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(bytes)))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let s = serde_json::to_string_pretty(value)?;
    std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

fn write_bin<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let bytes = bincode::serialize(value)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bin<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(bincode::deserialize(&bytes)?)
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

// ---------------------------------------------------------------------------
// Stage manifests

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub key: String,
    pub provenance: Provenance,
    pub inputs: Vec<(String, String)>,
    /// Output file names relative to the stage directory, with their hashes.
    pub outputs: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

/// Key for a stage from its name, parameters and input file hashes.
pub fn stage_key<P: Serialize>(stage: &str, params: &P, inputs: &[PathBuf]) -> Result<(String, Vec<(String, String)>)> {
    let mut h = Sha256::new();
    h.update(stage.as_bytes());
    h.update(VERSION.as_bytes());
    h.update(serde_json::to_vec(params)?);
    let mut hashed = Vec::new();
    for p in inputs {
        let d = sha256_file(p)?;
        let name = p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        h.update(name.as_bytes());
        h.update(d.as_bytes());
        hashed.push((name, d));
    }
    Ok((hex(&h.finalize()), hashed))
}

/// True when `dir` holds a manifest with `key` whose outputs are intact.
pub fn stage_is_fresh(dir: &Path, key: &str) -> bool {
    let Ok(m) = read_json::<StageManifest>(&dir.join(STAGE_FILE)) else { return false };
    m.key == key
        && m
            .outputs
            .iter()
            .all(|(name, digest)| sha256_file(&dir.join(name)).is_ok_and(|d| &d == digest))
}

fn finish_stage(
    dir: &Path,
    stage: &str,
    key: String,
    inputs: Vec<(String, String)>,
    outputs: &[&str],
    warnings: Vec<String>,
    prov: &Provenance,
) -> Result<()> {
    let outputs = outputs
        .iter()
        .map(|n| Ok((n.to_string(), sha256_file(&dir.join(n))?)))
        .collect::<Result<Vec<_>>>()?;
    write_json(
        &StageManifest { stage: stage.into(), key, provenance: prov.clone(), inputs, outputs, warnings },
        &dir.join(STAGE_FILE),
    )
}

fn staged<T>(stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| match e {
        Error::Stage { .. } => e,
        other => Error::Stage { stage: stage.into(), source: Box::new(other) },
    })
}

fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    v.sort();
    Ok(v)
}

// ---------------------------------------------------------------------------
// Model records

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub cell: CellKey,
    pub pred_weeks: f64,
    pub true_weeks: f64,
    pub interval: Option<(f64, f64)>,
    pub cluster: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Dummy(DummyModel),
    ElasticNet { fit: ElasticNetFit, tune: TuneResult },
    Hbm { clusters: ClusterAssignment, summary: PosteriorSummary },
}

/// A fitted model with in-sample training and held-out predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub model: String,
    pub n_features: usize,
    pub features: Vec<String>,
    pub kind: ModelKind,
    pub predictions: Vec<PredictionRow>,
    pub warnings: Vec<String>,
    pub provenance: Provenance,
}

impl FitRecord {
    pub fn to_predictions(&self) -> ModelPredictions {
        ModelPredictions {
            model: self.model.clone(),
            n_features: self.n_features,
            rows: self.predictions.iter().map(|r| (r.cell, r.pred_weeks, r.true_weeks)).collect(),
        }
    }
}

/// Canonical table order; unknown names sort after, alphabetically.
pub const MODEL_ORDER: [&str; 7] = ["dummy", "conditions", "discharge", "enet_n2", "enet_n3", "hbm_n2", "hbm_n3"];

fn model_rank(name: &str) -> (usize, String) {
    (MODEL_ORDER.iter().position(|m| *m == name).unwrap_or(MODEL_ORDER.len()), name.to_string())
}

// ---------------------------------------------------------------------------
// Stage bodies (pure functions over in-memory data)

#[derive(Debug, Clone, PartialEq)]
pub struct IngestResult {
    pub cells: Vec<CellRecord>,
    pub splits: SplitAssignment,
    pub warnings: Vec<String>,
}

pub fn ingest_dataset(dir: &Path, dod_boundary: f64, train_fraction: f64, seed: u64) -> Result<IngestResult> {
    let manifest = DatasetManifest::read_csv(&dir.join(MANIFEST_FILE))?;
    let out = parse_cell_files(&manifest, dir)?;
    let split = assign_splits(&out.cells, dod_boundary, train_fraction, seed)?;
    let mut warnings = out.warnings;
    warnings.extend(split.warnings);
    Ok(IngestResult { cells: out.cells, splits: split.assignment, warnings })
}

/// Selection output written to `trace.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionFile {
    pub trace: SelectionTrace,
    pub candidates: Vec<String>,
    pub excluded: Vec<String>,
    pub count: FeatureCountChoice,
    pub provenance: Provenance,
}

fn train_table(table: &FeatureTable, splits: &SplitAssignment) -> FeatureTable {
    table.split_rows(splits, SplitTag::Train)
}

/// Forward selection on training cells. Candidates missing on any training
/// cell with a lifetime are excluded.
pub fn select_stage(
    table: &FeatureTable,
    splits: &SplitAssignment,
    weeks: WeekPair,
    config: &SelectionConfig,
    policy: crate::selection::CountPolicy,
    imputation: Imputation,
    prov: &Provenance,
) -> Result<SelectionFile> {
    let train = train_table(table, splits);
    let mut candidates = Vec::new();
    let mut excluded = Vec::new();
    for name in default_selection_candidates(table, weeks) {
        let col = train.column(&name).expect("candidate comes from the table");
        let complete = col.values.iter().zip(&train.lifetimes).all(|(v, l)| l.is_none() || v.is_some());
        if complete || imputation == Imputation::ImputeMedian {
            candidates.push(name);
        } else {
            excluded.push(name);
        }
    }
    let medians = column_medians(&train, &candidates)?;
    let (m, y, _) = assemble_matrix_with(&train, &candidates, imputation, &medians)?;
    let trace = forward_select(&m, &y, config)?;
    let count = pick_feature_count(&trace, policy)?;
    Ok(SelectionFile { trace, candidates, excluded, count, provenance: prov.clone() })
}

/// Tuned elastic net on training rows; predictions for every cell that has
/// the features and a lifetime.
pub fn fit_enet_record(
    model: &str,
    table: &FeatureTable,
    splits: &SplitAssignment,
    names: &[String],
    regress: &RegressSection,
    imputation: Imputation,
    prov: &Provenance,
) -> Result<FitRecord> {
    let train = train_table(table, splits);
    let medians = column_medians(&train, names)?;
    let (m, y, report) = assemble_matrix_with(&train, names, imputation, &medians)?;
    let (fit, tune) = tuned_elastic_net(&m, &y, &regress.tune(), regress.solver())?;
    let (all, truth, all_report) = assemble_matrix_with(table, names, imputation, &medians)?;
    let preds = fit.predict(&all)?;
    let mut warnings = fit.warnings.clone();
    if !report.dropped.is_empty() || !all_report.dropped.is_empty() {
        warnings.push(format!("{} cells lack a feature and have no prediction", all_report.dropped.len()));
    }
    Ok(FitRecord {
        model: model.into(),
        n_features: names.len(),
        features: names.to_vec(),
        kind: ModelKind::ElasticNet { fit, tune },
        predictions: all
            .cell_keys
            .iter()
            .zip(preds)
            .zip(&truth)
            .map(|((k, p), t)| PredictionRow { cell: *k, pred_weeks: p, true_weeks: t.exp(), interval: None, cluster: None })
            .collect(),
        warnings,
        provenance: prov.clone(),
    })
}

pub fn fit_dummy_record(table: &FeatureTable, splits: &SplitAssignment, prov: &Provenance) -> Result<FitRecord> {
    let train = train_table(table, splits);
    let lives: Vec<f64> = train.lifetimes.iter().flatten().copied().collect();
    let d = DummyModel::fit(&lives)?;
    let predictions = table
        .cell_keys
        .iter()
        .zip(&table.lifetimes)
        .filter_map(|(k, l)| {
            Some(PredictionRow { cell: *k, pred_weeks: d.mean_weeks, true_weeks: (*l)?, interval: None, cluster: None })
        })
        .collect();
    Ok(FitRecord {
        model: "dummy".into(),
        n_features: 0,
        features: vec![],
        kind: ModelKind::Dummy(d),
        predictions,
        warnings: vec![],
        provenance: prov.clone(),
    })
}

/// Cell-level HBM features: the first `n` selected features that are not
/// cycling-condition columns.
pub fn hbm_cell_features(trace: &SelectionTrace, n: usize) -> Vec<String> {
    trace
        .steps
        .iter()
        .map(|s| s.feature.clone())
        .filter(|f| !f.starts_with("stress.") && !f.starts_with("cond."))
        .take(n)
        .collect()
}

/// Constrained k-means on `feature` over every cell with a lifetime.
pub fn cluster_cells(table: &FeatureTable, hbm: &HbmSection) -> Result<(ClusterAssignment, BTreeMap<CellKey, (usize, f64)>)> {
    let col = table.column(&hbm.cluster_feature).ok_or_else(|| Error::MissingFeature(hbm.cluster_feature.clone()))?;
    let rows: Vec<(CellKey, f64)> = table
        .cell_keys
        .iter()
        .enumerate()
        .filter(|(i, _)| table.lifetimes[*i].is_some())
        .filter_map(|(i, k)| Some((*k, col.values[i]?)))
        .collect();
    let values: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let a = constrained_kmeans(&values, hbm.k, hbm.min_size, hbm.max_size, hbm.cluster_seed, hbm.restarts)?;
    let map = rows.iter().zip(&a.labels).map(|((k, v), l)| (*k, (*l, *v))).collect();
    Ok((a, map))
}

#[allow(clippy::too_many_arguments)]
pub fn fit_hbm_record(
    table: &FeatureTable,
    splits: &SplitAssignment,
    names: &[String],
    hbm: &HbmSection,
    clusters: &ClusterAssignment,
    membership: &BTreeMap<CellKey, (usize, f64)>,
    imputation: Imputation,
    prov: &Provenance,
) -> Result<(FitRecord, HbmPosterior)> {
    let train = train_table(table, splits);
    let medians = column_medians(&train, names)?;
    let (m, y, _) = assemble_matrix_with(&train, names, imputation, &medians)?;
    let keep: Vec<usize> = (0..m.n_rows()).filter(|&i| membership.contains_key(&m.cell_keys[i])).collect();
    let data = HbmData {
        feature_names: names.to_vec(),
        cell_keys: keep.iter().map(|&i| m.cell_keys[i]).collect(),
        x: keep.iter().map(|&i| m.values[i].clone()).collect(),
        y: keep.iter().map(|&i| y[i]).collect(),
        stress: keep.iter().map(|&i| membership[&m.cell_keys[i]].1).collect(),
        cluster: keep.iter().map(|&i| membership[&m.cell_keys[i]].0).collect(),
    };
    let post = fit_hbm(&data, clusters, &hbm.to_config())?;
    let (all, truth, _) = assemble_matrix_with(table, names, imputation, &medians)?;
    let predictions: Vec<PredictionRow> = (0..all.n_rows())
        .into_par_iter()
        .filter_map(|i| {
            let key = all.cell_keys[i];
            let &(c, s) = membership.get(&key)?;
            let p = posterior_predict(&post, &all.values[i], s, Some(c), hbm.seed, i as u64);
            Some(p.map(|p| PredictionRow {
                cell: key,
                pred_weeks: p.mean_weeks,
                true_weeks: truth[i].exp(),
                interval: Some((p.lo_weeks, p.hi_weeks)),
                cluster: Some(p.cluster),
            }))
        })
        .collect::<Result<_>>()?;
    let mut warnings = post.summary.warnings.clone();
    let fb = predictions.iter().zip(&all.cell_keys).filter(|(p, k)| p.cluster != membership.get(k).map(|m| m.0)).count();
    if fb > 0 {
        warnings.push(format!("{fb} predictions used the nearest trained cluster"));
    }
    let rec = FitRecord {
        model: format!("hbm_n{}", names.len()),
        n_features: names.len(),
        features: names.to_vec(),
        kind: ModelKind::Hbm { clusters: clusters.clone(), summary: post.summary.clone() },
        predictions,
        warnings,
        provenance: prov.clone(),
    };
    Ok((rec, post))
}

/// Writes the comparison table and every plot file into `out`; returns the
/// table rows.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_stage(
    fits: &[FitRecord],
    splits: &SplitAssignment,
    table: Option<&FeatureTable>,
    selection: Option<&SelectionFile>,
    weeks: WeekPair,
    report_cfg: &ReportSection,
    out: &Path,
    prov: &Provenance,
) -> Result<Vec<MetricsRow>> {
    mkdir(out)?;
    let plots = out.join("plots");
    mkdir(&plots)?;
    let mut fits: Vec<&FitRecord> = fits.iter().collect();
    fits.sort_by_key(|f| model_rank(&f.model));
    let preds: Vec<ModelPredictions> = fits.iter().map(|f| f.to_predictions()).collect();
    let rows = comparison_table(&preds, splits)?;
    write_table_csv(&rows, &out.join("table.csv"))?;
    write_json(&serde_json::json!({ "rows": rows, "training_metrics": "in_sample", "provenance": prov }), &out.join("table.json"))?;
    for f in &fits {
        let p = f.to_predictions();
        report::write_predicted_vs_true(
            &p.rows,
            splits,
            &plots.join(format!("pred_vs_true_{}.csv", f.model)),
            &plots.join(format!("residual_hist_{}.csv", f.model)),
            report_cfg.residual_bin_weeks,
        )?;
        if matches!(f.kind, ModelKind::Hbm { .. }) {
            let rows: Vec<report::IntervalRow> = f
                .predictions
                .iter()
                .filter_map(|r| {
                    let (lo, hi) = r.interval?;
                    Some(report::IntervalRow { cell: r.cell, cluster: r.cluster?, pred_mean: r.pred_weeks, pred_lo: lo, pred_hi: hi, truth: r.true_weeks })
                })
                .collect();
            report::write_intervals(&rows, &plots.join(format!("intervals_{}.csv", f.model)))?;
        }
    }
    if let Some(t) = table {
        report::write_lifetime_histogram(t, splits, report_cfg.hist_bin_weeks, &plots.join("lifetime_hist.csv"))?;
        let mut scatter: Vec<String> = selection.map(|s| s.trace.features(3)).unwrap_or_default();
        scatter.push(format!("log_abs.var.d_q.{weeks}"));
        scatter.extend(report_cfg.scatter_features.iter().cloned());
        let mut seen = std::collections::BTreeSet::new();
        for f in scatter {
            if t.column(&f).is_some() && seen.insert(f.clone()) {
                let safe: String = f.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect();
                report::write_feature_scatter(t, splits, &f, &plots.join(format!("scatter_{safe}.csv")))?;
            }
        }
    }
    if let Some(s) = selection {
        report::write_selection_trace(&s.trace, &plots.join("selection_trace.csv"))?;
    }
    write_checksums(out, prov)?;
    Ok(rows)
}

/// `checksums.txt` (sha256 and relative path of every report file) and
/// `provenance.json`.
fn write_checksums(out: &Path, prov: &Provenance) -> Result<()> {
    let mut files = Vec::new();
    for sub in [out.to_path_buf(), out.join("plots")] {
        for p in sorted_files(&sub)? {
            let rel = p.strip_prefix(out).expect("under report dir").to_string_lossy().replace('\\', "/");
            if rel != "checksums.txt" && rel != "provenance.json" {
                files.push((rel, sha256_file(&p)?));
            }
        }
    }
    files.sort();
    let body: String = files.iter().map(|(n, d)| format!("{d}  {n}\n")).collect();
    std::fs::write(out.join("checksums.txt"), body).map_err(|e| Error::io(out, e))?;
    write_json(&serde_json::json!({ "provenance": prov, "files": files }), &out.join("provenance.json"))
}

// ---------------------------------------------------------------------------
// Week-pair sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub earlier: f64,
    pub later: f64,
    pub status: String,
    pub features: Vec<String>,
    pub test_high_dod: Option<crate::eval::SplitMetrics>,
    pub test_low_dod: Option<crate::eval::SplitMetrics>,
}

/// Re-binds the week tokens of a feature name from `from` to `to`.
pub fn rebind_weeks(name: &str, from: WeekPair, to: WeekPair) -> String {
    let pair = from.to_string();
    let later = format!("w{}", fmt_week(from.later));
    let earlier = format!("w{}", fmt_week(from.earlier));
    name.split('.')
        .map(|t| {
            if t == pair {
                to.to_string()
            } else if t == later {
                format!("w{}", fmt_week(to.later))
            } else if t == earlier {
                format!("w{}", fmt_week(to.earlier))
            } else {
                t.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(".")
}

/// For each (earlier, later) pair: recompute features with the headline
/// windows, rebind the headline 2-feature set to the pair and refit the
/// tuned elastic net on training cells.
#[allow(clippy::too_many_arguments)]
pub fn week_pair_sweep(
    curves: &CurveSet,
    splits: &SplitAssignment,
    base: &FeatureConfig,
    headline_windows: &[crate::names::VoltageWindow],
    headline_features: &[String],
    regress: &RegressSection,
    sweep: &SweepSection,
    prov: &Provenance,
) -> Result<Vec<SweepRow>> {
    let has_week = |w: f64| {
        !sweep.skip_weeks.iter().any(|s| (s - w).abs() < 1e-9) && curves.cells.iter().any(|c| c.week(w).is_some())
    };
    sweep
        .pairs
        .par_iter()
        .map(|&(i, j)| {
            let to = WeekPair::new(j, i);
            let mut row = SweepRow { earlier: i, later: j, status: "ok".into(), features: vec![], test_high_dod: None, test_low_dod: None };
            let missing: Vec<String> = [i, j].iter().filter(|w| !has_week(**w)).map(|w| fmt_week(*w)).collect();
            if !missing.is_empty() {
                row.status = format!("skipped: week {} absent", missing.join(", week "));
                return Ok(row);
            }
            let mut cfg = base.clone();
            cfg.weeks = to;
            cfg.search_window = false;
            for w in headline_windows {
                if !cfg.windows.iter().any(|x| (x.lo - w.lo).abs() < 1e-9 && (x.hi - w.hi).abs() < 1e-9) {
                    cfg.windows.push(*w);
                }
            }
            let feats = compute_features(curves, &cfg, Some(splits))?;
            let names: Vec<String> = headline_features.iter().map(|n| rebind_weeks(n, base.weeks, to)).collect();
            row.features = names.clone();
            match fit_enet_record("sweep", &feats.table, splits, &names, regress, base.imputation, prov) {
                Ok(rec) => {
                    let p = rec.to_predictions();
                    row.test_high_dod = crate::eval::score_split(&p, splits, SplitTag::TestHighDod)?;
                    row.test_low_dod = crate::eval::score_split(&p, splits, SplitTag::TestLowDod)?;
                }
                Err(e) => row.status = format!("failed: {e}"),
            }
            Ok(row)
        })
        .collect()
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut s = String::from("earlier,later,status,test_high_dod_mape_pct,test_high_dod_rmse_weeks,test_low_dod_mape_pct,test_low_dod_rmse_weeks\n");
    let f = |m: Option<crate::eval::SplitMetrics>, g: fn(crate::eval::SplitMetrics) -> f64| m.map_or("absent".to_string(), |m| format!("{:.6}", g(m)));
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt_week(r.earlier),
            fmt_week(r.later),
            r.status.replace(',', ";"),
            f(r.test_high_dod, |m| m.mape),
            f(r.test_high_dod, |m| m.rmse),
            f(r.test_low_dod, |m| m.mape),
            f(r.test_low_dod, |m| m.rmse),
        ));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Full run

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
    pub table: Vec<MetricsRow>,
    pub report_dir: PathBuf,
}

pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn stage(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    Synth,
    Ingest,
    Curves,
    Features,
    Select,
    Train,
    Hbm,
    Evaluate,
}

/// Runs every stage, skipping those whose manifest key matches.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunSummary> {
    run_until(config, StageName::Evaluate)
}

/// Runs stages in order up to and including `last`; earlier stages resume
/// from their manifests.
pub fn run_until(config: &PipelineConfig, last: StageName) -> Result<RunSummary> {
    config.validate()?;
    let prov = Provenance::new(config.hash());
    let ws = Workspace { root: config.paths.work_dir.clone() };
    mkdir(&ws.root)?;
    let mut executed = Vec::new();
    let mut skipped = Vec::new();
    let mut note = |name: &str, ran: bool| {
        if ran {
            executed.push(name.to_string());
        } else {
            skipped.push(name.to_string());
        }
    };

    // synth (optional)
    if let Some(spec) = &config.synth {
        let dir = ws.stage("synth");
        mkdir(&dir)?;
        let (key, inputs) = stage_key("synth", spec, &[])?;
        let data_dir = &config.paths.dataset_dir;
        let fresh = stage_is_fresh(&dir, &key) && data_dir.join(MANIFEST_FILE).exists();
        if !fresh {
            staged("synth", || {
                generate_synthetic(spec, data_dir)?;
                let listing: Vec<(String, String)> = sorted_files(data_dir)?
                    .iter()
                    .map(|p| Ok((p.file_name().unwrap().to_string_lossy().into_owned(), sha256_file(p)?)))
                    .collect::<Result<_>>()?;
                write_json(&listing, &dir.join("dataset_listing.json"))?;
                finish_stage(&dir, "synth", key, inputs, &["dataset_listing.json"], vec![], &prov)
            })?;
        }
        note("synth", !fresh);
    }

    if last == StageName::Synth {
        return Ok(RunSummary { executed, skipped, table: vec![], report_dir: config.paths.report_dir.clone() });
    }

    // ingest
    let ingest_dir = ws.stage("ingest");
    mkdir(&ingest_dir)?;
    let data_files = staged("ingest", || sorted_files(&config.paths.dataset_dir))?;
    let (key, inputs) = staged("ingest", || stage_key("ingest", &config.ingest, &data_files))?;
    let fresh = stage_is_fresh(&ingest_dir, &key);
    if !fresh {
        staged("ingest", || {
            let r = ingest_dataset(
                &config.paths.dataset_dir,
                config.ingest.dod_boundary,
                config.ingest.train_fraction_high_dod,
                config.ingest.split_seed,
            )?;
            write_bin(&r.cells, &ingest_dir.join("dataset.bin"))?;
            write_splits_csv(&r.splits, &ingest_dir.join("splits.csv"))?;
            finish_stage(&ingest_dir, "ingest", key, inputs, &["dataset.bin", "splits.csv"], r.warnings, &prov)
        })?;
    }
    note("ingest", !fresh);
    let dataset_bin = ingest_dir.join("dataset.bin");
    let splits_csv = ingest_dir.join("splits.csv");

    if last <= StageName::Ingest {
        return Ok(RunSummary { executed, skipped, table: vec![], report_dir: config.paths.report_dir.clone() });
    }

    // curves
    let curves_dir = ws.stage("curves");
    mkdir(&curves_dir)?;
    let (key, inputs) = staged("curves", || stage_key("curves", &config.curves, std::slice::from_ref(&dataset_bin)))?;
    let fresh = stage_is_fresh(&curves_dir, &key);
    if !fresh {
        staged("curves", || {
            let cells: Vec<CellRecord> = read_bin(&dataset_bin)?;
            let set = build_curve_set(&cells, &config.curves)?;
            let w = set.warnings.clone();
            write_bin(&set, &curves_dir.join("curves.bin"))?;
            finish_stage(&curves_dir, "curves", key, inputs, &["curves.bin"], w, &prov)
        })?;
    }
    note("curves", !fresh);
    let curves_bin = curves_dir.join("curves.bin");

    if last <= StageName::Curves {
        return Ok(RunSummary { executed, skipped, table: vec![], report_dir: config.paths.report_dir.clone() });
    }

    // features
    let feat_dir = ws.stage("features");
    mkdir(&feat_dir)?;
    let (key, inputs) = staged("features", || stage_key("features", &config.features, &[curves_bin.clone(), splits_csv.clone()]))?;
    let fresh = stage_is_fresh(&feat_dir, &key);
    if !fresh {
        staged("features", || {
            let set: CurveSet = read_bin(&curves_bin)?;
            let splits = read_splits_csv(&splits_csv)?;
            let out = compute_features(&set, &config.features, Some(&splits))?;
            out.table.write_csv(&feat_dir.join("features.csv"))?;
            write_json(&out.search, &feat_dir.join("window_search.json"))?;
            let mut outputs = vec!["features.csv", "window_search.json"];
            if let Some(s) = &out.search {
                crate::features::window::write_audit_csv(s, &feat_dir.join("windows_audit.csv"))?;
                outputs.push("windows_audit.csv");
            }
            finish_stage(&feat_dir, "features", key, inputs, &outputs, out.warnings, &prov)
        })?;
    }
    note("features", !fresh);
    let features_csv = feat_dir.join("features.csv");

    if last <= StageName::Features {
        return Ok(RunSummary { executed, skipped, table: vec![], report_dir: config.paths.report_dir.clone() });
    }

    // select
    let sel_dir = ws.stage("select");
    mkdir(&sel_dir)?;
    let sel_params = (&config.selection, config.features.weeks, config.features.imputation);
    let (key, inputs) = staged("select", || stage_key("select", &sel_params, &[features_csv.clone(), splits_csv.clone()]))?;
    let fresh = stage_is_fresh(&sel_dir, &key);
    if !fresh {
        staged("select", || {
            let table = FeatureTable::read_csv(&features_csv)?;
            let splits = read_splits_csv(&splits_csv)?;
            let file = select_stage(
                &table,
                &splits,
                config.features.weeks,
                &config.selection.to_config(),
                config.selection.count_policy,
                config.features.imputation,
                &prov,
            )?;
            write_json(&file, &sel_dir.join("trace.json"))?;
            finish_stage(&sel_dir, "select", key, inputs, &["trace.json"], vec![], &prov)
        })?;
    }
    note("select", !fresh);
    let trace_json = sel_dir.join("trace.json");

    if last <= StageName::Select {
        return Ok(RunSummary { executed, skipped, table: vec![], report_dir: config.paths.report_dir.clone() });
    }

    // train
    let train_dir = ws.stage("train");
    mkdir(&train_dir)?;
    let train_params = (&config.regress, config.features.weeks, config.features.imputation);
    let (key, inputs) = staged("train", || {
        stage_key("train", &train_params, &[features_csv.clone(), splits_csv.clone(), trace_json.clone()])
    })?;
    let fresh = stage_is_fresh(&train_dir, &key);
    if !fresh {
        staged("train", || {
            let table = FeatureTable::read_csv(&features_csv)?;
            let splits = read_splits_csv(&splits_csv)?;
            let sel: SelectionFile = read_json(&trace_json)?;
            let fits = train_models(&table, &splits, &sel.trace, config, &prov)?;
            let mut outputs = Vec::new();
            let mut warnings = Vec::new();
            for f in &fits {
                let name = format!("{}.json", f.model);
                write_json(f, &train_dir.join(&name))?;
                warnings.extend(f.warnings.iter().map(|w| format!("{}: {w}", f.model)));
                outputs.push(name);
            }
            let refs: Vec<&str> = outputs.iter().map(|s| s.as_str()).collect();
            finish_stage(&train_dir, "train", key, inputs, &refs, warnings, &prov)
        })?;
    }
    note("train", !fresh);

    if last <= StageName::Train {
        return Ok(RunSummary { executed, skipped, table: vec![], report_dir: config.paths.report_dir.clone() });
    }

    // hbm
    let hbm_dir = ws.stage("hbm");
    mkdir(&hbm_dir)?;
    let hbm_params = (&config.hbm, config.features.imputation);
    let (key, inputs) = staged("hbm", || {
        stage_key("hbm", &hbm_params, &[features_csv.clone(), splits_csv.clone(), trace_json.clone()])
    })?;
    let fresh = stage_is_fresh(&hbm_dir, &key);
    if !fresh {
        staged("hbm", || {
            let table = FeatureTable::read_csv(&features_csv)?;
            let splits = read_splits_csv(&splits_csv)?;
            let sel: SelectionFile = read_json(&trace_json)?;
            let (clusters, membership) = cluster_cells(&table, &config.hbm)?;
            write_json(&clusters, &hbm_dir.join("clusters.json"))?;
            let mut outputs = vec!["clusters.json".to_string()];
            let mut warnings = Vec::new();
            for &n in &config.hbm.n_features {
                let names = hbm_cell_features(&sel.trace, n);
                if names.len() < n {
                    warnings.push(format!("only {} cell-level features selected, wanted {n}", names.len()));
                    continue;
                }
                let (rec, post) =
                    fit_hbm_record(&table, &splits, &names, &config.hbm, &clusters, &membership, config.features.imputation, &prov)?;
                let fit_name = format!("{}.json", rec.model);
                write_json(&rec, &hbm_dir.join(&fit_name))?;
                let post_name = format!("posterior_n{n}.bin");
                std::fs::write(hbm_dir.join(&post_name), post.to_bytes()?).map_err(|e| Error::io(&hbm_dir, e))?;
                let sum_name = format!("posterior_n{n}.json");
                write_json(&serde_json::json!({ "summary": post.summary, "provenance": prov }), &hbm_dir.join(&sum_name))?;
                warnings.extend(rec.warnings.iter().map(|w| format!("{}: {w}", rec.model)));
                outputs.extend([fit_name, post_name, sum_name]);
            }
            let refs: Vec<&str> = outputs.iter().map(|s| s.as_str()).collect();
            finish_stage(&hbm_dir, "hbm", key, inputs, &refs, warnings, &prov)
        })?;
    }
    note("hbm", !fresh);

    if last <= StageName::Hbm {
        return Ok(RunSummary { executed, skipped, table: vec![], report_dir: config.paths.report_dir.clone() });
    }

    // evaluate (always rewritten; cheap)
    let table_rows = staged("evaluate", || {
        let table = FeatureTable::read_csv(&features_csv)?;
        let splits = read_splits_csv(&splits_csv)?;
        let sel: SelectionFile = read_json(&trace_json)?;
        let fits = load_fits(&[train_dir.clone(), hbm_dir.clone()])?;
        evaluate_stage(&fits, &splits, Some(&table), Some(&sel), config.features.weeks, &config.report, &config.paths.report_dir, &prov)
    })?;
    note("evaluate", true);
    for (stage, w) in collect_warnings(&ws)? {
        log::warn!("{stage}: {w}");
    }
    Ok(RunSummary { executed, skipped, table: table_rows, report_dir: config.paths.report_dir.clone() })
}

/// Degradation-informed, conditions, discharge and dummy fits.
pub fn train_models(
    table: &FeatureTable,
    splits: &SplitAssignment,
    trace: &SelectionTrace,
    config: &PipelineConfig,
    prov: &Provenance,
) -> Result<Vec<FitRecord>> {
    let policy = config.features.imputation;
    let mut jobs: Vec<(String, Vec<String>)> = vec![
        ("conditions".into(), condition_features()),
        ("discharge".into(), discharge_model_features(config.features.weeks)),
    ];
    for &n in &config.regress.n_features {
        if trace.steps.len() >= n {
            jobs.push((format!("enet_n{n}"), trace.features(n)));
        }
    }
    let mut fits = vec![fit_dummy_record(table, splits, prov)?];
    let rest: Vec<FitRecord> = jobs
        .par_iter()
        .map(|(name, feats)| fit_enet_record(name, table, splits, feats, &config.regress, policy, prov))
        .collect::<Result<_>>()?;
    fits.extend(rest);
    Ok(fits)
}

/// Every `*.json` fit record in the given directories, sorted by model.
pub fn load_fits(dirs: &[PathBuf]) -> Result<Vec<FitRecord>> {
    let mut out = Vec::new();
    for d in dirs {
        if !d.exists() {
            continue;
        }
        for p in sorted_files(d)? {
            if p.extension().is_some_and(|e| e == "json") {
                if let Ok(rec) = read_json::<FitRecord>(&p) {
                    out.push(rec);
                }
            }
        }
    }
    out.sort_by_key(|f| model_rank(&f.model));
    Ok(out)
}

fn collect_warnings(ws: &Workspace) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for s in ["synth", "ingest", "curves", "features", "select", "train", "hbm"] {
        if let Ok(m) = read_json::<StageManifest>(&ws.stage(s).join(STAGE_FILE)) {
            out.extend(m.warnings.into_iter().map(|w| (s.to_string(), w)));
        }
    }
    Ok(out)
}

/// Sweep over the config's week pairs using the cached curves, features and
/// selection of a completed run.
pub fn run_sweep(config: &PipelineConfig, out: &Path) -> Result<Vec<SweepRow>> {
    let prov = Provenance::new(config.hash());
    let ws = Workspace { root: config.paths.work_dir.clone() };
    let set: CurveSet = read_bin(&ws.stage("curves").join("curves.bin"))?;
    let splits = read_splits_csv(&ws.stage("ingest").join("splits.csv"))?;
    let sel: SelectionFile = read_json(&ws.stage("select").join("trace.json"))?;
    let search: Option<crate::features::window::WindowSearchResult> =
        read_json(&ws.stage("features").join("window_search.json"))?;
    let windows: Vec<_> = search.map(|s| vec![s.best_window]).unwrap_or_default();
    let rows = week_pair_sweep(&set, &splits, &config.features, &windows, &sel.trace.features(2), &config.regress, &config.sweep, &prov)?;
    write_sweep_csv(&rows, out)?;
    Ok(rows)
}
