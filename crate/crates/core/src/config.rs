//! TOML pipeline configuration. Unknown keys are rejected and every seed must
//! be given explicitly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curves::CurveConfig;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::hbm::{HbmConfig, PriorConfig, SamplerConfig};
use crate::ingest::{DEFAULT_TRAIN_FRACTION_HIGH_DOD, DOD_BOUNDARY};
use crate::regress::{log_space, SolverOptions, TuneConfig};
use crate::selection::{CountPolicy, SelectionConfig};
use crate::synth::SynthSpec;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory holding `manifest.csv` and the per-cell CSV files.
    pub dataset_dir: PathBuf,
    pub work_dir: PathBuf,
    pub report_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSection {
    #[serde(default = "default_dod_boundary")]
    pub dod_boundary: f64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction_high_dod: f64,
    pub split_seed: u64,
}

fn default_dod_boundary() -> f64 {
    DOD_BOUNDARY
}

fn default_train_fraction() -> f64 {
    DEFAULT_TRAIN_FRACTION_HIGH_DOD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSection {
    pub seed: u64,
    #[serde(default = "five")]
    pub k: usize,
    #[serde(default = "five")]
    pub repeats: usize,
    #[serde(default = "ten")]
    pub max_features: usize,
    #[serde(default = "five")]
    pub runners_up: usize,
    #[serde(default = "one_std")]
    pub count_policy: CountPolicy,
}

fn five() -> usize {
    5
}

fn ten() -> usize {
    10
}

fn one_std() -> CountPolicy {
    CountPolicy::OneStd
}

impl SelectionSection {
    pub fn to_config(&self) -> SelectionConfig {
        SelectionConfig {
            k: self.k,
            repeats: self.repeats,
            max_features: self.max_features,
            seed: self.seed,
            runners_up: self.runners_up,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressSection {
    pub seed: u64,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "five")]
    pub k: usize,
    #[serde(default = "five")]
    pub repeats: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Feature counts fitted for the degradation-informed model.
    #[serde(default = "default_counts")]
    pub n_features: Vec<usize>,
}

fn default_alphas() -> Vec<f64> {
    TuneConfig::new(0).alphas
}

fn default_lambdas() -> Vec<f64> {
    log_space(1e-4, 1e1, 31)
}

fn default_tol() -> f64 {
    SolverOptions::default().tol
}

fn default_max_iter() -> usize {
    SolverOptions::default().max_iter
}

fn default_counts() -> Vec<usize> {
    vec![2, 3]
}

impl RegressSection {
    pub fn tune(&self) -> TuneConfig {
        TuneConfig { alphas: self.alphas.clone(), lambdas: self.lambdas.clone(), k: self.k, repeats: self.repeats, seed: self.seed }
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions { tol: self.tol, max_iter: self.max_iter }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HbmSection {
    pub seed: u64,
    pub cluster_seed: u64,
    #[serde(default = "default_cluster_feature")]
    pub cluster_feature: String,
    #[serde(default = "four")]
    pub k: usize,
    #[serde(default = "eight")]
    pub min_size: usize,
    #[serde(default)]
    pub max_size: Option<usize>,
    #[serde(default = "ten")]
    pub restarts: usize,
    #[serde(default)]
    pub per_cell_g: bool,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default = "four")]
    pub chains: usize,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default = "five")]
    pub thin: usize,
    #[serde(default = "default_target_accept")]
    pub target_accept: f64,
    #[serde(default = "default_rhat")]
    pub rhat_threshold: f64,
    /// Cell-level feature counts fitted.
    #[serde(default = "default_counts")]
    pub n_features: Vec<usize>,
}

fn default_cluster_feature() -> String {
    "stress.avg".into()
}

fn four() -> usize {
    4
}

fn eight() -> usize {
    8
}

fn default_draws() -> usize {
    20_000
}

fn default_warmup() -> usize {
    10_000
}

fn default_target_accept() -> f64 {
    0.3
}

fn default_rhat() -> f64 {
    1.05
}

impl HbmSection {
    pub fn to_config(&self) -> HbmConfig {
        HbmConfig {
            k: self.k,
            min_size: self.min_size,
            max_size: self.max_size,
            restarts: self.restarts,
            per_cell_g: self.per_cell_g,
            prior: self.prior.clone(),
            sampler: SamplerConfig {
                chains: self.chains,
                draws: self.draws,
                warmup: self.warmup,
                thin: self.thin,
                seed: self.seed,
                target_accept: self.target_accept,
                prior_only: false,
                fixed_sigma_j: None,
            },
            rhat_threshold: self.rhat_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// (earlier, later) week pairs.
    pub pairs: Vec<(f64, f64)>,
    /// Weeks treated as absent even if present in the data.
    pub skip_weeks: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        let mut pairs = Vec::new();
        for i in 0..8 {
            for j in i + 1..=8 {
                pairs.push((i as f64, j as f64));
            }
        }
        Self { pairs, skip_weeks: vec![] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub hist_bin_weeks: f64,
    pub residual_bin_weeks: f64,
    /// Extra scatter-plot features beyond the selected ones.
    pub scatter_features: Vec<String>,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self { hist_bin_weeks: 2.0, residual_bin_weeks: 1.0, scatter_features: vec![] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub paths: PathsConfig,
    /// When present, `run` generates this synthetic dataset into
    /// `paths.dataset_dir` before ingesting.
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    pub ingest: IngestSection,
    #[serde(default)]
    pub curves: CurveConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    pub selection: SelectionSection,
    pub regress: RegressSection,
    pub hbm: HbmSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub report: ReportSection,
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::from_toml_str(&s)?;
        // Relative paths are taken from the config file's directory.
        if let Some(base) = path.parent() {
            for p in [&mut c.paths.dataset_dir, &mut c.paths.work_dir, &mut c.paths.report_dir] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(c)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let bad = |m: String| Err(Error::Config(m));
        if !(self.ingest.train_fraction_high_dod > 0.0 && self.ingest.train_fraction_high_dod < 1.0) {
            return bad("ingest.train_fraction_high_dod must lie in (0, 1)".into());
        }
        self.curves.validate()?;
        self.features.validate()?;
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        if self.regress.alphas.is_empty() || self.regress.lambdas.is_empty() {
            return bad("regress grids must be non-empty".into());
        }
        if self.regress.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) || self.regress.lambdas.iter().any(|l| !(*l >= 0.0)) {
            return bad("regress grids need alpha in [0, 1] and lambda ≥ 0".into());
        }
        for n in self.regress.n_features.iter().chain(&self.hbm.n_features) {
            if *n == 0 || *n > self.selection.max_features {
                return bad(format!("feature count {n} outside 1..={}", self.selection.max_features));
            }
        }
        self.hbm.to_config().sampler.validate()?;
        if self.hbm.k == 0 {
            return bad("hbm.k must be positive".into());
        }
        for (i, j) in &self.sweep.pairs {
            if !(i < j) {
                return bad(format!("sweep pair ({i}, {j}) must have earlier < later"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex(&Sha256::digest(json))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A complete config with every seed set, for `synth`-backed runs and tests.
pub fn example_config(dataset_dir: &Path, work_dir: &Path, report_dir: &Path, seed: u64) -> PipelineConfig {
    let text = format!(
        r#"
schema_version = {SCHEMA_VERSION}

[paths]
dataset_dir = {d:?}
work_dir = {w:?}
report_dir = {r:?}

[ingest]
split_seed = {seed}

[selection]
seed = {seed}

[regress]
seed = {seed}

[hbm]
seed = {seed}
cluster_seed = {seed}
"#,
        d = dataset_dir.display().to_string(),
        w = work_dir.display().to_string(),
        r = report_dir.display().to_string(),
    );
    PipelineConfig::from_toml_str(&text).expect("example config is valid")
}
