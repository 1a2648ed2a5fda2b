//! Hierarchical Bayesian regression over stress clusters.
//!
//! Cells are grouped by constrained k-means on a scalar stress feature. Each
//! cluster j has a coefficient vector θ_j = Γᵀ g_j where g_j = [1, centroid_j]
//! (or the cell's own stress with `per_cell_g`), and a noise scale σ_j:
//!
//! ```text
//! vec(Γ) ~ N(γ̄, τ² I)      σ ~ HalfCauchy(s)      σ_j ~ HalfCauchy(σ)
//! y_i ~ N(g_iᵀ Γ x̃_i, σ_j(i)²),   x̃ = [1, standardised features]
//! ```
//!
//! Sampling alternates an exact Gaussian draw of vec(Γ) with adaptive
//! random-walk Metropolis on log σ_j and log σ.

pub mod diagnostics;
pub mod kmeans;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::OlsModel;
use crate::error::{Error, Result};
use crate::types::CellKey;

pub use kmeans::{assign_bounded, constrained_kmeans, elbow_scan, ClusterAssignment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaBar {
    /// Pooled OLS coefficients in the intercept row of Γ, zeros elsewhere.
    PooledOls,
    Zero,
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub gamma_sd: f64,
    pub sigma_scale: f64,
    pub gamma_bar: GammaBar,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { gamma_sd: 10.0, sigma_scale: 1.0, gamma_bar: GammaBar::PooledOls }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub chains: usize,
    /// Post-warmup iterations per chain, before thinning.
    pub draws: usize,
    pub warmup: usize,
    pub thin: usize,
    pub seed: u64,
    pub target_accept: f64,
    /// Draw from the prior only; the data are ignored.
    pub prior_only: bool,
    /// Hold every σ_j at this value instead of sampling it.
    pub fixed_sigma_j: Option<f64>,
}

impl SamplerConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            chains: 4,
            draws: 20_000,
            warmup: 10_000,
            thin: 5,
            seed,
            target_accept: 0.3,
            prior_only: false,
            fixed_sigma_j: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.draws == 0 || self.thin == 0 || self.draws < self.thin {
            return Err(Error::invalid("sampler", "chains, draws and thin must be positive with draws ≥ thin"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::invalid("sampler.target_accept", "must lie in (0, 1)"));
        }
        if let Some(s) = self.fixed_sigma_j {
            if !(s > 0.0) {
                return Err(Error::invalid("sampler.fixed_sigma_j", "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HbmConfig {
    pub k: usize,
    pub min_size: usize,
    pub max_size: Option<usize>,
    pub restarts: usize,
    pub per_cell_g: bool,
    pub prior: PriorConfig,
    pub sampler: SamplerConfig,
    /// R̂ above this marks the fit as not converged.
    pub rhat_threshold: f64,
}

impl HbmConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            k: 4,
            min_size: 8,
            max_size: None,
            restarts: 10,
            per_cell_g: false,
            prior: PriorConfig::default(),
            sampler: SamplerConfig::new(seed),
            rhat_threshold: 1.05,
        }
    }
}

/// Training rows for the hierarchical model. `x` holds raw feature values.
#[derive(Debug, Clone, PartialEq)]
pub struct HbmData {
    pub feature_names: Vec<String>,
    pub cell_keys: Vec<CellKey>,
    pub x: Vec<Vec<f64>>,
    /// Log lifetime in weeks.
    pub y: Vec<f64>,
    pub stress: Vec<f64>,
    pub cluster: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub q05: f64,
    pub q95: f64,
    pub rhat: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub id: usize,
    pub centroid: f64,
    pub n_train: usize,
    pub theta_mean: Vec<f64>,
    pub theta_std: Vec<f64>,
    pub sigma_j_mean: Option<f64>,
    pub sigma_j_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub feature_names: Vec<String>,
    pub converged: bool,
    pub max_rhat: f64,
    pub min_ess: f64,
    pub acceptance: Vec<(String, f64)>,
    pub gamma_bar: Vec<f64>,
    pub parameters: Vec<ParamSummary>,
    pub clusters: Vec<ClusterSummary>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HbmPosterior {
    pub config: HbmConfig,
    pub feature_names: Vec<String>,
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub centroids: Vec<f64>,
    /// Training rows per cluster; clusters with none have no σ_j.
    pub n_train: Vec<usize>,
    /// Kept draws, chain-major; every chain contributes the same count.
    pub chain: Vec<usize>,
    pub gamma: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    /// σ_j per draw, indexed by cluster; entries for untrained clusters are 0.
    pub sigma_j: Vec<Vec<f64>>,
    pub gamma_bar: Vec<f64>,
    pub summary: PosteriorSummary,
}

fn log_half_cauchy(x: f64, scale: f64) -> f64 {
    std::f64::consts::LN_2 - std::f64::consts::PI.ln() - scale.ln() - (x / scale).powi(2).ln_1p()
}

impl HbmPosterior {
    pub fn n_draws(&self) -> usize {
        self.sigma.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn trained(&self, cluster: usize) -> bool {
        self.n_train.get(cluster).is_some_and(|&n| n > 0)
    }

    /// g for a cluster (centroid) or, with `per_cell_g`, a cell's own stress.
    pub fn g_vector(&self, cluster: usize, stress: f64) -> [f64; 2] {
        if self.config.per_cell_g {
            [1.0, stress]
        } else {
            [1.0, self.centroids[cluster]]
        }
    }

    /// θ = Γᵀ g for one draw, length p + 1 (intercept first).
    pub fn theta(&self, draw: usize, g: [f64; 2]) -> Vec<f64> {
        let w = self.n_features() + 1;
        (0..w)
            .map(|b| g[0] * self.gamma[draw][b] + g[1] * self.gamma[draw][w + b])
            .collect()
    }

    fn x_tilde(&self, x: &[f64]) -> Vec<f64> {
        std::iter::once(1.0)
            .chain(x.iter().zip(&self.x_mean).zip(&self.x_std).map(|((v, m), s)| (v - m) / s))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(bincode::serialize(self)?)
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        Ok(bincode::deserialize(b)?)
    }
}

/// Design row d = g ⊗ x̃.
fn design(g: [f64; 2], xt: &[f64]) -> Vec<f64> {
    g.iter().flat_map(|a| xt.iter().map(move |b| a * b)).collect()
}

struct ClusterStats {
    n: usize,
    s: DMatrix<f64>,
    b: DVector<f64>,
    yy: f64,
}

impl ClusterStats {
    fn rss(&self, gamma: &DVector<f64>) -> f64 {
        (self.yy - 2.0 * gamma.dot(&self.b) + gamma.dot(&(&self.s * gamma))).max(0.0)
    }
}

struct ChainOut {
    gamma: Vec<Vec<f64>>,
    sigma: Vec<f64>,
    sigma_j: Vec<Vec<f64>>,
    accept: Vec<f64>,
}

struct Model<'a> {
    stats: &'a [ClusterStats],
    gamma_bar: DVector<f64>,
    prior_prec: f64,
    sigma_scale: f64,
    init_sigma: f64,
}

/// Adaptive random-walk Metropolis step on a log-scale scalar.
struct Walker {
    value: f64,
    log_step: f64,
    accepted: usize,
    tried: usize,
}

impl Walker {
    fn new(value: f64) -> Self {
        Self { value, log_step: (0.5f64).ln(), accepted: 0, tried: 0 }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng, logp: impl Fn(f64) -> f64, adapt: Option<(usize, f64)>) {
        let z: f64 = rng.sample(StandardNormal);
        let prop = self.value + self.log_step.exp() * z;
        let a = (logp(prop) - logp(self.value)).min(0.0).exp();
        let ok = rng.random::<f64>() < a;
        if ok {
            self.value = prop;
        }
        match adapt {
            Some((t, target)) => self.log_step += (a - target) / ((t + 1) as f64).powf(0.6),
            None => {
                self.tried += 1;
                self.accepted += ok as usize;
            }
        }
    }
}

fn run_chain(m: &Model, cfg: &SamplerConfig, chain: usize) -> Result<ChainOut> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64);
    let d = m.gamma_bar.len();
    let jn = m.stats.len();
    let trained: Vec<usize> = (0..jn).filter(|&j| m.stats[j].n > 0).collect();
    let jitter = |rng: &mut ChaCha8Rng| 0.5 * rng.sample::<f64, _>(StandardNormal);
    let mut walkers_j: Vec<Walker> = (0..jn)
        .map(|_| Walker::new(cfg.fixed_sigma_j.unwrap_or(m.init_sigma).ln() + jitter(&mut rng)))
        .collect();
    if let Some(s) = cfg.fixed_sigma_j {
        for w in &mut walkers_j {
            w.value = s.ln();
        }
    }
    let mut walk_s = Walker::new(m.init_sigma.ln() + jitter(&mut rng));
    let mut out = ChainOut { gamma: vec![], sigma: vec![], sigma_j: vec![], accept: vec![] };
    let total = cfg.warmup + cfg.draws;
    for it in 0..total {
        let adapt = (it < cfg.warmup).then_some((it, cfg.target_accept));
        // Γ | σ_j: Gaussian with precision P and P·mean = h.
        let mut p = DMatrix::<f64>::identity(d, d) * m.prior_prec;
        let mut h = &m.gamma_bar * m.prior_prec;
        for &j in &trained {
            let w = (-2.0 * walkers_j[j].value).exp();
            p += &m.stats[j].s * w;
            h += &m.stats[j].b * w;
        }
        let chol = p
            .cholesky()
            .ok_or_else(|| Error::Precondition("posterior precision for Γ is not positive definite".into()))?;
        let mean = chol.solve(&h);
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let lt = chol.l().transpose();
        let dev = lt
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::Precondition("singular Cholesky factor".into()))?;
        let gamma = mean + dev;

        let sigma = walk_s.value.exp();
        if cfg.fixed_sigma_j.is_none() {
            for &j in &trained {
                let st = &m.stats[j];
                let rss = st.rss(&gamma);
                let n = st.n as f64;
                walkers_j[j].step(
                    &mut rng,
                    |u| -n * u - rss * (-2.0 * u).exp() / 2.0 + log_half_cauchy(u.exp(), sigma) + u,
                    adapt,
                );
            }
        }
        let sj: Vec<f64> = trained.iter().map(|&j| walkers_j[j].value.exp()).collect();
        let scale = m.sigma_scale;
        walk_s.step(
            &mut rng,
            |v| {
                let s = v.exp();
                log_half_cauchy(s, scale) + sj.iter().map(|x| log_half_cauchy(*x, s)).sum::<f64>() + v
            },
            adapt,
        );
        if it >= cfg.warmup && (it - cfg.warmup + 1).is_multiple_of(cfg.thin) {
            out.gamma.push(gamma.iter().copied().collect());
            out.sigma.push(walk_s.value.exp());
            out.sigma_j
                .push((0..jn).map(|j| if m.stats[j].n > 0 { walkers_j[j].value.exp() } else { 0.0 }).collect());
        }
    }
    out.accept = trained
        .iter()
        .map(|&j| &walkers_j[j])
        .chain(std::iter::once(&walk_s))
        .map(|w| if w.tried > 0 { w.accepted as f64 / w.tried as f64 } else { f64::NAN })
        .collect();
    Ok(out)
}

fn prior_chain(gamma_bar: &DVector<f64>, sd: f64, scale: f64, jn: usize, cfg: &SamplerConfig, chain: usize) -> ChainOut {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64);
    let cauchy: Cauchy<f64> = Cauchy::new(0.0, 1.0).expect("unit Cauchy");
    let n = cfg.draws / cfg.thin;
    let mut out = ChainOut { gamma: vec![], sigma: vec![], sigma_j: vec![], accept: vec![] };
    for _ in 0..n {
        out.gamma
            .push(gamma_bar.iter().map(|g| g + sd * rng.sample::<f64, _>(StandardNormal)).collect());
        let s = scale * cauchy.sample(&mut rng).abs();
        out.sigma.push(s);
        out.sigma_j.push((0..jn).map(|_| s * cauchy.sample(&mut rng).abs()).collect());
    }
    out
}

fn summarize_param(name: String, chains: &[Vec<f64>]) -> ParamSummary {
    let all: Vec<f64> = chains.iter().flatten().copied().collect();
    let refs: Vec<&[f64]> = chains.iter().map(|c| c.as_slice()).collect();
    ParamSummary {
        name,
        mean: crate::stats::mean(&all),
        std: crate::stats::sample_std(&all),
        q05: crate::stats::quantile(&all, 0.05),
        q95: crate::stats::quantile(&all, 0.95),
        rhat: diagnostics::split_rhat(&refs),
        ess: diagnostics::ess(&refs),
    }
}

/// Fits the model to `data` with cluster centroids from `clusters`.
pub fn fit_hbm(data: &HbmData, clusters: &ClusterAssignment, config: &HbmConfig) -> Result<HbmPosterior> {
    config.sampler.validate()?;
    if !(config.prior.gamma_sd > 0.0 && config.prior.sigma_scale > 0.0) {
        return Err(Error::invalid("prior", "scales must be positive"));
    }
    let n = data.y.len();
    let p = data.feature_names.len();
    if data.x.len() != n || data.stress.len() != n || data.cluster.len() != n || data.cell_keys.len() != n {
        return Err(Error::Precondition("hierarchical model inputs have mismatched lengths".into()));
    }
    if data.x.iter().any(|r| r.len() != p) {
        return Err(Error::Precondition("feature row width differs from feature names".into()));
    }
    if let Some(&c) = data.cluster.iter().find(|&&c| c >= clusters.k) {
        return Err(Error::Precondition(format!("cluster id {c} outside 0..{}", clusters.k)));
    }
    if !config.sampler.prior_only && n <= p + 1 {
        return Err(Error::Precondition(format!("{n} training rows for {p} features")));
    }
    let mut warnings = Vec::new();
    let (x_mean, x_std) = if n > 0 {
        let (m, s, constant) = crate::regress::standardization(&data.x);
        if !constant.is_empty() && !config.sampler.prior_only {
            return Err(Error::Precondition(format!(
                "constant feature columns in hierarchical model: {:?}",
                constant.iter().map(|&j| &data.feature_names[j]).collect::<Vec<_>>()
            )));
        }
        let s = s.into_iter().map(|v| if v > 0.0 { v } else { 1.0 }).collect();
        (m, s)
    } else {
        (vec![0.0; p], vec![1.0; p])
    };
    let w = p + 1;
    let dim = 2 * w;
    let xt: Vec<Vec<f64>> = data
        .x
        .iter()
        .map(|r| std::iter::once(1.0).chain(r.iter().zip(&x_mean).zip(&x_std).map(|((v, m), s)| (v - m) / s)).collect())
        .collect();

    let gamma_bar = match &config.prior.gamma_bar {
        GammaBar::Zero => vec![0.0; dim],
        GammaBar::Fixed(v) => {
            if v.len() != dim {
                return Err(Error::invalid("prior.gamma_bar", format!("expected {dim} values, got {}", v.len())));
            }
            v.clone()
        }
        GammaBar::PooledOls => {
            let mut g = vec![0.0; dim];
            if n > p + 1 {
                let rows: Vec<usize> = (0..n).collect();
                let cols: Vec<usize> = (1..w).collect();
                if let Some(m) = OlsModel::fit(&xt, &data.y, &rows, &cols) {
                    // xt columns are already standardised; undo the inner rescaling.
                    g[0] = m.intercept - (0..p).map(|j| m.coef[j] * m.mean[j] / m.std[j]).sum::<f64>();
                    for j in 0..p {
                        g[1 + j] = m.coef[j] / m.std[j];
                    }
                } else {
                    warnings.push("pooled OLS for γ̄ is singular; using zeros".into());
                }
            }
            g
        }
    };

    let mut stats: Vec<ClusterStats> = (0..clusters.k)
        .map(|_| ClusterStats { n: 0, s: DMatrix::zeros(dim, dim), b: DVector::zeros(dim), yy: 0.0 })
        .collect();
    for i in 0..n {
        let c = data.cluster[i];
        let g = if config.per_cell_g { [1.0, data.stress[i]] } else { [1.0, clusters.centroids[c]] };
        let dv = DVector::from_vec(design(g, &xt[i]));
        let st = &mut stats[c];
        st.n += 1;
        st.s += &dv * dv.transpose();
        st.b += &dv * data.y[i];
        st.yy += data.y[i] * data.y[i];
    }
    let n_train: Vec<usize> = stats.iter().map(|s| s.n).collect();
    for (j, &c) in n_train.iter().enumerate() {
        if c == 0 {
            warnings.push(format!("cluster {j} has no training rows; predictions there fall back to the nearest trained cluster"));
        }
    }
    let gb = DVector::from_vec(gamma_bar.clone());
    let init_sigma = if n > 1 { crate::stats::sample_std(&data.y).max(1e-3) } else { 1.0 };
    let sc = &config.sampler;
    let chains: Vec<ChainOut> = if sc.prior_only {
        (0..sc.chains)
            .map(|c| prior_chain(&gb, config.prior.gamma_sd, config.prior.sigma_scale, clusters.k, sc, c))
            .collect()
    } else {
        let model = Model {
            stats: &stats,
            gamma_bar: gb.clone(),
            prior_prec: config.prior.gamma_sd.powi(-2),
            sigma_scale: config.prior.sigma_scale,
            init_sigma,
        };
        (0..sc.chains)
            .into_par_iter()
            .map(|c| run_chain(&model, sc, c))
            .collect::<Result<Vec<_>>>()?
    };

    // Diagnostics and summaries.
    let per_chain = |f: &dyn Fn(&ChainOut, usize) -> f64| -> Vec<Vec<f64>> {
        chains.iter().map(|c| (0..c.sigma.len()).map(|t| f(c, t)).collect()).collect()
    };
    let mut names_x = vec!["intercept".to_string()];
    names_x.extend(data.feature_names.iter().cloned());
    let mut params = Vec::new();
    for a in 0..2 {
        for b in 0..w {
            let idx = a * w + b;
            let label = if a == 0 { "g0" } else { "g1" };
            params.push(summarize_param(format!("gamma[{label},{}]", names_x[b]), &per_chain(&|c, t| c.gamma[t][idx])));
        }
    }
    params.push(summarize_param("sigma".into(), &per_chain(&|c, t| c.sigma[t])));
    let mut cluster_summaries = Vec::new();
    for j in 0..clusters.k {
        let g = [1.0, clusters.centroids[j]];
        let trained = n_train[j] > 0;
        if trained && sc.fixed_sigma_j.is_none() {
            params.push(summarize_param(format!("sigma_j[{j}]"), &per_chain(&|c, t| c.sigma_j[t][j])));
        }
        let mut tm = Vec::new();
        let mut ts = Vec::new();
        for b in 0..w {
            let s = summarize_param(
                format!("theta[{j},{}]", names_x[b]),
                &per_chain(&|c, t| g[0] * c.gamma[t][b] + g[1] * c.gamma[t][w + b]),
            );
            tm.push(s.mean);
            ts.push(s.std);
            params.push(s);
        }
        let sj: Vec<f64> = chains.iter().flat_map(|c| c.sigma_j.iter().map(move |v| v[j])).collect();
        cluster_summaries.push(ClusterSummary {
            id: j,
            centroid: clusters.centroids[j],
            n_train: n_train[j],
            theta_mean: tm,
            theta_std: ts,
            sigma_j_mean: trained.then(|| crate::stats::mean(&sj)),
            sigma_j_std: trained.then(|| crate::stats::sample_std(&sj)),
        });
    }
    let max_rhat = params.iter().map(|p| p.rhat).filter(|r| !r.is_nan()).fold(1.0, f64::max);
    let min_ess = params.iter().map(|p| p.ess).filter(|r| !r.is_nan()).fold(f64::INFINITY, f64::min);
    let converged = max_rhat <= config.rhat_threshold;
    if !converged {
        warnings.push(format!("max R̂ {max_rhat:.3} exceeds {}", config.rhat_threshold));
    }
    let mut acceptance = Vec::new();
    if !sc.prior_only {
        let trained: Vec<usize> = (0..clusters.k).filter(|&j| n_train[j] > 0).collect();
        let labels: Vec<String> = trained
            .iter()
            .map(|j| format!("log_sigma_j[{j}]"))
            .chain(std::iter::once("log_sigma".to_string()))
            .collect();
        for (i, l) in labels.into_iter().enumerate() {
            if sc.fixed_sigma_j.is_some() && i < trained.len() {
                continue;
            }
            let v: Vec<f64> = chains.iter().map(|c| c.accept[i]).collect();
            let rate = crate::stats::mean(&v);
            if !(0.15..=0.5).contains(&rate) {
                warnings.push(format!("acceptance for {l} is {rate:.3}"));
            }
            acceptance.push((l, rate));
        }
    }

    let mut chain_idx = Vec::new();
    let mut gamma = Vec::new();
    let mut sigma = Vec::new();
    let mut sigma_j = Vec::new();
    for (ci, c) in chains.into_iter().enumerate() {
        chain_idx.extend(std::iter::repeat_n(ci, c.sigma.len()));
        gamma.extend(c.gamma);
        sigma.extend(c.sigma);
        sigma_j.extend(c.sigma_j);
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(HbmPosterior {
        config: config.clone(),
        feature_names: data.feature_names.clone(),
        x_mean,
        x_std,
        centroids: clusters.centroids.clone(),
        n_train,
        chain: chain_idx,
        gamma,
        sigma,
        sigma_j,
        gamma_bar: gamma_bar.clone(),
        summary: PosteriorSummary {
            feature_names: data.feature_names.clone(),
            converged,
            max_rhat,
            min_ess,
            acceptance,
            gamma_bar,
            parameters: params,
            clusters: cluster_summaries,
            warnings,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub cluster: usize,
    /// True when the requested cluster had no training rows.
    pub fallback: bool,
    pub mean_weeks: f64,
    pub std_weeks: f64,
    pub lo_weeks: f64,
    pub hi_weeks: f64,
}

/// Posterior predictive for one cell: y* ~ N(θ_jᵀ x̃, σ_j²) per draw, mapped
/// to weeks. The interval is mean ± 2 std of the week-scale draws. A missing
/// or untrained cluster resolves to the nearest trained centroid by `stress`.
pub fn posterior_predict(post: &HbmPosterior, x: &[f64], stress: f64, cluster: Option<usize>, seed: u64, stream: u64) -> Result<Prediction> {
    if post.n_draws() == 0 {
        return Err(Error::Precondition("posterior has no draws".into()));
    }
    if x.len() != post.n_features() {
        return Err(Error::Precondition(format!("expected {} features, got {}", post.n_features(), x.len())));
    }
    let nearest_trained = || {
        (0..post.centroids.len())
            .filter(|&j| post.trained(j))
            .min_by(|&a, &b| {
                (stress - post.centroids[a]).abs().total_cmp(&(stress - post.centroids[b]).abs()).then(a.cmp(&b))
            })
    };
    let requested = cluster.filter(|&c| c < post.centroids.len());
    let (c, fallback) = match requested {
        Some(c) if post.trained(c) => (c, false),
        _ => (
            nearest_trained().ok_or_else(|| Error::Precondition("no trained cluster".into()))?,
            true,
        ),
    };
    let xt = post.x_tilde(x);
    let g = post.g_vector(c, stress);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let draws: Vec<f64> = (0..post.n_draws())
        .map(|t| {
            let th = post.theta(t, g);
            let mu: f64 = th.iter().zip(&xt).map(|(a, b)| a * b).sum();
            let eps: f64 = rng.sample(StandardNormal);
            (mu + post.sigma_j[t][c] * eps).exp()
        })
        .collect();
    let mean = crate::stats::mean(&draws);
    let std = crate::stats::variance(&draws).sqrt();
    Ok(Prediction {
        cluster: c,
        fallback,
        mean_weeks: mean,
        std_weeks: std,
        lo_weeks: mean - 2.0 * std,
        hi_weeks: mean + 2.0 * std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Normal;

    fn fast(seed: u64) -> HbmConfig {
        let mut c = HbmConfig::new(seed);
        c.sampler.draws = 4000;
        c.sampler.warmup = 2000;
        c.sampler.thin = 2;
        c.min_size = 1;
        c
    }

    fn clusters(centroids: Vec<f64>) -> ClusterAssignment {
        ClusterAssignment { k: centroids.len(), labels: vec![], centroids, sse: 0.0, min_size: 1, max_size: None }
    }

    fn synth(n_per: usize, sigma: f64, seed: u64) -> (HbmData, ClusterAssignment, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cents = vec![2.2, 1.9, 1.5, 1.0];
        // Γ rows: g0 → [b0, b1], g1 → [c0, c1].
        let truth = vec![4.0, -0.3, -0.8, 0.2];
        let mut d = HbmData {
            feature_names: vec!["f".into()],
            cell_keys: vec![],
            x: vec![],
            y: vec![],
            stress: vec![],
            cluster: vec![],
        };
        let nd = Normal::new(0.0, 1.0).unwrap();
        for (j, &c) in cents.iter().enumerate() {
            for i in 0..n_per {
                let x: f64 = nd.sample(&mut rng);
                let th0 = truth[0] + truth[2] * c;
                let th1 = truth[1] + truth[3] * c;
                d.x.push(vec![x]);
                d.y.push(th0 + th1 * x + sigma * nd.sample(&mut rng));
                d.stress.push(c);
                d.cluster.push(j);
                d.cell_keys.push(CellKey::new(j as u32 + 1, i as u32 + 1));
            }
        }
        (d, clusters(cents), truth)
    }

    #[test]
    fn conjugate_case_matches_closed_form() {
        let (d, cl, _) = synth(10, 0.2, 1);
        let mut cfg = fast(7);
        cfg.sampler.fixed_sigma_j = Some(0.2);
        cfg.prior.gamma_bar = GammaBar::Zero;
        let post = fit_hbm(&d, &cl, &cfg).unwrap();
        // Closed form on the same standardised design.
        let xt: Vec<Vec<f64>> = d.x.iter().map(|r| vec![1.0, (r[0] - post.x_mean[0]) / post.x_std[0]]).collect();
        let mut p = DMatrix::<f64>::identity(4, 4) * 0.01;
        let mut h = DVector::<f64>::zeros(4);
        for i in 0..d.y.len() {
            let dv = DVector::from_vec(design([1.0, cl.centroids[d.cluster[i]]], &xt[i]));
            p += &dv * dv.transpose() / 0.04;
            h += dv * d.y[i] / 0.04;
        }
        let cov = p.clone().try_inverse().unwrap();
        let mean = p.cholesky().unwrap().solve(&h);
        for a in 0..4 {
            let draws: Vec<f64> = post.gamma.iter().map(|g| g[a]).collect();
            let m = crate::stats::mean(&draws);
            let mc = (cov[(a, a)] / draws.len() as f64).sqrt();
            assert!((m - mean[a]).abs() < 3.0 * mc, "γ[{a}] {m} vs {}", mean[a]);
            let sd = crate::stats::sample_std(&draws);
            assert!((sd / cov[(a, a)].sqrt() - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn recovers_parameters() {
        let (d, cl, truth) = synth(25, 0.1, 2);
        let post = fit_hbm(&d, &cl, &fast(3)).unwrap();
        assert!(post.summary.converged, "R̂ {}", post.summary.max_rhat);
        // Truth is on the raw x scale; map to the standardised one.
        let (m, s) = (post.x_mean[0], post.x_std[0]);
        let std_truth = [truth[0] + truth[1] * m, truth[1] * s, truth[2] + truth[3] * m, truth[3] * s];
        let names = ["gamma[g0,intercept]", "gamma[g0,f]", "gamma[g1,intercept]", "gamma[g1,f]"];
        for (name, t) in names.iter().zip(std_truth) {
            let p = post.summary.parameters.iter().find(|p| p.name == *name).unwrap();
            assert!((p.mean - t).abs() < 2.0 * p.std + 1e-9, "{name}: {} ± {} vs {t}", p.mean, p.std);
        }
        for c in &post.summary.clusters {
            let s = c.sigma_j_mean.unwrap();
            assert!(s > 0.05 && s < 0.2, "σ_j {s}");
        }
        for (_, a) in &post.summary.acceptance {
            assert!((0.15..=0.5).contains(a), "{a}");
        }
    }

    #[test]
    fn prior_only_moments() {
        let (d, cl, _) = synth(3, 0.1, 3);
        let mut cfg = fast(4);
        cfg.sampler.prior_only = true;
        cfg.sampler.draws = 20000;
        cfg.sampler.thin = 1;
        cfg.prior.gamma_bar = GammaBar::Zero;
        let post = fit_hbm(&d, &cl, &cfg).unwrap();
        let g: Vec<f64> = post.gamma.iter().map(|v| v[0]).collect();
        assert!(crate::stats::mean(&g).abs() < 0.2);
        assert!((crate::stats::sample_std(&g) - 10.0).abs() < 0.2);
        // Median of |Cauchy(0,1)| is 1.
        assert!((crate::stats::median(&post.sigma) - 1.0).abs() < 0.05);
    }

    #[test]
    fn predict_and_fallback() {
        let (mut d, cl, _) = synth(20, 0.1, 5);
        // Drop cluster 3 from training.
        let keep: Vec<usize> = (0..d.y.len()).filter(|&i| d.cluster[i] != 3).collect();
        d = HbmData {
            feature_names: d.feature_names.clone(),
            cell_keys: keep.iter().map(|&i| d.cell_keys[i]).collect(),
            x: keep.iter().map(|&i| d.x[i].clone()).collect(),
            y: keep.iter().map(|&i| d.y[i]).collect(),
            stress: keep.iter().map(|&i| d.stress[i]).collect(),
            cluster: keep.iter().map(|&i| d.cluster[i]).collect(),
        };
        let post = fit_hbm(&d, &cl, &fast(6)).unwrap();
        let p = posterior_predict(&post, &[0.0], 2.2, Some(0), 1, 0).unwrap();
        assert!(!p.fallback && p.lo_weeks < p.mean_weeks && p.mean_weeks < p.hi_weeks);
        let q = posterior_predict(&post, &[0.0], 1.0, Some(3), 1, 0).unwrap();
        assert!(q.fallback);
        assert_eq!(q.cluster, 2);
        let bytes = post.to_bytes().unwrap();
        assert_eq!(HbmPosterior::from_bytes(&bytes).unwrap(), post);
        let mut empty = post.clone();
        empty.sigma.clear();
        assert!(posterior_predict(&empty, &[0.0], 2.2, Some(0), 1, 0).is_err());
    }
}
