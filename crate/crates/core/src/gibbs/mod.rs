//! Conjugate Gibbs sampler for the nested random-intercept model.
//!
//! Each chain alternates between the location parameters (grand mean,
//! crop coefficients and all group effects) and the six variances. The
//! default [`Scheme::Blocked`] draws all locations jointly from their
//! Gaussian full conditional through a sparse factorization; the
//! [`Scheme::SingleSite`] scan updates coefficients, then each group
//! effect, then the grand mean, one conditional at a time. Variances are
//! always drawn from their inverse-gamma full conditionals.

mod diagnostics;
mod histogram;

pub use diagnostics::{effective_sample_size, quantile_sorted, skewness, split_rhat, summarize, Summary};
pub use histogram::{posterior_histogram, write_histogram_csv, Histogram};

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::TransformedRecord;
use crate::estimation::{prepare, FitError, FitMetrics, FitResult, GroupEffects, Method, VarianceComponent};
use crate::hierarchy::{HierarchySpec, Level};
use crate::mixed::{FixedDesign, MixedModel, Structure};

#[derive(Debug, Error)]
pub enum GibbsError {
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("invalid chain configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite full conditional for `{parameter}` at iteration {iteration} of chain {chain}")]
    NonFinite { chain: usize, iteration: usize, parameter: String },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub variance: f64,
}

/// Inverse-gamma prior with shape `d` and scale `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IgPrior {
    pub shape: f64,
    pub scale: f64,
}

impl Default for IgPrior {
    fn default() -> Self {
        Self { shape: 0.001, scale: 0.001 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    /// Prior means aligned with the design columns; empty means all zero.
    /// The first crop's intercept entry is unused (the grand mean takes
    /// its place).
    pub mean: Vec<f64>,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSpec {
    pub mu: NormalPrior,
    /// Per level, in parcel..time order.
    pub levels: [IgPrior; 5],
    pub idiosyncratic: IgPrior,
    pub beta: BetaPrior,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            mu: NormalPrior { mean: 0.0, variance: 1e6 },
            levels: [IgPrior::default(); 5],
            idiosyncratic: IgPrior::default(),
            beta: BetaPrior { mean: Vec::new(), variance: 1e6 },
        }
    }
}

impl PriorSpec {
    pub fn validate(&self, p: usize) -> Result<(), GibbsError> {
        let ig_ok = |g: &IgPrior| g.shape > 0.0 && g.scale > 0.0 && g.shape.is_finite() && g.scale.is_finite();
        if !self.levels.iter().all(ig_ok) || !ig_ok(&self.idiosyncratic) {
            return Err(GibbsError::InvalidPrior("inverse-gamma shapes and scales must be positive".into()));
        }
        if !(self.mu.variance > 0.0) || !(self.beta.variance > 0.0) {
            return Err(GibbsError::InvalidPrior("prior variances must be positive".into()));
        }
        if !self.beta.mean.is_empty() && self.beta.mean.len() != p {
            return Err(GibbsError::InvalidPrior(format!(
                "beta prior mean has length {}, design has {p} columns",
                self.beta.mean.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Blocked,
    SingleSite,
}

/// How the effective number of parameters is computed for DIC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdVariant {
    /// Mean deviance minus deviance at the posterior means.
    MeanDeviance,
    /// Half the posterior variance of the deviance.
    HalfVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub burn_in: usize,
    pub keep: usize,
    pub thin: usize,
    pub seed: u64,
    pub n_chains: usize,
    pub scheme: Scheme,
    /// Keep every retained draw of every group effect.
    pub store_effects: bool,
    pub pd_variant: PdVariant,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            burn_in: 5000,
            keep: 5000,
            thin: 1,
            seed: 0,
            n_chains: 2,
            scheme: Scheme::Blocked,
            store_effects: false,
            pd_variant: PdVariant::MeanDeviance,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<(), GibbsError> {
        if self.keep == 0 || self.thin == 0 || self.n_chains == 0 {
            return Err(GibbsError::InvalidConfig("keep, thin and n_chains must be at least 1".into()));
        }
        if self.keep < self.thin {
            return Err(GibbsError::InvalidConfig("keep must be at least thin".into()));
        }
        Ok(())
    }

    pub fn draws_per_chain(&self) -> usize {
        self.keep / self.thin
    }
}

/// Draws `σ² ~ IG(d + m/2, g + ss/2)`.
pub fn draw_variance<R: Rng + ?Sized>(rng: &mut R, prior: &IgPrior, m: usize, ss: f64) -> Option<f64> {
    let shape = prior.shape + m as f64 / 2.0;
    let scale = prior.scale + ss / 2.0;
    if !(shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()) {
        return None;
    }
    let gamma = Gamma::new(shape, 1.0 / scale).ok()?;
    let v = 1.0 / gamma.sample(rng);
    (v.is_finite() && v > 0.0).then_some(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    #[serde(flatten)]
    pub summary: Summary,
    pub rhat: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dic {
    pub mean_deviance: f64,
    pub deviance_at_mean: f64,
    pub p_d: f64,
    pub dic: f64,
    pub variant: PdVariant,
}

/// Retained draws and their summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    /// `mu`, the design coefficients (absolute crop intercepts), then
    /// `sigma2_<level>` for each modelled level and `sigma2`.
    pub parameters: Vec<String>,
    pub levels: Vec<Level>,
    pub beta_labels: Vec<String>,
    /// `values[chain][parameter][draw]`.
    pub values: Vec<Vec<Vec<f64>>>,
    pub summaries: Vec<ParameterSummary>,
    pub dic: Dic,
    /// Posterior mean of each group effect, per modelled level.
    pub effect_means: Vec<Vec<f64>>,
    pub effect_labels: Vec<Vec<String>>,
    /// `effect_draws[chain][draw]` holds all group effects when stored.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effect_draws: Option<Vec<Vec<Vec<f64>>>>,
    pub config: ChainConfig,
    pub warnings: Vec<String>,
}

impl PosteriorDraws {
    pub fn n_chains(&self) -> usize {
        self.values.len()
    }

    pub fn draws_per_chain(&self) -> usize {
        self.values.first().and_then(|c| c.first()).map_or(0, |v| v.len())
    }

    pub fn n_draws(&self) -> usize {
        self.n_chains() * self.draws_per_chain()
    }

    pub fn parameter_index(&self, name: &str) -> Option<usize> {
        self.parameters.iter().position(|p| p == name)
    }

    /// All chains concatenated.
    pub fn draws(&self, name: &str) -> Result<Vec<f64>, GibbsError> {
        let j = self.parameter_index(name).ok_or_else(|| GibbsError::UnknownParameter(name.to_string()))?;
        Ok(self.values.iter().flat_map(|c| c[j].iter().copied()).collect())
    }

    pub fn summary(&self, name: &str) -> Option<&ParameterSummary> {
        self.summaries.iter().find(|s| s.name == name)
    }

    /// Names of the variance parameters, ordered as the modelled levels then `sigma2`.
    pub fn variance_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.levels.iter().map(|l| variance_name(*l)).collect();
        v.push("sigma2".into());
        v
    }

    /// Per-draw variances as (parcel, household, season, village, time,
    /// idiosyncratic), zero for levels outside the model.
    pub fn variance_draws(&self) -> Vec<[f64; 6]> {
        let idx: Vec<Option<usize>> =
            Level::ALL.iter().map(|l| self.parameter_index(&variance_name(*l))).collect();
        let s = self.parameter_index("sigma2").expect("sigma2 present");
        let mut out = Vec::with_capacity(self.n_draws());
        for chain in &self.values {
            for k in 0..chain[s].len() {
                let mut row = [0.0; 6];
                for (l, j) in idx.iter().enumerate() {
                    if let Some(j) = j {
                        row[l] = chain[*j][k];
                    }
                }
                row[5] = chain[s][k];
                out.push(row);
            }
        }
        out
    }

    /// Posterior means as a [`FitResult`]; standard errors are posterior
    /// standard deviations and p-values are two-sided posterior tail
    /// probabilities of the sign.
    pub fn fit_result(&self, n_obs: usize) -> FitResult {
        let get = |name: &str| self.summary(name).expect("summarized parameter");
        let mut p_values = Vec::new();
        for label in &self.beta_labels {
            let d = self.draws(label).expect("beta draw");
            let pos = d.iter().filter(|v| **v > 0.0).count() as f64 / d.len() as f64;
            p_values.push(2.0 * pos.min(1.0 - pos));
        }
        let components = self
            .levels
            .iter()
            .map(|&l| {
                let s = get(&variance_name(l));
                VarianceComponent {
                    level: l,
                    variance: s.summary.mean,
                    standard_error: Some(s.summary.sd),
                    unidentified: false,
                    at_boundary: false,
                }
            })
            .collect();
        let group_effects = self
            .levels
            .iter()
            .zip(&self.effect_means)
            .zip(&self.effect_labels)
            .map(|((&level, values), labels)| GroupEffects { level, labels: labels.clone(), values: values.clone() })
            .collect();
        FitResult {
            method: Method::Bayes,
            levels: self.levels.clone(),
            beta_labels: self.beta_labels.clone(),
            beta: self.beta_labels.iter().map(|l| get(l).summary.mean).collect(),
            standard_errors: self.beta_labels.iter().map(|l| get(l).summary.sd).collect(),
            p_values,
            mu: Some(get("mu").summary.mean),
            components,
            sigma2: get("sigma2").summary.mean,
            sigma2_se: Some(get("sigma2").summary.sd),
            group_effects,
            metrics: FitMetrics {
                n_obs,
                dic: Some(self.dic.dic),
                p_d: Some(self.dic.p_d),
                ..Default::default()
            },
            normality_assumed: false,
            warnings: self.warnings.clone(),
        }
    }

    /// Writes one summary row per parameter.
    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["parameter", "mean", "sd", "q025", "q50", "q975", "rhat", "ess"])?;
        for s in &self.summaries {
            let m = &s.summary;
            w.write_record([
                s.name.clone(),
                m.mean.to_string(),
                m.sd.to_string(),
                m.q025.to_string(),
                m.q50.to_string(),
                m.q975.to_string(),
                s.rhat.to_string(),
                s.ess.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `chain,iter,parameter,value` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["chain", "iter", "parameter", "value"])?;
        for (c, chain) in self.values.iter().enumerate() {
            for (j, name) in self.parameters.iter().enumerate() {
                for (k, v) in chain[j].iter().enumerate() {
                    w.write_record([c.to_string(), k.to_string(), name.clone(), v.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn variance_name(level: Level) -> String {
    format!("sigma2_{level}")
}

struct ChainOutput {
    values: Vec<Vec<f64>>,
    deviances: Vec<f64>,
    theta_sum: Vec<f64>,
    sigma2_sum: f64,
    effects: Vec<Vec<f64>>,
}

/// Shared, read-only sampler inputs.
struct Sampler<'a> {
    model: &'a MixedModel,
    st: Arc<Structure>,
    wty: Vec<f64>,
    prior_precision: Vec<f64>,
    prior_shift: Vec<f64>,
    level_priors: Vec<IgPrior>,
    priors: &'a PriorSpec,
    config: &'a ChainConfig,
    /// Columns of the full design.
    n_design: usize,
}

impl Sampler<'_> {
    fn n_levels(&self) -> usize {
        self.model.n_levels()
    }

    /// Full-design coefficients with absolute intercepts from the reduced fixed block.
    fn beta_full(&self, fixed: &[f64], width: usize) -> Vec<f64> {
        let mu = fixed[0];
        let mut beta = Vec::with_capacity(self.n_design);
        beta.push(mu);
        beta.extend_from_slice(&fixed[1..]);
        for c in (width..self.n_design).step_by(width) {
            beta[c] += mu;
        }
        beta
    }

    fn deviance(&self, rss: f64, sigma2: f64) -> f64 {
        let n = self.model.n() as f64;
        n * (2.0 * std::f64::consts::PI * sigma2).ln() + rss / sigma2
    }

    fn run_chain(&self, chain: usize, width: usize) -> Result<ChainOutput, GibbsError> {
        let cfg = self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(chain as u64);
        let model = self.model;
        let st = &*self.st;
        let n = model.n();
        let ybar = model.y.iter().sum::<f64>() / n as f64;
        let vy = model.y.iter().map(|v| (v - ybar).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
        let base = vy.max(1e-6);
        let jitter = |rng: &mut ChaCha8Rng| (0.5 * rng.sample::<f64, _>(StandardNormal)).exp();
        let mut sigma2 = 0.5 * base * jitter(&mut rng);
        let mut tau: Vec<f64> =
            (0..self.n_levels()).map(|_| 0.5 * base / self.n_levels().max(1) as f64 * jitter(&mut rng)).collect();
        let mut theta = vec![0.0; st.dim];
        theta[st.k] = ybar;

        let n_keep = cfg.draws_per_chain();
        let n_par = 1 + self.n_design + self.n_levels() + 1;
        let mut values = vec![Vec::with_capacity(n_keep); n_par];
        let mut deviances = Vec::with_capacity(n_keep);
        let mut theta_sum = vec![0.0; st.dim];
        let mut sigma2_sum = 0.0;
        let mut effects = Vec::new();

        let mut single = match cfg.scheme {
            Scheme::SingleSite => Some(SingleSite::new(self)?),
            Scheme::Blocked => None,
        };
        let mut resid = model.residuals(st, &theta);
        let total = cfg.burn_in + cfg.keep;
        for it in 0..total {
            let fail = |parameter: &str| GibbsError::NonFinite { chain, iteration: it, parameter: parameter.to_string() };
            match single.as_mut() {
                None => {
                    let factor = model
                        .factorize(st, sigma2, &tau, &self.prior_precision)
                        .map_err(|_| fail("location block"))?;
                    let mut mean: Vec<f64> =
                        self.wty.iter().zip(&self.prior_shift).map(|(w, s)| w / sigma2 + s).collect();
                    factor.solve_in_place(&mut mean);
                    let mut z: Vec<f64> = (0..st.dim).map(|_| rng.sample(StandardNormal)).collect();
                    factor.correlate_in_place(&mut z);
                    for ((t, m), dz) in theta.iter_mut().zip(&mean).zip(&z) {
                        *t = m + dz;
                    }
                    if theta.iter().any(|v| !v.is_finite()) {
                        return Err(fail("location block"));
                    }
                    resid = model.residuals(st, &theta);
                }
                Some(ss) => ss.sweep(self, &mut rng, &mut theta, &mut resid, sigma2, &tau).map_err(|p| fail(&p))?,
            }
            for l in 0..self.n_levels() {
                let nu = model.level_effects(st, &theta, l).expect("all levels active");
                let ss: f64 = nu.iter().map(|v| v * v).sum();
                tau[l] = draw_variance(&mut rng, &self.level_priors[l], model.sizes[l], ss)
                    .ok_or_else(|| fail(&variance_name(model.levels[l])))?;
            }
            let rss: f64 = resid.iter().map(|r| r * r).sum();
            sigma2 = draw_variance(&mut rng, &self.priors.idiosyncratic, n, rss).ok_or_else(|| fail("sigma2"))?;

            if it >= cfg.burn_in && (it - cfg.burn_in + 1).is_multiple_of(cfg.thin) {
                let fixed = model.fixed_effects(st, &theta);
                let mut j = 0;
                values[j].push(fixed[0]);
                j += 1;
                for b in self.beta_full(fixed, width) {
                    values[j].push(b);
                    j += 1;
                }
                for &t in &tau {
                    values[j].push(t);
                    j += 1;
                }
                values[j].push(sigma2);
                deviances.push(self.deviance(rss, sigma2));
                for (s, t) in theta_sum.iter_mut().zip(&theta) {
                    *s += t;
                }
                sigma2_sum += sigma2;
                if cfg.store_effects {
                    effects.push(theta[..st.k].to_vec());
                }
            }
        }
        Ok(ChainOutput { values, deviances, theta_sum, sigma2_sum, effects })
    }
}

/// State for the one-conditional-at-a-time scan.
struct SingleSite {
    /// Reduced fixed block without the `mu` column.
    xtx: DMatrix<f64>,
    members: Vec<Vec<Vec<u32>>>,
}

impl SingleSite {
    fn new(s: &Sampler<'_>) -> Result<Self, GibbsError> {
        let model = s.model;
        let pb = model.p() - 1;
        let mut xtx = DMatrix::zeros(pb, pb);
        for i in 0..model.n() {
            let row: Vec<(usize, f64)> = model.fixed.row(i).filter(|&(c, _)| c > 0).collect();
            for &(a, va) in &row {
                for &(b, vb) in &row {
                    xtx[(a - 1, b - 1)] += va * vb;
                }
            }
        }
        let members = (0..model.n_levels())
            .map(|l| {
                let mut m = vec![Vec::new(); model.sizes[l]];
                for (i, &g) in model.groups[l].iter().enumerate() {
                    m[g as usize].push(i as u32);
                }
                m
            })
            .collect();
        Ok(Self { xtx, members })
    }

    fn sweep(
        &mut self,
        s: &Sampler<'_>,
        rng: &mut ChaCha8Rng,
        theta: &mut [f64],
        resid: &mut [f64],
        sigma2: f64,
        tau: &[f64],
    ) -> Result<(), String> {
        let model = s.model;
        let st = &*s.st;
        let k = st.k;
        let pb = model.p() - 1;
        // (1) coefficients given everything else
        if pb > 0 {
            let mut rhs = DVector::zeros(pb);
            for i in 0..model.n() {
                let mut partial = resid[i];
                let row: Vec<(usize, f64)> = model.fixed.row(i).filter(|&(c, _)| c > 0).collect();
                for &(c, v) in &row {
                    partial += v * theta[k + c];
                }
                for &(c, v) in &row {
                    rhs[c - 1] += v * partial;
                }
            }
            let mut prec = &self.xtx / sigma2;
            for j in 0..pb {
                prec[(j, j)] += s.prior_precision[1 + j];
                rhs[j] = rhs[j] / sigma2 + s.prior_shift[k + 1 + j];
            }
            let chol = prec.cholesky().ok_or("beta")?;
            let mean = chol.solve(&rhs);
            let z = DVector::from_fn(pb, |_, _| rng.sample::<f64, _>(StandardNormal));
            let dz = chol.l().transpose().solve_upper_triangular(&z).ok_or("beta")?;
            let old: Vec<f64> = (0..pb).map(|j| theta[k + 1 + j]).collect();
            for j in 0..pb {
                theta[k + 1 + j] = mean[j] + dz[j];
            }
            if theta[k + 1..k + 1 + pb].iter().any(|v| !v.is_finite()) {
                return Err("beta".into());
            }
            for i in 0..model.n() {
                let mut delta = 0.0;
                for (c, v) in model.fixed.row(i).filter(|&(c, _)| c > 0) {
                    delta += v * (theta[k + c] - old[c - 1]);
                }
                resid[i] -= delta;
            }
        }
        // (2) group effects, level by level
        for l in 0..model.n_levels() {
            let off = st.offsets[l].expect("all levels active");
            for (g, obs) in self.members[l].iter().enumerate() {
                let cur = theta[off + g];
                let sum: f64 = obs.iter().map(|&i| resid[i as usize] + cur).sum();
                let prec = obs.len() as f64 / sigma2 + 1.0 / tau[l];
                let mean = sum / sigma2 / prec;
                let draw = mean + rng.sample::<f64, _>(StandardNormal) / prec.sqrt();
                if !draw.is_finite() {
                    return Err(format!("{} effect", model.levels[l]));
                }
                theta[off + g] = draw;
                for &i in obs {
                    resid[i as usize] -= draw - cur;
                }
            }
        }
        // (3) grand mean
        let cur = theta[k];
        let n = model.n() as f64;
        let sum: f64 = resid.iter().map(|r| r + cur).sum();
        let prec = n / sigma2 + s.prior_precision[0];
        let mean = (sum / sigma2 + s.prior_shift[k]) / prec;
        let draw = mean + rng.sample::<f64, _>(StandardNormal) / prec.sqrt();
        if !draw.is_finite() {
            return Err("mu".into());
        }
        theta[k] = draw;
        for r in resid.iter_mut() {
            *r -= draw - cur;
        }
        Ok(())
    }
}

/// Runs `config.n_chains` chains in parallel and summarizes the retained draws.
pub fn run_gibbs(
    records: &[TransformedRecord],
    spec: &HierarchySpec,
    priors: &PriorSpec,
    config: &ChainConfig,
) -> Result<PosteriorDraws, GibbsError> {
    config.validate()?;
    let prep = prepare(records, spec)?;
    let design = &prep.design;
    priors.validate(design.p())?;
    let fixed = FixedDesign::with_grand_mean(design);
    let model = MixedModel::from_index(prep.y.clone(), &prep.index, fixed);
    let st = model.structure(&vec![true; model.n_levels()]);
    let wty = model.wty(&st);
    let k = st.k;
    let mut prior_precision = vec![0.0; model.p()];
    let mut prior_shift = vec![0.0; st.dim];
    prior_precision[0] = 1.0 / priors.mu.variance;
    prior_shift[k] = priors.mu.mean / priors.mu.variance;
    for j in 1..model.p() {
        prior_precision[j] = 1.0 / priors.beta.variance;
        let m = priors.beta.mean.get(j).copied().unwrap_or(0.0);
        prior_shift[k + j] = m / priors.beta.variance;
    }
    let sampler = Sampler {
        model: &model,
        st: Arc::clone(&st),
        wty,
        prior_precision,
        prior_shift,
        level_priors: model.levels.iter().map(|l| priors.levels[l.position()]).collect(),
        priors,
        config,
        n_design: design.p(),
    };
    let width = design.width();
    let outputs: Vec<ChainOutput> = (0..config.n_chains)
        .into_par_iter()
        .map(|c| sampler.run_chain(c, width))
        .collect::<Result<_, _>>()?;

    let mut parameters = vec!["mu".to_string()];
    parameters.extend(design.labels.iter().cloned());
    parameters.extend(model.levels.iter().map(|l| variance_name(*l)));
    parameters.push("sigma2".into());

    let values: Vec<Vec<Vec<f64>>> = outputs.iter().map(|o| o.values.clone()).collect();
    let mut summaries = Vec::with_capacity(parameters.len());
    let mut warnings = Vec::new();
    for (j, name) in parameters.iter().enumerate() {
        let chains: Vec<&[f64]> = values.iter().map(|c| c[j].as_slice()).collect();
        let all: Vec<f64> = chains.iter().flat_map(|c| c.iter().copied()).collect();
        let rhat = split_rhat(&chains);
        if name.starts_with("sigma2") && rhat > 1.1 {
            warnings.push(format!("convergence warning: split R-hat for {name} is {rhat:.3}"));
        }
        summaries.push(ParameterSummary {
            name: name.clone(),
            summary: summarize(&all),
            rhat,
            ess: effective_sample_size(&chains),
        });
    }

    let total = outputs.iter().map(|o| o.deviances.len()).sum::<usize>() as f64;
    let mut theta_mean = vec![0.0; st.dim];
    for o in &outputs {
        for (m, s) in theta_mean.iter_mut().zip(&o.theta_sum) {
            *m += s / total;
        }
    }
    let sigma2_mean = outputs.iter().map(|o| o.sigma2_sum).sum::<f64>() / total;
    let deviances: Vec<f64> = outputs.iter().flat_map(|o| o.deviances.iter().copied()).collect();
    let mean_deviance = diagnostics::mean(&deviances);
    let rss_at_mean: f64 = model.residuals(&st, &theta_mean).iter().map(|r| r * r).sum();
    let deviance_at_mean = sampler.deviance(rss_at_mean, sigma2_mean);
    let p_d = match config.pd_variant {
        PdVariant::MeanDeviance => mean_deviance - deviance_at_mean,
        PdVariant::HalfVariance => diagnostics::variance(&deviances) / 2.0,
    };
    let effect_means = (0..model.n_levels())
        .map(|l| model.level_effects(&st, &theta_mean, l).expect("active").to_vec())
        .collect();
    let effect_labels = model.levels.iter().map(|&l| prep.index.level(l).labels.clone()).collect();
    let effect_draws = config.store_effects.then(|| outputs.iter().map(|o| o.effects.clone()).collect());

    Ok(PosteriorDraws {
        parameters,
        levels: model.levels.clone(),
        beta_labels: design.labels.clone(),
        values,
        summaries,
        dic: Dic { mean_deviance, deviance_at_mean, p_d, dic: mean_deviance + p_d, variant: config.pd_variant },
        effect_means,
        effect_labels,
        effect_draws,
        config: config.clone(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Crop;
    use rand_distr::Normal;

    #[test]
    fn inverse_gamma_conditional_moments() {
        let prior = IgPrior::default();
        let (m, ss) = (400usize, 300.0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws: Vec<f64> = (0..20_000).map(|_| draw_variance(&mut rng, &prior, m, ss).unwrap()).collect();
        let a = prior.shape + m as f64 / 2.0;
        let b = prior.scale + ss / 2.0;
        let mean = b / (a - 1.0);
        let var = b * b / ((a - 1.0).powi(2) * (a - 2.0));
        let dm = diagnostics::mean(&draws);
        let dv = diagnostics::variance(&draws);
        assert!((dm / mean - 1.0).abs() < 0.03);
        assert!((dv / var - 1.0).abs() < 0.03);
    }

    fn small_panel(seed: u64, tau: f64) -> Vec<TransformedRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nu = Normal::new(0.0, tau.sqrt().max(1e-12)).unwrap();
        let e = Normal::new(0.0, 1.0).unwrap();
        let mut out = Vec::new();
        for p in 0..60 {
            let u: f64 = if tau > 0.0 { nu.sample(&mut rng) } else { 0.0 };
            for t in 0..4 {
                let x = [rng.random_range(0.0..3.0), rng.random_range(0.0..3.0), rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)];
                let crop = if (p + t) % 3 == 0 { Crop::Wheat } else { Crop::Rice };
                let y = 5.0 + 0.3 * x[0] - 0.2 * x[1] + 0.1 * x[2] + if crop == Crop::Wheat { 0.5 } else { 0.0 } + u + e.sample(&mut rng);
                out.push(TransformedRecord {
                    y,
                    x,
                    crop,
                    parcel_id: format!("p{p}"),
                    household_id: format!("h{}", p / 3),
                    village_id: format!("v{}", p / 15),
                    time_id: format!("t{t}"),
                });
            }
        }
        out
    }

    fn quick(scheme: Scheme) -> ChainConfig {
        ChainConfig { burn_in: 300, keep: 600, thin: 2, seed: 7, n_chains: 2, scheme, ..Default::default() }
    }

    #[test]
    fn draw_count_and_positivity() {
        let recs = small_panel(1, 0.8);
        let spec = HierarchySpec::new(vec![Level::Parcel], true).unwrap();
        let d = run_gibbs(&recs, &spec, &PriorSpec::default(), &quick(Scheme::Blocked)).unwrap();
        assert_eq!(d.n_draws(), 600);
        assert!(d.draws("sigma2").unwrap().iter().all(|v| *v > 0.0));
        assert!(d.draws("sigma2_parcel").unwrap().iter().all(|v| *v > 0.0));
        assert_eq!(d.parameters.len(), 1 + 10 + 1 + 1);
    }

    #[test]
    fn same_seed_same_draws() {
        let recs = small_panel(2, 0.5);
        let spec = HierarchySpec::new(vec![Level::Parcel, Level::Village], true).unwrap();
        let a = run_gibbs(&recs, &spec, &PriorSpec::default(), &quick(Scheme::Blocked)).unwrap();
        let b = run_gibbs(&recs, &spec, &PriorSpec::default(), &quick(Scheme::Blocked)).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn schemes_agree_in_distribution() {
        let recs = small_panel(3, 0.8);
        let spec = HierarchySpec::new(vec![Level::Parcel], true).unwrap();
        let cfg = |s| ChainConfig { burn_in: 500, keep: 3000, thin: 1, seed: 11, n_chains: 2, scheme: s, ..Default::default() };
        let a = run_gibbs(&recs, &spec, &PriorSpec::default(), &cfg(Scheme::Blocked)).unwrap();
        let b = run_gibbs(&recs, &spec, &PriorSpec::default(), &cfg(Scheme::SingleSite)).unwrap();
        for name in ["sigma2", "sigma2_parcel", "rice:labor", "mu"] {
            let (sa, sb) = (&a.summary(name).unwrap().summary, &b.summary(name).unwrap().summary);
            let tol = 4.0 * (sa.sd / a.summary(name).unwrap().ess.sqrt() + sb.sd / b.summary(name).unwrap().ess.sqrt());
            assert!((sa.mean - sb.mean).abs() < tol.max(0.02), "{name}: {} vs {}", sa.mean, sb.mean);
        }
    }

    #[test]
    fn absolute_intercepts() {
        let recs = small_panel(4, 0.3);
        let spec = HierarchySpec::new(vec![Level::Parcel], true).unwrap();
        let d = run_gibbs(&recs, &spec, &PriorSpec::default(), &quick(Scheme::Blocked)).unwrap();
        let mu = d.draws("mu").unwrap();
        let rice = d.draws("rice:intercept").unwrap();
        assert_eq!(mu, rice);
        let wheat = d.summary("wheat:intercept").unwrap().summary.mean;
        let contrast = wheat - d.summary("mu").unwrap().summary.mean;
        assert!((contrast - 0.5).abs() < 3.0 * d.summary("wheat:intercept").unwrap().summary.sd, "{contrast}");
        let fit = d.fit_result(recs.len());
        assert_eq!(fit.method, Method::Bayes);
        assert_eq!(fit.beta.len(), 10);
        assert!(fit.metrics.dic.is_some());
    }

    #[test]
    fn invalid_configuration_rejected() {
        let recs = small_panel(5, 0.3);
        let spec = HierarchySpec::full();
        let bad = ChainConfig { keep: 0, ..quick(Scheme::Blocked) };
        assert!(matches!(run_gibbs(&recs, &spec, &PriorSpec::default(), &bad), Err(GibbsError::InvalidConfig(_))));
        let prior = PriorSpec { idiosyncratic: IgPrior { shape: 0.0, scale: 1.0 }, ..Default::default() };
        assert!(matches!(run_gibbs(&recs, &spec, &prior, &quick(Scheme::Blocked)), Err(GibbsError::InvalidPrior(_))));
    }

    #[test]
    fn stored_effects_toggle() {
        let recs = small_panel(6, 0.3);
        let spec = HierarchySpec::new(vec![Level::Parcel], false).unwrap();
        let cfg = ChainConfig { store_effects: true, ..quick(Scheme::Blocked) };
        let d = run_gibbs(&recs, &spec, &PriorSpec::default(), &cfg).unwrap();
        let e = d.effect_draws.as_ref().unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].len(), 300);
        assert_eq!(e[0][0].len(), 60);
    }
}
