use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_mle_model, prepare, FitError, FitResult, Method, MleOptions, VarianceParams};
use crate::data::TransformedRecord;
use crate::hierarchy::{HierarchySpec, Level};
use crate::mixed::{FixedDesign, MixedModel};

/// A quantity that can be profiled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileParameter {
    Variance(Level),
    Idiosyncratic,
    /// Fixed-effect column by label, e.g. `rice:labor`.
    Beta(String),
}

impl fmt::Display for ProfileParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProfileParameter::Variance(l) => write!(f, "sigma2_{l}"),
            ProfileParameter::Idiosyncratic => f.write_str("sigma2"),
            ProfileParameter::Beta(label) => f.write_str(label),
        }
    }
}

impl FromStr for ProfileParameter {
    type Err = FitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if matches!(t, "sigma2" | "idiosyncratic" | "sigma2_idiosyncratic") {
            return Ok(ProfileParameter::Idiosyncratic);
        }
        let bare = t.strip_prefix("sigma2_").unwrap_or(t);
        if let Ok(l) = bare.parse::<Level>() {
            return Ok(ProfileParameter::Variance(l));
        }
        if t.contains(':') {
            return Ok(ProfileParameter::Beta(t.to_string()));
        }
        Err(FitError::UnknownParameter(t.to_string()))
    }
}

/// Grid around the estimate: `points_per_side` steps on each side out to
/// `width_se` Wald standard errors, clipped at zero for variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub points_per_side: usize,
    pub width_se: f64,
    /// Explicit grid; overrides the automatic one.
    pub values: Option<Vec<f64>>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { points_per_side: 10, width_se: 4.0, values: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaProfile {
    pub parameter: String,
    pub mle_value: f64,
    pub standard_error: f64,
    /// Grid points that were successfully re-maximized, ascending.
    pub grid: Vec<f64>,
    /// Signed root likelihood ratio at each grid point.
    pub zeta: Vec<f64>,
    pub abs_zeta: Vec<f64>,
    pub log_likelihood: Vec<f64>,
    /// Grid points where the inner maximization failed.
    pub failed: Vec<f64>,
}

fn linspace(a: f64, b: f64, k: usize) -> Vec<f64> {
    (0..=k).map(|i| a + (b - a) * i as f64 / k as f64).collect()
}

fn default_grid(theta: f64, se: f64, spec: &GridSpec, lower: Option<f64>) -> Vec<f64> {
    let k = spec.points_per_side.max(1);
    let mut left = theta - spec.width_se * se;
    if let Some(lo) = lower {
        left = left.max(lo);
    }
    let mut g = linspace(left, theta, k);
    g.extend(linspace(theta, theta + spec.width_se * se, k).into_iter().skip(1));
    g
}

/// Signed-root likelihood-ratio profile of one parameter of an MLE fit.
pub fn profile_zeta(
    records: &[TransformedRecord],
    spec: &HierarchySpec,
    fit: &FitResult,
    parameter: &ProfileParameter,
    grid_spec: &GridSpec,
    options: &MleOptions,
) -> Result<ZetaProfile, FitError> {
    if fit.method != Method::Mle {
        return Err(FitError::InvalidOption("profiles require a maximum likelihood fit".into()));
    }
    let ll_hat = fit
        .metrics
        .log_likelihood
        .ok_or_else(|| FitError::InvalidOption("fit carries no log-likelihood".into()))?;
    let prep = prepare(records, spec)?;
    let model = MixedModel::from_index(prep.y.clone(), &prep.index, FixedDesign::from_design(&prep.design));
    let n_par = 1 + model.n_levels();
    let singletons = prep.index.singleton_levels();
    let mut base_fixed = vec![None; n_par];
    for (l, level) in model.levels.iter().enumerate() {
        if singletons.contains(level) {
            base_fixed[1 + l] = Some(0.0);
        }
    }
    let tau_hat: Vec<f64> = model.levels.iter().map(|&l| fit.variance(l).unwrap_or(0.0)).collect();
    let mut start = VarianceParams { sigma2: fit.sigma2, tau: tau_hat.clone() };
    for (l, t) in start.tau.iter_mut().enumerate() {
        if *t == 0.0 && base_fixed[1 + l].is_none() {
            *t = 1e-3 * fit.sigma2;
        }
    }

    let (theta_hat, se, lower) = match parameter {
        ProfileParameter::Variance(level) => {
            let c = fit
                .components
                .iter()
                .find(|c| c.level == *level)
                .ok_or_else(|| FitError::UnknownParameter(parameter.to_string()))?;
            let se = c.standard_error.filter(|s| s.is_finite() && *s > 0.0).unwrap_or(if c.variance > 0.0 {
                0.5 * c.variance
            } else {
                0.05 * fit.sigma2
            });
            (c.variance, se, Some(0.0))
        }
        ProfileParameter::Idiosyncratic => {
            let se = fit.sigma2_se.filter(|s| s.is_finite() && *s > 0.0).unwrap_or(0.1 * fit.sigma2);
            (fit.sigma2, se, Some(1e-3 * fit.sigma2))
        }
        ProfileParameter::Beta(label) => {
            let j = fit.beta_index(label).ok_or_else(|| FitError::UnknownParameter(label.clone()))?;
            (fit.beta[j], fit.standard_errors[j], None)
        }
    };
    let grid = match &grid_spec.values {
        Some(v) => {
            let mut v = v.clone();
            v.sort_by(f64::total_cmp);
            v
        }
        None => default_grid(theta_hat, se, grid_spec, lower),
    };

    let beta_model = match parameter {
        ProfileParameter::Beta(label) => {
            let j = model.fixed.labels.iter().position(|l| l == label).expect("label checked");
            let (reduced, column) = model.fixed.without_column(j);
            let m = MixedModel::new(model.y.clone(), model.levels.clone(), model.groups.clone(), model.sizes.clone(), reduced);
            Some((m, column))
        }
        _ => None,
    };

    let evaluate_point = |theta0: f64| -> Result<f64, FitError> {
        if theta0 == theta_hat {
            return Ok(ll_hat);
        }
        match parameter {
            ProfileParameter::Variance(level) => {
                let l = model.levels.iter().position(|x| x == level).expect("level in model");
                let mut fixed = base_fixed.clone();
                fixed[1 + l] = Some(theta0);
                Ok(fit_mle_model(&model, options, Some(&start), &fixed)?.log_likelihood)
            }
            ProfileParameter::Idiosyncratic => {
                let mut fixed = base_fixed.clone();
                fixed[0] = Some(theta0);
                Ok(fit_mle_model(&model, options, Some(&start), &fixed)?.log_likelihood)
            }
            ProfileParameter::Beta(_) => {
                let (m, column) = beta_model.as_ref().expect("built above");
                let y: Vec<f64> = m.y.iter().zip(column).map(|(y, x)| y - theta0 * x).collect();
                let shifted = m.with_response(y);
                Ok(fit_mle_model(&shifted, options, Some(&start), &base_fixed)?.log_likelihood)
            }
        }
    };
    let results: Vec<(f64, Result<f64, FitError>)> = grid.par_iter().map(|&t| (t, evaluate_point(t))).collect();

    let reference = results.iter().filter_map(|(_, r)| r.as_ref().ok().copied()).fold(ll_hat, f64::max);
    let mut out = ZetaProfile {
        parameter: parameter.to_string(),
        mle_value: theta_hat,
        standard_error: se,
        grid: Vec::new(),
        zeta: Vec::new(),
        abs_zeta: Vec::new(),
        log_likelihood: Vec::new(),
        failed: Vec::new(),
    };
    for (t, r) in results {
        match r {
            Ok(ll) => {
                let lr = (2.0 * (reference - ll)).max(0.0);
                let z = (t - theta_hat).signum() * lr.sqrt();
                out.grid.push(t);
                out.zeta.push(if t == theta_hat { 0.0 } else { z });
                out.abs_zeta.push(lr.sqrt());
                out.log_likelihood.push(ll);
            }
            Err(_) => out.failed.push(t),
        }
    }
    Ok(out)
}

/// Writes profiles as `parameter,theta,abs_zeta` rows.
pub fn write_profile_csv<W: Write>(writer: W, profiles: &[ZetaProfile]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["parameter", "theta", "abs_zeta"])?;
    for p in profiles {
        for (t, z) in p.grid.iter().zip(&p.abs_zeta) {
            w.write_record([p.parameter.as_str(), &t.to_string(), &z.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
