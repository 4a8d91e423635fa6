//! Classical fitters: OLS with season fixed effects, maximum marginal
//! likelihood for the nested variance-components model, and signed-root
//! likelihood-ratio profiles.

mod mle;
mod ols;
mod profile;

pub use mle::{fit_mle, fit_mle_model, log_likelihood, MleOptions, MleSolution, VarianceParams};
pub use ols::{fit_ols, least_squares, LeastSquares};
pub use profile::{profile_zeta, write_profile_csv, GridSpec, ProfileParameter, ZetaProfile};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, TransformedRecord};
use crate::hierarchy::{build_design, build_index, DesignMatrix, GroupIndex, HierarchyError, HierarchySpec, Level};
use crate::sparse::SparseError;

#[derive(Debug, Error)]
pub enum FitError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error("design is rank deficient; collinear column(s): {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("too few observations: n = {n}, need more than {needed}")]
    TooFewObservations { n: usize, needed: usize },
    #[error("maximum likelihood did not converge after {iterations} iterations (last log-likelihood {log_likelihood})")]
    NonConvergence { iterations: usize, log_likelihood: f64, last: Box<VarianceParams> },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("invalid option: {0}")]
    InvalidOption(String),
}

impl From<SparseError> for FitError {
    fn from(e: SparseError) -> Self {
        FitError::Numerical(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ols,
    Mle,
    Bayes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponent {
    pub level: Level,
    pub variance: f64,
    pub standard_error: Option<f64>,
    /// Level has a single group; its variance cannot be estimated.
    pub unidentified: bool,
    /// Estimate sits on the zero boundary.
    pub at_boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEffects {
    pub level: Level,
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub n_obs: usize,
    pub log_likelihood: Option<f64>,
    pub aic: Option<f64>,
    pub dic: Option<f64>,
    pub p_d: Option<f64>,
    pub r_squared: Option<f64>,
    pub iterations: Option<usize>,
}

/// Output of any of the three estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: Method,
    /// Random-effect levels in the model, innermost first. Empty for OLS.
    pub levels: Vec<Level>,
    pub beta_labels: Vec<String>,
    pub beta: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub p_values: Vec<f64>,
    pub mu: Option<f64>,
    pub components: Vec<VarianceComponent>,
    /// Idiosyncratic variance.
    pub sigma2: f64,
    pub sigma2_se: Option<f64>,
    pub group_effects: Vec<GroupEffects>,
    pub metrics: FitMetrics,
    /// Standard errors and p-values rely on asymptotic normality.
    pub normality_assumed: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn variance(&self, level: Level) -> Option<f64> {
        self.components.iter().find(|c| c.level == level).map(|c| c.variance)
    }

    /// (parcel, household, season, village, time, idiosyncratic); levels not
    /// in the model are `None`.
    pub fn variance_profile(&self) -> ([Option<f64>; 5], f64) {
        (Level::ALL.map(|l| self.variance(l)), self.sigma2)
    }

    pub fn effects(&self, level: Level) -> Option<&GroupEffects> {
        self.group_effects.iter().find(|g| g.level == level)
    }

    pub fn beta_index(&self, label: &str) -> Option<usize> {
        self.beta_labels.iter().position(|l| l == label)
    }
}

/// Records with their index and design, ready for any fitter.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub y: Vec<f64>,
    pub index: GroupIndex,
    pub design: DesignMatrix,
}

pub fn prepare(records: &[TransformedRecord], spec: &HierarchySpec) -> Result<Prepared, FitError> {
    let index = build_index(records, spec)?;
    let design = build_design(records, spec)?;
    Ok(Prepared { y: records.iter().map(|r| r.y).collect(), index, design })
}

/// Two-sided normal p-value.
pub(crate) fn normal_p_value(z: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    if !z.is_finite() {
        return f64::NAN;
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    2.0 * n.sf(z.abs())
}
