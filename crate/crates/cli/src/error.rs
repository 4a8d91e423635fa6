use std::fmt;

use agrisk::actuarial::ActuarialError;
use agrisk::data::{DataError, RowError};
use agrisk::decomposition::DecompositionError;
use agrisk::estimation::FitError;
use agrisk::gibbs::GibbsError;
use agrisk::hierarchy::HierarchyError;
use agrisk::synthetic::SyntheticError;
use serde::Serialize;

pub const EXIT_NUMERICAL: u8 = 1;
pub const EXIT_INPUT: u8 = 2;

/// Error reported to the user as JSON on stderr.
#[derive(Debug, Serialize)]
pub struct CliError {
    #[serde(skip)]
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub rows: Vec<RowError>,
}

impl CliError {
    pub fn input(kind: &'static str, message: impl Into<String>) -> Self {
        Self { code: EXIT_INPUT, kind, message: message.into(), rows: Vec::new() }
    }

    pub fn numerical(kind: &'static str, message: impl Into<String>) -> Self {
        Self { code: EXIT_NUMERICAL, kind, message: message.into(), rows: Vec::new() }
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Wrapper<'a> {
            error: &'a CliError,
            exit_code: u8,
        }
        serde_json::to_string_pretty(&Wrapper { error: self, exit_code: self.code }).expect("serializable error")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let rows = match &e {
            DataError::Rows(r) => r.clone(),
            _ => Vec::new(),
        };
        Self { code: EXIT_INPUT, kind: "data", message: e.to_string(), rows }
    }
}

impl From<HierarchyError> for CliError {
    fn from(e: HierarchyError) -> Self {
        Self::input("hierarchy", e.to_string())
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::Data(d) => d.into(),
            FitError::Hierarchy(h) => h.into(),
            FitError::RankDeficient(_) => Self::numerical("rank_deficient", e.to_string()),
            FitError::NonConvergence { .. } => Self::numerical("non_convergence", e.to_string()),
            FitError::Numerical(_) => Self::numerical("numerical", e.to_string()),
            FitError::TooFewObservations { .. } => Self::input("too_few_observations", e.to_string()),
            FitError::UnknownParameter(_) => Self::input("unknown_parameter", e.to_string()),
            FitError::InvalidOption(_) => Self::input("invalid_option", e.to_string()),
        }
    }
}

impl From<GibbsError> for CliError {
    fn from(e: GibbsError) -> Self {
        match e {
            GibbsError::Fit(f) => f.into(),
            GibbsError::NonFinite { .. } => Self::numerical("non_finite", e.to_string()),
            GibbsError::InvalidPrior(_) | GibbsError::InvalidConfig(_) => Self::input("invalid_option", e.to_string()),
            GibbsError::UnknownParameter(_) => Self::input("unknown_parameter", e.to_string()),
        }
    }
}

impl From<ActuarialError> for CliError {
    fn from(e: ActuarialError) -> Self {
        Self::input("actuarial", e.to_string())
    }
}

impl From<DecompositionError> for CliError {
    fn from(e: DecompositionError) -> Self {
        Self::input("decomposition", e.to_string())
    }
}

impl From<SyntheticError> for CliError {
    fn from(e: SyntheticError) -> Self {
        match e {
            SyntheticError::Calibration(_) => Self::numerical("calibration", e.to_string()),
            _ => Self::input("config", e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::input("io", e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::input("io", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::input("json", e.to_string())
    }
}
