use std::path::{Path, PathBuf};

use agrisk::data::{Crop, PanelSchema};
use agrisk::estimation::{GridSpec, MleOptions};
use agrisk::gibbs::{ChainConfig, PriorSpec};
use agrisk::hierarchy::Level;
use agrisk::synthetic::{GenerativeConfig, RainfallGenConfig};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub input: Option<PathBuf>,
    pub rainfall: Option<PathBuf>,
    pub contracts: Option<PathBuf>,
    pub schema: PanelSchema,
    pub hierarchy: HierarchyConfig,
    pub mle: MleOptions,
    pub priors: PriorSpec,
    pub chains: ChainConfig,
    pub profile: GridSpec,
    pub simulate: GenerativeConfig,
    pub rainfall_generator: RainfallGenConfig,
    pub calibration: Option<CalibrationConfig>,
    pub histogram_bins: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchyConfig {
    pub levels: Vec<Level>,
    pub include_covariates: bool,
    /// Restricts the panel to these crops before fitting.
    pub crops: Option<Vec<Crop>>,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self { levels: Level::ALL.to_vec(), include_covariates: true, crops: None }
    }
}

/// Rainfall calibration against one of the built-in or file contracts.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub contract: String,
    pub probability: Option<f64>,
    pub premium: Option<f64>,
    #[serde(default = "default_sds")]
    pub sds: [f64; 3],
}

fn default_sds() -> [f64; 3] {
    [60.0, 60.0, 80.0]
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input("config", format!("cannot read {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text).map_err(|e| CliError::input("config", format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| CliError::input("config", format!("{}: {e}", path.display())))
        }
    }
}
