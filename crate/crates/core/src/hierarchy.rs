//! Group indexes for the nested levels and the crop-varying design matrix.
//!
//! Parcels and households carry one effect each for the whole panel, so the
//! functional parent maps are parcel -> household -> village and
//! season -> (village, time). A season is the observed (village, time) pair.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Crop, TransformedRecord, INPUT_NAMES, N_INPUTS};

#[derive(Debug, Error, PartialEq)]
pub enum HierarchyError {
    #[error("invalid hierarchy spec: {0}")]
    InvalidSpec(String),
    #[error("nesting violation: {0}")]
    Consistency(String),
    #[error("observation {index} has crop `{crop}`, which is not in the allowed crop list")]
    UnknownCrop { index: usize, crop: String },
    #[error("no observations")]
    Empty,
}

/// A grouping level, ordered from innermost to outermost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Parcel,
    Household,
    Season,
    Village,
    Time,
}

impl Level {
    pub const ALL: [Level; 5] = [Level::Parcel, Level::Household, Level::Season, Level::Village, Level::Time];

    pub fn position(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Parcel => "parcel",
            Level::Household => "household",
            Level::Season => "season",
            Level::Village => "village",
            Level::Time => "time",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = HierarchyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Level::ALL
            .into_iter()
            .find(|l| l.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| HierarchyError::InvalidSpec(format!("unknown level `{s}`")))
    }
}

/// Which levels enter the model and whether inputs are included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchySpec {
    /// Innermost first.
    pub levels: Vec<Level>,
    pub include_covariates: bool,
    /// When set, any other crop is an error.
    #[serde(default)]
    pub allowed_crops: Option<Vec<Crop>>,
}

impl Default for HierarchySpec {
    fn default() -> Self {
        Self::full()
    }
}

impl HierarchySpec {
    /// All five levels with covariates.
    pub fn full() -> Self {
        Self { levels: Level::ALL.to_vec(), include_covariates: true, allowed_crops: None }
    }

    pub fn new(levels: Vec<Level>, include_covariates: bool) -> Result<Self, HierarchyError> {
        let s = Self { levels, include_covariates, allowed_crops: None };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), HierarchyError> {
        if self.levels.is_empty() {
            return Err(HierarchyError::InvalidSpec("at least one level is required".into()));
        }
        for w in self.levels.windows(2) {
            if w[0] >= w[1] {
                return Err(HierarchyError::InvalidSpec(format!(
                    "levels must be listed innermost first without repeats; `{}` cannot precede `{}`",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, level: Level) -> bool {
        self.levels.contains(&level)
    }
}

/// Index maps for one level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelIndex {
    pub level: Level,
    /// Observation -> group id.
    pub obs_group: Vec<usize>,
    /// Group id -> label, ids in order of first appearance.
    pub labels: Vec<String>,
    /// Group id -> number of observations.
    pub sizes: Vec<usize>,
}

impl LevelIndex {
    pub fn n_groups(&self) -> usize {
        self.labels.len()
    }

    fn build(level: Level, keys: impl Iterator<Item = String>) -> Self {
        let mut ids: HashMap<String, usize> = HashMap::new();
        let mut labels = Vec::new();
        let mut sizes = Vec::new();
        let obs_group = keys
            .map(|k| {
                let next = labels.len();
                let id = *ids.entry(k.clone()).or_insert(next);
                if id == next {
                    labels.push(k);
                    sizes.push(0);
                }
                sizes[id] += 1;
                id
            })
            .collect();
        Self { level, obs_group, labels, sizes }
    }
}

/// Group index maps for all five levels plus the parent maps between them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupIndex {
    pub n_obs: usize,
    /// One entry per level in [`Level::ALL`] order, whether modelled or not.
    pub levels: Vec<LevelIndex>,
    pub parcel_household: Vec<usize>,
    pub household_village: Vec<usize>,
    pub season_village: Vec<usize>,
    pub season_time: Vec<usize>,
    /// (village_id, time_id) for each season group.
    pub season_keys: Vec<(String, String)>,
    /// Levels in the fitted model, innermost first.
    pub modelled: Vec<Level>,
}

impl GroupIndex {
    pub fn level(&self, level: Level) -> &LevelIndex {
        &self.levels[level.position()]
    }

    pub fn count(&self, level: Level) -> usize {
        self.level(level).n_groups()
    }

    /// Group counts (parcel, household, season, village, time).
    pub fn counts(&self) -> [usize; 5] {
        Level::ALL.map(|l| self.count(l))
    }

    /// Modelled levels that have a single group, whose variance cannot be
    /// separated from the intercept.
    pub fn singleton_levels(&self) -> Vec<Level> {
        self.modelled.iter().copied().filter(|&l| self.count(l) < 2).collect()
    }
}

fn parent_map(child: &[usize], parent: &[usize], n_child: usize, what: (&str, &str), labels: (&LevelIndex, &LevelIndex)) -> Result<Vec<usize>, HierarchyError> {
    let mut map = vec![usize::MAX; n_child];
    let mut problems = Vec::new();
    for (&c, &p) in child.iter().zip(parent) {
        if map[c] == usize::MAX {
            map[c] = p;
        } else if map[c] != p {
            problems.push(format!(
                "{} `{}` appears under {}s `{}` and `{}`",
                what.0, labels.0.labels[c], what.1, labels.1.labels[map[c]], labels.1.labels[p]
            ));
        }
    }
    if problems.is_empty() {
        Ok(map)
    } else {
        problems.sort();
        problems.dedup();
        Err(HierarchyError::Consistency(problems.join("; ")))
    }
}

/// Assigns contiguous 0-based group ids per level by first appearance.
pub fn build_index(records: &[TransformedRecord], spec: &HierarchySpec) -> Result<GroupIndex, HierarchyError> {
    spec.validate()?;
    if records.is_empty() {
        return Err(HierarchyError::Empty);
    }
    let parcel = LevelIndex::build(Level::Parcel, records.iter().map(|r| r.parcel_id.clone()));
    let household = LevelIndex::build(Level::Household, records.iter().map(|r| r.household_id.clone()));
    let season = LevelIndex::build(Level::Season, records.iter().map(|r| r.season_label()));
    let village = LevelIndex::build(Level::Village, records.iter().map(|r| r.village_id.clone()));
    let time = LevelIndex::build(Level::Time, records.iter().map(|r| r.time_id.clone()));

    let parcel_household = parent_map(
        &parcel.obs_group,
        &household.obs_group,
        parcel.n_groups(),
        ("parcel", "household"),
        (&parcel, &household),
    )?;
    let household_village = parent_map(
        &household.obs_group,
        &village.obs_group,
        household.n_groups(),
        ("household", "village"),
        (&household, &village),
    )?;
    let season_village = parent_map(
        &season.obs_group,
        &village.obs_group,
        season.n_groups(),
        ("season", "village"),
        (&season, &village),
    )?;
    let season_time =
        parent_map(&season.obs_group, &time.obs_group, season.n_groups(), ("season", "time"), (&season, &time))?;

    let mut season_keys = vec![(String::new(), String::new()); season.n_groups()];
    for (r, &g) in records.iter().zip(&season.obs_group) {
        if season_keys[g].0.is_empty() && season_keys[g].1.is_empty() {
            season_keys[g] = (r.village_id.clone(), r.time_id.clone());
        }
    }

    Ok(GroupIndex {
        n_obs: records.len(),
        levels: vec![parcel, household, season, village, time],
        parcel_household,
        household_village,
        season_village,
        season_time,
        season_keys,
        modelled: spec.levels.clone(),
    })
}

/// Columns per crop when covariates are included: intercept then the four inputs.
pub const COLS_PER_CROP: usize = 1 + N_INPUTS;

/// Crop-blocked design. Each row is nonzero only inside its crop's block.
///
/// Column order: crops in canonical order (rice, sorghum, wheat, maize,
/// cotton, then other crops alphabetically); within a crop, intercept then
/// labor, fertilizer, mechanization, pesticide.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignMatrix {
    pub crops: Vec<Crop>,
    pub include_covariates: bool,
    pub labels: Vec<String>,
    row_crop: Vec<usize>,
    x: Vec<[f64; N_INPUTS]>,
}

impl DesignMatrix {
    pub fn n(&self) -> usize {
        self.row_crop.len()
    }

    pub fn p(&self) -> usize {
        self.labels.len()
    }

    pub fn width(&self) -> usize {
        if self.include_covariates {
            COLS_PER_CROP
        } else {
            1
        }
    }

    pub fn row_crop(&self, i: usize) -> usize {
        self.row_crop[i]
    }

    /// Nonzero-capable entries (column, value) of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let w = self.width();
        let base = self.row_crop[i] * w;
        let x = &self.x[i];
        (0..w).map(move |k| (base + k, if k == 0 { 1.0 } else { x[k - 1] }))
    }

    pub fn column_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n(), self.p());
        for i in 0..self.n() {
            for (c, v) in self.row(i) {
                m[(i, c)] = v;
            }
        }
        m
    }
}

pub fn build_design(records: &[TransformedRecord], spec: &HierarchySpec) -> Result<DesignMatrix, HierarchyError> {
    if records.is_empty() {
        return Err(HierarchyError::Empty);
    }
    if let Some(allowed) = &spec.allowed_crops {
        if let Some((index, r)) = records.iter().enumerate().find(|(_, r)| !allowed.contains(&r.crop)) {
            return Err(HierarchyError::UnknownCrop { index, crop: r.crop.to_string() });
        }
    }
    let mut crops: Vec<Crop> = records.iter().map(|r| r.crop.clone()).collect();
    crops.sort();
    crops.dedup();
    let pos: HashMap<&Crop, usize> = crops.iter().enumerate().map(|(i, c)| (c, i)).collect();
    let row_crop = records.iter().map(|r| pos[&r.crop]).collect();
    let mut labels = Vec::new();
    for c in &crops {
        labels.push(format!("{c}:intercept"));
        if spec.include_covariates {
            labels.extend(INPUT_NAMES.iter().map(|n| format!("{c}:{n}")));
        }
    }
    Ok(DesignMatrix {
        crops,
        include_covariates: spec.include_covariates,
        labels,
        row_crop,
        x: records.iter().map(|r| r.x).collect(),
    })
}
