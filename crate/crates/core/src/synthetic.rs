//! Simulated yield panels and rainfall panels with known truth.

use chrono::Duration;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuarial::{Contract, Direction, PHASE_DAYS};
use crate::data::{first_of_next_month, Crop, DailyRain, RainfallSeries, Region, YieldRecord, N_INPUTS};
use crate::decomposition::{decompose, DecompositionError, VarianceDecomposition};

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid generator configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Decomposition(#[from] DecompositionError),
    #[error("calibration failed: {0}")]
    Calibration(String),
}

/// Distribution of a level's disturbances, always standardized to mean zero
/// and the target variance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    #[default]
    Normal,
    /// Shifted lognormal with the given skewness.
    LognormalShifted { skew: f64 },
}

/// Log-scale variance of a lognormal with skewness `skew`.
fn lognormal_log_variance(skew: f64) -> f64 {
    let f = |s2: f64| (s2.exp() + 2.0) * (s2.exp() - 1.0).sqrt() - skew;
    let (mut lo, mut hi) = (0.0, 1.0);
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy)]
struct Sampler {
    sd: f64,
    log_sd: Option<f64>,
}

impl Sampler {
    fn new(variance: f64, family: Family) -> Self {
        let log_sd = match family {
            Family::LognormalShifted { skew } if skew > 0.0 => Some(lognormal_log_variance(skew).sqrt()),
            _ => None,
        };
        Self { sd: variance.sqrt(), log_sd }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        if self.sd == 0.0 {
            return 0.0;
        }
        match self.log_sd {
            None => self.sd * z,
            Some(s) => {
                let s2 = s * s;
                let mean = (s2 / 2.0).exp();
                let sd = ((s2.exp() - 1.0) * s2.exp()).sqrt();
                self.sd * ((s * z).exp() - mean) / sd
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropTruth {
    pub crop: Crop,
    /// Relative frequency in the panel.
    pub weight: f64,
    /// Added to `mu` for this crop.
    pub intercept_shift: f64,
    /// Coefficients on the transformed labor, fertilizer, mechanization and
    /// pesticide inputs.
    pub slopes: [f64; N_INPUTS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerativeConfig {
    pub villages: usize,
    pub times: usize,
    pub households_per_village: usize,
    pub parcels_per_household: usize,
    /// Chance that a parcel is observed in a given period.
    pub obs_probability: f64,
    pub mu: f64,
    /// Parcel, household, season, village, time, idiosyncratic.
    pub variances: [f64; 6],
    pub families: [Family; 6],
    pub crops: Vec<CropTruth>,
    /// Log-scale mean of each raw input; inputs are lognormal with unit log sd.
    pub input_log_means: [f64; N_INPUTS],
    /// Chance that a raw input is exactly zero.
    pub zero_input_probability: f64,
    pub seed: u64,
}

impl Default for GenerativeConfig {
    fn default() -> Self {
        let crop = |crop, weight, intercept_shift, slopes| CropTruth { crop, weight, intercept_shift, slopes };
        Self {
            villages: 30,
            times: 10,
            households_per_village: 33,
            parcels_per_household: 5,
            obs_probability: 0.24,
            mu: 7.0,
            variances: [0.933, 0.002, 0.790, 0.623, 0.126, 1.623],
            families: [Family::Normal; 6],
            crops: vec![
                crop(Crop::Rice, 0.35, 0.0, [0.12, 0.08, 0.02, 0.03]),
                crop(Crop::Sorghum, 0.2, -0.6, [0.10, 0.05, 0.01, 0.02]),
                crop(Crop::Wheat, 0.15, -0.2, [0.08, 0.10, 0.03, 0.01]),
                crop(Crop::Maize, 0.15, 0.1, [0.09, 0.07, 0.02, 0.02]),
                crop(Crop::Cotton, 0.15, -0.9, [0.05, 0.06, 0.01, 0.04]),
            ],
            input_log_means: [5.5, 4.5, 6.0, 5.0],
            zero_input_probability: 0.1,
            seed: 1,
        }
    }
}

impl GenerativeConfig {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |m: &str| Err(SyntheticError::Config(m.to_string()));
        if self.villages == 0 || self.times == 0 || self.households_per_village == 0 || self.parcels_per_household == 0 {
            return bad("all cardinalities must be at least 1");
        }
        if !(self.obs_probability > 0.0 && self.obs_probability <= 1.0) {
            return bad("obs_probability must lie in (0, 1]");
        }
        if self.variances.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("variances must be finite and non-negative");
        }
        for f in &self.families {
            if let Family::LognormalShifted { skew } = f {
                if !(skew.is_finite() && *skew >= 0.0) {
                    return bad("skew targets must be non-negative");
                }
            }
        }
        if self.crops.is_empty() || self.crops.iter().any(|c| !(c.weight >= 0.0)) || self.crops.iter().all(|c| c.weight == 0.0) {
            return bad("crop mix needs at least one positive weight");
        }
        if !(0.0..1.0).contains(&self.zero_input_probability) {
            return bad("zero_input_probability must lie in [0, 1)");
        }
        if !self.mu.is_finite() {
            return bad("mu must be finite");
        }
        Ok(())
    }
}

/// Ground truth behind a simulated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeTruth {
    pub config: GenerativeConfig,
    /// Decomposition of the generating variances; absent when all are zero.
    pub decomposition: Option<VarianceDecomposition>,
    /// Sample variance of the drawn disturbances per level (all groups,
    /// observed or not) and of the idiosyncratic noise.
    pub realized_variances: [f64; 6],
    /// Parcel, household, season, village, time.
    pub group_counts: [usize; 5],
    pub n_obs: usize,
    /// Observations whose transformed yield fell below zero and were set to zero.
    pub clipped_yields: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPanel {
    pub records: Vec<YieldRecord>,
    pub truth: GenerativeTruth,
    /// Drawn disturbances per level, parcel through time.
    pub effects: [Vec<f64>; 5],
}

fn sample_variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

struct VillageDraw {
    records: Vec<YieldRecord>,
    noise: Vec<f64>,
    parcel: Vec<f64>,
    household: Vec<f64>,
    season: Vec<f64>,
    village: f64,
    clipped: usize,
}

fn width(n: usize) -> usize {
    n.to_string().len()
}

/// Simulates a nested panel. Time effects are shared; everything below a
/// village is drawn from that village's own substream.
pub fn generate_panel(cfg: &GenerativeConfig) -> Result<SyntheticPanel, SyntheticError> {
    cfg.validate()?;
    let samplers: Vec<Sampler> = (0..6).map(|i| Sampler::new(cfg.variances[i], cfg.families[i])).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let time_fx: Vec<f64> = (0..cfg.times).map(|_| samplers[4].draw(&mut rng)).collect();
    let crop_pick = WeightedIndex::new(cfg.crops.iter().map(|c| c.weight)).map_err(|e| SyntheticError::Config(e.to_string()))?;
    let (wv, wt, wh, wp) = (width(cfg.villages), width(cfg.times), width(cfg.households_per_village), width(cfg.parcels_per_household));
    let time_ids: Vec<String> = (1..=cfg.times).map(|t| format!("t{t:0wt$}")).collect();

    let draws: Vec<VillageDraw> = (0..cfg.villages)
        .into_par_iter()
        .map(|v| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(v as u64 + 1);
            let village_id = format!("v{:0wv$}", v + 1);
            let village = samplers[3].draw(&mut rng);
            let season: Vec<f64> = (0..cfg.times).map(|_| samplers[2].draw(&mut rng)).collect();
            let mut out = VillageDraw {
                records: Vec::new(),
                noise: Vec::new(),
                parcel: Vec::new(),
                household: Vec::new(),
                season: season.clone(),
                village,
                clipped: 0,
            };
            for h in 0..cfg.households_per_village {
                let household_id = format!("{village_id}h{:0wh$}", h + 1);
                let hh = samplers[1].draw(&mut rng);
                out.household.push(hh);
                for p in 0..cfg.parcels_per_household {
                    let parcel_id = format!("{household_id}p{:0wp$}", p + 1);
                    let pc = samplers[0].draw(&mut rng);
                    out.parcel.push(pc);
                    for t in 0..cfg.times {
                        if !rng.random_bool(cfg.obs_probability) {
                            continue;
                        }
                        let crop = &cfg.crops[crop_pick.sample(&mut rng)];
                        let mut raw = [0.0; N_INPUTS];
                        let mut x = [0.0; N_INPUTS];
                        for j in 0..N_INPUTS {
                            if !rng.random_bool(cfg.zero_input_probability) {
                                let z: f64 = rng.sample(StandardNormal);
                                raw[j] = (cfg.input_log_means[j] + z).exp();
                            }
                            x[j] = raw[j].asinh();
                        }
                        let e = samplers[5].draw(&mut rng);
                        out.noise.push(e);
                        let mut y = cfg.mu + crop.intercept_shift + time_fx[t] + village + season[t] + hh + pc + e;
                        y += crop.slopes.iter().zip(&x).map(|(b, xi)| b * xi).sum::<f64>();
                        if y < 0.0 {
                            y = 0.0;
                            out.clipped += 1;
                        }
                        out.records.push(YieldRecord {
                            parcel_id: parcel_id.clone(),
                            household_id: household_id.clone(),
                            village_id: village_id.clone(),
                            time_id: time_ids[t].clone(),
                            crop: crop.crop.clone(),
                            yield_raw: y.sinh(),
                            labor: raw[0],
                            fertilizer: raw[1],
                            mechanization: raw[2],
                            pesticide: raw[3],
                            area: None,
                            seasonal_rain_mm: None,
                        });
                    }
                }
            }
            out
        })
        .collect();

    let mut records = Vec::new();
    let mut effects: [Vec<f64>; 5] = Default::default();
    let mut noise = Vec::new();
    let mut clipped = 0;
    for d in draws {
        records.extend(d.records);
        noise.extend(d.noise);
        effects[0].extend(d.parcel);
        effects[1].extend(d.household);
        effects[2].extend(d.season);
        effects[3].push(d.village);
        clipped += d.clipped;
    }
    effects[4] = time_fx;
    let mut realized = [0.0; 6];
    for (r, e) in realized.iter_mut().zip(&effects) {
        *r = sample_variance(e);
    }
    realized[5] = sample_variance(&noise);
    let group_counts = [effects[0].len(), effects[1].len(), effects[2].len(), effects[3].len(), effects[4].len()];
    let truth = GenerativeTruth {
        config: cfg.clone(),
        decomposition: match decompose(&cfg.variances) {
            Ok(d) => Some(d),
            Err(DecompositionError::ZeroTotal) => None,
            Err(e) => return Err(e.into()),
        },
        realized_variances: realized,
        group_counts,
        n_obs: records.len(),
        clipped_yields: clipped,
    };
    Ok(SyntheticPanel { records, truth, effects })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTarget {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RainfallGenConfig {
    pub villages: usize,
    pub years: usize,
    pub first_year: i32,
    /// Share of villages in the western region.
    pub western_fraction: f64,
    /// Phase I, II, III totals are normal with these moments, clipped at 0.
    pub targets: [PhaseTarget; 3],
    /// Chance that a village-year never crosses the onset threshold.
    pub fallback_probability: f64,
    pub seed: u64,
}

impl Default for RainfallGenConfig {
    fn default() -> Self {
        Self {
            villages: 20,
            years: 5,
            first_year: 2005,
            western_fraction: 0.3,
            targets: [
                PhaseTarget { mean: 150.0, sd: 60.0 },
                PhaseTarget { mean: 180.0, sd: 70.0 },
                PhaseTarget { mean: 300.0, sd: 80.0 },
            ],
            fallback_probability: 0.15,
            seed: 1,
        }
    }
}

impl RainfallGenConfig {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        if self.villages == 0 || self.years == 0 {
            return Err(SyntheticError::Config("villages and years must be at least 1".into()));
        }
        if self.targets.iter().any(|t| !(t.mean.is_finite() && t.mean >= 0.0 && t.sd.is_finite() && t.sd >= 0.0)) {
            return Err(SyntheticError::Config("phase targets need mean >= 0 and sd >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.western_fraction) || !(0.0..=1.0).contains(&self.fallback_probability) {
            return Err(SyntheticError::Config("fractions must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One planned village-year before daily disaggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedYear {
    pub village_id: String,
    pub year: i32,
    pub region: Region,
    /// Day offset of the Phase I start from the monsoon start; `None` opens
    /// Phase I on the fallback date.
    pub onset_offset: Option<i64>,
    /// Standard normal draws behind the phase totals.
    pub z: [f64; 3],
    pub totals: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RainfallPlan {
    pub years: Vec<PlannedYear>,
    /// Phase totals that came out negative and were set to zero.
    pub clipped: usize,
}

pub fn plan_rainfall(cfg: &RainfallGenConfig) -> Result<RainfallPlan, SyntheticError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let wv = width(cfg.villages);
    let mut years = Vec::with_capacity(cfg.villages * cfg.years);
    let mut clipped = 0;
    let n_western = (cfg.western_fraction * cfg.villages as f64).round() as usize;
    for v in 0..cfg.villages {
        let region = if v < n_western { Region::Western } else { Region::EasternCentral };
        for y in 0..cfg.years {
            let year = cfg.first_year + y as i32;
            let onset = region.monsoon_start(year);
            let month_days = (first_of_next_month(onset) - onset).num_days();
            let fallback = rng.random_bool(cfg.fallback_probability);
            let offset = rng.random_range(1..month_days);
            let z: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
            let totals: [f64; 3] = std::array::from_fn(|i| {
                let t = cfg.targets[i].mean + cfg.targets[i].sd * z[i];
                if t < 0.0 {
                    clipped += 1;
                }
                t.max(0.0)
            });
            years.push(PlannedYear {
                village_id: format!("v{:0wv$}", v + 1),
                year,
                region,
                onset_offset: (!fallback && totals[0] > 0.0).then_some(offset),
                z,
                totals,
            });
        }
    }
    Ok(RainfallPlan { years, clipped })
}

impl PlannedYear {
    /// Daily series whose detected windows reproduce the planned totals.
    /// For a threshold onset the 50 mm of pre-phase rain falls on the day
    /// before Phase I, so the first phase day tips the total over.
    pub fn to_series(&self) -> RainfallSeries {
        let onset = self.region.monsoon_start(self.year);
        let start = match self.onset_offset {
            Some(k) => onset + Duration::days(k),
            None => first_of_next_month(onset),
        };
        let mut observations = Vec::new();
        let mut day = onset;
        while day < start {
            let rain = if self.onset_offset.is_some() && day + Duration::days(1) == start { 50.0 } else { 0.0 };
            observations.push(DailyRain { date: day, rain_mm: rain });
            day += Duration::days(1);
        }
        for (i, &n) in PHASE_DAYS.iter().enumerate() {
            let daily = self.totals[i] / n as f64;
            for _ in 0..n {
                observations.push(DailyRain { date: day, rain_mm: daily });
                day += Duration::days(1);
            }
        }
        for _ in 0..5 {
            observations.push(DailyRain { date: day, rain_mm: 0.0 });
            day += Duration::days(1);
        }
        RainfallSeries {
            village_id: self.village_id.clone(),
            year: self.year,
            region: self.region,
            observations,
            warnings: Vec::new(),
        }
    }
}

impl RainfallPlan {
    pub fn to_series(&self) -> Vec<RainfallSeries> {
        self.years.iter().map(PlannedYear::to_series).collect()
    }
}

pub fn generate_rainfall(cfg: &RainfallGenConfig) -> Result<(Vec<RainfallSeries>, RainfallPlan), SyntheticError> {
    let plan = plan_rainfall(cfg)?;
    Ok((plan.to_series(), plan))
}

fn pays(contract: &Contract, phase: usize, r: f64) -> bool {
    contract.phases[phase].payout(r).map(|p| p > 0.0).unwrap_or(false)
}

/// Re-centres each phase so that, over the planned draws, a share
/// `probability` of cells pays under `contract`. The normal draws are kept
/// and the mean is placed between the matching empirical quantiles.
pub fn calibrate_probability(plan: &mut RainfallPlan, contract: &Contract, sds: [f64; 3], probability: f64) -> Result<[f64; 3], SyntheticError> {
    if !(0.0..=1.0).contains(&probability) {
        return Err(SyntheticError::Calibration("probability must lie in [0, 1]".into()));
    }
    let n = plan.years.len();
    let m = (probability * n as f64).round() as usize;
    let mut means = [0.0; 3];
    for i in 0..3 {
        let term = &contract.phases[i];
        let sd = sds[i];
        let mut z: Vec<f64> = plan.years.iter().map(|y| y.z[i]).collect();
        z.sort_by(f64::total_cmp);
        let k = term.strike_mm;
        // deficit pays below the strike, excess above it
        let boundary = match term.direction {
            Direction::Deficit => match m {
                0 => z[0] - 1.0,
                _ if m == n => z[n - 1] + 1.0,
                _ => 0.5 * (z[m - 1] + z[m]),
            },
            Direction::Excess => match m {
                0 => z[n - 1] + 1.0,
                _ if m == n => z[0] - 1.0,
                _ => 0.5 * (z[n - m - 1] + z[n - m]),
            },
        };
        means[i] = k - sd * boundary;
        if matches!(term.direction, Direction::Deficit) && sd == 0.0 {
            means[i] = if m * 2 >= n { (k - 1.0).max(0.0) } else { k + 1.0 };
        }
        if matches!(term.direction, Direction::Excess) && sd == 0.0 {
            means[i] = if m * 2 >= n { k + 1.0 } else { (k - 1.0).max(0.0) };
        }
        for y in &mut plan.years {
            y.totals[i] = (means[i] + sd * y.z[i]).max(0.0);
        }
    }
    plan.clipped = plan.years.iter().map(|y| y.totals.iter().filter(|t| **t == 0.0).count()).sum();
    for y in &mut plan.years {
        if y.totals[0] == 0.0 {
            y.onset_offset = None;
        }
    }
    Ok(means)
}

fn plan_premium(plan: &RainfallPlan, contract: &Contract) -> f64 {
    let n = plan.years.len() as f64;
    plan.years
        .iter()
        .map(|y| (0..3).map(|i| contract.phases[i].payout(y.totals[i]).unwrap_or(0.0)).sum::<f64>())
        .sum::<f64>()
        / n
}

/// Stretches the distance of paying cells from the strike until the fair
/// premium under `contract` equals `premium`, leaving the set of paying
/// cells unchanged. A final adjustment of cells on the linear part of the
/// payout removes the remaining gap.
pub fn calibrate_premium(plan: &mut RainfallPlan, contract: &Contract, premium: f64) -> Result<f64, SyntheticError> {
    let base: Vec<[f64; 3]> = plan.years.iter().map(|y| y.totals).collect();
    let paying: Vec<[bool; 3]> = base.iter().map(|t| std::array::from_fn(|i| pays(contract, i, t[i]))).collect();
    let apply = |plan: &mut RainfallPlan, lambda: f64| {
        for ((y, t), p) in plan.years.iter_mut().zip(&base).zip(&paying) {
            for i in 0..3 {
                if !p[i] {
                    continue;
                }
                let k = contract.phases[i].strike_mm;
                y.totals[i] = match contract.phases[i].direction {
                    Direction::Deficit => (k - lambda * (k - t[i])).clamp(0.0, k - 1e-9),
                    Direction::Excess => (k + lambda * (t[i] - k)).max(k + 1e-9),
                };
            }
        }
    };
    let (mut lo, mut hi) = (1e-6, 1.0);
    apply(plan, hi);
    while plan_premium(plan, contract) < premium {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(SyntheticError::Calibration(format!("premium {premium} is out of reach")));
        }
        apply(plan, hi);
    }
    apply(plan, lo);
    if plan_premium(plan, contract) > premium {
        return Err(SyntheticError::Calibration(format!("premium {premium} is below the minimum reachable")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        apply(plan, mid);
        if plan_premium(plan, contract) < premium {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    apply(plan, lo);
    let n = plan.years.len() as f64;
    let mut gap = (premium - plan_premium(plan, contract)) * n;
    for (y, p) in plan.years.iter_mut().zip(&paying) {
        if gap.abs() < 1e-9 {
            break;
        }
        for i in 0..3 {
            if !p[i] {
                continue;
            }
            let term = &contract.phases[i];
            let (k, z, m) = (term.strike_mm, term.exit_mm, term.slope_rs_per_mm);
            let r = y.totals[i];
            let linear = match term.direction {
                Direction::Deficit => r > z && r < k,
                Direction::Excess => r >= k && r < z,
            };
            if !linear {
                continue;
            }
            let span = (k - z).abs() * m;
            let current = term.payout(r).unwrap_or(0.0);
            let target = (current + gap).clamp(1e-6, span - 1e-6);
            let new_r = match term.direction {
                Direction::Deficit => k - target / m,
                Direction::Excess => k + target / m,
            };
            gap -= target - current;
            y.totals[i] = new_r;
        }
    }
    let achieved = plan_premium(plan, contract);
    if (achieved - premium).abs() > 1e-6 {
        return Err(SyntheticError::Calibration(format!("reached {achieved}, wanted {premium}")));
    }
    for y in &mut plan.years {
        if y.totals[0] == 0.0 {
            y.onset_offset = None;
        }
    }
    Ok(achieved)
}
