//! Three-phase monsoon rainfall index contracts.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{first_of_next_month, RainfallSeries};

/// Cumulative rain that must be exceeded to open Phase I.
pub const ONSET_THRESHOLD_MM: f64 = 50.0;
pub const PHASE_DAYS: [i64; 3] = [35, 35, 45];
pub const DEFAULT_SLOPE: f64 = 10.0;
pub const DEFAULT_MAX_PAYOUT: f64 = 1000.0;

#[derive(Debug, Error)]
pub enum ActuarialError {
    #[error("invalid phase term: {0}")]
    InvalidTerm(String),
    #[error("invalid contract: {0}")]
    InvalidContract(String),
    #[error("rainfall must be finite and non-negative, got {0}")]
    Domain(f64),
    #[error("series for village `{village_id}` {year} does not cover the phase windows; missing {}", format_missing(.missing))]
    Truncated { village_id: String, year: i32, missing: Vec<NaiveDate> },
    #[error("fair premium must be positive, got {0}")]
    NonPositiveFair(f64),
    #[error("no rainfall series could be priced")]
    NoUsableSeries,
    #[error("cannot read contract file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse contract file: {0}")]
    Parse(String),
}

fn format_missing(missing: &[NaiveDate]) -> String {
    match missing {
        [] => "nothing".into(),
        [d] => d.to_string(),
        [first, .., last] => format!("{} days ({first} to {last})", missing.len()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    I,
    II,
    III,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::I, Phase::II, Phase::III];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn default_direction(self) -> Direction {
        match self {
            Phase::III => Direction::Excess,
            _ => Direction::Deficit,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::I => "I",
            Phase::II => "II",
            Phase::III => "III",
        })
    }
}

impl FromStr for Phase {
    type Err = ActuarialError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(Phase::I),
            "II" | "2" => Ok(Phase::II),
            "III" | "3" => Ok(Phase::III),
            other => Err(ActuarialError::InvalidTerm(format!("unknown phase `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Deficit,
    Excess,
}

/// Payout terms for one phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTerm {
    pub phase: Phase,
    pub strike_mm: f64,
    pub exit_mm: f64,
    pub slope_rs_per_mm: f64,
    pub max_payout_rs: f64,
    pub direction: Direction,
}

impl PhaseTerm {
    /// Term with the default slope, maximum and direction for the phase.
    pub fn new(phase: Phase, strike_mm: f64, exit_mm: f64) -> Result<Self, ActuarialError> {
        let t = Self {
            phase,
            strike_mm,
            exit_mm,
            slope_rs_per_mm: DEFAULT_SLOPE,
            max_payout_rs: DEFAULT_MAX_PAYOUT,
            direction: phase.default_direction(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), ActuarialError> {
        let all_finite = [self.strike_mm, self.exit_mm, self.slope_rs_per_mm, self.max_payout_rs]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite || self.strike_mm < 0.0 || self.exit_mm < 0.0 {
            return Err(ActuarialError::InvalidTerm(format!("phase {}: thresholds must be finite and >= 0", self.phase)));
        }
        if !(self.slope_rs_per_mm > 0.0 && self.max_payout_rs > 0.0) {
            return Err(ActuarialError::InvalidTerm(format!("phase {}: slope and max payout must be positive", self.phase)));
        }
        let ordered = match self.direction {
            Direction::Deficit => self.exit_mm < self.strike_mm,
            Direction::Excess => self.strike_mm < self.exit_mm,
        };
        if !ordered {
            return Err(ActuarialError::InvalidTerm(format!(
                "phase {}: strike {} and exit {} are out of order for direction {:?}",
                self.phase, self.strike_mm, self.exit_mm, self.direction
            )));
        }
        Ok(())
    }

    /// Payout in Rs for cumulative phase rainfall `r`. The exit boundary pays
    /// the maximum.
    pub fn payout(&self, r: f64) -> Result<f64, ActuarialError> {
        if !(r.is_finite() && r >= 0.0) {
            return Err(ActuarialError::Domain(r));
        }
        let (k, z, m) = (self.strike_mm, self.exit_mm, self.slope_rs_per_mm);
        Ok(match self.direction {
            Direction::Deficit => {
                if r > k {
                    0.0
                } else if r > z {
                    (k - r) * m
                } else {
                    self.max_payout_rs
                }
            }
            Direction::Excess => {
                if r < k {
                    0.0
                } else if r < z {
                    (r - k) * m
                } else {
                    self.max_payout_rs
                }
            }
        })
    }
}

/// Free-function form of [`PhaseTerm::payout`].
pub fn payout(term: &PhaseTerm, rainfall_mm: f64) -> Result<f64, ActuarialError> {
    term.payout(rainfall_mm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contract {
    pub label: String,
    pub commercial_premium_rs: Option<f64>,
    /// Phases I, II, III in order.
    pub phases: [PhaseTerm; 3],
}

impl Contract {
    pub fn new(
        label: impl Into<String>,
        phases: [PhaseTerm; 3],
        commercial_premium_rs: Option<f64>,
    ) -> Result<Self, ActuarialError> {
        let c = Self { label: label.into(), commercial_premium_rs, phases };
        c.validate()?;
        Ok(c)
    }

    /// Contract with default slopes and maxima from `(strike, exit)` per phase.
    pub fn from_thresholds(label: &str, terms: [(f64, f64); 3]) -> Result<Self, ActuarialError> {
        let mut phases = Vec::with_capacity(3);
        for (p, (k, z)) in Phase::ALL.into_iter().zip(terms) {
            phases.push(PhaseTerm::new(p, k, z)?);
        }
        Self::new(label, [phases[0], phases[1], phases[2]], None)
    }

    pub fn with_commercial_premium(mut self, premium: f64) -> Self {
        self.commercial_premium_rs = Some(premium);
        self
    }

    pub fn validate(&self) -> Result<(), ActuarialError> {
        for (i, t) in self.phases.iter().enumerate() {
            if t.phase != Phase::ALL[i] {
                return Err(ActuarialError::InvalidContract(format!(
                    "`{}`: phases must be listed as I, II, III",
                    self.label
                )));
            }
            t.validate()?;
        }
        if let Some(p) = self.commercial_premium_rs {
            if !(p.is_finite() && p >= 0.0) {
                return Err(ActuarialError::InvalidContract(format!("`{}`: negative commercial premium", self.label)));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.phases {
            t.slope_rs_per_mm *= c;
            t.max_payout_rs *= c;
        }
        out.commercial_premium_rs = out.commercial_premium_rs.map(|p| p * c);
        out
    }
}

/// The high, medium and low payout contracts offered commercially, followed
/// by three alternative designs sold the same season.
pub fn standard_contracts() -> Vec<Contract> {
    let spec: [(&str, [(f64, f64); 3]); 6] = [
        ("high", [(70.0, 10.0), (80.0, 10.0), (375.0, 450.0)]),
        ("medium", [(78.0, 15.0), (72.0, 12.0), (499.0, 580.0)]),
        ("low", [(50.0, 5.0), (60.0, 5.0), (560.0, 670.0)]),
        ("alt_high", [(45.0, 5.0), (55.0, 5.0), (500.0, 570.0)]),
        ("alt_medium", [(25.0, 0.0), (15.0, 0.0), (500.0, 580.0)]),
        ("alt_low", [(30.0, 5.0), (30.0, 5.0), (500.0, 575.0)]),
    ];
    spec.iter()
        .map(|(label, terms)| {
            let c = Contract::from_thresholds(label, *terms).expect("valid built-in contract");
            if *label == "high" {
                c.with_commercial_premium(280.0)
            } else {
                c
            }
        })
        .collect()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhaseBlock {
    phase: String,
    strike: f64,
    exit: f64,
    #[serde(default)]
    slope: Option<f64>,
    #[serde(default)]
    max_payout: Option<f64>,
    #[serde(default)]
    direction: Option<Direction>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContractBlock {
    label: String,
    #[serde(default)]
    commercial_premium_rs: Option<f64>,
    phases: Vec<PhaseBlock>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ContractFile {
    Many { contracts: Vec<ContractBlock> },
    One(ContractBlock),
}

impl ContractBlock {
    fn into_contract(self) -> Result<Contract, ActuarialError> {
        let mut slots: [Option<PhaseTerm>; 3] = [None; 3];
        for b in self.phases {
            let phase: Phase = b.phase.parse()?;
            if slots[phase.index()].is_some() {
                return Err(ActuarialError::InvalidContract(format!("`{}`: phase {phase} listed twice", self.label)));
            }
            slots[phase.index()] = Some(PhaseTerm {
                phase,
                strike_mm: b.strike,
                exit_mm: b.exit,
                slope_rs_per_mm: b.slope.unwrap_or(DEFAULT_SLOPE),
                max_payout_rs: b.max_payout.unwrap_or(DEFAULT_MAX_PAYOUT),
                direction: b.direction.unwrap_or(phase.default_direction()),
            });
        }
        let missing: Vec<String> =
            Phase::ALL.iter().filter(|p| slots[p.index()].is_none()).map(|p| p.to_string()).collect();
        if !missing.is_empty() {
            return Err(ActuarialError::InvalidContract(format!(
                "`{}`: missing phase(s) {}",
                self.label,
                missing.join(", ")
            )));
        }
        let phases = slots.map(|s| s.expect("checked"));
        Contract::new(self.label, phases, self.commercial_premium_rs)
    }
}

fn contracts_from(file: ContractFile) -> Result<Vec<Contract>, ActuarialError> {
    let blocks = match file {
        ContractFile::Many { contracts } => contracts,
        ContractFile::One(c) => vec![c],
    };
    if blocks.is_empty() {
        return Err(ActuarialError::InvalidContract("file lists no contracts".into()));
    }
    blocks.into_iter().map(ContractBlock::into_contract).collect()
}

pub fn parse_contracts_json(s: &str) -> Result<Vec<Contract>, ActuarialError> {
    contracts_from(serde_json::from_str(s).map_err(|e| ActuarialError::Parse(e.to_string()))?)
}

pub fn parse_contracts_toml(s: &str) -> Result<Vec<Contract>, ActuarialError> {
    contracts_from(toml::from_str(s).map_err(|e| ActuarialError::Parse(e.to_string()))?)
}

/// Reads one contract or a `contracts` list from a `.json` or `.toml` file.
pub fn load_contracts(path: impl AsRef<Path>) -> Result<Vec<Contract>, ActuarialError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("toml") => parse_contracts_toml(&text),
        Some("json") => parse_contracts_json(&text),
        _ => parse_contracts_json(&text).or_else(|_| parse_contracts_toml(&text)),
    }
}

/// Inclusive phase windows for one village-year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseWindows {
    pub village_id: String,
    pub year: i32,
    pub start: [NaiveDate; 3],
    pub end: [NaiveDate; 3],
    /// False when Phase I opened on the fallback date.
    pub threshold_met: bool,
}

impl PhaseWindows {
    fn from_start(village_id: &str, year: i32, first: NaiveDate, threshold_met: bool) -> Self {
        let mut start = [first; 3];
        let mut end = [first; 3];
        let mut s = first;
        for i in 0..3 {
            start[i] = s;
            end[i] = s + Duration::days(PHASE_DAYS[i] - 1);
            s = end[i] + Duration::days(1);
        }
        Self { village_id: village_id.to_string(), year, start, end, threshold_met }
    }

    pub fn window(&self, phase: Phase) -> (NaiveDate, NaiveDate) {
        (self.start[phase.index()], self.end[phase.index()])
    }
}

/// Locates the three phase windows. Phase I opens on the first day that
/// rain accumulated since the monsoon start exceeds 50 mm, or on the first
/// of the following month when the first month stays at or below 50 mm.
pub fn detect_phases(series: &RainfallSeries) -> Result<PhaseWindows, ActuarialError> {
    let onset = series.region.monsoon_start(series.year);
    let fallback = first_of_next_month(onset);
    let truncated = |to: NaiveDate| -> Result<(), ActuarialError> {
        let (first, last) = match (series.first_date(), series.last_date()) {
            (Some(f), Some(l)) => (f, l),
            _ => {
                return Err(ActuarialError::Truncated {
                    village_id: series.village_id.clone(),
                    year: series.year,
                    missing: onset.iter_days().take_while(|d| *d <= to).collect(),
                })
            }
        };
        if first > onset || last < to {
            let mut missing: Vec<NaiveDate> = onset.iter_days().take_while(|d| *d < first && *d <= to).collect();
            missing.extend(last.succ_opt().into_iter().flat_map(|d| d.iter_days()).take_while(|d| *d <= to));
            missing.retain(|d| *d >= onset);
            return Err(ActuarialError::Truncated { village_id: series.village_id.clone(), year: series.year, missing });
        }
        Ok(())
    };

    truncated(fallback - Duration::days(1))?;
    let mut cumulative = 0.0;
    let mut start = None;
    for day in onset.iter_days().take_while(|d| *d < fallback) {
        cumulative += series.rain_on(day).unwrap_or(0.0);
        if cumulative > ONSET_THRESHOLD_MM {
            start = Some(day);
            break;
        }
    }
    let windows = PhaseWindows::from_start(&series.village_id, series.year, start.unwrap_or(fallback), start.is_some());
    truncated(windows.end[2])?;
    Ok(windows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTotal {
    pub rain_mm: f64,
    /// Days inside the window with no observation (counted as dry).
    pub missing_days: usize,
}

/// Total rainfall over the inclusive window of `phase`.
pub fn phase_total(series: &RainfallSeries, windows: &PhaseWindows, phase: Phase) -> PhaseTotal {
    let (from, to) = windows.window(phase);
    let lo = series.observations.partition_point(|o| o.date < from);
    let hi = series.observations.partition_point(|o| o.date <= to);
    let obs = &series.observations[lo..hi];
    let days = (to - from).num_days() as usize + 1;
    PhaseTotal { rain_mm: obs.iter().map(|o| o.rain_mm).sum(), missing_days: days - obs.len() }
}

pub fn loading_factor(paid: f64, fair: f64) -> Result<f64, ActuarialError> {
    if !(fair > 0.0 && fair.is_finite()) {
        return Err(ActuarialError::NonPositiveFair(fair));
    }
    if !(paid >= 0.0 && paid.is_finite()) {
        return Err(ActuarialError::InvalidContract(format!("paid premium {paid} must be non-negative")));
    }
    Ok(paid / fair)
}

/// Expected years until a payout when each of the three phases pays
/// independently with probability `p`: `(1/p)/3`. Infinite when `p` is 0.
pub fn years_until_payout(probability: f64) -> f64 {
    if probability > 0.0 {
        1.0 / probability / 3.0
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseBreakdown {
    pub phase: Phase,
    pub mean_payout_rs: f64,
    pub payout_frequency: f64,
    pub mean_rain_mm: f64,
}

/// One village-year-phase cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPayout {
    pub village_id: String,
    pub year: i32,
    pub phase: Phase,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub rain_mm: f64,
    pub payout_rs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedSeries {
    pub village_id: String,
    pub year: i32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingResult {
    pub label: String,
    pub fair_premium_rs: f64,
    pub payout_probability: f64,
    pub loading_factor: Option<f64>,
    pub years_until_payout: f64,
    pub phases: Vec<PhaseBreakdown>,
    pub n_cells: usize,
    pub cells: Vec<CellPayout>,
    pub excluded: Vec<ExcludedSeries>,
    pub warnings: Vec<String>,
}

/// Windows and phase totals for every series, computed once and shared
/// across contracts.
#[derive(Debug, Clone)]
pub struct PreparedPanel {
    pub cells: Vec<(PhaseWindows, [PhaseTotal; 3])>,
    pub excluded: Vec<ExcludedSeries>,
    pub warnings: Vec<String>,
}

pub fn prepare_panel(panel: &[RainfallSeries]) -> PreparedPanel {
    let mut cells = Vec::new();
    let mut excluded = Vec::new();
    let mut warnings = Vec::new();
    for s in panel {
        match detect_phases(s) {
            Ok(w) => {
                let totals = Phase::ALL.map(|p| phase_total(s, &w, p));
                for (p, t) in Phase::ALL.iter().zip(&totals) {
                    if t.missing_days > 0 {
                        warnings.push(format!(
                            "village `{}` {} phase {p}: {} day(s) without observations counted as dry",
                            s.village_id, s.year, t.missing_days
                        ));
                    }
                }
                cells.push((w, totals));
            }
            Err(e) => excluded.push(ExcludedSeries { village_id: s.village_id.clone(), year: s.year, reason: e.to_string() }),
        }
    }
    PreparedPanel { cells, excluded, warnings }
}

/// Prices one contract against every usable village-year of the panel.
pub fn price(contract: &Contract, panel: &[RainfallSeries]) -> Result<PricingResult, ActuarialError> {
    price_prepared(contract, &prepare_panel(panel))
}

/// Prices many contracts in parallel against one panel.
pub fn price_all(contracts: &[Contract], panel: &[RainfallSeries]) -> Result<Vec<PricingResult>, ActuarialError> {
    let prepared = prepare_panel(panel);
    contracts.par_iter().map(|c| price_prepared(c, &prepared)).collect()
}

pub fn price_prepared(contract: &Contract, panel: &PreparedPanel) -> Result<PricingResult, ActuarialError> {
    contract.validate()?;
    if panel.cells.is_empty() {
        return Err(ActuarialError::NoUsableSeries);
    }
    let n_years = panel.cells.len() as f64;
    let mut cells = Vec::with_capacity(3 * panel.cells.len());
    let mut sums = [0.0; 3];
    let mut hits = [0usize; 3];
    let mut rain = [0.0; 3];
    for (w, totals) in &panel.cells {
        for (i, term) in contract.phases.iter().enumerate() {
            let r = totals[i].rain_mm;
            let pay = term.payout(r)?;
            sums[i] += pay;
            rain[i] += r;
            if pay > 0.0 {
                hits[i] += 1;
            }
            cells.push(CellPayout {
                village_id: w.village_id.clone(),
                year: w.year,
                phase: term.phase,
                start: w.start[i],
                end: w.end[i],
                rain_mm: r,
                payout_rs: pay,
            });
        }
    }
    let phases: Vec<PhaseBreakdown> = Phase::ALL
        .iter()
        .map(|&p| {
            let i = p.index();
            PhaseBreakdown {
                phase: p,
                mean_payout_rs: sums[i] / n_years,
                payout_frequency: hits[i] as f64 / n_years,
                mean_rain_mm: rain[i] / n_years,
            }
        })
        .collect();
    let fair: f64 = phases.iter().map(|p| p.mean_payout_rs).sum();
    let n_cells = cells.len();
    let probability = hits.iter().sum::<usize>() as f64 / n_cells as f64;
    let loading = match contract.commercial_premium_rs {
        Some(paid) if fair > 0.0 => Some(loading_factor(paid, fair)?),
        _ => None,
    };
    let mut warnings = panel.warnings.clone();
    if contract.commercial_premium_rs.is_some() && fair == 0.0 {
        warnings.push(format!("`{}`: fair premium is zero, loading factor undefined", contract.label));
    }
    Ok(PricingResult {
        label: contract.label.clone(),
        fair_premium_rs: fair,
        payout_probability: probability,
        loading_factor: loading,
        years_until_payout: years_until_payout(probability),
        phases,
        n_cells,
        cells,
        excluded: panel.excluded.clone(),
        warnings,
    })
}

fn rs(v: f64) -> String {
    format!("{v:.1}")
}

/// One row per contract: thresholds and maxima per phase, then the
/// premium, probability, loading factor and years until payout.
pub fn write_pricing_report<W: Write>(
    writer: W,
    rows: &[(&Contract, &PricingResult)],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["contract".to_string()];
    for p in Phase::ALL {
        for f in ["strike", "exit", "max"] {
            header.push(format!("phase{}_{f}", p.index() + 1));
        }
    }
    header.extend(
        ["fair_premium_rs", "payout_probability", "loading_factor", "years_until_payout", "n_cells"].map(String::from),
    );
    w.write_record(&header)?;
    for (c, r) in rows {
        let mut row = vec![c.label.clone()];
        for t in &c.phases {
            row.push(t.strike_mm.to_string());
            row.push(t.exit_mm.to_string());
            row.push(rs(t.max_payout_rs));
        }
        row.push(rs(r.fair_premium_rs));
        row.push(format!("{:.4}", r.payout_probability));
        row.push(r.loading_factor.map(|l| format!("{l:.2}")).unwrap_or_default());
        row.push(if r.years_until_payout.is_finite() { format!("{:.2}", r.years_until_payout) } else { "inf".into() });
        row.push(r.n_cells.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-cell payouts for every priced contract.
pub fn write_payout_ledger<W: Write>(writer: W, results: &[PricingResult]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["contract", "village_id", "year", "phase", "start", "end", "rain_mm", "payout_rs"])?;
    for r in results {
        for c in &r.cells {
            w.write_record([
                r.label.clone(),
                c.village_id.clone(),
                c.year.to_string(),
                c.phase.to_string(),
                c.start.to_string(),
                c.end.to_string(),
                c.rain_mm.to_string(),
                c.payout_rs.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DailyRain, Region};
    use chrono::Datelike;
    use proptest::prelude::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn series(region: Region, from: NaiveDate, days: usize, rain: impl Fn(NaiveDate) -> f64) -> RainfallSeries {
        let observations = from.iter_days().take(days).map(|date| DailyRain { date, rain_mm: rain(date) }).collect();
        RainfallSeries { village_id: "v".into(), year: from.year(), region, observations, warnings: vec![] }
    }

    #[test]
    fn high_contract_phase_one_values() {
        let t = PhaseTerm::new(Phase::I, 70.0, 10.0).unwrap();
        assert_eq!(t.payout(70.0).unwrap(), 0.0);
        assert_eq!(t.payout(40.0).unwrap(), 300.0);
        assert_eq!(t.payout(5.0).unwrap(), 1000.0);
        assert_eq!(t.payout(10.0).unwrap(), 1000.0);
        assert!(t.payout(-1.0).is_err());
        let e = PhaseTerm::new(Phase::III, 375.0, 450.0).unwrap();
        assert_eq!(e.payout(375.0).unwrap(), 0.0);
        assert_eq!(e.payout(400.0).unwrap(), 250.0);
        assert_eq!(e.payout(500.0).unwrap(), 1000.0);
    }

    #[test]
    fn zero_exit_rule() {
        let t = PhaseTerm::new(Phase::I, 25.0, 0.0).unwrap();
        assert_eq!(t.payout(0.0).unwrap(), 1000.0);
        assert_eq!(t.payout(25.0).unwrap(), 0.0);
        assert_eq!(t.payout(30.0).unwrap(), 0.0);
        assert_eq!(t.payout(5.0).unwrap(), 200.0);
    }

    #[test]
    fn term_validation() {
        assert!(PhaseTerm::new(Phase::I, 10.0, 70.0).is_err());
        assert!(PhaseTerm::new(Phase::III, 450.0, 375.0).is_err());
        let mut t = PhaseTerm::new(Phase::I, 70.0, 10.0).unwrap();
        t.slope_rs_per_mm = 0.0;
        assert!(t.validate().is_err());
    }

    #[test]
    fn early_onset_windows() {
        let s = series(Region::EasternCentral, d(2010, 5, 25), 150, |x| if x == d(2010, 6, 3) { 60.0 } else { 0.0 });
        let w = detect_phases(&s).unwrap();
        assert!(w.threshold_met);
        assert_eq!(w.start, [d(2010, 6, 3), d(2010, 7, 8), d(2010, 8, 12)]);
        assert_eq!(w.end[2], d(2010, 9, 25));
    }

    #[test]
    fn dry_june_falls_back() {
        let s = series(Region::EasternCentral, d(2010, 6, 1), 160, |_| 0.0);
        let w = detect_phases(&s).unwrap();
        assert!(!w.threshold_met);
        assert_eq!(w.start[0], d(2010, 7, 1));
    }

    #[test]
    fn exactly_fifty_does_not_trigger() {
        let s = series(Region::EasternCentral, d(2010, 6, 1), 160, |x| if x == d(2010, 6, 10) { 50.0 } else { 0.0 });
        assert_eq!(detect_phases(&s).unwrap().start[0], d(2010, 7, 1));
    }

    #[test]
    fn truncated_series_lists_missing_dates() {
        let s = series(Region::EasternCentral, d(2010, 6, 1), 60, |_| 0.0);
        match detect_phases(&s) {
            Err(ActuarialError::Truncated { missing, .. }) => {
                assert_eq!(missing.first(), Some(&d(2010, 7, 31)));
                assert_eq!(missing.last(), Some(&d(2010, 10, 23)));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn phase_totals() {
        let s = series(Region::EasternCentral, d(2010, 6, 1), 160, |_| 2.0);
        let w = detect_phases(&s).unwrap();
        assert_eq!(phase_total(&s, &w, Phase::I).rain_mm, 70.0);
        assert_eq!(phase_total(&s, &w, Phase::III).rain_mm, 90.0);
    }

    #[test]
    fn loading_and_years() {
        assert!((loading_factor(280.0, 190.9).unwrap() - 1.467).abs() < 1e-3);
        assert_eq!(loading_factor(5.0, 5.0).unwrap(), 1.0);
        assert!(loading_factor(5.0, 0.0).is_err());
        assert!((years_until_payout(0.14) - 2.381).abs() < 1e-3);
        assert!(years_until_payout(0.0).is_infinite());
    }

    #[test]
    fn contract_files() {
        let json = r#"{"label":"x","commercial_premium_rs":280,"phases":[
            {"phase":"I","strike":70,"exit":10},
            {"phase":"II","strike":80,"exit":10,"slope":12},
            {"phase":"III","strike":375,"exit":450,"max_payout":900}]}"#;
        let c = &parse_contracts_json(json).unwrap()[0];
        assert_eq!(c.phases[1].slope_rs_per_mm, 12.0);
        assert_eq!(c.phases[2].direction, Direction::Excess);
        assert_eq!(c.phases[2].max_payout_rs, 900.0);
        let toml = r#"
            [[contracts]]
            label = "a"
            phases = [
              { phase = "I", strike = 70, exit = 10 },
              { phase = "II", strike = 80, exit = 10 },
              { phase = "III", strike = 375, exit = 450 },
            ]
        "#;
        assert_eq!(parse_contracts_toml(toml).unwrap()[0].label, "a");
        let missing = r#"{"label":"x","phases":[{"phase":"I","strike":70,"exit":10}]}"#;
        assert!(matches!(parse_contracts_json(missing), Err(ActuarialError::InvalidContract(_))));
    }

    #[test]
    fn engineered_hundred_per_phase() {
        // phase totals 60, 70 and 385 mm pay 100 Rs each under the high contract
        let onset = d(2010, 6, 1);
        let s = series(Region::EasternCentral, onset, 160, |x| {
            let k = (x - onset).num_days();
            match k {
                0 => 51.0,
                1..=34 => 9.0 / 34.0,
                35..=69 => 2.0,
                70..=114 => 385.0 / 45.0,
                _ => 0.0,
            }
        });
        let high = &standard_contracts()[0];
        let r = price(high, &[s]).unwrap();
        assert!((r.fair_premium_rs - 300.0).abs() < 1e-9, "{}", r.fair_premium_rs);
        assert_eq!(r.payout_probability, 1.0);
        assert!((r.years_until_payout - 1.0 / 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn deficit_payout_shape(k in 1.0f64..500.0, frac in 0.0f64..1.0, m in 0.1f64..50.0, big in 10.0f64..5000.0, r1 in 0.0f64..600.0, r2 in 0.0f64..600.0) {
            let z = k * frac;
            let t = PhaseTerm { phase: Phase::I, strike_mm: k, exit_mm: z, slope_rs_per_mm: m, max_payout_rs: big, direction: Direction::Deficit };
            let (a, b) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let (pa, pb) = (t.payout(a).unwrap(), t.payout(b).unwrap());
            prop_assert!(pa >= 0.0 && pa <= big.max((k - z) * m) + 1e-9);
            if a > z {
                prop_assert!(pa >= pb);
            }
            if b <= z {
                prop_assert_eq!(pb, big);
            }
        }
    }
}
