//! Observation records, the inverse-hyperbolic-sine transform, and CSV
//! ingestion for yield panels and daily rainfall.
//!
//! Yield panels are read from a header-first CSV with the canonical columns
//! `parcel_id,household_id,village_id,time_id,crop,yield,labor,fertilizer,
//! mechanization,pesticide`. Optional `area` and `rainfall` columns are
//! carried through untouched. Column names can be remapped with
//! [`PanelSchema`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("value {0} is outside the domain of the transform (finite, >= 0)")]
    Domain(f64),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("{} invalid row(s); first: line {}: {}", .0.len(), .0[0].line, .0[0].message)]
    Rows(Vec<RowError>),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("input contains no data rows")]
    Empty,
}

/// A rejected input row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    /// 1-based line number in the source file (the header is line 1).
    pub line: u64,
    pub message: String,
}

/// Inverse hyperbolic sine, `ln(v + sqrt(v^2 + 1))`, restricted to `v >= 0`.
pub fn ihs(v: f64) -> Result<f64, DataError> {
    if !v.is_finite() || v < 0.0 {
        return Err(DataError::Domain(v));
    }
    Ok(v.asinh())
}

/// Crop grown on a parcel in a season.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Crop {
    Rice,
    Sorghum,
    Wheat,
    Maize,
    Cotton,
    Other(String),
}

impl Crop {
    fn rank(&self) -> usize {
        match self {
            Crop::Rice => 0,
            Crop::Sorghum => 1,
            Crop::Wheat => 2,
            Crop::Maize => 3,
            Crop::Cotton => 4,
            Crop::Other(_) => 5,
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Crop::Rice => "rice",
            Crop::Sorghum => "sorghum",
            Crop::Wheat => "wheat",
            Crop::Maize => "maize",
            Crop::Cotton => "cotton",
            Crop::Other(s) => s,
        }
    }
}

impl Ord for Crop {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.rank()
            .cmp(&other.rank())
            .then_with(|| self.as_str().cmp(other.as_str()))
    }
}

impl PartialOrd for Crop {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Crop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Crop {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        Ok(match t.as_str() {
            "rice" | "paddy" => Crop::Rice,
            "sorghum" => Crop::Sorghum,
            "wheat" => Crop::Wheat,
            "maize" => Crop::Maize,
            "cotton" => Crop::Cotton,
            _ => Crop::Other(t),
        })
    }
}

impl Serialize for Crop {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Crop {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.parse().unwrap_or_else(|e| match e {}))
    }
}

/// One parcel-season observation on the raw scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldRecord {
    pub parcel_id: String,
    pub household_id: String,
    pub village_id: String,
    /// Year-season period label.
    pub time_id: String,
    pub crop: Crop,
    /// kg/ha
    pub yield_raw: f64,
    /// hr/ha
    pub labor: f64,
    /// kg/ha
    pub fertilizer: f64,
    /// currency/ha
    pub mechanization: f64,
    /// currency/ha
    pub pesticide: f64,
    /// Optional pass-through descriptive columns; not modelled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seasonal_rain_mm: Option<f64>,
}

impl YieldRecord {
    /// Season key: the (village, period) pair.
    pub fn season_key(&self) -> (&str, &str) {
        (&self.village_id, &self.time_id)
    }

    fn quantities(&self) -> [(&'static str, f64); 5] {
        [
            ("yield", self.yield_raw),
            ("labor", self.labor),
            ("fertilizer", self.fertilizer),
            ("mechanization", self.mechanization),
            ("pesticide", self.pesticide),
        ]
    }
}

/// Season label used for group indexing.
pub fn season_label(village_id: &str, time_id: &str) -> String {
    format!("{village_id}:{time_id}")
}

/// Number of transformed inputs per record, in the order
/// labor, fertilizer, mechanization, pesticide.
pub const N_INPUTS: usize = 4;
pub const INPUT_NAMES: [&str; N_INPUTS] = ["labor", "fertilizer", "mechanization", "pesticide"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformedRecord {
    pub y: f64,
    pub x: [f64; N_INPUTS],
    pub crop: Crop,
    pub parcel_id: String,
    pub household_id: String,
    pub village_id: String,
    pub time_id: String,
}

impl TransformedRecord {
    pub fn season_label(&self) -> String {
        season_label(&self.village_id, &self.time_id)
    }
}

/// Applies [`ihs`] to the yield and all four inputs of every record.
pub fn transform_panel(records: &[YieldRecord]) -> Result<Vec<TransformedRecord>, DataError> {
    records
        .iter()
        .map(|r| {
            Ok(TransformedRecord {
                y: ihs(r.yield_raw)?,
                x: [
                    ihs(r.labor)?,
                    ihs(r.fertilizer)?,
                    ihs(r.mechanization)?,
                    ihs(r.pesticide)?,
                ],
                crop: r.crop.clone(),
                parcel_id: r.parcel_id.clone(),
                household_id: r.household_id.clone(),
                village_id: r.village_id.clone(),
                time_id: r.time_id.clone(),
            })
        })
        .collect()
}

/// Maps canonical column names onto the headers used in a particular file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelSchema {
    pub parcel_id: String,
    pub household_id: String,
    pub village_id: String,
    pub time_id: String,
    pub crop: String,
    #[serde(rename = "yield")]
    pub yield_col: String,
    pub labor: String,
    pub fertilizer: String,
    pub mechanization: String,
    pub pesticide: String,
    pub area: String,
    pub seasonal_rain: String,
}

impl Default for PanelSchema {
    fn default() -> Self {
        Self {
            parcel_id: "parcel_id".into(),
            household_id: "household_id".into(),
            village_id: "village_id".into(),
            time_id: "time_id".into(),
            crop: "crop".into(),
            yield_col: "yield".into(),
            labor: "labor".into(),
            fertilizer: "fertilizer".into(),
            mechanization: "mechanization".into(),
            pesticide: "pesticide".into(),
            area: "area".into(),
            seasonal_rain: "rainfall".into(),
        }
    }
}

struct PanelColumns {
    ids: [usize; 5],
    nums: [usize; 5],
    area: Option<usize>,
    rain: Option<usize>,
}

impl PanelSchema {
    fn resolve(&self, header: &csv::StringRecord) -> Result<PanelColumns, DataError> {
        let find = |name: &str| header.iter().position(|h| h.trim() == name);
        let need = |name: &str| find(name).ok_or_else(|| DataError::MissingColumn(name.to_string()));
        Ok(PanelColumns {
            ids: [
                need(&self.parcel_id)?,
                need(&self.household_id)?,
                need(&self.village_id)?,
                need(&self.time_id)?,
                need(&self.crop)?,
            ],
            nums: [
                need(&self.yield_col)?,
                need(&self.labor)?,
                need(&self.fertilizer)?,
                need(&self.mechanization)?,
                need(&self.pesticide)?,
            ],
            area: find(&self.area),
            rain: find(&self.seasonal_rain),
        })
    }
}

fn parse_quantity(raw: &str, column: &str) -> Result<f64, String> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| format!("column `{column}`: cannot parse `{raw}` as a number"))?;
    if !v.is_finite() || v < 0.0 {
        return Err(format!("column `{column}`: value {v} must be finite and >= 0"));
    }
    Ok(v)
}

fn parse_optional(raw: Option<&str>, column: &str) -> Result<Option<f64>, String> {
    match raw.map(str::trim) {
        None | Some("") => Ok(None),
        Some(s) => parse_quantity(s, column).map(Some),
    }
}

pub fn load_yield_panel(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<Vec<YieldRecord>, DataError> {
    let file = std::fs::File::open(path)?;
    read_yield_panel(file, schema)
}

/// Reads and validates a yield panel from any reader.
pub fn read_yield_panel<R: Read>(reader: R, schema: &PanelSchema) -> Result<Vec<YieldRecord>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let cols = schema.resolve(&header)?;
    let num_names = ["yield", "labor", "fertilizer", "mechanization", "pesticide"];

    let mut records = Vec::new();
    let mut errors = Vec::new();
    let mut seen: HashMap<(String, String), u64> = HashMap::new();

    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let parsed = (|| -> Result<YieldRecord, String> {
            let get = |i: usize| row.get(i).map(str::trim).ok_or_else(|| format!("row has only {} fields", row.len()));
            let mut ids = Vec::with_capacity(5);
            for (k, &i) in cols.ids.iter().enumerate() {
                let v = get(i)?;
                if v.is_empty() && k < 4 {
                    return Err(format!("empty identifier in column {}", header.get(i).unwrap_or("?")));
                }
                ids.push(v.to_string());
            }
            let mut nums = [0.0; 5];
            for (k, &i) in cols.nums.iter().enumerate() {
                nums[k] = parse_quantity(get(i)?, num_names[k])?;
            }
            let crop: Crop = ids[4].parse().unwrap_or_else(|e| match e {});
            Ok(YieldRecord {
                parcel_id: ids[0].clone(),
                household_id: ids[1].clone(),
                village_id: ids[2].clone(),
                time_id: ids[3].clone(),
                crop,
                yield_raw: nums[0],
                labor: nums[1],
                fertilizer: nums[2],
                mechanization: nums[3],
                pesticide: nums[4],
                area: parse_optional(cols.area.and_then(|i| row.get(i)), "area")?,
                seasonal_rain_mm: parse_optional(cols.rain.and_then(|i| row.get(i)), "rainfall")?,
            })
        })();
        match parsed {
            Ok(rec) => {
                let key = (rec.parcel_id.clone(), rec.time_id.clone());
                if let Some(first) = seen.get(&key) {
                    errors.push(RowError {
                        line,
                        message: format!(
                            "duplicate parcel `{}` in period `{}` (first seen on line {first})",
                            key.0, key.1
                        ),
                    });
                } else {
                    seen.insert(key, line);
                    records.push(rec);
                }
            }
            Err(message) => errors.push(RowError { line, message }),
        }
    }
    if !errors.is_empty() {
        return Err(DataError::Rows(errors));
    }
    check_nesting(&records)?;
    Ok(records)
}

/// Verifies that each parcel belongs to one household and each household to
/// one village.
pub fn check_nesting(records: &[YieldRecord]) -> Result<(), DataError> {
    let mut parcel_hh: HashMap<&str, &str> = HashMap::new();
    let mut hh_village: HashMap<&str, &str> = HashMap::new();
    let mut problems = Vec::new();
    for r in records {
        if let Some(&h) = parcel_hh.get(r.parcel_id.as_str()) {
            if h != r.household_id {
                problems.push(format!(
                    "parcel `{}` appears under households `{h}` and `{}`",
                    r.parcel_id, r.household_id
                ));
            }
        } else {
            parcel_hh.insert(&r.parcel_id, &r.household_id);
        }
        if let Some(&v) = hh_village.get(r.household_id.as_str()) {
            if v != r.village_id {
                problems.push(format!(
                    "household `{}` appears under villages `{v}` and `{}`",
                    r.household_id, r.village_id
                ));
            }
        } else {
            hh_village.insert(&r.household_id, &r.village_id);
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        problems.dedup();
        Err(DataError::Consistency(problems.join("; ")))
    }
}

pub fn write_yield_panel<W: Write>(writer: W, records: &[YieldRecord]) -> Result<(), DataError> {
    let with_area = records.iter().any(|r| r.area.is_some());
    let with_rain = records.iter().any(|r| r.seasonal_rain_mm.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "parcel_id", "household_id", "village_id", "time_id", "crop", "yield", "labor", "fertilizer",
        "mechanization", "pesticide",
    ];
    if with_area {
        header.push("area");
    }
    if with_rain {
        header.push("rainfall");
    }
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        let mut row = vec![
            r.parcel_id.clone(),
            r.household_id.clone(),
            r.village_id.clone(),
            r.time_id.clone(),
            r.crop.to_string(),
        ];
        row.extend(r.quantities().iter().map(|(_, v)| v.to_string()));
        if with_area {
            row.push(opt(r.area));
        }
        if with_rain {
            row.push(opt(r.seasonal_rain_mm));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Rainfall regime determining the traditional monsoon start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    EasternCentral,
    Western,
}

impl Region {
    /// June 1 for eastern/central India, July 1 for western India.
    pub fn monsoon_start(self, year: i32) -> NaiveDate {
        let month = match self {
            Region::EasternCentral => 6,
            Region::Western => 7,
        };
        NaiveDate::from_ymd_opt(year, month, 1).expect("valid date")
    }

    /// Last day any phase window can reach: the fallback Phase I start (first
    /// of the month after monsoon start) plus 115 days of phases.
    pub fn latest_window_end(self, year: i32) -> NaiveDate {
        first_of_next_month(self.monsoon_start(year)) + Duration::days(114)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Region::EasternCentral => "eastern_central",
            Region::Western => "western",
        }
    }
}

impl FromStr for Region {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "eastern_central" | "eastern" | "central" => Ok(Region::EasternCentral),
            "western" | "west" => Ok(Region::Western),
            other => Err(format!("unknown region `{other}`")),
        }
    }
}

pub(crate) fn first_of_next_month(d: NaiveDate) -> NaiveDate {
    let (y, m) = if d.month() == 12 { (d.year() + 1, 1) } else { (d.year(), d.month() + 1) };
    NaiveDate::from_ymd_opt(y, m, 1).expect("valid date")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyRain {
    pub date: NaiveDate,
    pub rain_mm: f64,
}

/// Dated daily rainfall for one village-year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RainfallSeries {
    pub village_id: String,
    pub year: i32,
    pub region: Region,
    /// Strictly increasing dates.
    pub observations: Vec<DailyRain>,
    /// Gaps and other non-fatal problems found on ingestion.
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl RainfallSeries {
    pub fn rain_on(&self, date: NaiveDate) -> Option<f64> {
        self.observations
            .binary_search_by(|o| o.date.cmp(&date))
            .ok()
            .map(|i| self.observations[i].rain_mm)
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.observations.first().map(|o| o.date)
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.observations.last().map(|o| o.date)
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Records a warning for every gap of more than one day that touches the
    /// monsoon window.
    pub fn flag_gaps(&mut self) {
        let start = self.region.monsoon_start(self.year);
        let end = self.region.latest_window_end(self.year);
        for pair in self.observations.windows(2) {
            let (a, b) = (pair[0].date, pair[1].date);
            if (b - a).num_days() > 1 && b > start && a < end {
                self.warnings.push(format!(
                    "gap of {} missing day(s) between {a} and {b} in village `{}` {}",
                    (b - a).num_days() - 1,
                    self.village_id,
                    self.year
                ));
            }
        }
    }
}

#[derive(Debug, Deserialize)]
struct RainRow {
    village_id: String,
    date: String,
    rain_mm: String,
    region: String,
}

pub fn load_rainfall(path: impl AsRef<Path>) -> Result<Vec<RainfallSeries>, DataError> {
    let file = std::fs::File::open(path)?;
    read_rainfall(file)
}

/// Reads a rainfall CSV (`village_id,date,rain_mm,region`) into one series
/// per village and calendar year, sorted by village then year.
pub fn read_rainfall<R: Read>(reader: R) -> Result<Vec<RainfallSeries>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    for col in ["village_id", "date", "rain_mm", "region"] {
        if !header.iter().any(|h| h.trim() == col) {
            return Err(DataError::MissingColumn(col.to_string()));
        }
    }
    let mut errors = Vec::new();
    let mut groups: BTreeMap<(String, i32), Vec<DailyRain>> = BTreeMap::new();
    let mut regions: HashMap<String, Region> = HashMap::new();
    let mut seen: HashSet<(String, NaiveDate)> = HashSet::new();

    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let parsed: Result<RainRow, _> = row.deserialize(Some(&header));
        let result = parsed.map_err(|e| e.to_string()).and_then(|r| {
            let date = NaiveDate::parse_from_str(r.date.trim(), "%Y-%m-%d")
                .map_err(|_| format!("cannot parse date `{}` (expected YYYY-MM-DD)", r.date))?;
            let rain = parse_quantity(&r.rain_mm, "rain_mm")?;
            let region: Region = r.region.parse()?;
            let village = r.village_id.trim().to_string();
            if village.is_empty() {
                return Err("empty village_id".to_string());
            }
            Ok((village, date, rain, region))
        });
        match result {
            Ok((village, date, rain, region)) => {
                match regions.get(&village) {
                    Some(&r) if r != region => {
                        errors.push(RowError {
                            line,
                            message: format!(
                                "village `{village}` listed with regions {} and {}",
                                r.as_str(),
                                region.as_str()
                            ),
                        });
                        continue;
                    }
                    None => {
                        regions.insert(village.clone(), region);
                    }
                    _ => {}
                }
                if !seen.insert((village.clone(), date)) {
                    errors.push(RowError { line, message: format!("duplicate date {date} for village `{village}`") });
                    continue;
                }
                groups.entry((village, date.year())).or_default().push(DailyRain { date, rain_mm: rain });
            }
            Err(message) => errors.push(RowError { line, message }),
        }
    }
    if !errors.is_empty() {
        return Err(DataError::Rows(errors));
    }
    if groups.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(groups
        .into_iter()
        .map(|((village_id, year), mut obs)| {
            obs.sort_by_key(|o| o.date);
            let region = regions[&village_id];
            let mut s = RainfallSeries { village_id, year, region, observations: obs, warnings: Vec::new() };
            s.flag_gaps();
            s
        })
        .collect())
}

pub fn write_rainfall<W: Write>(writer: W, series: &[RainfallSeries]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["village_id", "date", "rain_mm", "region"])?;
    for s in series {
        for o in &s.observations {
            w.write_record([
                s.village_id.as_str(),
                &o.date.format("%Y-%m-%d").to_string(),
                &o.rain_mm.to_string(),
                s.region.as_str(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "parcel_id,household_id,village_id,time_id,crop,yield,labor,fertilizer,mechanization,pesticide\n";

    #[test]
    fn ihs_reference_values() {
        assert_eq!(ihs(0.0).unwrap(), 0.0);
        // ln(1 + sqrt 2) and ln(1000 + sqrt(1000001)) to 15 digits
        assert!((ihs(1.0).unwrap() - 0.881_373_587_019_543).abs() < 1e-14);
        assert!((ihs(1000.0).unwrap() - 7.600_902_709_541_988).abs() < 1e-12);
    }

    #[test]
    fn ihs_rejects_bad_input() {
        assert!(matches!(ihs(-1.0), Err(DataError::Domain(_))));
        assert!(ihs(f64::NAN).is_err());
        assert!(ihs(f64::INFINITY).is_err());
    }

    #[test]
    fn ihs_is_log_like_for_large_values() {
        let v = 1.0e8;
        assert!((ihs(v).unwrap() - (2.0 * v).ln()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn ihs_monotone(a in 0.0f64..1e9, b in 0.0f64..1e9) {
            prop_assume!(a < b);
            prop_assert!(ihs(a).unwrap() < ihs(b).unwrap());
        }

        #[test]
        fn ihs_round_trip(v in 0.0f64..1e9) {
            let back = ihs(v).unwrap().sinh();
            prop_assert!((back - v).abs() <= 1e-12 * v.max(1e-300) || back == v);
        }
    }

    #[test]
    fn loads_well_formed_panel() {
        let csv = format!(
            "{HEADER}p1,h1,v1,2009K,rice,1000,100,50,0,0\np2,h1,v1,2009K,wheat,800,90,40,10,5\np1,h1,v1,2010K,rice,1200,110,55,0,0\n"
        );
        let recs = read_yield_panel(csv.as_bytes(), &PanelSchema::default()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[1].crop, Crop::Wheat);
        assert_eq!(recs[2].season_key(), ("v1", "2010K"));
    }

    #[test]
    fn negative_yield_names_line() {
        let csv = format!("{HEADER}p1,h1,v1,t1,rice,-5,1,1,1,1\n");
        match read_yield_panel(csv.as_bytes(), &PanelSchema::default()) {
            Err(DataError::Rows(errs)) => {
                assert_eq!(errs.len(), 1);
                assert_eq!(errs[0].line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parcel_in_two_households_is_rejected() {
        let csv = format!("{HEADER}p1,h1,v1,t1,rice,5,1,1,1,1\np1,h2,v1,t2,rice,5,1,1,1,1\n");
        assert!(matches!(
            read_yield_panel(csv.as_bytes(), &PanelSchema::default()),
            Err(DataError::Consistency(_))
        ));
    }

    #[test]
    fn duplicate_parcel_period_rejected_with_line() {
        let csv = format!("{HEADER}p1,h1,v1,t1,rice,5,1,1,1,1\np1,h1,v1,t1,rice,6,1,1,1,1\n");
        match read_yield_panel(csv.as_bytes(), &PanelSchema::default()) {
            Err(DataError::Rows(errs)) => assert_eq!(errs[0].line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_schema_error() {
        let csv = "parcel_id,household_id\np1,h1\n";
        assert!(matches!(
            read_yield_panel(csv.as_bytes(), &PanelSchema::default()),
            Err(DataError::MissingColumn(c)) if c == "village_id"
        ));
    }

    #[test]
    fn schema_remapping() {
        let csv = "plot,hh,vil,period,crop,kg,labor,fertilizer,mechanization,pesticide\np1,h1,v1,t1,maize,5,1,1,1,1\n";
        let schema = PanelSchema {
            parcel_id: "plot".into(),
            household_id: "hh".into(),
            village_id: "vil".into(),
            time_id: "period".into(),
            yield_col: "kg".into(),
            ..Default::default()
        };
        let recs = read_yield_panel(csv.as_bytes(), &schema).unwrap();
        assert_eq!(recs[0].crop, Crop::Maize);
        assert_eq!(recs[0].yield_raw, 5.0);
    }

    #[test]
    fn transform_zero_inputs_and_unit_yield() {
        let r = YieldRecord {
            parcel_id: "p".into(),
            household_id: "h".into(),
            village_id: "v".into(),
            time_id: "t".into(),
            crop: Crop::Rice,
            yield_raw: 1.0,
            labor: 0.0,
            fertilizer: 0.0,
            mechanization: 0.0,
            pesticide: 0.0,
            area: None,
            seasonal_rain_mm: None,
        };
        let t = transform_panel(std::slice::from_ref(&r)).unwrap();
        assert_eq!(t[0].x, [0.0; 4]);
        assert!((t[0].y - 0.881_373_587_019_543).abs() < 1e-14);
    }

    fn rain_csv(rows: &[(&str, &str, f64, &str)]) -> String {
        let mut s = String::from("village_id,date,rain_mm,region\n");
        for (v, d, r, g) in rows {
            s.push_str(&format!("{v},{d},{r},{g}\n"));
        }
        s
    }

    #[test]
    fn rainfall_one_full_year() {
        let start = NaiveDate::from_ymd_opt(2010, 1, 1).unwrap();
        let mut s = String::from("village_id,date,rain_mm,region\n");
        for k in 0..365 {
            s.push_str(&format!("v1,{},1.5,eastern_central\n", start + Duration::days(k)));
        }
        let series = read_rainfall(s.as_bytes()).unwrap();
        assert_eq!(series.len(), 1);
        assert_eq!(series[0].len(), 365);
        assert!(series[0].warnings.is_empty());
    }

    #[test]
    fn rainfall_groups_by_village_and_year() {
        let mut rows = Vec::new();
        let dates: Vec<String> = (2009..2012).map(|y| format!("{y}-07-01")).collect();
        for v in ["a", "b"] {
            for d in &dates {
                rows.push((v, d.as_str(), 2.0, "western"));
            }
        }
        let series = read_rainfall(rain_csv(&rows).as_bytes()).unwrap();
        assert_eq!(series.len(), 6);
    }

    #[test]
    fn rainfall_gap_is_flagged() {
        let start = NaiveDate::from_ymd_opt(2010, 6, 1).unwrap();
        let mut s = String::from("village_id,date,rain_mm,region\n");
        for k in 0..150 {
            let d = start + Duration::days(k);
            if d.month() == 8 && (10..17).contains(&d.day()) {
                continue;
            }
            s.push_str(&format!("v1,{d},3,eastern_central\n"));
        }
        let series = read_rainfall(s.as_bytes()).unwrap();
        assert_eq!(series.len(), 1);
        assert_eq!(series[0].warnings.len(), 1);
        assert!(series[0].warnings[0].contains("7 missing"));
    }

    #[test]
    fn rainfall_duplicate_date_is_error() {
        let rows = [("a", "2010-06-01", 1.0, "western"), ("a", "2010-06-01", 2.0, "western")];
        assert!(matches!(read_rainfall(rain_csv(&rows).as_bytes()), Err(DataError::Rows(_))));
    }

    #[test]
    fn empty_rainfall_is_error() {
        assert!(matches!(
            read_rainfall("village_id,date,rain_mm,region\n".as_bytes()),
            Err(DataError::Empty)
        ));
    }
}
