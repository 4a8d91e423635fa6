use std::io::Write;

use serde::{Deserialize, Serialize};

use super::diagnostics::skewness;
use super::{GibbsError, PosteriorDraws};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub parameter: String,
    /// `bins + 1` ascending edges; a single `[v, v]` bin for constant draws.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub skewness: f64,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Equal-width histogram of one parameter over all kept draws.
pub fn posterior_histogram(draws: &PosteriorDraws, parameter: &str, bins: usize) -> Result<Histogram, GibbsError> {
    let values = draws.draws(parameter)?;
    if bins == 0 {
        return Err(GibbsError::InvalidConfig("histogram needs at least one bin".into()));
    }
    Ok(histogram_of(parameter, &values, bins))
}

pub(crate) fn histogram_of(parameter: &str, values: &[f64], bins: usize) -> Histogram {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || lo == hi {
        let v = if values.is_empty() { 0.0 } else { lo };
        return Histogram {
            parameter: parameter.to_string(),
            edges: vec![v, v],
            counts: vec![values.len() as u64],
            skewness: 0.0,
        };
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
    let mut counts = vec![0u64; bins];
    for v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Histogram { parameter: parameter.to_string(), edges, counts, skewness: skewness(values) }
}

/// Writes `bin_lower,bin_upper,count` rows.
pub fn write_histogram_csv<W: Write>(writer: W, hist: &Histogram) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bin_lower", "bin_upper", "count"])?;
    for (i, c) in hist.counts.iter().enumerate() {
        w.write_record([hist.edges[i].to_string(), hist.edges[i + 1].to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
