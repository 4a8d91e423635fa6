//! Intraclass correlations and per-level variance shares.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::FitResult;
use crate::gibbs::{summarize, PosteriorDraws, Summary};
use crate::hierarchy::Level;

#[derive(Debug, Error, PartialEq)]
pub enum DecompositionError {
    #[error("variance `{name}` is {value}; variances must be finite and non-negative")]
    InvalidVariance { name: &'static str, value: f64 },
    #[error("total variance is zero")]
    ZeroTotal,
}

/// Component names in table order; the last is the idiosyncratic term.
pub const COMPONENTS: [&str; 6] = ["parcel", "household", "season", "village", "time", "idiosyncratic"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecomposition {
    /// Parcel, household, season, village, time, idiosyncratic.
    pub variances: [f64; 6],
    /// Levels outside the fitted model; their variance enters as zero.
    pub modelled: [bool; 5],
    pub total: f64,
    /// Cumulative from parcel upward.
    pub icc: [f64; 5],
    pub shares: [f64; 6],
    /// Season, village and time shares together.
    pub covariate_share: f64,
    /// Parcel, household and idiosyncratic shares together.
    pub idiosyncratic_share: f64,
}

impl VarianceDecomposition {
    pub fn variance(&self, level: Level) -> f64 {
        self.variances[level.position()]
    }

    pub fn icc(&self, level: Level) -> f64 {
        self.icc[level.position()]
    }

    pub fn share(&self, level: Level) -> f64 {
        self.shares[level.position()]
    }
}

pub fn decompose(variances: &[f64; 6]) -> Result<VarianceDecomposition, DecompositionError> {
    decompose_modelled(variances, [true; 5])
}

/// Like [`decompose`], with unmodelled levels forced to zero.
pub fn decompose_modelled(variances: &[f64; 6], modelled: [bool; 5]) -> Result<VarianceDecomposition, DecompositionError> {
    let mut v = *variances;
    for (i, name) in COMPONENTS.iter().enumerate() {
        if !(v[i].is_finite() && v[i] >= 0.0) {
            return Err(DecompositionError::InvalidVariance { name, value: v[i] });
        }
        if i < 5 && !modelled[i] {
            v[i] = 0.0;
        }
    }
    let total: f64 = v.iter().sum();
    if !(total > 0.0) {
        return Err(DecompositionError::ZeroTotal);
    }
    let mut icc = [0.0; 5];
    let mut acc = 0.0;
    for i in 0..5 {
        acc += v[i];
        icc[i] = acc / total;
    }
    let shares = v.map(|x| x / total);
    let covariate_share = shares[2] + shares[3] + shares[4];
    let idiosyncratic_share = shares[0] + shares[1] + shares[5];
    Ok(VarianceDecomposition { variances: v, modelled, total, icc, shares, covariate_share, idiosyncratic_share })
}

/// Decomposes the variance components of a fitted model.
pub fn decompose_fit(fit: &FitResult) -> Result<VarianceDecomposition, DecompositionError> {
    let mut v = [0.0; 6];
    let mut modelled = [false; 5];
    for level in Level::ALL {
        if let Some(x) = fit.variance(level) {
            v[level.position()] = x;
            modelled[level.position()] = true;
        }
    }
    v[5] = fit.sigma2;
    decompose_modelled(&v, modelled)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDecomposition {
    pub per_draw: Vec<VarianceDecomposition>,
    /// Keyed by `icc_<level>`, `share_<component>`, `covariate_share`.
    pub summaries: Vec<(String, Summary)>,
    /// Decomposition of the posterior-mean variances.
    pub at_mean: VarianceDecomposition,
}

impl PosteriorDecomposition {
    pub fn summary(&self, key: &str) -> Option<&Summary> {
        self.summaries.iter().find(|(k, _)| k == key).map(|(_, s)| s)
    }

    /// Posterior means arranged as a decomposition.
    pub fn mean(&self) -> VarianceDecomposition {
        let mut d = self.at_mean.clone();
        let get = |k: String| self.summary(&k).map_or(f64::NAN, |s| s.mean);
        for (i, c) in COMPONENTS.iter().enumerate() {
            d.shares[i] = get(format!("share_{c}"));
            if i < 5 {
                d.icc[i] = get(format!("icc_{c}"));
            }
        }
        d.covariate_share = get("covariate_share".into());
        d.idiosyncratic_share = 1.0 - d.covariate_share;
        d
    }
}

/// Applies [`decompose_modelled`] to every kept draw.
pub fn decompose_posterior(draws: &PosteriorDraws) -> Result<PosteriorDecomposition, DecompositionError> {
    let mut modelled = [false; 5];
    for l in &draws.levels {
        modelled[l.position()] = true;
    }
    let per_draw = draws
        .variance_draws()
        .iter()
        .map(|v| decompose_modelled(v, modelled))
        .collect::<Result<Vec<_>, _>>()?;
    let mut summaries = Vec::new();
    for (i, c) in COMPONENTS.iter().enumerate().take(5) {
        let x: Vec<f64> = per_draw.iter().map(|d| d.icc[i]).collect();
        summaries.push((format!("icc_{c}"), summarize(&x)));
    }
    for (i, c) in COMPONENTS.iter().enumerate() {
        let x: Vec<f64> = per_draw.iter().map(|d| d.shares[i]).collect();
        summaries.push((format!("share_{c}"), summarize(&x)));
    }
    let x: Vec<f64> = per_draw.iter().map(|d| d.covariate_share).collect();
    summaries.push(("covariate_share".into(), summarize(&x)));
    let n = per_draw.len() as f64;
    let mut mean_v = [0.0; 6];
    for d in &per_draw {
        for (m, v) in mean_v.iter_mut().zip(&d.variances) {
            *m += v / n;
        }
    }
    let at_mean = decompose_modelled(&mean_v, modelled)?;
    Ok(PosteriorDecomposition { per_draw, summaries, at_mean })
}

/// Whole-percent share with two digits, as in `03%`.
pub fn format_share(share: f64) -> String {
    format!("{:02}%", (share * 100.0).round() as i64)
}

/// Writes the three panels as `panel,component,<column>...` rows.
pub fn write_decomposition_csv<W: Write>(
    writer: W,
    columns: &[(&str, &VarianceDecomposition)],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["panel".to_string(), "component".to_string()];
    header.extend(columns.iter().map(|(n, _)| n.to_string()));
    w.write_record(&header)?;
    let cell = |d: &VarianceDecomposition, i: usize, v: f64| {
        if i < 5 && !d.modelled[i] {
            String::new()
        } else {
            v.to_string()
        }
    };
    for (i, c) in COMPONENTS.iter().enumerate() {
        let mut row = vec!["variance".to_string(), c.to_string()];
        row.extend(columns.iter().map(|(_, d)| cell(d, i, d.variances[i])));
        w.write_record(&row)?;
    }
    for (i, c) in COMPONENTS.iter().enumerate().take(5) {
        let mut row = vec!["icc".to_string(), c.to_string()];
        row.extend(columns.iter().map(|(_, d)| cell(d, i, d.icc[i])));
        w.write_record(&row)?;
    }
    for (i, c) in COMPONENTS.iter().enumerate() {
        let mut row = vec!["share".to_string(), c.to_string()];
        row.extend(columns.iter().map(|(_, d)| cell(d, i, d.shares[i])));
        w.write_record(&row)?;
    }
    let mut row = vec!["share".to_string(), "covariate".to_string()];
    row.extend(columns.iter().map(|(_, d)| d.covariate_share.to_string()));
    w.write_record(&row)?;
    w.flush()?;
    Ok(())
}

/// Aligned plain-text table: variances and ICCs to 3 decimals, shares in
/// whole percent. Unmodelled levels are left blank.
pub fn format_decomposition_text(columns: &[(&str, &VarianceDecomposition)]) -> String {
    const LABEL: usize = 16;
    const CELL: usize = 10;
    let mut out = String::new();
    let rule = "-".repeat(LABEL + CELL * columns.len());
    let _ = write!(out, "{:<LABEL$}", "");
    for (name, _) in columns {
        let _ = write!(out, "{name:>CELL$}");
    }
    out.push('\n');
    let panel = |out: &mut String, title: &str| {
        let _ = writeln!(out, "{rule}\n{title}");
    };
    let row = |out: &mut String, label: &str, cells: Vec<String>| {
        let _ = write!(out, "{label:<LABEL$}");
        for c in cells {
            let _ = write!(out, "{c:>CELL$}");
        }
        out.push('\n');
    };
    let blank = |d: &VarianceDecomposition, i: usize| i < 5 && !d.modelled[i];
    panel(&mut out, "Variance estimates");
    for (i, c) in COMPONENTS.iter().enumerate() {
        let cells = columns
            .iter()
            .map(|(_, d)| if blank(d, i) { String::new() } else { format!("{:.3}", d.variances[i]) })
            .collect();
        row(&mut out, c, cells);
    }
    panel(&mut out, "Intraclass correlations");
    for (i, c) in COMPONENTS.iter().enumerate().take(5) {
        let cells =
            columns.iter().map(|(_, d)| if blank(d, i) { String::new() } else { format!("{:.3}", d.icc[i]) }).collect();
        row(&mut out, c, cells);
    }
    panel(&mut out, "Shares of variance");
    for (i, c) in COMPONENTS.iter().enumerate() {
        let cells =
            columns.iter().map(|(_, d)| if blank(d, i) { String::new() } else { format_share(d.shares[i]) }).collect();
        row(&mut out, c, cells);
    }
    row(&mut out, "covariate", columns.iter().map(|(_, d)| format_share(d.covariate_share)).collect());
    let unmodelled: Vec<&str> = COMPONENTS[..5]
        .iter()
        .enumerate()
        .filter(|(i, _)| columns.iter().any(|(_, d)| !d.modelled[*i]))
        .map(|(_, c)| *c)
        .collect();
    let _ = writeln!(out, "{rule}");
    if !unmodelled.is_empty() {
        let _ = writeln!(out, "not modelled: {}", unmodelled.join(", "));
    }
    out
}
