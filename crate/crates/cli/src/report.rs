use std::fmt::Write as _;

use agrisk::estimation::FitResult;

pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

/// Coefficient table: estimate with stars, standard error in parentheses
/// underneath, then variances and fit metrics.
pub fn coefficient_table(fit: &FitResult) -> String {
    let mut out = String::new();
    let width = fit.beta_labels.iter().map(|l| l.len()).max().unwrap_or(10).max(18) + 2;
    let _ = writeln!(out, "{:<width$}{:>16}", "", format!("{:?}", fit.method).to_uppercase());
    let _ = writeln!(out, "{}", "-".repeat(width + 16));
    if let Some(mu) = fit.mu {
        let _ = writeln!(out, "{:<width$}{:>16.3}", "mu", mu);
    }
    for (i, label) in fit.beta_labels.iter().enumerate() {
        let est = format!("{:.3}{}", fit.beta[i], stars(fit.p_values[i]));
        let _ = writeln!(out, "{label:<width$}{est:>16}");
        let _ = writeln!(out, "{:<width$}{:>16}", "", format!("({:.3})", fit.standard_errors[i]));
    }
    if !fit.components.is_empty() {
        let _ = writeln!(out, "{}", "-".repeat(width + 16));
        for c in &fit.components {
            let name = format!("sigma2_{}", c.level);
            let _ = writeln!(out, "{name:<width$}{:>16.3}", c.variance);
        }
        let _ = writeln!(out, "{:<width$}{:>16.3}", "sigma2", fit.sigma2);
    }
    let _ = writeln!(out, "{}", "-".repeat(width + 16));
    let m = &fit.metrics;
    let _ = writeln!(out, "{:<width$}{:>16}", "observations", m.n_obs);
    if let Some(ll) = m.log_likelihood {
        let _ = writeln!(out, "{:<width$}{:>16.1}", "log likelihood", ll);
    }
    if let Some(aic) = m.aic {
        let _ = writeln!(out, "{:<width$}{:>16.1}", "AIC", aic);
    }
    if let Some(dic) = m.dic {
        let _ = writeln!(out, "{:<width$}{:>16.1}", "DIC", dic);
    }
    if let Some(r2) = m.r_squared {
        let _ = writeln!(out, "{:<width$}{:>16.3}", "R2", r2);
    }
    let _ = writeln!(out, "{}", "-".repeat(width + 16));
    let _ = writeln!(out, "* p<0.1; ** p<0.05; *** p<0.01");
    out
}

pub fn write_coefficients_csv<W: std::io::Write>(writer: W, fit: &FitResult) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["term", "estimate", "std_error", "p_value", "stars"])?;
    for (i, label) in fit.beta_labels.iter().enumerate() {
        w.write_record([
            label.clone(),
            fit.beta[i].to_string(),
            fit.standard_errors[i].to_string(),
            fit.p_values[i].to_string(),
            stars(fit.p_values[i]).to_string(),
        ])?;
    }
    for c in &fit.components {
        w.write_record([
            format!("sigma2_{}", c.level),
            c.variance.to_string(),
            c.standard_error.map(|s| s.to_string()).unwrap_or_default(),
            String::new(),
            String::new(),
        ])?;
    }
    w.write_record([
        "sigma2".to_string(),
        fit.sigma2.to_string(),
        fit.sigma2_se.map(|s| s.to_string()).unwrap_or_default(),
        String::new(),
        String::new(),
    ])?;
    w.flush()?;
    Ok(())
}
