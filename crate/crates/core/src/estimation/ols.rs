use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{prepare, FitError, FitMetrics, FitResult, GroupEffects, Method};
use crate::data::TransformedRecord;
use crate::hierarchy::{HierarchySpec, Level};

/// Pivots of the correlation-scaled cross-product below this mark a column
/// as a linear combination of earlier ones.
const PIVOT_TOLERANCE: f64 = 1e-9;
const REFINEMENT_STEPS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub coef: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub p_values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rss: f64,
    pub rank: usize,
    pub df: usize,
    pub sigma2: f64,
}

/// Lower Cholesky factor of a dense row-major SPD matrix. Returns the
/// columns whose pivots fall below tolerance.
fn cholesky(a: &[f64], p: usize) -> Result<Vec<f64>, Vec<usize>> {
    let mut l = vec![0.0; p * p];
    let mut bad = Vec::new();
    for j in 0..p {
        let s = a[j * p + j] - (0..j).map(|k| l[j * p + k] * l[j * p + k]).sum::<f64>();
        if !(s > PIVOT_TOLERANCE) {
            bad.push(j);
            l[j * p + j] = 1.0;
            continue;
        }
        let d = s.sqrt();
        l[j * p + j] = d;
        for i in j + 1..p {
            let dot: f64 = (0..j).map(|k| l[i * p + k] * l[j * p + k]).sum();
            l[i * p + j] = (a[i * p + j] - dot) / d;
        }
    }
    if bad.is_empty() {
        Ok(l)
    } else {
        Err(bad)
    }
}

fn cholesky_solve(l: &[f64], p: usize, b: &mut [f64]) {
    for i in 0..p {
        let s: f64 = (0..i).map(|k| l[i * p + k] * b[k]).sum();
        b[i] = (b[i] - s) / l[i * p + i];
    }
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|k| l[k * p + i] * b[k]).sum();
        b[i] = (b[i] - s) / l[i * p + i];
    }
}

/// Least squares for a sparse-row design with classical standard errors
/// and two-sided t p-values.
pub fn least_squares(labels: &[String], rows: &[Vec<(usize, f64)>], y: &[f64]) -> Result<LeastSquares, FitError> {
    let p = labels.len();
    let n = y.len();
    assert_eq!(rows.len(), n);
    if n <= p {
        return Err(FitError::TooFewObservations { n, needed: p });
    }
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    for (row, &yi) in rows.iter().zip(y) {
        for &(a, va) in row {
            xty[a] += va * yi;
            for &(b, vb) in row {
                xtx[a * p + b] += va * vb;
            }
        }
    }
    let scale: Vec<f64> = (0..p).map(|j| xtx[j * p + j].sqrt()).collect();
    let zero_cols: Vec<usize> = (0..p).filter(|&j| !(scale[j] > 0.0)).collect();
    if !zero_cols.is_empty() {
        return Err(FitError::RankDeficient(zero_cols.iter().map(|&j| labels[j].clone()).collect()));
    }
    let scaled: Vec<f64> = (0..p * p).map(|k| xtx[k] / (scale[k / p] * scale[k % p])).collect();
    let l = cholesky(&scaled, p).map_err(|bad| FitError::RankDeficient(bad.iter().map(|&j| labels[j].clone()).collect()))?;

    let solve = |rhs: &[f64]| {
        let mut b: Vec<f64> = rhs.iter().zip(&scale).map(|(v, s)| v / s).collect();
        cholesky_solve(&l, p, &mut b);
        b.iter().zip(&scale).map(|(v, s)| v / s).collect::<Vec<f64>>()
    };
    let residuals_of = |coef: &[f64]| -> Vec<f64> {
        rows.iter().zip(y).map(|(row, &yi)| yi - row.iter().map(|&(c, v)| v * coef[c]).sum::<f64>()).collect()
    };

    let mut coef = solve(&xty);
    for _ in 0..REFINEMENT_STEPS {
        let r = residuals_of(&coef);
        let mut xtr = vec![0.0; p];
        for (row, ri) in rows.iter().zip(&r) {
            for &(c, v) in row {
                xtr[c] += v * ri;
            }
        }
        let delta = solve(&xtr);
        for (c, d) in coef.iter_mut().zip(delta) {
            *c += d;
        }
    }
    let residuals = residuals_of(&coef);
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    let df = n - p;
    let sigma2 = rss / df as f64;

    let mut standard_errors = Vec::with_capacity(p);
    for j in 0..p {
        let mut e = vec![0.0; p];
        e[j] = 1.0;
        let col = solve(&e);
        standard_errors.push((sigma2 * col[j]).max(0.0).sqrt());
    }
    let t = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| FitError::Numerical(e.to_string()))?;
    let p_values = coef
        .iter()
        .zip(&standard_errors)
        .map(|(b, se)| if *se > 0.0 { 2.0 * t.sf((b / se).abs()) } else { f64::NAN })
        .collect();
    Ok(LeastSquares { coef, standard_errors, p_values, residuals, rss, rank: p, df, sigma2 })
}

/// Crop-specific intercepts and slopes with season dummies. The first
/// season in (village_id, time_id) order is the baseline.
pub fn fit_ols(records: &[TransformedRecord], spec: &HierarchySpec) -> Result<FitResult, FitError> {
    let prep = prepare(records, spec)?;
    let (index, design) = (&prep.index, &prep.design);
    let n = records.len();
    let p = design.p();
    let n_seasons = index.count(Level::Season);
    if n <= p + n_seasons {
        return Err(FitError::TooFewObservations { n, needed: p + n_seasons });
    }

    let mut order: Vec<usize> = (0..n_seasons).collect();
    order.sort_by(|&a, &b| index.season_keys[a].cmp(&index.season_keys[b]));
    let mut dummy_col = vec![None; n_seasons];
    let mut labels = design.labels.clone();
    for (k, &s) in order.iter().enumerate().skip(1) {
        dummy_col[s] = Some(p + k - 1);
        labels.push(format!("season:{}", index.level(Level::Season).labels[s]));
    }
    let seasons = &index.level(Level::Season).obs_group;
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            let mut r: Vec<(usize, f64)> = design.row(i).collect();
            if let Some(c) = dummy_col[seasons[i]] {
                r.push((c, 1.0));
            }
            r
        })
        .collect();
    let ls = least_squares(&labels, &rows, &prep.y)?;

    let mean = prep.y.iter().sum::<f64>() / n as f64;
    let tss: f64 = prep.y.iter().map(|v| (v - mean).powi(2)).sum();
    let ml_sigma2 = ls.rss / n as f64;
    let log_likelihood = -0.5 * n as f64 * ((2.0 * std::f64::consts::PI * ml_sigma2).ln() + 1.0);
    let k = ls.rank + 1;

    let season_values = (0..n_seasons).map(|s| dummy_col[s].map_or(0.0, |c| ls.coef[c])).collect();
    Ok(FitResult {
        method: Method::Ols,
        levels: Vec::new(),
        beta_labels: design.labels.clone(),
        beta: ls.coef[..p].to_vec(),
        standard_errors: ls.standard_errors[..p].to_vec(),
        p_values: ls.p_values[..p].to_vec(),
        mu: None,
        components: Vec::new(),
        sigma2: ls.sigma2,
        sigma2_se: None,
        group_effects: vec![GroupEffects {
            level: Level::Season,
            labels: index.level(Level::Season).labels.clone(),
            values: season_values,
        }],
        metrics: FitMetrics {
            n_obs: n,
            log_likelihood: Some(log_likelihood),
            aic: Some(2.0 * k as f64 - 2.0 * log_likelihood),
            r_squared: Some(if tss > 0.0 { 1.0 - ls.rss / tss } else { f64::NAN }),
            ..Default::default()
        },
        normality_assumed: true,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Crop;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn panel(n_villages: usize, n_times: usize, per: usize, noise: f64, seed: u64) -> (Vec<TransformedRecord>, Vec<f64>) {
        let beta = [2.0, 0.3, -0.2, 0.1, 0.05, 1.5, 0.2, 0.1, -0.1, 0.3];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let season_fx: Vec<f64> = (0..n_villages * n_times).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut out = Vec::new();
        for v in 0..n_villages {
            for t in 0..n_times {
                for k in 0..per {
                    let c = k % 2;
                    let x = [rng.random_range(0.0..5.0), rng.random_range(0.0..5.0), rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)];
                    let b = &beta[c * 5..c * 5 + 5];
                    let mut y = b[0] + (0..4).map(|j| b[j + 1] * x[j]).sum::<f64>();
                    if noise > 0.0 {
                        y += season_fx[v * n_times + t] + noise * rng.sample::<f64, _>(rand_distr::StandardNormal);
                    }
                    out.push(TransformedRecord {
                        y,
                        x,
                        crop: if c == 0 { Crop::Rice } else { Crop::Wheat },
                        parcel_id: format!("p{v}-{k}"),
                        household_id: format!("h{v}-{k}"),
                        village_id: format!("v{v}"),
                        time_id: format!("t{t}"),
                    });
                }
            }
        }
        (out, beta.to_vec())
    }

    #[test]
    fn noiseless_recovers_beta() {
        let (recs, beta) = panel(3, 4, 20, 0.0, 1);
        let fit = fit_ols(&recs, &HierarchySpec::full()).unwrap();
        for (b, t) in fit.beta.iter().zip(&beta) {
            assert!((b - t).abs() < 1e-10, "{b} vs {t}");
        }
        assert!(fit.sigma2 < 1e-20);
        assert!(fit.effects(Level::Season).unwrap().values.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn residuals_orthogonal_to_design() {
        let (recs, _) = panel(4, 3, 30, 1.0, 2);
        let prep = prepare(&recs, &HierarchySpec::full()).unwrap();
        let rows: Vec<Vec<(usize, f64)>> = (0..recs.len()).map(|i| prep.design.row(i).collect()).collect();
        let ls = least_squares(&prep.design.labels, &rows, &prep.y).unwrap();
        let mut xtr = vec![0.0; prep.design.p()];
        for (row, r) in rows.iter().zip(&ls.residuals) {
            for &(c, v) in row {
                xtr[c] += v * r;
            }
        }
        assert!(xtr.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn duplicate_column_is_rank_deficient() {
        let labels: Vec<String> = ["a", "b", "a_copy"].iter().map(|s| s.to_string()).collect();
        let rows: Vec<Vec<(usize, f64)>> = (0..10).map(|i| vec![(0, 1.0), (1, i as f64), (2, 1.0)]).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        match least_squares(&labels, &rows, &y) {
            Err(FitError::RankDeficient(cols)) => assert_eq!(cols, vec!["a_copy".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn noisy_fit_reports_r_squared_and_sigma() {
        let (recs, beta) = panel(5, 4, 60, 0.5, 3);
        let fit = fit_ols(&recs, &HierarchySpec::full()).unwrap();
        assert!((fit.sigma2 - 0.25).abs() < 0.05);
        let r2 = fit.metrics.r_squared.unwrap();
        assert!(r2 > 0.0 && r2 < 1.0);
        for j in 0..beta.len() {
            assert!((fit.beta[j] - beta[j]).abs() < 4.0 * fit.standard_errors[j]);
        }
    }
}
