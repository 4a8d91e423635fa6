use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{normal_p_value, prepare, FitError, FitMetrics, FitResult, GroupEffects, Method, VarianceComponent};
use crate::data::TransformedRecord;
use crate::hierarchy::HierarchySpec;
use crate::mixed::{FixedDesign, MixedModel, Structure};
use crate::sparse::{LdlFactor, SparseError};

/// Gradient size (log-variance scale) accepted at convergence.
const GRADIENT_TOLERANCE: f64 = 1e-4;
/// A level variance this small relative to σ² with a likelihood pulling it
/// down is moved onto the boundary.
const SNAP_RELATIVE: f64 = 1e-6;
const MAX_STEP: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MleOptions {
    /// Relative log-likelihood change declaring convergence.
    pub tolerance: f64,
    /// Cap on EM plus quasi-Newton iterations.
    pub max_iter: usize,
    /// EM iterations run before the quasi-Newton polish.
    pub em_iterations: usize,
    /// Relative change at which EM hands over to the polish.
    pub em_tolerance: f64,
    /// Lower bound on log-variances; variances pinned here are reported as 0.
    pub log_floor: f64,
    pub standard_errors: bool,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iter: 1000,
            em_iterations: 200,
            em_tolerance: 1e-6,
            log_floor: -30.0,
            standard_errors: true,
        }
    }
}

/// Idiosyncratic variance plus one variance per modelled level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceParams {
    pub sigma2: f64,
    pub tau: Vec<f64>,
}

impl VarianceParams {
    fn get(&self, i: usize) -> f64 {
        if i == 0 {
            self.sigma2
        } else {
            self.tau[i - 1]
        }
    }

    fn set(&mut self, i: usize, v: f64) {
        if i == 0 {
            self.sigma2 = v
        } else {
            self.tau[i - 1] = v
        }
    }

    fn len(&self) -> usize {
        1 + self.tau.len()
    }
}

pub(crate) struct Evaluation {
    pub ll: f64,
    pub theta: Vec<f64>,
    pub st: Arc<Structure>,
    pub rss: f64,
    pub nu_sq: Vec<f64>,
    pub traces: Vec<f64>,
    pub factor: LdlFactor,
}

fn map_factor_error(model: &MixedModel, st: &Structure, e: SparseError) -> FitError {
    match e {
        SparseError::NotPositiveDefinite { column, .. } if column >= st.k => {
            FitError::RankDeficient(vec![model.fixed.labels[column - st.k].clone()])
        }
        other => FitError::Numerical(other.to_string()),
    }
}

pub(crate) fn evaluate(model: &MixedModel, par: &VarianceParams, with_traces: bool) -> Result<Evaluation, FitError> {
    if !(par.sigma2 > 0.0) || !par.sigma2.is_finite() || par.tau.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(FitError::Numerical(format!("invalid variance parameters {par:?}")));
    }
    let active = model.active_from(&par.tau);
    let st = model.structure(&active);
    let zeros = vec![0.0; model.p()];
    let factor = model.factorize(&st, par.sigma2, &par.tau, &zeros).map_err(|e| map_factor_error(model, &st, e))?;
    let mut theta = model.wty(&st);
    for v in &mut theta {
        *v /= par.sigma2;
    }
    factor.solve_in_place(&mut theta);
    let e = model.residuals(&st, &theta);
    let rss: f64 = e.iter().map(|v| v * v).sum();
    let n = model.n() as f64;
    let mut ll = n * (2.0 * PI).ln() + n * par.sigma2.ln() + factor.logdet_leading(st.k) + rss / par.sigma2;
    let mut nu_sq = vec![0.0; model.n_levels()];
    for l in 0..model.n_levels() {
        if let Some(nu) = model.level_effects(&st, &theta, l) {
            nu_sq[l] = nu.iter().map(|v| v * v).sum();
            ll += model.sizes[l] as f64 * par.tau[l].ln() + nu_sq[l] / par.tau[l];
        }
    }
    let mut traces = Vec::new();
    if with_traces {
        traces = vec![0.0; model.n_levels()];
        if st.k > 0 {
            let z = factor.selected_inverse(0..st.k, st.k);
            for (l, off) in st.offsets.iter().enumerate() {
                if let Some(o) = off {
                    traces[l] = (0..model.sizes[l]).map(|g| z.diag(o + g)).sum();
                }
            }
        }
    }
    if !ll.is_finite() {
        return Err(FitError::Numerical("log-likelihood is not finite".into()));
    }
    Ok(Evaluation { ll: -0.5 * ll, theta, st, rss, nu_sq, traces, factor })
}

/// Profiled (over fixed effects) Gaussian log-likelihood.
pub fn log_likelihood(model: &MixedModel, par: &VarianceParams) -> Result<f64, FitError> {
    Ok(evaluate(model, par, false)?.ll)
}

/// ∂ℓ/∂(σ², τ_1..τ_L); zero for inactive levels. Needs traces.
fn gradient(model: &MixedModel, par: &VarianceParams, ev: &Evaluation) -> Vec<f64> {
    let n = model.n() as f64;
    let s2 = par.sigma2;
    let mut g = vec![0.0; par.len()];
    let mut tr_ratio = 0.0;
    for l in 0..model.n_levels() {
        if ev.st.offsets[l].is_some() {
            let t = par.tau[l];
            let q = model.sizes[l] as f64;
            g[1 + l] = -0.5 * (q / t - ev.traces[l] / (t * t) - ev.nu_sq[l] / (t * t));
            tr_ratio += ev.traces[l] / t;
        }
    }
    g[0] = -0.5 * ((n - ev.st.k as f64 + tr_ratio) / s2 - ev.rss / (s2 * s2));
    g
}

fn em_step(model: &MixedModel, par: &VarianceParams, ev: &Evaluation, fixed: &[Option<f64>], floor: f64) -> VarianceParams {
    let mut next = par.clone();
    let mut tr_ratio = 0.0;
    for l in 0..model.n_levels() {
        if ev.st.offsets[l].is_some() {
            tr_ratio += ev.traces[l] / par.tau[l];
            if fixed[1 + l].is_none() {
                let v = (ev.nu_sq[l] + ev.traces[l]) / model.sizes[l] as f64;
                next.tau[l] = if v < floor { 0.0 } else { v };
            }
        }
    }
    if fixed[0].is_none() {
        let n = model.n() as f64;
        next.sigma2 = ((ev.rss + par.sigma2 * (ev.st.k as f64 - tr_ratio)) / n).max(floor);
    }
    next
}

/// Result of maximizing the likelihood of a [`MixedModel`].
pub struct MleSolution {
    pub params: VarianceParams,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Log-likelihood after each EM iteration, starting from the initial point.
    pub em_trace: Vec<f64>,
    /// Parameters held at zero by the boundary rule (index 0 is σ²).
    pub pinned: Vec<bool>,
    pub(crate) eval: Evaluation,
}

impl MleSolution {
    pub fn theta(&self) -> &[f64] {
        &self.eval.theta
    }

    pub fn structure(&self) -> &Arc<Structure> {
        &self.eval.st
    }
}

fn initial_params(model: &MixedModel) -> Result<VarianceParams, FitError> {
    let l = model.n_levels();
    let probe = VarianceParams { sigma2: 1.0, tau: vec![0.0; l] };
    let ev = evaluate(model, &probe, false)?;
    let s2 = (ev.rss / model.n() as f64).max(1e-8);
    Ok(VarianceParams { sigma2: s2 / 2.0, tau: vec![s2 / (2.0 * l.max(1) as f64); l] })
}

/// Maximizes the marginal likelihood over the variances not listed in
/// `fixed` (index 0 is σ², index `1 + l` is level `l`).
pub fn fit_mle_model(
    model: &MixedModel,
    options: &MleOptions,
    start: Option<&VarianceParams>,
    fixed: &[Option<f64>],
) -> Result<MleSolution, FitError> {
    let n_par = 1 + model.n_levels();
    assert_eq!(fixed.len(), n_par);
    if !(options.tolerance > 0.0) {
        return Err(FitError::InvalidOption("tolerance must be positive".into()));
    }
    let floor = options.log_floor.exp();
    let mut par = match start {
        Some(s) => s.clone(),
        None => initial_params(model)?,
    };
    for (i, f) in fixed.iter().enumerate() {
        if let Some(v) = f {
            par.set(i, *v);
        }
    }
    let mut ev = evaluate(model, &par, true)?;
    let mut em_trace = vec![ev.ll];
    let mut iterations = 0;

    while iterations < options.em_iterations.min(options.max_iter) {
        let next = em_step(model, &par, &ev, fixed, floor);
        let ev_next = evaluate(model, &next, true)?;
        iterations += 1;
        let rel = (ev_next.ll - ev.ll).abs() / ev.ll.abs().max(1.0);
        debug_assert!(ev_next.ll >= ev.ll - 1e-8 * ev.ll.abs().max(1.0), "EM decreased the likelihood");
        em_trace.push(ev_next.ll);
        par = next;
        ev = ev_next;
        if rel < options.em_tolerance {
            break;
        }
    }

    let mut pinned: Vec<bool> = (0..n_par).map(|i| i > 0 && fixed[i].is_none() && par.get(i) == 0.0).collect();
    let (par, ev) = polish(model, options, par, ev, fixed, &mut pinned, &mut iterations)?;
    Ok(MleSolution { log_likelihood: ev.ll, params: par, iterations, em_trace, pinned, eval: ev })
}

#[allow(clippy::too_many_arguments)]
fn polish(
    model: &MixedModel,
    options: &MleOptions,
    mut par: VarianceParams,
    mut ev: Evaluation,
    fixed: &[Option<f64>],
    pinned: &mut [bool],
    iterations: &mut usize,
) -> Result<(VarianceParams, Evaluation), FitError> {
    let floor = options.log_floor;
    'restart: loop {
        let free: Vec<usize> = (0..par.len()).filter(|&i| fixed[i].is_none() && !pinned[i]).collect();
        if free.is_empty() {
            return Ok((par, ev));
        }
        let m = free.len();
        // negative log-likelihood and its gradient in log-variance coordinates
        let grad_of = |par: &VarianceParams, ev: &Evaluation| -> Vec<f64> {
            let g = gradient(model, par, ev);
            free.iter().map(|&i| -g[i] * par.get(i)).collect()
        };
        let mut x: Vec<f64> = free.iter().map(|&i| par.get(i).ln()).collect();
        let mut f = -ev.ll;
        let mut g = grad_of(&par, &ev);
        let mut h = DMatrix::<f64>::identity(m, m);
        loop {
            if *iterations >= options.max_iter {
                return Err(FitError::NonConvergence {
                    iterations: *iterations,
                    log_likelihood: ev.ll,
                    last: Box::new(par),
                });
            }
            *iterations += 1;
            let gv = nalgebra::DVector::from_column_slice(&g);
            let mut d: Vec<f64> = (-(&h * &gv)).iter().copied().collect();
            let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            if slope >= 0.0 {
                h = DMatrix::identity(m, m);
                d = g.iter().map(|v| -v).collect();
                slope = -g.iter().map(|v| v * v).sum::<f64>();
            }
            let biggest = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if biggest > MAX_STEP {
                let s = MAX_STEP / biggest;
                d.iter_mut().for_each(|v| *v *= s);
                slope *= s;
            }
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let x_new: Vec<f64> = x.iter().zip(&d).map(|(a, b)| (a + step * b).max(floor)).collect();
                let mut trial = par.clone();
                for (k, &i) in free.iter().enumerate() {
                    trial.set(i, x_new[k].exp());
                }
                let moved: f64 = x_new.iter().zip(&x).zip(&g).map(|((a, b), c)| (a - b) * c).sum();
                match evaluate(model, &trial, true) {
                    Ok(ev_t) if -ev_t.ll <= f + 1e-4 * moved.min(step * slope).min(0.0) => {
                        accepted = Some((x_new, trial, ev_t));
                        break;
                    }
                    _ => step *= 0.5,
                }
            }
            let Some((x_new, trial, ev_t)) = accepted else {
                return Ok((par, ev));
            };
            let f_new = -ev_t.ll;
            let g_new = grad_of(&trial, &ev_t);
            let rel = (f - f_new).abs() / f_new.abs().max(1.0);
            let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
            let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
            if sy > 1e-12 {
                let sv = nalgebra::DVector::from_vec(s);
                let yvv = nalgebra::DVector::from_vec(yv);
                let rho = 1.0 / sy;
                let i_m = DMatrix::<f64>::identity(m, m);
                let a = &i_m - rho * &sv * yvv.transpose();
                let b = &i_m - rho * &yvv * sv.transpose();
                h = &a * &h * &b + rho * &sv * sv.transpose();
            }
            x = x_new;
            f = f_new;
            g = g_new;
            par = trial;
            ev = ev_t;

            let mut newly_pinned = false;
            for (k, &i) in free.iter().enumerate() {
                if i == 0 {
                    continue;
                }
                let v = par.get(i);
                let at_floor = x[k] <= floor + 1e-9;
                if at_floor || (v < SNAP_RELATIVE * par.sigma2 && g[k] > 0.0) {
                    par.set(i, 0.0);
                    pinned[i] = true;
                    newly_pinned = true;
                }
            }
            if newly_pinned {
                ev = evaluate(model, &par, true)?;
                continue 'restart;
            }
            let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if rel < options.tolerance && gmax < GRADIENT_TOLERANCE {
                return Ok((par, ev));
            }
        }
    }
}

/// Observed-information standard errors for the free variances.
fn variance_standard_errors(model: &MixedModel, par: &VarianceParams, free: &[usize]) -> Option<Vec<f64>> {
    let m = free.len();
    if m == 0 {
        return Some(Vec::new());
    }
    let mut hess = DMatrix::<f64>::zeros(m, m);
    for (a, &i) in free.iter().enumerate() {
        let h = 1e-4 * par.get(i);
        let mut up = par.clone();
        up.set(i, par.get(i) + h);
        let mut dn = par.clone();
        dn.set(i, par.get(i) - h);
        let eu = evaluate(model, &up, true).ok()?;
        let ed = evaluate(model, &dn, true).ok()?;
        let gu = gradient(model, &up, &eu);
        let gd = gradient(model, &dn, &ed);
        for (b, &j) in free.iter().enumerate() {
            hess[(b, a)] = (gu[j] - gd[j]) / (2.0 * h);
        }
    }
    let info = -(&hess + hess.transpose()) * 0.5;
    let inv = info.cholesky()?.inverse();
    Some((0..m).map(|k| inv[(k, k)].max(0.0).sqrt()).collect())
}

/// Maximum likelihood fit of the nested random-intercept model.
pub fn fit_mle(records: &[TransformedRecord], spec: &HierarchySpec, options: &MleOptions) -> Result<FitResult, FitError> {
    let prep = prepare(records, spec)?;
    let index = &prep.index;
    let p = prep.design.p();
    let n = records.len();
    if n <= p + spec.levels.len() + 1 {
        return Err(FitError::TooFewObservations { n, needed: p + spec.levels.len() + 1 });
    }
    let model = MixedModel::from_index(prep.y.clone(), index, FixedDesign::from_design(&prep.design));
    let singletons = index.singleton_levels();
    let mut fixed = vec![None; 1 + model.n_levels()];
    for (l, level) in model.levels.iter().enumerate() {
        if singletons.contains(level) {
            fixed[1 + l] = Some(0.0);
        }
    }
    let sol = fit_mle_model(&model, options, None, &fixed)?;
    let par = &sol.params;
    let ev = &sol.eval;
    let mut warnings = Vec::new();

    // boundary estimates get the curvature just inside the admissible region
    let free: Vec<usize> = (0..par.len()).filter(|&i| fixed[i].is_none()).collect();
    let mut at = par.clone();
    for &i in &free {
        if sol.pinned[i] {
            at.set(i, 1e-3 * par.sigma2);
        }
    }
    let var_se = if options.standard_errors {
        let se = variance_standard_errors(&model, &at, &free);
        if se.is_none() {
            warnings.push("observed information is not positive definite; variance standard errors omitted".into());
        }
        se
    } else {
        None
    };
    let se_of = |i: usize| var_se.as_ref().and_then(|v| free.iter().position(|&j| j == i).map(|k| v[k]));

    let st = &ev.st;
    let fixed_inv = ev.factor.selected_inverse(st.k..st.dim, st.dim);
    let beta = model.fixed_effects(st, &ev.theta).to_vec();
    let standard_errors: Vec<f64> = (0..p).map(|j| fixed_inv.diag(st.k + j).max(0.0).sqrt()).collect();
    let p_values = beta.iter().zip(&standard_errors).map(|(b, s)| normal_p_value(b / s)).collect();

    let mut components = Vec::new();
    let mut group_effects = Vec::new();
    for (l, &level) in model.levels.iter().enumerate() {
        let unidentified = singletons.contains(&level);
        if unidentified {
            warnings.push(format!("level `{level}` has a single group; its variance is unidentified"));
        }
        components.push(VarianceComponent {
            level,
            variance: par.tau[l],
            standard_error: se_of(1 + l),
            unidentified,
            at_boundary: sol.pinned[1 + l],
        });
        let values = model
            .level_effects(st, &ev.theta, l)
            .map(|v| v.to_vec())
            .unwrap_or_else(|| vec![0.0; model.sizes[l]]);
        group_effects.push(GroupEffects { level, labels: index.level(level).labels.clone(), values });
    }
    let k = p + 1 + model.n_levels();
    Ok(FitResult {
        method: Method::Mle,
        levels: model.levels.clone(),
        beta_labels: prep.design.labels.clone(),
        beta,
        standard_errors,
        p_values,
        mu: None,
        components,
        sigma2: par.sigma2,
        sigma2_se: se_of(0),
        group_effects,
        metrics: FitMetrics {
            n_obs: n,
            log_likelihood: Some(sol.log_likelihood),
            aic: Some(2.0 * k as f64 - 2.0 * sol.log_likelihood),
            iterations: Some(sol.iterations),
            ..Default::default()
        },
        normality_assumed: true,
        warnings,
    })
}
