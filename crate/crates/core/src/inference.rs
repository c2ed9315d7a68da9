//! Partial maximum-likelihood estimation.
//!
//! The partial likelihood is the product of the conditional Beta densities
//! `f(X_t | X_{t-1}, W_t)` for `t = 1..=m`; the density of `X_0` is ignored.
//! Score and Hessian are the closed forms obtained by differentiating
//!
//! ```text
//! ln f = ln G(tau) - ln G(tau mu) - ln G(tau (1 - mu))
//!        + (tau mu - 1) ln x + (tau (1 - mu) - 1) ln(1 - x)
//! ```
//!
//! with respect to `(tau, beta)`, where `logit(mu) = beta' Z`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{condition_number, max_abs, spd_inverse, symmetrize};
use crate::model::{expit_pair, ModelParams, SeriesSample, XLink};
use crate::optim::{self, Objective, Status};
use crate::specfun::{digamma_pos, ln_gamma_pos, normal_quantile, trigamma_pos};
use crate::stochastic::clamp_unit;

/// Per-parameter quantities shared by every transition.
#[derive(Debug, Clone, Copy)]
struct TauTerms {
    tau: f64,
    ln_gamma: f64,
    digamma: f64,
    trigamma: f64,
}

impl TauTerms {
    fn new(tau: f64) -> Self {
        Self { tau, ln_gamma: ln_gamma_pos(tau), digamma: digamma_pos(tau), trigamma: trigamma_pos(tau) }
    }
}

/// Quantities of one transition `X_{t-1} -> X_t`.
#[derive(Debug, Clone, Copy)]
struct Transition {
    mu: f64,
    om: f64,
    /// `A(X_{t-1})`, the second regressor entry.
    lag: f64,
    ln_x: f64,
    ln_1mx: f64,
    /// `logit(X_t) - (psi(tau mu) - psi(tau (1 - mu)))`
    resid: f64,
    psi_b: f64,
}

impl Transition {
    #[inline]
    fn new(params: &ModelParams, tt: &TauTerms, x: f64, x_prev: f64, w: &[f64]) -> Self {
        let lag = params.xlink.apply_unchecked(x_prev);
        let mut eta = params.phi0 + params.phi1 * lag;
        for (c, wi) in params.exo_coefs.iter().zip(w) {
            eta += c * wi;
        }
        let (mu, om) = expit_pair(eta);
        let xc = clamp_unit(x);
        let ln_x = xc.ln();
        let ln_1mx = (-xc).ln_1p();
        let psi_a = digamma_pos(tt.tau * mu);
        let psi_b = digamma_pos(tt.tau * om);
        Self { mu, om, lag, ln_x, ln_1mx, resid: (ln_x - ln_1mx) - (psi_a - psi_b), psi_b }
    }

    #[inline]
    fn z(&self, w: &[f64], j: usize) -> f64 {
        match j {
            0 => 1.0,
            1 => self.lag,
            _ => w[j - 2],
        }
    }

    fn loglik(&self, tt: &TauTerms) -> f64 {
        let a = tt.tau * self.mu;
        let b = tt.tau * self.om;
        tt.ln_gamma - ln_gamma_pos(a) - ln_gamma_pos(b) + (a - 1.0) * self.ln_x + (b - 1.0) * self.ln_1mx
    }

    /// Adds the score of this transition to `out` (length `l + 3`).
    #[inline]
    fn add_score(&self, tt: &TauTerms, w: &[f64], out: &mut [f64]) {
        out[0] += self.mu * self.resid + self.ln_1mx - self.psi_b + tt.digamma;
        let common = tt.tau * self.resid * self.mu * self.om;
        for j in 0..out.len() - 1 {
            out[j + 1] += common * self.z(w, j);
        }
    }

    /// Adds the Hessian of this transition to `out`.
    fn add_hessian(&self, tt: &TauTerms, w: &[f64], out: &mut DMatrix<f64>) {
        let tau = tt.tau;
        let (mu, om) = (self.mu, self.om);
        let tg_a = trigamma_pos(tau * mu);
        let tg_b = trigamma_pos(tau * om);
        let v = mu * om;

        out[(0, 0)] += tt.trigamma - mu * mu * tg_a - om * om * tg_b;

        let cross = (self.resid - tau * (mu * tg_a - om * tg_b)) * v;
        let block = tau * (-tau * (tg_a + tg_b) * v + (om - mu) * self.resid) * v;
        let p = out.nrows() - 1;
        for i in 0..p {
            let zi = self.z(w, i);
            out[(i + 1, 0)] += cross * zi;
            out[(0, i + 1)] += cross * zi;
            for j in 0..=i {
                let h = block * zi * self.z(w, j);
                out[(i + 1, j + 1)] += h;
                if i != j {
                    out[(j + 1, i + 1)] += h;
                }
            }
        }
    }
}

fn check_single(params: &ModelParams, x: f64, x_prev: f64, w: &[f64]) -> Result<()> {
    params.validate()?;
    if w.len() != params.exo_dim() {
        return Err(Error::Dimension { expected: params.exo_dim(), got: w.len() });
    }
    for (name, v) in [("x", x), ("x_prev", x_prev)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::domain(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    Ok(())
}

fn check_data(params: &ModelParams, data: &SeriesSample) -> Result<()> {
    params.validate()?;
    data.check_dim(params)
}

/// Conditional log-density of one transition.
pub fn loglik_contrib(params: &ModelParams, x: f64, x_prev: f64, w: &[f64]) -> Result<f64> {
    check_single(params, x, x_prev, w)?;
    let tt = TauTerms::new(params.tau);
    Ok(Transition::new(params, &tt, x, x_prev, w).loglik(&tt))
}

/// `ln PL_m(eta)` summed over every transition of `data`.
pub fn partial_loglik(params: &ModelParams, data: &SeriesSample) -> Result<f64> {
    check_data(params, data)?;
    if data.n_transitions() == 0 {
        return Err(Error::invalid("partial likelihood needs at least one transition"));
    }
    let tt = TauTerms::new(params.tau);
    Ok((1..=data.n_transitions())
        .map(|t| {
            let (x, x_prev, w) = data.transition(t);
            Transition::new(params, &tt, x, x_prev, w).loglik(&tt)
        })
        .sum())
}

/// Score `G(X_t, eta)` of one transition, ordered `(tau, phi0, phi1, phi...)`.
pub fn score_contrib(params: &ModelParams, x: f64, x_prev: f64, w: &[f64]) -> Result<DVector<f64>> {
    check_single(params, x, x_prev, w)?;
    let tt = TauTerms::new(params.tau);
    let mut out = DVector::zeros(params.dim());
    Transition::new(params, &tt, x, x_prev, w).add_score(&tt, w, out.as_mut_slice());
    Ok(out)
}

/// Sum of transition scores for `t` in `range` (transition indices start at 1).
/// An empty range gives the zero vector.
pub fn score_sum(params: &ModelParams, data: &SeriesSample, range: Range<usize>) -> Result<DVector<f64>> {
    check_data(params, data)?;
    let mut out = DVector::zeros(params.dim());
    if range.is_empty() {
        return Ok(out);
    }
    check_range(data, &range)?;
    let tt = TauTerms::new(params.tau);
    for t in range {
        let (x, x_prev, w) = data.transition(t);
        Transition::new(params, &tt, x, x_prev, w).add_score(&tt, w, out.as_mut_slice());
    }
    Ok(out)
}

fn check_range(data: &SeriesSample, range: &Range<usize>) -> Result<()> {
    if range.start == 0 || range.end > data.n_transitions() + 1 {
        return Err(Error::invalid(format!(
            "transition range {}..{} outside 1..={}",
            range.start,
            range.end,
            data.n_transitions()
        )));
    }
    Ok(())
}

/// Hessian of one transition's log-density with respect to `(tau, beta)`.
pub fn hessian_contrib(params: &ModelParams, x: f64, x_prev: f64, w: &[f64]) -> Result<DMatrix<f64>> {
    check_single(params, x, x_prev, w)?;
    let tt = TauTerms::new(params.tau);
    let d = params.dim();
    let mut out = DMatrix::zeros(d, d);
    Transition::new(params, &tt, x, x_prev, w).add_hessian(&tt, w, &mut out);
    Ok(out)
}

/// Sum of transition Hessians for `t` in `range`.
pub fn hessian_sum(params: &ModelParams, data: &SeriesSample, range: Range<usize>) -> Result<DMatrix<f64>> {
    check_data(params, data)?;
    let d = params.dim();
    let mut out = DMatrix::zeros(d, d);
    if range.is_empty() {
        return Ok(out);
    }
    check_range(data, &range)?;
    let tt = TauTerms::new(params.tau);
    for t in range {
        let (x, x_prev, w) = data.transition(t);
        Transition::new(params, &tt, x, x_prev, w).add_hessian(&tt, w, &mut out);
    }
    Ok(out)
}

/// Log-likelihood and score in one pass over all transitions.
fn loglik_and_score(params: &ModelParams, data: &SeriesSample) -> (f64, DVector<f64>) {
    let tt = TauTerms::new(params.tau);
    let mut ll = 0.0;
    let mut score = DVector::zeros(params.dim());
    for t in 1..=data.n_transitions() {
        let (x, x_prev, w) = data.transition(t);
        let tr = Transition::new(params, &tt, x, x_prev, w);
        ll += tr.loglik(&tt);
        tr.add_score(&tt, w, score.as_mut_slice());
    }
    (ll, score)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the max-norm of the total score `S_m(eta)`.
    pub gradient_tolerance: f64,
    /// Starting point; `None` selects the moment / least-squares start.
    pub initial_params: Option<ModelParams>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iterations: 500, gradient_tolerance: 1e-6, initial_params: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerPath {
    /// Quasi-Newton followed by Newton refinement.
    QuasiNewton,
    /// Quasi-Newton line search failed; simplex search was used before refinement.
    SimplexFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub path: OptimizerPath,
    /// Observations at exactly 0 or 1, clamped before taking logarithms.
    pub clamped_observations: usize,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params_hat: ModelParams,
    pub loglik: f64,
    /// Max-norm of `S_m(eta_hat)`.
    pub score_norm_at_solution: f64,
    /// `(1/m) sum_t (-H_t(eta_hat))`.
    pub info_matrix: DMatrix<f64>,
    /// `info_matrix^-1 / m`.
    pub asymptotic_cov: DMatrix<f64>,
    pub converged: bool,
    /// Number of transitions `m` used in the fit.
    pub n_obs: usize,
    pub diagnostics: FitDiagnostics,
}

impl FitResult {
    pub fn dim(&self) -> usize {
        self.params_hat.dim()
    }

    /// Asymptotic standard deviations of the estimates.
    pub fn standard_errors(&self) -> DVector<f64> {
        self.asymptotic_cov.diagonal().map(|v| v.max(0.0).sqrt())
    }

    /// `2 (l + 3) - 2 ln PL_m(eta_hat)`.
    pub fn aic(&self) -> f64 {
        2.0 * self.dim() as f64 - 2.0 * self.loglik
    }
}

/// Objective in `theta = (ln tau, beta)`: negative mean log-likelihood.
struct NegLogLik<'a> {
    data: &'a SeriesSample,
    xlink: XLink,
    exo_dim: usize,
}

impl NegLogLik<'_> {
    fn params(&self, theta: &DVector<f64>) -> Option<ModelParams> {
        let tau = theta[0].exp();
        if !(tau.is_finite() && tau > 0.0) || theta.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(ModelParams {
            tau,
            phi0: theta[1],
            phi1: theta[2],
            exo_coefs: theta.as_slice()[3..3 + self.exo_dim].to_vec(),
            xlink: self.xlink,
        })
    }

    fn theta(params: &ModelParams) -> DVector<f64> {
        let mut v = params.to_vector();
        v[0] = params.tau.ln();
        v
    }
}

impl Objective for NegLogLik<'_> {
    fn eval(&mut self, theta: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let params = self.params(theta)?;
        let m = self.data.n_transitions() as f64;
        let (ll, mut score) = loglik_and_score(&params, self.data);
        if !ll.is_finite() || score.iter().any(|v| !v.is_finite()) {
            return None;
        }
        score[0] *= params.tau;
        Some((-ll / m, -score / m))
    }
}

/// Moment estimate of `tau` and least-squares `beta` from `logit(X_t)` on `Z_{t-1}`.
fn auto_start(data: &SeriesSample, xlink: XLink) -> ModelParams {
    let m = data.n_transitions();
    let p = data.exo_dim() + 2;
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut z = vec![0.0; p];
    for t in 1..=m {
        let (x, x_prev, w) = data.transition(t);
        let xc = x.clamp(1e-6, 1.0 - 1e-6);
        let y = (xc / (1.0 - xc)).ln();
        z[0] = 1.0;
        z[1] = xlink.apply_unchecked(x_prev);
        z[2..].copy_from_slice(w);
        for i in 0..p {
            rhs[i] += z[i] * y;
            for j in 0..p {
                gram[(i, j)] += z[i] * z[j];
            }
        }
    }
    let xs = &data.x()[1..];
    let mean = xs.iter().sum::<f64>() / m as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0).max(1.0);
    let beta = gram.cholesky().map(|c| c.solve(&rhs)).filter(|b| b.iter().all(|v| v.is_finite())).unwrap_or_else(|| {
        let mc = mean.clamp(1e-6, 1.0 - 1e-6);
        let mut b = DVector::zeros(p);
        b[0] = (mc / (1.0 - mc)).ln();
        b
    });
    let tau = mean * (1.0 - mean) / var - 1.0;
    let tau = if tau.is_finite() && tau > 1.0 { tau.min(1e8) } else { 1.0 };
    ModelParams { tau, phi0: beta[0], phi1: beta[1], exo_coefs: beta.as_slice()[2..].to_vec(), xlink }
}

/// Fit `eta` by maximizing the partial log-likelihood.
///
/// Optimization runs in `(ln tau, beta)` so `tau` stays positive: BFGS with
/// the analytic score, a simplex search if its line search stalls, then
/// Newton steps with the analytic Hessian until `max |S_m| <= tol`.
pub fn fit_pmle(data: &SeriesSample, xlink: XLink, options: &FitOptions) -> Result<FitResult> {
    xlink.validate()?;
    if !(options.gradient_tolerance > 0.0) {
        return Err(Error::invalid("gradient tolerance must be > 0"));
    }
    let l = data.exo_dim();
    let d = l + 3;
    let m = data.n_transitions();
    if m < d + 2 {
        return Err(Error::invalid(format!("need at least {} transitions to fit {d} parameters, got {m}", d + 2)));
    }
    let start = match &options.initial_params {
        Some(p) => {
            data.check_dim(p)?;
            p.validate()?;
            ModelParams { xlink, ..p.clone() }
        }
        None => auto_start(data, xlink),
    };
    let clamped_observations = data.x()[1..].iter().filter(|&&x| clamp_unit(x) != x).count();

    let mut obj = NegLogLik { data, xlink, exo_dim: l };
    let tol = options.gradient_tolerance;
    let mf = m as f64;
    // Total score in eta coordinates from the theta gradient of -ll/m.
    let score_norm = |theta: &DVector<f64>, grad: &DVector<f64>| {
        let mut s = -grad * mf;
        s[0] /= theta[0].exp();
        max_abs(&s)
    };

    let theta0 = NegLogLik::theta(&start);
    if obj.eval(&theta0).is_none() {
        return Err(Error::invalid("log-likelihood is not finite at the starting point"));
    }
    let budget = options.max_iterations;
    // Quasi-Newton stalls near the optimum in floating point; hand over to
    // Newton steps once the score is small or most of the budget is spent.
    let handover = tol.max(1e-2);
    let bfgs_budget = budget - budget / 5;
    let bfgs = optim::bfgs(&mut obj, theta0, bfgs_budget, |th, g| score_norm(th, g) <= handover)
        .ok_or_else(|| Error::invalid("log-likelihood is not finite at the starting point"))?;
    let mut iterations = bfgs.iterations;
    let mut path = OptimizerPath::QuasiNewton;
    let mut theta = bfgs.x;
    if bfgs.status == Status::LineSearchFailed && score_norm(&theta, &bfgs.grad) > tol {
        path = OptimizerPath::SimplexFallback;
        let (best, _) = optim::nelder_mead(&mut obj, &theta, 0.1, 200 * d * d);
        theta = best;
    }

    // Newton refinement.
    let mut message = None;
    let (mut f, mut g) = obj.eval(&theta).ok_or_else(|| Error::invalid("fit left the likelihood domain"))?;
    while score_norm(&theta, &g) > tol && iterations < budget {
        iterations += 1;
        let params = obj.params(&theta).expect("finite iterate");
        let tau = params.tau;
        let h = hessian_sum(&params, data, 1..m + 1)?;
        let s_tau = -g[0] * mf / tau;
        // Hessian of -ll/m in theta coordinates.
        let mut ht = -h / mf;
        ht[(0, 0)] = -(tau * tau * (-ht[(0, 0)] * mf) + tau * s_tau) / mf;
        for j in 1..d {
            ht[(0, j)] *= tau;
            ht[(j, 0)] *= tau;
        }
        let Some(chol) = ht.clone().cholesky() else {
            message = Some("Hessian not negative definite during refinement".to_string());
            break;
        };
        let dir = -chol.solve(&g);
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let trial = &theta + &dir * step;
            if let Some((ft, gt)) = obj.eval(&trial) {
                if ft <= f + 1e-13 * f.abs().max(1.0) || score_norm(&trial, &gt) < score_norm(&theta, &g) {
                    theta = trial;
                    f = ft;
                    g = gt;
                    moved = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !moved {
            message = Some("Newton refinement could not improve the iterate".to_string());
            break;
        }
    }

    let params_hat = obj.params(&theta).expect("finite iterate");
    let (loglik, score) = loglik_and_score(&params_hat, data);
    let score_norm_at_solution = max_abs(&score);
    let mut converged = score_norm_at_solution <= tol;
    if !converged && message.is_none() {
        message = Some(format!("iteration limit {budget} reached"));
    }

    let info_matrix = symmetrize(-hessian_sum(&params_hat, data, 1..m + 1)? / mf);
    let asymptotic_cov = match spd_inverse(&info_matrix) {
        Ok(inv) => inv / mf,
        Err(Error::Singular { condition }) if converged => {
            // A stationary point whose information is not positive definite
            // is not a local maximum.
            converged = false;
            message = Some(format!("information matrix not positive definite (condition {condition:.3e})"));
            pseudo_cov(&info_matrix, mf)?
        }
        Err(e) => {
            if converged {
                return Err(e);
            }
            pseudo_cov(&info_matrix, mf)?
        }
    };

    Ok(FitResult {
        params_hat,
        loglik,
        score_norm_at_solution,
        info_matrix,
        asymptotic_cov,
        converged,
        n_obs: m,
        diagnostics: FitDiagnostics { iterations, path, clamped_observations, message },
    })
}

/// Inverse through the LU factorization when the information is indefinite.
fn pseudo_cov(info: &DMatrix<f64>, m: f64) -> Result<DMatrix<f64>> {
    info.clone()
        .try_inverse()
        .map(|inv| symmetrize(inv) / m)
        .ok_or_else(|| Error::Singular { condition: condition_number(info) })
}

/// Parameter names in vector order, `(tau, phi0, phi1, phi_1, ...)`.
pub fn parameter_names(exo_dim: usize) -> Vec<String> {
    let mut names = vec!["tau".to_string(), "phi0".to_string(), "phi1".to_string()];
    names.extend((1..=exo_dim).map(|i| format!("phi_exo{i}")));
    names
}

/// Q-Q data for one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QqSeries {
    pub parameter: String,
    /// `(theoretical, sample)` pairs sorted by theoretical quantile.
    pub points: Vec<(f64, f64)>,
}

impl QqSeries {
    /// Least-squares slope of sample on theoretical quantiles.
    pub fn slope(&self) -> f64 {
        let n = self.points.len() as f64;
        let mx = self.points.iter().map(|p| p.0).sum::<f64>() / n;
        let my = self.points.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = self.points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = self.points.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    }

    pub fn max_gap(&self) -> f64 {
        self.points.iter().map(|p| (p.1 - p.0).abs()).fold(0.0, f64::max)
    }
}

/// Normal Q-Q data for standardized values `z_1..z_n` (Hazen plotting positions).
pub fn qq_points(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, v)| (normal_quantile((i as f64 + 0.5) / n).expect("interior probability"), v))
        .collect()
}

/// Standardize each fit by its own asymptotic SD and pair the sorted values
/// with standard normal quantiles, one series per parameter.
pub fn qq_export(fits: &[FitResult], truth: &ModelParams) -> Result<Vec<QqSeries>> {
    if fits.len() < 30 {
        return Err(Error::invalid(format!("Q-Q export needs at least 30 fits, got {}", fits.len())));
    }
    let d = truth.dim();
    if let Some(f) = fits.iter().find(|f| f.dim() != d) {
        return Err(Error::Dimension { expected: d, got: f.dim() });
    }
    let eta0 = truth.to_vector();
    Ok(parameter_names(truth.exo_dim())
        .into_iter()
        .enumerate()
        .map(|(i, parameter)| {
            let z: Vec<f64> = fits
                .iter()
                .map(|f| {
                    let sd = f.asymptotic_cov[(i, i)].max(0.0).sqrt();
                    let diff = f.params_hat.to_vector()[i] - eta0[i];
                    if sd > 0.0 {
                        diff / sd
                    } else {
                        diff
                    }
                })
                .collect();
            QqSeries { parameter, points: qq_points(&z) }
        })
        .collect())
}
