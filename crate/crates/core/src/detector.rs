//! Close-end sequential change-point monitoring.
//!
//! After fitting `eta_hat` on `X_0..X_m`, the monitor accumulates
//! `S_{m,k} = sum_{t=m+1}^{m+k} G(X_t, eta_hat)` and rejects the no-change
//! hypothesis at the first `k <= N m` with
//! `w(m,k,gamma)^2 S_{m,k}' A S_{m,k} >= c(gamma, alpha)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{score_contrib, FitResult};
use crate::linalg::{quad_form, spd_inverse};
use crate::model::SeriesSample;
use crate::stochastic::{MvnSampler, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    /// Sensitivity exponent in `[0, 0.5)`.
    pub gamma: f64,
    /// Horizon multiplier `N`: monitoring stops after `floor(N m)` steps.
    pub horizon: f64,
}

impl WeightConfig {
    pub fn new(gamma: f64, horizon: f64) -> Result<Self> {
        let cfg = Self { gamma, horizon };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::domain(format!("horizon N must be positive, got {}", self.horizon)));
        }
        Ok(())
    }

    /// Number of monitoring steps `floor(N m)`.
    pub fn max_steps(&self, m: usize) -> usize {
        (self.horizon * m as f64 + 1e-9).floor() as usize
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..0.5).contains(&gamma) {
        return Err(Error::domain(format!("gamma must lie in [0, 0.5), got {gamma}")));
    }
    Ok(())
}

/// `rho(s, gamma) = s^-gamma (s + 1)^(gamma - 1)`.
pub fn rho(s: f64, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::domain(format!("rho needs s > 0, got {s}")));
    }
    Ok(rho_unchecked(s, gamma))
}

#[inline]
fn rho_unchecked(s: f64, gamma: f64) -> f64 {
    s.powf(-gamma) * (s + 1.0).powf(gamma - 1.0)
}

/// `w(m, k, gamma) = m^-1/2 (1 + k/m)^-1 (k / (m + k))^-gamma`.
pub fn weight(m: usize, k: usize, gamma: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::domain("weight needs m >= 1"));
    }
    if k == 0 {
        return Err(Error::domain("weight is undefined at k = 0"));
    }
    check_gamma(gamma)?;
    Ok(weight_unchecked(m, k, gamma))
}

#[inline]
fn weight_unchecked(m: usize, k: usize, gamma: f64) -> f64 {
    let mf = m as f64;
    rho_unchecked(k as f64 / mf, gamma) / mf.sqrt()
}

/// `w^2 S' A S`.
pub fn detection_statistic(score_sum: &DVector<f64>, a: &DMatrix<f64>, w: f64) -> Result<f64> {
    let d = score_sum.len();
    if a.nrows() != d || a.ncols() != d {
        return Err(Error::Dimension { expected: d, got: a.nrows() });
    }
    Ok(w * w * quad_form(a, score_sum.as_slice()))
}

fn check_pd(a: &DMatrix<f64>, name: &str) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Dimension { expected: a.nrows(), got: a.ncols() });
    }
    if a.clone().cholesky().is_none() {
        return Err(Error::domain(format!("{name} must be symmetric positive definite")));
    }
    Ok(())
}

/// Discretization and replication settings for threshold calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSettings {
    pub horizon: f64,
    pub m_grid: usize,
    pub reps: usize,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self { horizon: 3.0, m_grid: 1000, reps: 10_000 }
    }
}

impl CalibrationSettings {
    fn validate(&self) -> Result<()> {
        if self.reps < 100 {
            return Err(Error::invalid(format!("calibration needs at least 100 replications, got {}", self.reps)));
        }
        if self.m_grid == 0 {
            return Err(Error::invalid("m_grid must be >= 1"));
        }
        WeightConfig::new(0.0, self.horizon).map(|_| ())
    }
}

/// Simulated suprema of `rho^2(s, gamma) (W1(s) - s W2(1))' A (W1(s) - s W2(1))`
/// over `s = 1/m_grid, ..., N`, one vector of `reps` values per gamma.
///
/// Replication `r` draws from stream `r` of `seed`, so results do not depend
/// on thread count.
pub fn simulate_suprema(
    sigma_hat: &DMatrix<f64>,
    a: &DMatrix<f64>,
    gammas: &[f64],
    settings: &CalibrationSettings,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    settings.validate()?;
    for &g in gammas {
        check_gamma(g)?;
    }
    check_pd(a, "A")?;
    let sampler = MvnSampler::new(sigma_hat)?;
    let d = sampler.dim();
    if a.nrows() != d {
        return Err(Error::Dimension { expected: d, got: a.nrows() });
    }
    let steps = WeightConfig { gamma: 0.0, horizon: settings.horizon }.max_steps(settings.m_grid);
    if steps == 0 {
        return Err(Error::invalid("horizon N * m_grid yields no grid points"));
    }
    let grid = settings.m_grid as f64;
    let rho_sq: Vec<Vec<f64>> = gammas
        .iter()
        .map(|&g| (1..=steps).map(|k| rho_unchecked(k as f64 / grid, g).powi(2)).collect())
        .collect();
    let scale = grid.sqrt().recip();

    let per_rep: Vec<Vec<f64>> = (0..settings.reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = RngState::new(seed, rep as u64);
            let mut w2 = vec![0.0; d];
            sampler.sample_into(&mut rng, &mut w2);
            let mut w1 = vec![0.0; d];
            let mut z = vec![0.0; d];
            let mut v = vec![0.0; d];
            let mut sup = vec![0.0f64; gammas.len()];
            for k in 1..=steps {
                sampler.sample_into(&mut rng, &mut z);
                let s = k as f64 / grid;
                for i in 0..d {
                    w1[i] += z[i] * scale;
                    v[i] = w1[i] - s * w2[i];
                }
                let q = quad_form(a, &v);
                for (g, best) in sup.iter_mut().enumerate() {
                    *best = best.max(rho_sq[g][k - 1] * q);
                }
            }
            sup
        })
        .collect();

    Ok((0..gammas.len()).map(|g| per_rep.iter().map(|r| r[g]).collect()).collect())
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn empirical_quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("probability must lie in [0, 1], got {p}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Monte-Carlo threshold `c(gamma, alpha)`: the `1 - alpha` quantile of the
/// simulated suprema.
pub fn calibrate_threshold(
    sigma_hat: &DMatrix<f64>,
    a: &DMatrix<f64>,
    gamma: f64,
    alpha: f64,
    settings: &CalibrationSettings,
    rng: &mut RngState,
) -> Result<f64> {
    check_alpha(alpha)?;
    let sup = simulate_suprema(sigma_hat, a, &[gamma], settings, rng.next_u64())?;
    empirical_quantile(&sup[0], 1.0 - alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub gamma: f64,
    pub alpha: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMeta {
    pub replications: usize,
    pub m_grid: usize,
    pub horizon: f64,
    pub dim: usize,
    pub seed: u64,
    /// Where the Wiener covariance came from.
    pub sigma_source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub entries: Vec<ThresholdEntry>,
    pub meta: ThresholdMeta,
}

impl ThresholdTable {
    /// Calibrate every `(gamma, alpha)` pair from one set of simulated paths.
    pub fn calibrate(
        sigma_hat: &DMatrix<f64>,
        a: &DMatrix<f64>,
        gammas: &[f64],
        alphas: &[f64],
        settings: &CalibrationSettings,
        seed: u64,
        sigma_source: impl Into<String>,
    ) -> Result<Self> {
        for &alpha in alphas {
            check_alpha(alpha)?;
        }
        let sup = simulate_suprema(sigma_hat, a, gammas, settings, seed)?;
        let mut entries = Vec::with_capacity(gammas.len() * alphas.len());
        for (g, &gamma) in gammas.iter().enumerate() {
            for &alpha in alphas {
                entries.push(ThresholdEntry { gamma, alpha, c: empirical_quantile(&sup[g], 1.0 - alpha)? });
            }
        }
        Ok(Self {
            entries,
            meta: ThresholdMeta {
                replications: settings.reps,
                m_grid: settings.m_grid,
                horizon: settings.horizon,
                dim: sigma_hat.nrows(),
                seed,
                sigma_source: sigma_source.into(),
            },
        })
    }

    pub fn get(&self, gamma: f64, alpha: f64) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| (e.gamma - gamma).abs() < 1e-12 && (e.alpha - alpha).abs() < 1e-12)
            .map(|e| e.c)
    }

    pub fn lookup(&self, gamma: f64, alpha: f64) -> Result<f64> {
        self.get(gamma, alpha)
            .ok_or_else(|| Error::invalid(format!("threshold table has no entry for gamma={gamma}, alpha={alpha}")))
    }

    pub fn gammas(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for e in &self.entries {
            if !out.iter().any(|g| (g - e.gamma).abs() < 1e-12) {
                out.push(e.gamma);
            }
        }
        out
    }
}

/// Choice of the rescaling matrix `A` in the quadratic form.
#[derive(Debug, Clone, PartialEq)]
pub enum Rescale {
    /// Inverse of the fit's information matrix.
    InverseInformation,
    Identity,
    Matrix(DMatrix<f64>),
}

impl Rescale {
    pub fn resolve(&self, fit: &FitResult) -> Result<DMatrix<f64>> {
        let d = fit.dim();
        let a = match self {
            Rescale::InverseInformation => spd_inverse(&fit.info_matrix)?,
            Rescale::Identity => DMatrix::identity(d, d),
            Rescale::Matrix(a) => a.clone(),
        };
        if a.nrows() != d {
            return Err(Error::Dimension { expected: d, got: a.nrows() });
        }
        check_pd(&a, "A")?;
        Ok(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub k_detect: usize,
    pub statistic: f64,
}

/// Running state of one monitoring session.
#[derive(Debug, Clone)]
pub struct MonitorState {
    params: crate::model::ModelParams,
    m: usize,
    k: usize,
    score_sum: DVector<f64>,
    rescale_a: DMatrix<f64>,
    threshold_c: f64,
    weight: WeightConfig,
    crossing: Option<Crossing>,
    statistics: Vec<f64>,
    /// Partial sums `S_{m,1}, ..., S_{m,k}` stored row by row.
    partial_sums: Vec<f64>,
}

impl MonitorState {
    pub fn new(fit: &FitResult, rescale_a: DMatrix<f64>, weight: WeightConfig, threshold_c: f64) -> Result<Self> {
        weight.validate()?;
        let d = fit.dim();
        if rescale_a.nrows() != d || rescale_a.ncols() != d {
            return Err(Error::Dimension { expected: d, got: rescale_a.nrows() });
        }
        check_pd(&rescale_a, "A")?;
        if !threshold_c.is_finite() {
            return Err(Error::domain("threshold must be finite"));
        }
        Ok(Self {
            params: fit.params_hat.clone(),
            m: fit.n_obs,
            k: 0,
            score_sum: DVector::zeros(d),
            rescale_a,
            threshold_c,
            weight,
            crossing: None,
            statistics: Vec::new(),
            partial_sums: Vec::new(),
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Steps processed so far.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn score_sum(&self) -> &DVector<f64> {
        &self.score_sum
    }

    pub fn rescale_a(&self) -> &DMatrix<f64> {
        &self.rescale_a
    }

    pub fn threshold(&self) -> f64 {
        self.threshold_c
    }

    pub fn weight_config(&self) -> WeightConfig {
        self.weight
    }

    pub fn crossing(&self) -> Option<Crossing> {
        self.crossing
    }

    pub fn max_steps(&self) -> usize {
        self.weight.max_steps(self.m)
    }

    /// True once a crossing is recorded or the horizon is reached.
    pub fn is_finished(&self) -> bool {
        self.crossing.is_some() || self.k >= self.max_steps()
    }

    /// `S_{m,k}` for `1 <= k <= self.k()`.
    pub fn partial_sum(&self, k: usize) -> Option<DVector<f64>> {
        let d = self.score_sum.len();
        (1..=self.k).contains(&k).then(|| DVector::from_column_slice(&self.partial_sums[(k - 1) * d..k * d]))
    }

    /// Processes observation `X_{m+k}` given `X_{m+k-1}` and `W_{m+k}`.
    /// Returns the statistic; does nothing after the monitor has finished.
    pub fn step(&mut self, x: f64, x_prev: f64, w: &[f64]) -> Result<Option<f64>> {
        if self.is_finished() {
            return Ok(None);
        }
        let index = self.m + self.k + 1;
        if !x.is_finite() || !x_prev.is_finite() || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let g = score_contrib(&self.params, x, x_prev, w)?;
        self.score_sum += g;
        self.k += 1;
        let w = weight_unchecked(self.m, self.k, self.weight.gamma);
        let stat = w * w * quad_form(&self.rescale_a, self.score_sum.as_slice());
        self.statistics.push(stat);
        self.partial_sums.extend_from_slice(self.score_sum.as_slice());
        if stat >= self.threshold_c {
            self.crossing = Some(Crossing { k_detect: self.k, statistic: stat });
        }
        Ok(Some(stat))
    }
}

/// Monitor `stream`, whose `x[0]` is the last training observation `X_m`
/// and whose transition `k` is `X_{m+k}`.
pub fn run_monitor(
    fit: &FitResult,
    stream: &SeriesSample,
    config: WeightConfig,
    threshold: f64,
    rescale: &Rescale,
) -> Result<MonitorState> {
    if !fit.converged {
        return Err(Error::invalid("monitoring requires a converged fit"));
    }
    if stream.exo_dim() != fit.params_hat.exo_dim() {
        return Err(Error::Dimension { expected: fit.params_hat.exo_dim(), got: stream.exo_dim() });
    }
    let mut state = MonitorState::new(fit, rescale.resolve(fit)?, config, threshold)?;
    let len = stream.n_transitions();
    if len > state.max_steps() {
        return Err(Error::invalid(format!(
            "stream has {len} observations but the horizon allows {}",
            state.max_steps()
        )));
    }
    for k in 1..=len {
        let (x, x_prev, w) = stream.transition(k);
        state.step(x, x_prev, w)?;
        if state.is_finished() {
            break;
        }
    }
    Ok(state)
}

/// Per-step `(k, statistic)` history.
pub fn statistic_trace(state: &MonitorState) -> Vec<(usize, f64)> {
    state.statistics.iter().enumerate().map(|(i, &s)| (i + 1, s)).collect()
}
