//! Replication studies: estimator consistency, threshold tables, empirical
//! size, power under a parameter change and forecast coverage.
//!
//! Every replication `r` draws from stream `r` of the study seed, so results
//! are identical for any number of worker threads.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{CalibrationSettings, Rescale, ThresholdTable, WeightConfig};
use crate::error::{Error, Result};
use crate::evalkit::{detection_summary, forecast_metrics, one_step_forecast, DetectionSummary, ForecastMetrics};
use crate::inference::{fit_pmle, parameter_names, qq_export, score_contrib, FitOptions, FitResult, QqSeries};
use crate::linalg::{quad_form, spd_inverse};
use crate::model::{
    simulate_path, simulate_path_with_change, Covariates, ModelParams, SeriesSample, SimulationOptions, XLink,
};
use crate::stochastic::{ExoAR1Spec, ExoInit, RngState};

/// `(tau, phi0, phi1, phi) = (100, -0.6, 0.1, 0.1)` with the logit x-link truncated at 0.01.
pub fn reference_params() -> ModelParams {
    ModelParams::new(100.0, -0.6, 0.1, vec![0.1], XLink::default()).expect("valid reference parameters")
}

/// [`reference_params`] with the lag coefficient raised to 0.2.
pub fn reference_changed_params() -> ModelParams {
    ModelParams { phi1: 0.2, ..reference_params() }
}

fn covariates() -> Covariates<'static> {
    Covariates::Simulated { spec: ExoAR1Spec::default(), init: ExoInit::Zero }
}

/// Information estimate from one long simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceInformation {
    /// `(1/n) sum (-H_t(eta_hat))`, used as the Wiener covariance.
    pub sigma: DMatrix<f64>,
    /// `sigma^-1`, used as the rescaling matrix.
    pub a: DMatrix<f64>,
    pub params_hat: ModelParams,
    pub n: usize,
    pub seed: u64,
}

pub fn reference_information(truth: &ModelParams, n: usize, seed: u64) -> Result<ReferenceInformation> {
    let path = simulate_path(truth, covariates(), &SimulationOptions::new(n), &mut RngState::new(seed, u64::MAX))?;
    let opts = FitOptions { initial_params: Some(truth.clone()), ..Default::default() };
    let fit = fit_pmle(&path, truth.xlink, &opts)?;
    let a = spd_inverse(&fit.info_matrix)?;
    Ok(ReferenceInformation { sigma: fit.info_matrix, a, params_hat: fit.params_hat, n, seed })
}

fn fit_replication(truth: &ModelParams, m: usize, seed: u64, rep: usize) -> Result<FitResult> {
    let path = simulate_path(truth, covariates(), &SimulationOptions::new(m), &mut RngState::new(seed, rep as u64))?;
    fit_pmle(&path, truth.xlink, &FitOptions::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub m: usize,
    /// Converged fits used for the summaries.
    pub fits: usize,
    pub failures: usize,
    pub mean: Vec<f64>,
    pub mse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub parameters: Vec<String>,
    pub truth: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    pub rows: Vec<ConsistencyRow>,
}

/// Per-parameter mean and MSE of the estimates over `reps` paths for each size.
pub fn consistency_study(truth: &ModelParams, sizes: &[usize], reps: usize, seed: u64) -> Result<ConsistencyReport> {
    if reps == 0 {
        return Err(Error::invalid("replications must be >= 1"));
    }
    let eta0 = truth.to_vector();
    let d = truth.dim();
    let rows = sizes
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let study_seed = seed.wrapping_add(i as u64);
            let fits: Vec<FitResult> = (0..reps)
                .into_par_iter()
                .map(|r| fit_replication(truth, m, study_seed, r))
                .collect::<Result<Vec<_>>>()?;
            let good: Vec<&FitResult> = fits.iter().filter(|f| f.converged).collect();
            if good.is_empty() {
                return Err(Error::invalid(format!("no fit converged at m = {m}")));
            }
            let n = good.len() as f64;
            let mean = (0..d).map(|j| good.iter().map(|f| f.params_hat.to_vector()[j]).sum::<f64>() / n).collect();
            let mse = (0..d)
                .map(|j| good.iter().map(|f| (f.params_hat.to_vector()[j] - eta0[j]).powi(2)).sum::<f64>() / n)
                .collect();
            Ok(ConsistencyRow { m, fits: good.len(), failures: reps - good.len(), mean, mse })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConsistencyReport {
        parameters: parameter_names(truth.exo_dim()),
        truth: eta0.iter().copied().collect(),
        replications: reps,
        seed,
        rows,
    })
}

/// Q-Q data of standardized estimates over `reps` fits at size `m`.
pub fn normality_study(truth: &ModelParams, m: usize, reps: usize, seed: u64) -> Result<Vec<QqSeries>> {
    let fits: Vec<FitResult> = (0..reps)
        .into_par_iter()
        .map(|r| fit_replication(truth, m, seed, r))
        .collect::<Result<Vec<_>>>()?;
    let good: Vec<FitResult> = fits.into_iter().filter(|f| f.converged).collect();
    qq_export(&good, truth)
}

/// Threshold table from a reference information matrix, with `A = sigma^-1`.
pub fn threshold_study(
    reference: &ReferenceInformation,
    gammas: &[f64],
    alphas: &[f64],
    settings: &CalibrationSettings,
    seed: u64,
) -> Result<ThresholdTable> {
    let source = format!("information at eta_hat from one simulated path, n = {}, seed = {}", reference.n, reference.seed);
    ThresholdTable::calibrate(&reference.sigma, &reference.a, gammas, alphas, settings, seed, source)
}

/// Settings shared by the size and power studies.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorDesign {
    /// Training size.
    pub m: usize,
    pub horizon: f64,
    pub gammas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub rescale: Rescale,
    pub replications: usize,
    pub seed: u64,
}

/// `S' A S` for `k = 1..=N m` on the monitoring part of `path`, after fitting
/// on its first `m` transitions. `None` when the fit does not converge.
fn quadratic_forms(path: &SeriesSample, m: usize, steps: usize, rescale: &Rescale, xlink: XLink) -> Result<Option<Vec<f64>>> {
    let fit = fit_pmle(&path.window(0, m)?, xlink, &FitOptions::default())?;
    if !fit.converged {
        return Ok(None);
    }
    let a = rescale.resolve(&fit)?;
    let mut sum = vec![0.0; fit.dim()];
    let mut out = Vec::with_capacity(steps);
    for k in 1..=steps {
        let (x, x_prev, w) = path.transition(m + k);
        let g = score_contrib(&fit.params_hat, x, x_prev, w)?;
        for (s, gi) in sum.iter_mut().zip(g.iter()) {
            *s += gi;
        }
        out.push(quad_form(&a, &sum));
    }
    Ok(Some(out))
}

/// First `k` with `w(m,k,gamma)^2 q_k >= c`.
fn first_crossing(q: &[f64], m: usize, gamma: f64, c: f64) -> Option<usize> {
    let mf = m as f64;
    q.iter().enumerate().find_map(|(i, &qk)| {
        let k = i + 1;
        let s = k as f64 / mf;
        let w2 = s.powf(-2.0 * gamma) * (s + 1.0).powf(2.0 * gamma - 2.0) / mf;
        (w2 * qk >= c).then_some(k)
    })
}

fn check_design(design: &MonitorDesign, table: &ThresholdTable) -> Result<Vec<Vec<f64>>> {
    if design.replications == 0 {
        return Err(Error::invalid("replications must be >= 1"));
    }
    WeightConfig::new(0.0, design.horizon)?;
    design
        .gammas
        .iter()
        .map(|&g| {
            WeightConfig::new(g, design.horizon)?;
            design.alphas.iter().map(|&a| table.lookup(g, a)).collect()
        })
        .collect()
}

/// Runs the monitor on every replication and returns, per replication,
/// the first crossing for each `(gamma, alpha)` pair (gamma-major), or
/// `None` for replications whose training fit failed.
fn crossings<F>(design: &MonitorDesign, table: &ThresholdTable, xlink: XLink, simulate: F) -> Result<Vec<Option<Vec<Option<usize>>>>>
where
    F: Fn(&mut RngState, usize) -> Result<SeriesSample> + Sync,
{
    let thresholds = check_design(design, table)?;
    let steps = WeightConfig::new(0.0, design.horizon)?.max_steps(design.m);
    (0..design.replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = RngState::new(design.seed, r as u64);
            let path = simulate(&mut rng, design.m + steps)?;
            let Some(q) = quadratic_forms(&path, design.m, steps, &design.rescale, xlink)? else {
                return Ok(None);
            };
            let mut out = Vec::new();
            for (g, &gamma) in design.gammas.iter().enumerate() {
                for &c in &thresholds[g] {
                    out.push(first_crossing(&q, design.m, gamma, c));
                }
            }
            Ok(Some(out))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub gamma: f64,
    pub alpha: f64,
    pub threshold: f64,
    pub rejection_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub m: usize,
    pub horizon: f64,
    pub replications: usize,
    pub failed_fits: usize,
    pub seed: u64,
    pub rows: Vec<SizeRow>,
}

/// Rejection frequency on change-free paths.
pub fn size_study(truth: &ModelParams, design: &MonitorDesign, table: &ThresholdTable) -> Result<SizeReport> {
    let runs = crossings(design, table, truth.xlink, |rng, n| {
        simulate_path(truth, covariates(), &SimulationOptions::new(n), rng)
    })?;
    let ok: Vec<&Vec<Option<usize>>> = runs.iter().flatten().collect();
    if ok.is_empty() {
        return Err(Error::invalid("no training fit converged"));
    }
    let mut rows = Vec::new();
    let mut idx = 0;
    for &gamma in &design.gammas {
        for &alpha in &design.alphas {
            let rejected = ok.iter().filter(|r| r[idx].is_some()).count();
            rows.push(SizeRow {
                gamma,
                alpha,
                threshold: table.lookup(gamma, alpha)?,
                rejection_rate: rejected as f64 / ok.len() as f64,
            });
            idx += 1;
        }
    }
    Ok(SizeReport {
        m: design.m,
        horizon: design.horizon,
        replications: ok.len(),
        failed_fits: runs.len() - ok.len(),
        seed: design.seed,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub gamma: f64,
    pub alpha: f64,
    pub threshold: f64,
    pub summary: DetectionSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub m: usize,
    pub k_star: usize,
    pub horizon: f64,
    pub replications: usize,
    pub failed_fits: usize,
    pub seed: u64,
    pub rows: Vec<PowerRow>,
}

/// Detection metrics when monitoring steps `k <= k_star` follow `before`
/// and later steps follow `after`.
pub fn power_study(
    before: &ModelParams,
    after: &ModelParams,
    k_star: usize,
    design: &MonitorDesign,
    table: &ThresholdTable,
) -> Result<PowerReport> {
    let change_after = design.m + k_star;
    let runs = crossings(design, table, before.xlink, |rng, n| {
        simulate_path_with_change(before, after, change_after, covariates(), &SimulationOptions::new(n), rng)
    })?;
    let ok: Vec<&Vec<Option<usize>>> = runs.iter().flatten().collect();
    if ok.is_empty() {
        return Err(Error::invalid("no training fit converged"));
    }
    let mut rows = Vec::new();
    let mut idx = 0;
    for &gamma in &design.gammas {
        for &alpha in &design.alphas {
            let detections: Vec<Option<usize>> = ok.iter().map(|r| r[idx]).collect();
            rows.push(PowerRow {
                gamma,
                alpha,
                threshold: table.lookup(gamma, alpha)?,
                summary: detection_summary(&detections, k_star)?,
            });
            idx += 1;
        }
    }
    Ok(PowerReport {
        m: design.m,
        k_star,
        horizon: design.horizon,
        replications: ok.len(),
        failed_fits: runs.len() - ok.len(),
        seed: design.seed,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub n_train: usize,
    pub n_forecast: usize,
    pub alpha: f64,
    pub seed: u64,
    pub params_hat: Vec<f64>,
    pub metrics: ForecastMetrics,
}

/// Fits on the first `n_train` transitions of a simulated path and scores
/// one-step forecasts with the fitted model on the next `n_forecast`.
pub fn coverage_study(truth: &ModelParams, n_train: usize, n_forecast: usize, alpha: f64, seed: u64) -> Result<CoverageReport> {
    if n_forecast == 0 {
        return Err(Error::invalid("need at least one forecast"));
    }
    let n = n_train + n_forecast;
    let path = simulate_path(truth, covariates(), &SimulationOptions::new(n), &mut RngState::new(seed, 0))?;
    let fit = fit_pmle(&path.window(0, n_train)?, truth.xlink, &FitOptions::default())?;
    if !fit.converged {
        return Err(Error::invalid("training fit did not converge"));
    }
    let mut actual = Vec::with_capacity(n_forecast);
    let mut forecasts = Vec::with_capacity(n_forecast);
    for t in n_train + 1..=n {
        let (x, x_prev, w) = path.transition(t);
        forecasts.push(one_step_forecast(&fit.params_hat, x_prev, w, alpha)?);
        actual.push(x);
    }
    Ok(CoverageReport {
        n_train,
        n_forecast,
        alpha,
        seed,
        params_hat: fit.params_hat.to_vector().iter().copied().collect(),
        metrics: forecast_metrics(&actual, &forecasts)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{run_monitor, weight};

    #[test]
    fn crossing_scan_matches_monitor() {
        let truth = reference_params();
        let m = 300;
        let steps = 600;
        let path = simulate_path(&truth, covariates(), &SimulationOptions::new(m + steps), &mut RngState::new(4, 0)).unwrap();
        let q = quadratic_forms(&path, m, steps, &Rescale::InverseInformation, truth.xlink).unwrap().unwrap();
        let fit = fit_pmle(&path.window(0, m).unwrap(), truth.xlink, &FitOptions::default()).unwrap();
        let cfg = WeightConfig::new(0.25, 2.0).unwrap();
        let stream = path.window(m, m + steps).unwrap();
        let full = run_monitor(&fit, &stream, cfg, f64::MAX, &Rescale::InverseInformation).unwrap();
        let trace = crate::detector::statistic_trace(&full);
        for (k, stat) in trace {
            let w = weight(m, k, 0.25).unwrap();
            assert!((w * w * q[k - 1] - stat).abs() <= 1e-9 * stat.max(1.0));
        }
        let c = 3.0;
        let expected = run_monitor(&fit, &stream, cfg, c, &Rescale::InverseInformation).unwrap().crossing().map(|x| x.k_detect);
        assert_eq!(first_crossing(&q, m, 0.25, c), expected);
    }

    #[test]
    fn small_studies_run() {
        let truth = reference_params();
        let report = consistency_study(&truth, &[200, 800], 8, 1).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.parameters, vec!["tau", "phi0", "phi1", "phi_exo1"]);

        let reference = reference_information(&truth, 5000, 2).unwrap();
        let settings = CalibrationSettings { reps: 200, m_grid: 100, horizon: 1.0 };
        let table = threshold_study(&reference, &[0.0], &[0.05], &settings, 3).unwrap();
        let design = MonitorDesign {
            m: 200,
            horizon: 1.0,
            gammas: vec![0.0],
            alphas: vec![0.05],
            rescale: Rescale::Matrix(reference.a.clone()),
            replications: 10,
            seed: 5,
        };
        let size = size_study(&truth, &design, &table).unwrap();
        assert_eq!(size.rows.len(), 1);
        let power = power_study(&truth, &reference_changed_params(), 20, &design, &table).unwrap();
        let s = power.rows[0].summary;
        assert!(s.sensitivity <= s.rejection_rate);
        let missing = MonitorDesign { gammas: vec![0.25], ..design };
        assert!(size_study(&truth, &missing, &table).is_err());
    }

    #[test]
    fn studies_do_not_depend_on_thread_count() {
        let truth = reference_params();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| consistency_study(&truth, &[300], 6, 9).unwrap())
        };
        assert_eq!(run(1), run(4));
    }
}
