//! One-step forecasts, prediction intervals and evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::detector::MonitorState;
use crate::error::{Error, Result};
use crate::model::{conditional_mean, ModelParams};
use crate::specfun::log_beta_pos;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    /// Conditional mean of the next observation.
    pub mu_hat: f64,
    /// Lower `alpha/2` quantile.
    pub lower: f64,
    /// Upper `1 - alpha/2` quantile.
    pub upper: f64,
}

impl ForecastPoint {
    pub fn covers(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

fn check_shape(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::domain(format!("beta shapes must be positive and finite, got ({a}, {b})")));
    }
    Ok(())
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`, the Beta(a, b) CDF.
pub fn beta_cdf(x: f64, a: f64, b: f64) -> Result<f64> {
    check_shape(a, b)?;
    if x.is_nan() {
        return Err(Error::domain("beta_cdf at NaN"));
    }
    Ok(beta_cdf_unchecked(x, a, b))
}

fn beta_cdf_unchecked(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (-x).ln_1p() - log_beta_pos(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        (ln_front.exp() * beta_cf(x, a, b) / a).clamp(0.0, 1.0)
    } else {
        (1.0 - ln_front.exp() * beta_cf(1.0 - x, b, a) / b).clamp(0.0, 1.0)
    }
}

/// Beta(a, b) quantile by bisection on [`beta_cdf`] to absolute tolerance 1e-10.
pub fn beta_quantile(p: f64, a: f64, b: f64) -> Result<f64> {
    check_shape(a, b)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("probability must lie in [0, 1], got {p}")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if beta_cdf_unchecked(mid, a, b) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Mean and equal-tailed `1 - alpha` interval of `X_{t+1}` given `X_t` and `W_{t+1}`.
pub fn one_step_forecast(params: &ModelParams, x_prev: f64, w_next: &[f64], alpha: f64) -> Result<ForecastPoint> {
    check_alpha(alpha)?;
    let mu = conditional_mean(params, x_prev, w_next)?;
    let (a, b) = (params.tau * mu, params.tau * (1.0 - mu));
    Ok(ForecastPoint {
        mu_hat: mu,
        lower: beta_quantile(alpha / 2.0, a, b)?,
        upper: beta_quantile(1.0 - alpha / 2.0, a, b)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastMetrics {
    pub mae: f64,
    /// Mean absolute percentage error, in percent.
    pub mape: f64,
    pub rmse: f64,
    /// Coverage percentage of the intervals, in percent.
    pub cp: f64,
}

/// MAE, MAPE, RMSE and interval coverage of paired actuals and forecasts.
pub fn forecast_metrics(actual: &[f64], forecast: &[ForecastPoint]) -> Result<ForecastMetrics> {
    if actual.len() != forecast.len() {
        return Err(Error::Dimension { expected: actual.len(), got: forecast.len() });
    }
    if actual.is_empty() {
        return Err(Error::invalid("forecast metrics need at least one pair"));
    }
    if let Some(i) = actual.iter().position(|&a| a == 0.0) {
        return Err(Error::domain(format!("MAPE undefined: actual value at index {i} is zero")));
    }
    let n = actual.len() as f64;
    let (mut abs, mut pct, mut sq, mut covered) = (0.0, 0.0, 0.0, 0usize);
    for (&y, f) in actual.iter().zip(forecast) {
        let e = y - f.mu_hat;
        abs += e.abs();
        pct += (e / y).abs();
        sq += e * e;
        covered += f.covers(y) as usize;
    }
    Ok(ForecastMetrics { mae: abs / n, mape: 100.0 * pct / n, rmse: (sq / n).sqrt(), cp: 100.0 * covered as f64 / n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    /// M1: mean detected `k` minus `k*`, over detecting runs; `None` if none detected.
    pub mean_delay: Option<f64>,
    /// M2: fraction of runs that rejected.
    pub rejection_rate: f64,
    /// M3: fraction of runs with detected `k > k*`.
    pub sensitivity: f64,
    pub replications: usize,
}

/// Detection metrics from first-crossing indices (`None` for no detection).
pub fn detection_summary(detections: &[Option<usize>], k_star: usize) -> Result<DetectionSummary> {
    if detections.is_empty() {
        return Err(Error::invalid("detection metrics need at least one run"));
    }
    let k = detections.len() as f64;
    let hits: Vec<usize> = detections.iter().flatten().copied().collect();
    let mean_delay =
        (!hits.is_empty()).then(|| hits.iter().map(|&h| h as f64).sum::<f64>() / hits.len() as f64 - k_star as f64);
    Ok(DetectionSummary {
        mean_delay,
        rejection_rate: hits.len() as f64 / k,
        sensitivity: hits.iter().filter(|&&h| h > k_star).count() as f64 / k,
        replications: detections.len(),
    })
}

/// Detection metrics over finished monitoring sessions.
pub fn detection_metrics(results: &[MonitorState], k_star: usize) -> Result<DetectionSummary> {
    let detections: Vec<Option<usize>> = results.iter().map(|s| s.crossing().map(|c| c.k_detect)).collect();
    detection_summary(&detections, k_star)
}

/// `2 d - 2 loglik`.
pub fn aic(loglik: f64, n_params: usize) -> f64 {
    2.0 * n_params as f64 - 2.0 * loglik
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::XLink;
    use approx::assert_relative_eq;

    #[test]
    fn incomplete_beta_closed_forms() {
        assert_relative_eq!(beta_cdf(0.3, 1.0, 1.0).unwrap(), 0.3, epsilon = 1e-14);
        assert_relative_eq!(beta_cdf(0.3, 2.0, 1.0).unwrap(), 0.09, epsilon = 1e-14);
        assert_relative_eq!(beta_cdf(0.4, 1.0, 3.0).unwrap(), 1.0 - 0.6f64.powi(3), epsilon = 1e-14);
        // Arcsine law: I_x(1/2, 1/2) = (2/pi) asin(sqrt x).
        let x = 0.2f64;
        assert_relative_eq!(beta_cdf(x, 0.5, 0.5).unwrap(), 2.0 / std::f64::consts::PI * x.sqrt().asin(), epsilon = 1e-13);
        assert_relative_eq!(beta_cdf(0.5, 50.0, 50.0).unwrap(), 0.5, epsilon = 1e-13);
        assert_eq!(beta_cdf(-1.0, 2.0, 2.0).unwrap(), 0.0);
        assert_eq!(beta_cdf(2.0, 2.0, 2.0).unwrap(), 1.0);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for (a, b) in [(35.4, 64.6), (0.4, 2.0), (3.0, 0.7), (1.0, 1.0)] {
            for p in [0.01, 0.05, 0.5, 0.95, 0.999] {
                let q = beta_quantile(p, a, b).unwrap();
                assert!((beta_cdf(q, a, b).unwrap() - p).abs() < 1e-7, "({a},{b}) p={p}");
            }
        }
        assert!(beta_quantile(1.5, 2.0, 2.0).is_err());
        assert!(beta_quantile(0.5, 0.0, 2.0).is_err());
    }

    #[test]
    fn uniform_forecast_interval() {
        let p = ModelParams::new(2.0, 0.0, 0.0, vec![], XLink::default()).unwrap();
        let f = one_step_forecast(&p, 0.3, &[], 0.1).unwrap();
        assert_relative_eq!(f.mu_hat, 0.5);
        assert!((f.lower - 0.05).abs() < 1e-9 && (f.upper - 0.95).abs() < 1e-9);
        assert!(one_step_forecast(&p, 0.3, &[], 0.0).is_err());
    }

    #[test]
    fn concentrated_forecast_interval() {
        let p = ModelParams::new(100.0, -0.6, 0.1, vec![0.1], XLink::default()).unwrap();
        let f = one_step_forecast(&p, 0.5, &[0.0], 0.1).unwrap();
        assert!(f.upper - f.lower < 0.2);
        assert!(f.covers(f.mu_hat));
    }

    #[test]
    fn intervals_nest_as_alpha_shrinks() {
        let p = ModelParams::new(40.0, 0.2, 0.5, vec![], XLink::default()).unwrap();
        let mut prev = one_step_forecast(&p, 0.4, &[], 0.5).unwrap();
        for alpha in [0.2, 0.1, 0.05, 0.01] {
            let f = one_step_forecast(&p, 0.4, &[], alpha).unwrap();
            assert!(f.lower < prev.lower && f.upper > prev.upper);
            prev = f;
        }
    }

    #[test]
    fn metric_examples() {
        let wide = |mu| ForecastPoint { mu_hat: mu, lower: 0.0, upper: 1.0 };
        let perfect = forecast_metrics(&[0.2, 0.4], &[wide(0.2), wide(0.4)]).unwrap();
        assert_eq!(perfect, ForecastMetrics { mae: 0.0, mape: 0.0, rmse: 0.0, cp: 100.0 });
        let m = forecast_metrics(&[0.2, 0.4], &[wide(0.3), wide(0.2)]).unwrap();
        assert_relative_eq!(m.mae, 0.15, epsilon = 1e-15);
        assert_relative_eq!(m.rmse, 0.025f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(m.mape, 50.0, epsilon = 1e-12);
        assert!(m.rmse >= m.mae);
        assert!(forecast_metrics(&[0.0, 0.4], &[wide(0.3), wide(0.2)]).is_err());
        assert!(forecast_metrics(&[0.1], &[]).is_err());
    }

    #[test]
    fn coverage_ignores_order() {
        let pts: Vec<ForecastPoint> =
            (0..10).map(|i| ForecastPoint { mu_hat: 0.5, lower: 0.4, upper: 0.4 + 0.02 * i as f64 }).collect();
        let actual: Vec<f64> = (0..10).map(|i| 0.41 + 0.01 * i as f64).collect();
        let a = forecast_metrics(&actual, &pts).unwrap().cp;
        let (ra, rp): (Vec<f64>, Vec<ForecastPoint>) = actual.iter().copied().zip(pts.iter().copied()).rev().unzip();
        assert_eq!(a, forecast_metrics(&ra, &rp).unwrap().cp);
    }

    #[test]
    fn detection_examples() {
        let all = detection_summary(&[Some(51), Some(51), Some(51)], 50).unwrap();
        assert_eq!(all.mean_delay, Some(1.0));
        assert_eq!(all.rejection_rate, 1.0);
        assert_eq!(all.sensitivity, 1.0);
        let none = detection_summary(&[None, None], 50).unwrap();
        assert_eq!(none.mean_delay, None);
        assert_eq!(none.rejection_rate, 0.0);
        let mixed = detection_summary(&[Some(20), Some(80), None, Some(150)], 50).unwrap();
        assert_relative_eq!(mixed.mean_delay.unwrap(), 250.0 / 3.0 - 50.0, epsilon = 1e-12);
        assert_eq!(mixed.rejection_rate, 0.75);
        assert_eq!(mixed.sensitivity, 0.5);
        assert!(mixed.sensitivity <= mixed.rejection_rate);
        assert!(detection_summary(&[], 50).is_err());
    }

    #[test]
    fn aic_counts_parameters() {
        assert_eq!(aic(-10.0, 4), 28.0);
    }
}
