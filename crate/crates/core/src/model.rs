//! The generalized Beta AR(1) process.
//!
//! Conditional on the previous observation and the current covariates,
//! `X_t ~ Beta(tau mu_t, tau (1 - mu_t))` with
//! `logit(mu_t) = phi0 + phi1 A(X_{t-1}) + phi' W_t`, where `A` is a bounded
//! x-link transform.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastic::{beta_unchecked, ExoAR1Spec, ExoInit, RngState, BOUNDARY_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XLinkKind {
    Identity,
    TruncatedLogit,
    TruncatedCloglog,
}

impl std::str::FromStr for XLinkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "logit" | "truncated_logit" => Ok(Self::TruncatedLogit),
            "cloglog" | "truncated_cloglog" => Ok(Self::TruncatedCloglog),
            other => Err(Error::invalid(format!("unknown x-link '{other}'"))),
        }
    }
}

impl std::fmt::Display for XLinkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Identity => "identity",
            Self::TruncatedLogit => "truncated_logit",
            Self::TruncatedCloglog => "truncated_cloglog",
        })
    }
}

/// Bounded transform of the lagged observation.
///
/// Truncated kinds clamp `x` to `[c, 1 - c]` first. With `c = 0` the clamp
/// still keeps `2^-53` away from the boundary so the output stays finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XLink {
    pub kind: XLinkKind,
    pub trunc_c: f64,
}

impl Default for XLink {
    fn default() -> Self {
        Self { kind: XLinkKind::TruncatedLogit, trunc_c: 0.01 }
    }
}

impl XLink {
    pub fn new(kind: XLinkKind, trunc_c: f64) -> Result<Self> {
        let link = Self { kind, trunc_c };
        link.validate()?;
        Ok(link)
    }

    pub fn identity() -> Self {
        Self { kind: XLinkKind::Identity, trunc_c: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.trunc_c) {
            return Err(Error::domain(format!("truncation constant must lie in [0, 0.5), got {}", self.trunc_c)));
        }
        Ok(())
    }

    fn clamp(&self, x: f64) -> f64 {
        let c = self.trunc_c.max(BOUNDARY_EPS);
        x.clamp(c, 1.0 - c)
    }

    /// `A(x)` for `x` in `[0, 1]`.
    pub fn apply(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::domain(format!("x-link argument must lie in [0, 1], got {x}")));
        }
        Ok(self.apply_unchecked(x))
    }

    #[inline]
    pub(crate) fn apply_unchecked(&self, x: f64) -> f64 {
        match self.kind {
            XLinkKind::Identity => x,
            XLinkKind::TruncatedLogit => {
                let s = self.clamp(x);
                (s / (1.0 - s)).ln()
            }
            XLinkKind::TruncatedCloglog => {
                let s = self.clamp(x);
                (-(-s).ln_1p()).ln()
            }
        }
    }

    /// Image of `[0, 1]` under the transform.
    pub fn range(&self) -> (f64, f64) {
        (self.apply_unchecked(0.0), self.apply_unchecked(1.0))
    }
}

/// `eta = (tau, phi0, phi1, phi_1..phi_l)` together with the x-link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub tau: f64,
    pub phi0: f64,
    pub phi1: f64,
    pub exo_coefs: Vec<f64>,
    pub xlink: XLink,
}

impl ModelParams {
    pub fn new(tau: f64, phi0: f64, phi1: f64, exo_coefs: Vec<f64>, xlink: XLink) -> Result<Self> {
        let params = Self { tau, phi0, phi1, exo_coefs, xlink };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::domain(format!("tau must be finite and > 0, got {}", self.tau)));
        }
        if ![self.phi0, self.phi1].iter().chain(&self.exo_coefs).all(|v| v.is_finite()) {
            return Err(Error::domain("regression coefficients must be finite"));
        }
        self.xlink.validate()
    }

    /// Number of exogenous covariates `l`.
    pub fn exo_dim(&self) -> usize {
        self.exo_coefs.len()
    }

    /// Length of the parameter vector, `l + 3`.
    pub fn dim(&self) -> usize {
        self.exo_coefs.len() + 3
    }

    /// `(tau, phi0, phi1, phi...)` as a vector.
    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        v[0] = self.tau;
        v[1] = self.phi0;
        v[2] = self.phi1;
        for (i, c) in self.exo_coefs.iter().enumerate() {
            v[3 + i] = *c;
        }
        v
    }

    pub fn from_slice(values: &[f64], xlink: XLink) -> Result<Self> {
        if values.len() < 3 {
            return Err(Error::Dimension { expected: 3, got: values.len() });
        }
        Self::new(values[0], values[1], values[2], values[3..].to_vec(), xlink)
    }

    #[inline]
    pub(crate) fn linear_predictor(&self, x_prev: f64, w: &[f64]) -> f64 {
        let mut eta = self.phi0 + self.phi1 * self.xlink.apply_unchecked(x_prev);
        for (c, wi) in self.exo_coefs.iter().zip(w) {
            eta += c * wi;
        }
        eta
    }

    fn check_covariates(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.exo_dim() {
            return Err(Error::Dimension { expected: self.exo_dim(), got: w.len() });
        }
        Ok(())
    }
}

/// `(mu, 1 - mu)` from the linear predictor, each evaluated without
/// cancellation and kept strictly positive.
#[inline]
pub(crate) fn expit_pair(eta: f64) -> (f64, f64) {
    let (mu, om) = if eta >= 0.0 {
        let e = (-eta).exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    } else {
        let e = eta.exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    };
    (mu.max(f64::MIN_POSITIVE), om.max(f64::MIN_POSITIVE))
}

/// Conditional mean `mu_t` given `X_{t-1}` and `W_t`.
pub fn conditional_mean(params: &ModelParams, x_prev: f64, w: &[f64]) -> Result<f64> {
    params.validate()?;
    params.check_covariates(w)?;
    if !(0.0..=1.0).contains(&x_prev) {
        return Err(Error::domain(format!("previous observation must lie in [0, 1], got {x_prev}")));
    }
    let (mu, _) = expit_pair(params.linear_predictor(x_prev, w));
    Ok(mu.min(1.0 - BOUNDARY_EPS))
}

/// Regressor `Z_{t-1} = (1, A(X_{t-1}), W_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor(Vec<f64>);

impl Regressor {
    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn build_regressor(link: &XLink, x_prev: f64, w: &[f64]) -> Result<Regressor> {
    let a = link.apply(x_prev)?;
    let mut z = Vec::with_capacity(2 + w.len());
    z.push(1.0);
    z.push(a);
    z.extend_from_slice(w);
    Ok(Regressor(z))
}

/// Observations `X_0, ..., X_n` with covariates `W_1, ..., W_n`.
///
/// Covariates are stored row-major: `covariate(t)` is the vector observed
/// together with `X_t`, for `t = 1..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSample {
    x: Vec<f64>,
    w: Vec<f64>,
    exo_dim: usize,
}

impl SeriesSample {
    /// `w.len()` must equal `x.len() - 1` and every row must have the same length.
    pub fn new(x: Vec<f64>, w: Vec<Vec<f64>>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::invalid("a series needs at least one observation"));
        }
        if w.len() + 1 != x.len() {
            return Err(Error::invalid(format!(
                "expected {} covariate rows for {} observations, got {}",
                x.len() - 1,
                x.len(),
                w.len()
            )));
        }
        let exo_dim = w.first().map_or(0, Vec::len);
        if let Some((i, row)) = w.iter().enumerate().find(|(_, r)| r.len() != exo_dim) {
            return Err(Error::invalid(format!("covariate row {} has {} entries, expected {exo_dim}", i + 1, row.len())));
        }
        Self::from_flat(x, w.concat(), exo_dim)
    }

    /// Covariates given as a flat row-major buffer of `n * exo_dim` values.
    pub fn from_flat(x: Vec<f64>, w: Vec<f64>, exo_dim: usize) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::invalid("a series needs at least one observation"));
        }
        if w.len() != (x.len() - 1) * exo_dim {
            return Err(Error::invalid(format!(
                "covariate buffer has {} values, expected {}",
                w.len(),
                (x.len() - 1) * exo_dim
            )));
        }
        for (i, v) in x.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
            if !(0.0..=1.0).contains(v) {
                return Err(Error::domain(format!("observation {i} = {v} lies outside [0, 1]")));
            }
        }
        if let Some(i) = w.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: 1 + i / exo_dim.max(1) });
        }
        Ok(Self { x, w, exo_dim })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn exo_dim(&self) -> usize {
        self.exo_dim
    }

    /// Number of transitions `n = len(x) - 1`.
    pub fn n_transitions(&self) -> usize {
        self.x.len() - 1
    }

    /// Covariates observed with `X_t`, `1 <= t <= n`.
    pub fn covariate(&self, t: usize) -> &[f64] {
        let l = self.exo_dim;
        &self.w[(t - 1) * l..t * l]
    }

    pub fn covariate_rows(&self) -> impl Iterator<Item = &[f64]> {
        (1..=self.n_transitions()).map(move |t| self.covariate(t))
    }

    /// `(X_t, X_{t-1}, W_t)` for `1 <= t <= n`.
    #[inline]
    pub fn transition(&self, t: usize) -> (f64, f64, &[f64]) {
        (self.x[t], self.x[t - 1], self.covariate(t))
    }

    /// Observations `X_from..=X_to` with their covariates; `X_from` becomes
    /// the new `X_0`.
    pub fn window(&self, from: usize, to: usize) -> Result<Self> {
        if from > to || to >= self.x.len() {
            return Err(Error::invalid(format!("window {from}..={to} outside 0..={}", self.x.len() - 1)));
        }
        let l = self.exo_dim;
        Ok(Self { x: self.x[from..=to].to_vec(), w: self.w[from * l..to * l].to_vec(), exo_dim: l })
    }

    pub(crate) fn check_dim(&self, params: &ModelParams) -> Result<()> {
        if self.exo_dim != params.exo_dim() {
            return Err(Error::Dimension { expected: params.exo_dim(), got: self.exo_dim });
        }
        Ok(())
    }
}

/// Where the covariates of a simulated path come from.
#[derive(Debug, Clone, Copy)]
pub enum Covariates<'a> {
    /// Each of the `l` components follows an independent copy of the AR(1) spec.
    Simulated { spec: ExoAR1Spec, init: ExoInit },
    /// Row-major `n * l` values, one row per transition.
    Provided(&'a [f64]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    pub n: usize,
    pub x0: f64,
    /// Transitions simulated and discarded before `X_0` (simulated covariates only).
    pub burn_in: usize,
}

impl SimulationOptions {
    pub fn new(n: usize) -> Self {
        Self { n, ..Default::default() }
    }
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self { n: 1000, x0: 0.5, burn_in: 500 }
    }
}

/// Draw a path of `n` transitions.
pub fn simulate_path(
    params: &ModelParams,
    covariates: Covariates<'_>,
    options: &SimulationOptions,
    rng: &mut RngState,
) -> Result<SeriesSample> {
    simulate_regimes(&[(0, params)], covariates, options, rng)
}

/// Draw a path whose transitions `t <= change_after` use `before` and the
/// remaining ones use `after`.
pub fn simulate_path_with_change(
    before: &ModelParams,
    after: &ModelParams,
    change_after: usize,
    covariates: Covariates<'_>,
    options: &SimulationOptions,
    rng: &mut RngState,
) -> Result<SeriesSample> {
    simulate_regimes(&[(0, before), (change_after, after)], covariates, options, rng)
}

/// `regimes[i] = (start, params)`: params apply to transitions `t > start`
/// until the next regime starts. Starts must be increasing and begin at 0.
fn simulate_regimes(
    regimes: &[(usize, &ModelParams)],
    covariates: Covariates<'_>,
    options: &SimulationOptions,
    rng: &mut RngState,
) -> Result<SeriesSample> {
    let first = regimes[0].1;
    for (_, p) in regimes {
        p.validate()?;
        if p.exo_dim() != first.exo_dim() {
            return Err(Error::Dimension { expected: first.exo_dim(), got: p.exo_dim() });
        }
    }
    if options.n == 0 {
        return Err(Error::domain("path length must be >= 1"));
    }
    if !(0.0..=1.0).contains(&options.x0) {
        return Err(Error::domain(format!("x0 must lie in [0, 1], got {}", options.x0)));
    }
    let l = first.exo_dim();
    let n = options.n;

    let mut exo = match covariates {
        Covariates::Simulated { spec, init } => {
            let processes = (0..l).map(|_| spec.process(init, rng)).collect::<Result<Vec<_>>>()?;
            Some(processes)
        }
        Covariates::Provided(values) => {
            if values.len() != n * l {
                return Err(Error::invalid(format!("expected {} covariate values, got {}", n * l, values.len())));
            }
            if options.burn_in > 0 {
                return Err(Error::invalid("burn-in requires simulated covariates"));
            }
            None
        }
    };

    let mut row = vec![0.0; l];
    let step = |params: &ModelParams, x_prev: f64, row: &[f64], rng: &mut RngState| {
        let (mu, om) = expit_pair(params.linear_predictor(x_prev, row));
        beta_unchecked(rng, params.tau * mu, params.tau * om)
    };

    let mut x_prev = options.x0;
    if let Some(processes) = exo.as_mut() {
        for _ in 0..options.burn_in {
            for (r, p) in row.iter_mut().zip(processes.iter_mut()) {
                *r = p.step(rng);
            }
            x_prev = step(first, x_prev, &row, rng);
        }
    }

    let mut x = Vec::with_capacity(n + 1);
    let mut w = Vec::with_capacity(n * l);
    x.push(x_prev);
    let mut regime = 0;
    for t in 1..=n {
        while regime + 1 < regimes.len() && t > regimes[regime + 1].0 {
            regime += 1;
        }
        match (&mut exo, covariates) {
            (Some(processes), _) => {
                for (r, p) in row.iter_mut().zip(processes.iter_mut()) {
                    *r = p.step(rng);
                }
            }
            (None, Covariates::Provided(values)) => row.copy_from_slice(&values[(t - 1) * l..t * l]),
            (None, Covariates::Simulated { .. }) => unreachable!(),
        }
        x_prev = step(regimes[regime].1, x_prev, &row, rng);
        x.push(x_prev);
        w.extend_from_slice(&row);
    }
    SeriesSample::from_flat(x, w, l)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_params() -> ModelParams {
        ModelParams::new(100.0, -0.6, 0.1, vec![0.1], XLink::default()).unwrap()
    }

    fn lag1_autocorr(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
        let cov: f64 = xs.windows(2).map(|p| (p[0] - mean) * (p[1] - mean)).sum();
        cov / var
    }

    #[test]
    fn xlink_examples() {
        assert_eq!(XLink::identity().apply(0.3).unwrap(), 0.3);
        let logit = XLink::new(XLinkKind::TruncatedLogit, 0.01).unwrap();
        assert!((logit.apply(0.005).unwrap() - -4.595_119_850_134_59).abs() < 1e-12);
        let cloglog = XLink::new(XLinkKind::TruncatedCloglog, 0.0).unwrap();
        assert!((cloglog.apply(0.5).unwrap() - -0.366_512_920_581_664_3).abs() < 1e-12);
    }

    #[test]
    fn xlink_rejects_out_of_range() {
        assert!(XLink::default().apply(-0.1).is_err());
        assert!(XLink::default().apply(1.5).is_err());
        assert!(XLink::default().apply(f64::NAN).is_err());
        assert!(XLink::new(XLinkKind::TruncatedLogit, 0.5).is_err());
        assert!(XLink::new(XLinkKind::TruncatedLogit, -0.1).is_err());
    }

    #[test]
    fn xlink_with_zero_truncation_stays_finite() {
        for kind in [XLinkKind::TruncatedLogit, XLinkKind::TruncatedCloglog] {
            let link = XLink::new(kind, 0.0).unwrap();
            for x in [0.0, 1.0] {
                assert!(link.apply(x).unwrap().is_finite(), "{kind} at {x}");
            }
        }
    }

    #[test]
    fn xlink_parses_names() {
        assert_eq!("logit".parse::<XLinkKind>().unwrap(), XLinkKind::TruncatedLogit);
        assert_eq!("truncated_cloglog".parse::<XLinkKind>().unwrap(), XLinkKind::TruncatedCloglog);
        assert!("probit".parse::<XLinkKind>().is_err());
    }

    #[test]
    fn conditional_mean_examples() {
        let zero = ModelParams::new(5.0, 0.0, 0.0, vec![0.0, 0.0], XLink::default()).unwrap();
        assert_eq!(conditional_mean(&zero, 0.9, &[3.0, -2.0]).unwrap(), 0.5);

        let p = paper_params();
        let mu = conditional_mean(&p, 0.5, &[0.0]).unwrap();
        assert!((mu - 0.354_343_693_774_204_55).abs() < 1e-12);
        let mu = conditional_mean(&p, 1e-9, &[0.0]).unwrap();
        assert!((mu - 0.257_402_726_040_173_17).abs() < 1e-12);
    }

    #[test]
    fn conditional_mean_errors() {
        let p = paper_params();
        assert!(matches!(conditional_mean(&p, 0.5, &[]), Err(Error::Dimension { expected: 1, got: 0 })));
        assert!(conditional_mean(&p, 1.2, &[0.0]).is_err());
    }

    #[test]
    fn extreme_predictors_stay_inside_unit_interval() {
        for eta in [-1000.0, -40.0, 40.0, 1000.0] {
            let (mu, om) = expit_pair(eta);
            assert!(mu > 0.0 && om > 0.0 && mu <= 1.0 && om <= 1.0);
        }
        let p = ModelParams::new(10.0, 800.0, 0.0, vec![], XLink::default()).unwrap();
        let mu = conditional_mean(&p, 0.5, &[]).unwrap();
        assert!(mu < 1.0);
    }

    #[test]
    fn regressor_examples() {
        let z = build_regressor(&XLink::identity(), 0.3, &[0.7]).unwrap();
        assert_eq!(z.entries(), &[1.0, 0.3, 0.7]);
        let z = build_regressor(&XLink::default(), 0.5, &[]).unwrap();
        assert_eq!(z.len(), 2);
        assert_eq!(z.entries()[0], 1.0);
        assert!(z.entries()[1].abs() < 1e-15);
        let cl = XLink::new(XLinkKind::TruncatedCloglog, 0.0).unwrap();
        let z = build_regressor(&cl, 0.5, &[1.0, 2.0]).unwrap();
        assert!((z.entries()[1] + 0.366_512_92).abs() < 1e-8);
        assert_eq!(&z.entries()[2..], &[1.0, 2.0]);
    }

    #[test]
    fn params_validation_and_vector_round_trip() {
        assert!(ModelParams::new(0.0, 0.0, 0.0, vec![], XLink::default()).is_err());
        assert!(ModelParams::new(1.0, f64::NAN, 0.0, vec![], XLink::default()).is_err());
        let p = paper_params();
        let v = p.to_vector();
        assert_eq!(v.as_slice(), &[100.0, -0.6, 0.1, 0.1]);
        assert_eq!(ModelParams::from_slice(v.as_slice(), p.xlink).unwrap(), p);
    }

    #[test]
    fn sample_shape_checks() {
        assert!(SeriesSample::new(vec![0.1, 0.2], vec![vec![1.0]]).is_ok());
        assert!(SeriesSample::new(vec![0.1, 0.2], vec![]).is_err());
        assert!(SeriesSample::new(vec![0.1, 1.2], vec![vec![]]).is_err());
        assert!(matches!(
            SeriesSample::new(vec![0.1, f64::NAN], vec![vec![]]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(SeriesSample::new(vec![0.1, 0.2, 0.3], vec![vec![1.0], vec![]]).is_err());
        let s = SeriesSample::new(vec![0.1, 0.2, 0.3], vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(s.transition(2), (0.3, 0.2, &[3.0, 4.0][..]));
        let tail = s.window(1, 2).unwrap();
        assert_eq!(tail.x(), &[0.2, 0.3]);
        assert_eq!(tail.covariate(1), &[3.0, 4.0]);
    }

    #[test]
    fn huge_tau_concentrates_at_the_mean() {
        let p = ModelParams::new(1e6, 0.0, 0.0, vec![], XLink::default()).unwrap();
        let mut rng = RngState::new(1, 0);
        let cov = Covariates::Simulated { spec: ExoAR1Spec::default(), init: ExoInit::Zero };
        let s = simulate_path(&p, cov, &SimulationOptions::new(1000), &mut rng).unwrap();
        let xs = &s.x()[1..];
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        assert!((mean - 0.5).abs() < 1e-3);
        assert!(sd < 0.002);
    }

    #[test]
    fn simulation_is_reproducible_and_bounded() {
        let p = paper_params();
        let cov = Covariates::Simulated { spec: ExoAR1Spec::default(), init: ExoInit::Zero };
        let a = simulate_path(&p, cov, &SimulationOptions::new(500), &mut RngState::new(3, 1)).unwrap();
        let b = simulate_path(&p, cov, &SimulationOptions::new(500), &mut RngState::new(3, 1)).unwrap();
        assert_eq!(a, b);
        assert!(a.x().iter().all(|x| (0.0..=1.0).contains(x)));
        assert_eq!(a.n_transitions(), 500);
        assert_eq!(a.covariate_rows().count(), 500);
    }

    #[test]
    fn provided_covariates_are_used_verbatim() {
        let p = paper_params();
        let w: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let opts = SimulationOptions { n: 20, x0: 0.3, burn_in: 0 };
        let s = simulate_path(&p, Covariates::Provided(&w), &opts, &mut RngState::new(1, 1)).unwrap();
        assert_eq!(s.x()[0], 0.3);
        for t in 1..=20 {
            assert_eq!(s.covariate(t), &[w[t - 1]]);
        }
        let bad = SimulationOptions { burn_in: 10, ..opts };
        assert!(simulate_path(&p, Covariates::Provided(&w), &bad, &mut RngState::new(1, 1)).is_err());
        assert!(simulate_path(&p, Covariates::Provided(&w[..5]), &opts, &mut RngState::new(1, 1)).is_err());
    }

    #[test]
    fn change_switches_the_autoregression() {
        // phi1 = 0 before, strong positive dependence after.
        let before = ModelParams::new(50.0, 0.0, 0.0, vec![], XLink::default()).unwrap();
        let after = ModelParams::new(50.0, 0.0, 0.9, vec![], XLink::default()).unwrap();
        let cov = Covariates::Simulated { spec: ExoAR1Spec::default(), init: ExoInit::Zero };
        let opts = SimulationOptions { n: 40_000, x0: 0.5, burn_in: 0 };
        let s = simulate_path_with_change(&before, &after, 20_000, cov, &opts, &mut RngState::new(4, 0)).unwrap();
        let first = lag1_autocorr(&s.x()[1..=20_000]);
        let second = lag1_autocorr(&s.x()[20_001..]);
        assert!(first.abs() < 0.03, "{first}");
        assert!(second > 0.3, "{second}");
    }

    #[test]
    fn long_run_mean_is_stable() {
        let p = paper_params();
        let cov = Covariates::Simulated { spec: ExoAR1Spec::default(), init: ExoInit::Zero };
        let s = simulate_path(&p, cov, &SimulationOptions::new(100_000), &mut RngState::new(10, 0)).unwrap();
        let xs = &s.x()[1..];
        let half = xs.len() / 2;
        let m1 = xs[..half].iter().sum::<f64>() / half as f64;
        let m2 = xs[half..].iter().sum::<f64>() / half as f64;
        assert!((m1 - m2).abs() < 0.01);

        let other = simulate_path(&p, cov, &SimulationOptions::new(100_000), &mut RngState::new(11, 0)).unwrap();
        let ys = &other.x()[1..];
        let m3 = ys.iter().sum::<f64>() / ys.len() as f64;
        assert!(((m1 + m2) / 2.0 - m3).abs() < 0.01);
        assert!((lag1_autocorr(xs) - lag1_autocorr(ys)).abs() < 0.01);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn logit_link_idempotent_under_clamp(x in 0.0f64..=1.0, c in 0.0f64..0.49) {
                let link = XLink::new(XLinkKind::TruncatedLogit, c).unwrap();
                let clamped = x.clamp(c, 1.0 - c);
                prop_assert_eq!(link.apply(x).unwrap(), link.apply(clamped).unwrap());
            }

            #[test]
            fn xlink_bounded(x in 0.0f64..=1.0, c in 0.001f64..0.49, kind in 0usize..3) {
                let kind = [XLinkKind::Identity, XLinkKind::TruncatedLogit, XLinkKind::TruncatedCloglog][kind];
                let link = XLink::new(kind, c).unwrap();
                let (lo, hi) = link.range();
                let v = link.apply(x).unwrap();
                prop_assert!(v.abs() <= lo.abs().max(hi.abs()) + 1e-12);
            }

            #[test]
            fn mean_increasing_in_predictor(a in -30.0f64..30.0, delta in 1e-3f64..5.0) {
                let lo = ModelParams::new(1.0, a, 0.0, vec![], XLink::default()).unwrap();
                let hi = ModelParams::new(1.0, a + delta, 0.0, vec![], XLink::default()).unwrap();
                prop_assert!(conditional_mean(&hi, 0.5, &[]).unwrap() > conditional_mean(&lo, 0.5, &[]).unwrap());
            }
        }
    }
}
