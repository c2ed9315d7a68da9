//! Seedable random streams and the draws needed by the simulators.
//!
//! Every [`RngState`] is a ChaCha8 stream selected by `(seed, stream_id)`.
//! Replication studies give each replication its own stream id, so results
//! do not depend on how work is scheduled across threads.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest distance from the unit-interval boundary kept by Beta draws and
/// by the likelihood before taking logarithms (2^-53).
pub const BOUNDARY_EPS: f64 = f64::EPSILON / 2.0;

/// Clamp into `[BOUNDARY_EPS, 1 - BOUNDARY_EPS]`.
#[inline]
pub fn clamp_unit(x: f64) -> f64 {
    x.clamp(BOUNDARY_EPS, 1.0 - BOUNDARY_EPS)
}

#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A fresh stream sharing this seed.
    pub fn split(&self, stream_id: u64) -> Self {
        Self::new(self.seed, stream_id)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        // 52 random mantissa bits, offset by half a step.
        ((self.rng.next_u64() >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

/// One draw from `N(mean, sd^2)`.
pub fn sample_normal(rng: &mut RngState, mean: f64, sd: f64) -> Result<f64> {
    if !(sd.is_finite() && sd > 0.0) || !mean.is_finite() {
        return Err(Error::domain(format!("normal needs finite mean and sd > 0, got ({mean}, {sd})")));
    }
    Ok(mean + sd * rng.standard_normal())
}

/// Natural log of a Gamma(shape, 1) draw.
///
/// Marsaglia–Tsang squeeze for shape >= 1; shapes below one use
/// `G(a) = G(a + 1) U^(1/a)` evaluated in log space so tiny shapes do not
/// underflow.
pub(crate) fn sample_log_gamma(rng: &mut RngState, shape: f64) -> f64 {
    if shape < 1.0 {
        let boosted = sample_log_gamma(rng, shape + 1.0);
        return boosted + rng.uniform().ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let z = rng.standard_normal();
        let t = 1.0 + c * z;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u = rng.uniform();
        let z2 = z * z;
        if u < 1.0 - 0.0331 * z2 * z2 || u.ln() < 0.5 * z2 + d * (1.0 - v + v.ln()) {
            return d.ln() + v.ln();
        }
    }
}

/// One Gamma(shape, 1) draw.
pub fn sample_gamma(rng: &mut RngState, shape: f64) -> Result<f64> {
    if !(shape.is_finite() && shape > 0.0) {
        return Err(Error::domain(format!("gamma shape must be > 0, got {shape}")));
    }
    Ok(sample_log_gamma(rng, shape).exp())
}

/// One Beta(alpha, beta) draw, clamped to `[2^-53, 1 - 2^-53]`.
pub fn sample_beta(rng: &mut RngState, alpha: f64, beta: f64) -> Result<f64> {
    for (name, v) in [("alpha", alpha), ("beta", beta)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::domain(format!("beta {name} must be > 0, got {v}")));
        }
    }
    Ok(beta_unchecked(rng, alpha, beta))
}

#[inline]
pub(crate) fn beta_unchecked(rng: &mut RngState, alpha: f64, beta: f64) -> f64 {
    let la = sample_log_gamma(rng, alpha);
    let lb = sample_log_gamma(rng, beta);
    // X = Ga / (Ga + Gb) = 1 / (1 + exp(lb - la))
    clamp_unit(1.0 / (1.0 + (lb - la).exp()))
}

/// Truncated AR(1) covariate process `W_t = a W_{t-1} + e_t`, reported as
/// `min(max(lower, W_t), upper)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExoAR1Spec {
    pub coefficient: f64,
    pub noise_sd: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Default for ExoAR1Spec {
    fn default() -> Self {
        Self { coefficient: -0.1, noise_sd: 1.0, lower: -10.0, upper: 10.0 }
    }
}

/// Starting value of the latent AR(1) recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExoInit {
    #[default]
    Zero,
    /// Draw `W_0` from the stationary law `N(0, sd^2 / (1 - a^2))`.
    Stationary,
}

impl ExoAR1Spec {
    pub fn validate(&self) -> Result<()> {
        if !(self.coefficient.is_finite() && self.coefficient.abs() < 1.0) {
            return Err(Error::domain(format!("AR coefficient must satisfy |a| < 1, got {}", self.coefficient)));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd > 0.0) {
            return Err(Error::domain(format!("noise sd must be > 0, got {}", self.noise_sd)));
        }
        if !(self.lower < self.upper) || !self.lower.is_finite() || !self.upper.is_finite() {
            return Err(Error::domain(format!("need lower < upper, got [{}, {}]", self.lower, self.upper)));
        }
        Ok(())
    }

    pub fn process(&self, init: ExoInit, rng: &mut RngState) -> Result<ExoProcess> {
        self.validate()?;
        let latent = match init {
            ExoInit::Zero => 0.0,
            ExoInit::Stationary => {
                let sd = self.noise_sd / (1.0 - self.coefficient * self.coefficient).sqrt();
                sd * rng.standard_normal()
            }
        };
        Ok(ExoProcess { spec: *self, latent })
    }
}

/// Running state of an [`ExoAR1Spec`] recursion.
#[derive(Debug, Clone)]
pub struct ExoProcess {
    spec: ExoAR1Spec,
    latent: f64,
}

impl ExoProcess {
    /// Advance one step and return the clipped value.
    pub fn step(&mut self, rng: &mut RngState) -> f64 {
        self.latent = self.spec.coefficient * self.latent + self.spec.noise_sd * rng.standard_normal();
        self.latent.clamp(self.spec.lower, self.spec.upper)
    }
}

/// `W*_1, ..., W*_n` starting from `W_0 = 0`.
pub fn simulate_exo_path(rng: &mut RngState, spec: &ExoAR1Spec, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::domain("exogenous path length must be >= 1"));
    }
    let mut process = spec.process(ExoInit::Zero, rng)?;
    Ok((0..n).map(|_| process.step(rng)).collect())
}

/// Zero-mean Gaussian sampler for a fixed PSD covariance.
///
/// The covariance is factored once as `V diag(sqrt(lambda))` from its
/// symmetric eigendecomposition, which also handles singular matrices.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    factor: DMatrix<f64>,
}

impl MvnSampler {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let d = cov.nrows();
        if cov.ncols() != d {
            return Err(Error::Dimension { expected: d, got: cov.ncols() });
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("covariance has non-finite entries"));
        }
        let scale = cov.amax().max(f64::MIN_POSITIVE);
        for i in 0..d {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::domain("covariance is not symmetric"));
                }
            }
        }
        let eig = cov.clone().symmetric_eigen();
        let min = eig.eigenvalues.min();
        if min < -1e-10 * scale {
            return Err(Error::domain(format!("covariance is not positive semi-definite (eigenvalue {min:.3e})")));
        }
        let mut factor = eig.eigenvectors;
        for (j, lambda) in eig.eigenvalues.iter().enumerate() {
            let s = lambda.max(0.0).sqrt();
            factor.column_mut(j).scale_mut(s);
        }
        Ok(Self { factor })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample(&self, rng: &mut RngState) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.sample_into(rng, out.as_mut_slice());
        out
    }

    /// Writes one draw into `out` (length `dim`).
    pub fn sample_into(&self, rng: &mut RngState, out: &mut [f64]) {
        let d = self.dim();
        let mut stack = [0.0f64; 16];
        let mut heap;
        let z: &mut [f64] = if d <= stack.len() {
            &mut stack[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        for zi in z.iter_mut() {
            *zi = rng.standard_normal();
        }
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, zj) in z.iter().enumerate() {
                acc += self.factor[(i, j)] * zj;
            }
            *o = acc;
        }
    }
}

/// One draw from `N(0, cov)`.
pub fn sample_mvn(rng: &mut RngState, cov: &DMatrix<f64>) -> Result<DVector<f64>> {
    Ok(MvnSampler::new(cov)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn normal_moments() {
        let mut rng = RngState::new(7, 0);
        let xs: Vec<f64> = (0..100_000).map(|_| sample_normal(&mut rng, 0.0, 1.0).unwrap()).collect();
        let (mean, var) = mean_var(&xs);
        assert!(mean.abs() < 4.0 / (1e5f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn normal_rejects_bad_sd() {
        let mut rng = RngState::new(1, 0);
        assert!(sample_normal(&mut rng, 0.0, 0.0).is_err());
        assert!(sample_normal(&mut rng, 0.0, -1.0).is_err());
        assert!(sample_normal(&mut rng, 0.0, f64::NAN).is_err());
    }

    #[test]
    fn beta_means_and_variance() {
        let mut rng = RngState::new(11, 3);
        let n = 100_000;
        for (a, b) in [(1.0, 1.0), (2.0, 3.0)] {
            let xs: Vec<f64> = (0..n).map(|_| sample_beta(&mut rng, a, b).unwrap()).collect();
            let (mean, _) = mean_var(&xs);
            let expected = a / (a + b);
            let sd = (a * b / ((a + b) * (a + b) * (a + b + 1.0))).sqrt();
            let se = sd / (n as f64).sqrt();
            assert!((mean - expected).abs() < 4.0 * se, "({a},{b}): {mean}");
        }
        let xs: Vec<f64> = (0..n).map(|_| sample_beta(&mut rng, 50.0, 50.0).unwrap()).collect();
        let (_, var) = mean_var(&xs);
        let expected = 0.25 / 101.0;
        assert!((var - expected).abs() < 0.1 * expected, "var {var}");
    }

    #[test]
    fn beta_rejects_bad_shapes() {
        let mut rng = RngState::new(1, 0);
        assert!(sample_beta(&mut rng, 0.0, 1.0).is_err());
        assert!(sample_beta(&mut rng, 1.0, -2.0).is_err());
        assert!(sample_gamma(&mut rng, 0.0).is_err());
    }

    #[test]
    fn tiny_shapes_stay_inside_unit_interval() {
        let mut rng = RngState::new(5, 5);
        for _ in 0..10_000 {
            let x = sample_beta(&mut rng, 1e-3, 1e-3).unwrap();
            assert!(x >= BOUNDARY_EPS && x <= 1.0 - BOUNDARY_EPS);
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = RngState::new(42, 9);
        let mut b = RngState::new(42, 9);
        let mut c = RngState::new(42, 10);
        let xa: Vec<u64> = (0..64).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..64).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..64).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
        assert_eq!(a.split(10).next_u64(), RngState::new(42, 10).next_u64());
    }

    #[test]
    fn distinct_streams_are_uncorrelated() {
        let mut a = RngState::new(3, 0);
        let mut b = RngState::new(3, 1);
        let n = 100_000;
        let s: f64 = (0..n).map(|_| a.standard_normal() * b.standard_normal()).sum();
        assert!((s / n as f64).abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn exo_path_degenerate_and_clipped() {
        let mut rng = RngState::new(2, 0);
        let spec = ExoAR1Spec { coefficient: 0.0, noise_sd: 1.0, lower: -10.0, upper: 10.0 };
        let w = simulate_exo_path(&mut rng, &spec, 50_000).unwrap();
        let lag1: f64 = w.windows(2).map(|p| p[0] * p[1]).sum::<f64>() / w.len() as f64;
        assert!(lag1.abs() < 0.02);

        let tight = ExoAR1Spec { coefficient: 0.5, noise_sd: 2.0, lower: -0.5, upper: 1.0 };
        let w = simulate_exo_path(&mut rng, &tight, 10_000).unwrap();
        assert!(w.iter().all(|&v| (-0.5..=1.0).contains(&v)));
        assert!(w.iter().any(|&v| v == -0.5) && w.iter().any(|&v| v == 1.0));
    }

    #[test]
    fn exo_path_autocorrelation_matches_coefficient() {
        let mut rng = RngState::new(13, 1);
        let w = simulate_exo_path(&mut rng, &ExoAR1Spec::default(), 100_000).unwrap();
        let (mean, var) = mean_var(&w);
        let cov: f64 = w.windows(2).map(|p| (p[0] - mean) * (p[1] - mean)).sum::<f64>() / (w.len() - 1) as f64;
        let rho = cov / var;
        assert!((rho + 0.1).abs() < 0.02, "rho {rho}");
    }

    #[test]
    fn exo_spec_validation() {
        let mut rng = RngState::new(1, 0);
        let bad = [
            ExoAR1Spec { coefficient: 1.0, ..Default::default() },
            ExoAR1Spec { noise_sd: 0.0, ..Default::default() },
            ExoAR1Spec { lower: 1.0, upper: 1.0, ..Default::default() },
        ];
        for spec in bad {
            assert!(simulate_exo_path(&mut rng, &spec, 5).is_err());
        }
        assert!(simulate_exo_path(&mut rng, &ExoAR1Spec::default(), 0).is_err());
    }

    #[test]
    fn stationary_init_has_stationary_variance() {
        let spec = ExoAR1Spec { coefficient: 0.8, noise_sd: 1.0, lower: -50.0, upper: 50.0 };
        let first: Vec<f64> = (0..20_000)
            .map(|i| {
                let mut rng = RngState::new(99, i);
                spec.process(ExoInit::Stationary, &mut rng).unwrap().step(&mut rng)
            })
            .collect();
        let (_, var) = mean_var(&first);
        let expected = 1.0 / (1.0 - 0.64);
        assert!((var - expected).abs() < 0.05 * expected, "var {var}");
    }

    #[test]
    fn mvn_zero_and_identity() {
        let mut rng = RngState::new(21, 0);
        let zero = DMatrix::zeros(3, 3);
        assert_eq!(sample_mvn(&mut rng, &zero).unwrap(), DVector::zeros(3));

        let sampler = MvnSampler::new(&DMatrix::identity(4, 4)).unwrap();
        let n = 100_000;
        let mut acc = DMatrix::<f64>::zeros(4, 4);
        for _ in 0..n {
            let v = sampler.sample(&mut rng);
            acc += &v * v.transpose();
        }
        acc /= n as f64;
        for i in 0..4 {
            for j in 0..4 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((acc[(i, j)] - target).abs() < 0.05, "({i},{j}) = {}", acc[(i, j)]);
            }
        }
    }

    #[test]
    fn mvn_correlation() {
        let cov = DMatrix::from_row_slice(3, 3, &[4.0, 1.2, -0.3, 1.2, 1.0, 0.15, -0.3, 0.15, 0.25]);
        let sampler = MvnSampler::new(&cov).unwrap();
        let mut rng = RngState::new(8, 8);
        let n = 100_000;
        let draws: Vec<DVector<f64>> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let sij: f64 = draws.iter().map(|v| v[i] * v[j]).sum::<f64>() / n as f64;
            let sii: f64 = draws.iter().map(|v| v[i] * v[i]).sum::<f64>() / n as f64;
            let sjj: f64 = draws.iter().map(|v| v[j] * v[j]).sum::<f64>() / n as f64;
            let corr = sij / (sii * sjj).sqrt();
            let target = cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt();
            assert!((corr - target).abs() < 0.02, "({i},{j}) {corr} vs {target}");
        }
    }

    #[test]
    fn mvn_rejects_invalid_covariances() {
        let mut rng = RngState::new(1, 0);
        let not_psd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(sample_mvn(&mut rng, &not_psd).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(sample_mvn(&mut rng, &asym).is_err());
        assert!(sample_mvn(&mut rng, &DMatrix::zeros(2, 3)).is_err());
    }
}
