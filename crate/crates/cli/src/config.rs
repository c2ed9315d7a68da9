//! Run configuration: a flat TOML file merged with command-line overrides.

use std::path::{Path, PathBuf};

use betaar::detector::{CalibrationSettings, Rescale, WeightConfig};
use betaar::inference::FitOptions;
use betaar::model::{ModelParams, SimulationOptions, XLink, XLinkKind};
use betaar::stochastic::ExoAR1Spec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RescaleKey {
    Information,
    Identity,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    // Model.
    pub tau: f64,
    pub phi0: f64,
    pub phi1: f64,
    pub exo_coefs: Vec<f64>,
    pub xlink: String,
    pub trunc_c: f64,

    // Simulation.
    pub n: usize,
    pub x0: f64,
    pub burn_in: usize,
    pub exo_coefficient: f64,
    pub exo_noise_sd: f64,
    pub exo_lower: f64,
    pub exo_upper: f64,
    /// Transitions `t > change_after` use the `*_after` parameters.
    pub change_after: Option<usize>,
    pub tau_after: Option<f64>,
    pub phi0_after: Option<f64>,
    pub phi1_after: Option<f64>,
    pub exo_coefs_after: Option<Vec<f64>>,

    // Fitting.
    pub max_iterations: usize,
    pub gradient_tolerance: f64,

    // Monitoring and calibration.
    pub gamma: f64,
    pub alpha: f64,
    pub horizon: f64,
    pub m_grid: usize,
    pub reps: usize,
    pub gammas: Vec<f64>,
    pub alphas: Vec<f64>,
    /// `information` (inverse information of each fit), `identity`, or
    /// `reference` (inverse information of one long simulated path; experiments only).
    pub rescale: String,
    /// Fixed threshold for `monitor`, used instead of a threshold table.
    pub threshold: Option<f64>,
    /// Row of the stream file holding the last training observation.
    pub start: usize,

    // Experiments.
    pub sizes: Vec<usize>,
    pub m: Option<usize>,
    pub replications: Option<usize>,
    pub k_star: usize,
    pub reference_n: usize,
    pub n_train: usize,
    pub n_forecast: usize,

    // Files.
    pub input: Option<PathBuf>,
    pub fit: Option<PathBuf>,
    pub stream: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub output: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            tau: 100.0,
            phi0: -0.6,
            phi1: 0.1,
            exo_coefs: vec![0.1],
            xlink: "logit".into(),
            trunc_c: 0.01,
            n: 1000,
            x0: 0.5,
            burn_in: 500,
            exo_coefficient: -0.1,
            exo_noise_sd: 1.0,
            exo_lower: -10.0,
            exo_upper: 10.0,
            change_after: None,
            tau_after: None,
            phi0_after: None,
            phi1_after: None,
            exo_coefs_after: None,
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            gamma: 0.0,
            alpha: 0.05,
            horizon: 3.0,
            m_grid: 1000,
            reps: 10_000,
            gammas: vec![0.0, 0.25, 0.4],
            alphas: vec![0.1, 0.05, 0.025, 0.01],
            rescale: "information".into(),
            threshold: None,
            start: 0,
            sizes: vec![1000, 2000, 3000],
            m: None,
            replications: None,
            k_star: 50,
            reference_n: 100_000,
            n_train: 2000,
            n_forecast: 500,
            input: None,
            fit: None,
            stream: None,
            table: None,
            output: None,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Parses a `key=value` override; the value is read as a TOML value and
/// falls back to a plain string.
pub fn parse_override(item: &str) -> CliResult<(String, toml::Value)> {
    let (key, raw) = item.split_once('=').ok_or_else(|| usage(format!("override '{item}' is not key=value")))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}

impl RunConfig {
    /// Reads `path` (if any), applies `overrides` in order and validates.
    pub fn load(path: Option<&Path>, overrides: &[(String, toml::Value)]) -> CliResult<Self> {
        let mut table = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?
                .parse::<toml::Table>()
                .map_err(|e| usage(format!("config {}: {e}", p.display())))?,
            None => toml::Table::new(),
        };
        for (k, v) in overrides {
            table.insert(k.clone(), v.clone());
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(usage)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        self.params()?;
        self.exo_spec().validate().map_err(usage)?;
        for &g in self.gammas.iter().chain([&self.gamma]) {
            WeightConfig::new(g, self.horizon).map_err(usage)?;
        }
        for &a in self.alphas.iter().chain([&self.alpha]) {
            if !(a > 0.0 && a < 1.0) {
                return Err(usage(format!("alpha must lie in (0, 1), got {a}")));
            }
        }
        if !(self.gradient_tolerance > 0.0) {
            return Err(usage("gradient_tolerance must be > 0"));
        }
        self.rescale_key()?;
        Ok(())
    }

    pub fn xlink(&self) -> CliResult<XLink> {
        let kind: XLinkKind = self.xlink.parse().map_err(usage)?;
        XLink::new(kind, self.trunc_c).map_err(usage)
    }

    pub fn params(&self) -> CliResult<ModelParams> {
        ModelParams::new(self.tau, self.phi0, self.phi1, self.exo_coefs.clone(), self.xlink()?).map_err(usage)
    }

    /// Parameters after the configured change, if any.
    pub fn params_after(&self) -> CliResult<Option<(usize, ModelParams)>> {
        let Some(at) = self.change_after else {
            return Ok(None);
        };
        let p = ModelParams::new(
            self.tau_after.unwrap_or(self.tau),
            self.phi0_after.unwrap_or(self.phi0),
            self.phi1_after.unwrap_or(self.phi1),
            self.exo_coefs_after.clone().unwrap_or_else(|| self.exo_coefs.clone()),
            self.xlink()?,
        )
        .map_err(usage)?;
        Ok(Some((at, p)))
    }

    pub fn exo_spec(&self) -> ExoAR1Spec {
        ExoAR1Spec {
            coefficient: self.exo_coefficient,
            noise_sd: self.exo_noise_sd,
            lower: self.exo_lower,
            upper: self.exo_upper,
        }
    }

    pub fn simulation(&self) -> SimulationOptions {
        SimulationOptions { n: self.n, x0: self.x0, burn_in: self.burn_in }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions { max_iterations: self.max_iterations, gradient_tolerance: self.gradient_tolerance, initial_params: None }
    }

    pub fn calibration(&self) -> CalibrationSettings {
        CalibrationSettings { horizon: self.horizon, m_grid: self.m_grid, reps: self.reps }
    }

    pub fn rescale_key(&self) -> CliResult<RescaleKey> {
        match self.rescale.as_str() {
            "information" => Ok(RescaleKey::Information),
            "identity" => Ok(RescaleKey::Identity),
            "reference" => Ok(RescaleKey::Reference),
            other => Err(usage(format!("rescale must be 'information', 'identity' or 'reference', got '{other}'"))),
        }
    }

    /// Rescaling for a single monitoring run, where no reference path exists.
    pub fn rescale_choice(&self) -> CliResult<Rescale> {
        match self.rescale_key()? {
            RescaleKey::Information => Ok(Rescale::InverseInformation),
            RescaleKey::Identity => Ok(Rescale::Identity),
            RescaleKey::Reference => Err(usage("rescale = 'reference' is only available for experiments")),
        }
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> CliResult<&'a Path> {
        value.as_deref().ok_or_else(|| usage(format!("missing required file: set --{key} or '{key}' in the config")))
    }
}
