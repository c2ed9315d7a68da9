//! CSV series files and JSON result documents.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use betaar::detector::ThresholdTable;
use betaar::inference::{parameter_names, FitDiagnostics, FitResult};
use betaar::model::{ModelParams, SeriesSample};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

fn data(msg: impl Into<String>) -> CliError {
    CliError::Data(msg.into())
}

/// Reads a `t,x,w1..wl` file. Row `i` holds `X_i`; its covariates are `W_i`
/// (empty on the first row).
pub fn read_series(path: &Path) -> CliResult<SeriesSample> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| data(format!("{}: {e}", path.display())))?;
    let header = reader.headers().map_err(|e| data(format!("{}: {e}", path.display())))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 2 || cols[0] != "t" || cols[1] != "x" {
        return Err(data(format!("{}: header must start with 't,x', got '{}'", path.display(), cols.join(","))));
    }
    let l = cols.len() - 2;
    for (i, c) in cols[2..].iter().enumerate() {
        if *c != format!("w{}", i + 1) {
            return Err(data(format!("{}: expected column 'w{}', got '{c}'", path.display(), i + 1)));
        }
    }

    let mut x = Vec::new();
    let mut w = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| data(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(row as u64 + 2, |p| p.line());
        let field = |j: usize| -> CliResult<f64> {
            let raw = record.get(j).unwrap_or("");
            raw.parse::<f64>()
                .map_err(|_| data(format!("{}: line {line}: cannot parse '{raw}' in column '{}'", path.display(), cols[j])))
        };
        if record.len() != cols.len() {
            return Err(data(format!("{}: line {line}: expected {} fields, got {}", path.display(), cols.len(), record.len())));
        }
        let xv = field(1)?;
        if !(0.0..=1.0).contains(&xv) {
            return Err(data(format!("{}: line {line}: x = {xv} outside [0, 1]", path.display())));
        }
        x.push(xv);
        if row > 0 {
            for j in 2..cols.len() {
                w.push(field(j)?);
            }
        }
    }
    if x.len() < 2 {
        return Err(data(format!("{}: need at least two observations", path.display())));
    }
    SeriesSample::from_flat(x, w, l).map_err(|e| data(format!("{}: {e}", path.display())))
}

/// Writes `series` as `t,x,w1..wl`; values use the shortest exact representation.
pub fn write_series(path: &Path, series: &SeriesSample) -> CliResult<()> {
    let l = series.exo_dim();
    let mut out = BufWriter::new(File::create(path)?);
    let mut header = vec!["t".to_string(), "x".to_string()];
    header.extend((1..=l).map(|i| format!("w{i}")));
    writeln!(out, "{}", header.join(","))?;
    for (t, &x) in series.x().iter().enumerate() {
        write!(out, "{t},{x}")?;
        if t == 0 {
            for _ in 0..l {
                write!(out, ",")?;
            }
        } else {
            for v in series.covariate(t) {
                write!(out, ",{v}")?;
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| data(e.to_string()))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", path.display())))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        other => return Err(data(format!("{}: unsupported schema_version {other:?}", path.display()))),
    }
    serde_json::from_value(value).map_err(|e| data(format!("{}: {e}", path.display())))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>], name: &str) -> CliResult<DMatrix<f64>> {
    let d = rows.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(data(format!("{name} must be a square matrix")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub schema_version: u32,
    pub config: RunConfig,
    pub input: String,
    pub parameters: Vec<String>,
    pub params_hat: ModelParams,
    pub estimates: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub score_norm_at_solution: f64,
    pub converged: bool,
    pub n_obs: usize,
    pub info_matrix: Vec<Vec<f64>>,
    pub asymptotic_cov: Vec<Vec<f64>>,
    pub diagnostics: FitDiagnostics,
}

impl FitDocument {
    pub fn new(config: &RunConfig, input: &Path, fit: &FitResult) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            config: config.clone(),
            input: input.display().to_string(),
            parameters: parameter_names(fit.params_hat.exo_dim()),
            params_hat: fit.params_hat.clone(),
            estimates: fit.params_hat.to_vector().iter().copied().collect(),
            standard_errors: fit.standard_errors().iter().copied().collect(),
            loglik: fit.loglik,
            aic: fit.aic(),
            score_norm_at_solution: fit.score_norm_at_solution,
            converged: fit.converged,
            n_obs: fit.n_obs,
            info_matrix: to_rows(&fit.info_matrix),
            asymptotic_cov: to_rows(&fit.asymptotic_cov),
            diagnostics: fit.diagnostics.clone(),
        }
    }

    pub fn to_fit(&self) -> CliResult<FitResult> {
        self.params_hat.validate().map_err(|e| data(format!("fit document: {e}")))?;
        let info_matrix = from_rows(&self.info_matrix, "info_matrix")?;
        if info_matrix.nrows() != self.params_hat.dim() {
            return Err(data("fit document: info_matrix dimension does not match the parameters"));
        }
        Ok(FitResult {
            params_hat: self.params_hat.clone(),
            loglik: self.loglik,
            score_norm_at_solution: self.score_norm_at_solution,
            info_matrix,
            asymptotic_cov: from_rows(&self.asymptotic_cov, "asymptotic_cov")?,
            converged: self.converged,
            n_obs: self.n_obs,
            diagnostics: self.diagnostics.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdDocument {
    pub schema_version: u32,
    pub config: RunConfig,
    pub table: ThresholdTable,
}
