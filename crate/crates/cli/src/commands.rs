use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use betaar::detector::{run_monitor, statistic_trace, Rescale, ThresholdTable, WeightConfig};
use betaar::evalkit::{forecast_metrics, one_step_forecast, ForecastMetrics, ForecastPoint};
use betaar::experiment::{
    consistency_study, coverage_study, power_study, reference_information, size_study, threshold_study, MonitorDesign,
    ReferenceInformation,
};
use betaar::inference::fit_pmle;
use betaar::model::{simulate_path, simulate_path_with_change, Covariates, ModelParams};
use betaar::stochastic::{ExoInit, RngState};
use serde::Serialize;

use crate::config::{RescaleKey, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{self, FitDocument, ThresholdDocument, SCHEMA_VERSION};
use crate::report;

pub struct Context {
    pub config: RunConfig,
    pub out_dir: PathBuf,
}

impl Context {
    fn path(&self, default_name: &str) -> PathBuf {
        self.out_dir.join(self.config.output.as_deref().unwrap_or(default_name))
    }

    fn sibling(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn note(msg: impl AsRef<str>) {
    eprintln!("{}", msg.as_ref());
}

pub fn simulate(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    let params = cfg.params()?;
    let covariates = Covariates::Simulated { spec: cfg.exo_spec(), init: ExoInit::Zero };
    let mut rng = RngState::new(cfg.seed, 0);
    let series = match cfg.params_after()? {
        Some((at, after)) => simulate_path_with_change(&params, &after, at, covariates, &cfg.simulation(), &mut rng)?,
        None => simulate_path(&params, covariates, &cfg.simulation(), &mut rng)?,
    };
    let path = ctx.path("simulated.csv");
    io::write_series(&path, &series)?;
    note(format!("wrote {} ({} transitions)", path.display(), series.n_transitions()));
    Ok(())
}

pub fn fit(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    let input = cfg.require(&cfg.input, "input")?;
    let series = io::read_series(input)?;
    let expected = cfg.exo_coefs.len();
    if series.exo_dim() != expected {
        return Err(CliError::Data(format!(
            "{}: has {} covariate columns but the model expects {expected} (set exo_coefs to match)",
            input.display(),
            series.exo_dim()
        )));
    }
    let fit = fit_pmle(&series, cfg.xlink()?, &cfg.fit_options())?;
    let doc = FitDocument::new(cfg, input, &fit);
    let path = ctx.path("fit.json");
    io::write_json(&path, &doc)?;
    note(format!("wrote {}", path.display()));
    if !fit.converged {
        return Err(CliError::Numerical(format!(
            "fit did not converge: {}",
            fit.diagnostics.message.as_deref().unwrap_or("score above tolerance")
        )));
    }
    Ok(())
}

fn load_fit(cfg: &RunConfig) -> CliResult<FitDocument> {
    io::read_json(cfg.require(&cfg.fit, "fit")?)
}

pub fn calibrate(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    let doc = load_fit(cfg)?;
    let fit = doc.to_fit()?;
    let sigma = &fit.info_matrix;
    let a = cfg.rescale_choice()?.resolve(&fit)?;
    let source = format!("information matrix of fit {}", cfg.fit.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
    let table = ThresholdTable::calibrate(sigma, &a, &cfg.gammas, &cfg.alphas, &cfg.calibration(), cfg.seed, source)?;
    let path = ctx.path("thresholds.json");
    io::write_json(&path, &ThresholdDocument { schema_version: SCHEMA_VERSION, config: cfg.clone(), table })?;
    note(format!("wrote {}", path.display()));
    Ok(())
}

#[derive(Serialize)]
struct MonitorDocument<'a> {
    schema_version: u32,
    config: &'a RunConfig,
    gamma: f64,
    alpha: Option<f64>,
    threshold: f64,
    m: usize,
    max_steps: usize,
    processed: usize,
    ignored_trailing: usize,
    detected: bool,
    k_detect: Option<usize>,
    statistic_at_detection: Option<f64>,
    trace: String,
}

pub fn monitor(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    let fit = load_fit(cfg)?.to_fit()?;
    let stream_path = cfg.require(&cfg.stream, "stream")?;
    let series = io::read_series(stream_path)?;
    if cfg.start >= series.x().len() - 1 {
        return Err(CliError::Data(format!("start row {} leaves no observations to monitor", cfg.start)));
    }
    let (threshold, alpha) = match (&cfg.table, cfg.threshold) {
        (_, Some(c)) => (c, None),
        (Some(p), None) => {
            let doc: ThresholdDocument = io::read_json(p)?;
            (doc.table.lookup(cfg.gamma, cfg.alpha)?, Some(cfg.alpha))
        }
        (None, None) => return Err(CliError::Usage("monitor needs --table or a threshold value".into())),
    };
    let weight = WeightConfig::new(cfg.gamma, cfg.horizon)?;
    let max_steps = weight.max_steps(fit.n_obs);
    let available = series.x().len() - 1 - cfg.start;
    let used = available.min(max_steps);
    if available > max_steps {
        note(format!(
            "warning: stream has {available} observations but the horizon N*m = {max_steps}; ignoring the last {}",
            available - max_steps
        ));
    }
    let stream = series.window(cfg.start, cfg.start + used)?;
    let state = run_monitor(&fit, &stream, weight, threshold, &cfg.rescale_choice()?)?;

    let trace_path = ctx.sibling("trace.csv");
    let mut out = BufWriter::new(std::fs::File::create(&trace_path)?);
    writeln!(out, "k,statistic,threshold")?;
    for (k, s) in statistic_trace(&state) {
        writeln!(out, "{k},{s},{threshold}")?;
    }
    out.flush()?;

    let crossing = state.crossing();
    let doc = MonitorDocument {
        schema_version: SCHEMA_VERSION,
        config: cfg,
        gamma: cfg.gamma,
        alpha,
        threshold,
        m: state.m(),
        max_steps,
        processed: state.k(),
        ignored_trailing: available - used,
        detected: crossing.is_some(),
        k_detect: crossing.map(|c| c.k_detect),
        statistic_at_detection: crossing.map(|c| c.statistic),
        trace: trace_path.display().to_string(),
    };
    let path = ctx.path("monitor.json");
    io::write_json(&path, &doc)?;
    match crossing {
        Some(c) => note(format!("change detected at k = {} (statistic {:.4} >= {threshold:.4})", c.k_detect, c.statistic)),
        None => note(format!("no detection after {} observations", state.k())),
    }
    Ok(())
}

#[derive(Serialize)]
struct ForecastDocument<'a> {
    schema_version: u32,
    config: &'a RunConfig,
    alpha: f64,
    forecasts: usize,
    metrics: ForecastMetrics,
    table: String,
}

pub fn forecast(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    let fit = load_fit(cfg)?.to_fit()?;
    let input = cfg.require(&cfg.input, "input")?;
    let series = io::read_series(input)?;
    if series.exo_dim() != fit.params_hat.exo_dim() {
        return Err(CliError::Data(format!(
            "{}: has {} covariate columns but the fit has {}",
            input.display(),
            series.exo_dim(),
            fit.params_hat.exo_dim()
        )));
    }
    let mut actual = Vec::with_capacity(series.n_transitions());
    let mut points: Vec<ForecastPoint> = Vec::with_capacity(series.n_transitions());
    for t in 1..=series.n_transitions() {
        let (x, x_prev, w) = series.transition(t);
        points.push(one_step_forecast(&fit.params_hat, x_prev, w, cfg.alpha)?);
        actual.push(x);
    }
    let table_path = ctx.sibling("forecast.csv");
    let mut out = BufWriter::new(std::fs::File::create(&table_path)?);
    writeln!(out, "t,x,mu_hat,lower,upper,covered")?;
    for (t, (x, p)) in actual.iter().zip(&points).enumerate() {
        writeln!(out, "{},{x},{},{},{},{}", t + 1, p.mu_hat, p.lower, p.upper, p.covers(*x) as u8)?;
    }
    out.flush()?;
    let metrics = forecast_metrics(&actual, &points)?;
    let doc = ForecastDocument {
        schema_version: SCHEMA_VERSION,
        config: cfg,
        alpha: cfg.alpha,
        forecasts: points.len(),
        metrics,
        table: table_path.display().to_string(),
    };
    io::write_json(&ctx.path("forecast.json"), &doc)?;
    note(format!(
        "MAE {:.5}  MAPE {:.3}%  RMSE {:.5}  coverage {:.2}%",
        metrics.mae, metrics.mape, metrics.rmse, metrics.cp
    ));
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Study {
    Consistency,
    Thresholds,
    Size,
    Power,
    Forecast,
}

impl Study {
    fn name(self) -> &'static str {
        match self {
            Study::Consistency => "consistency",
            Study::Thresholds => "thresholds",
            Study::Size => "size",
            Study::Power => "power",
            Study::Forecast => "forecast",
        }
    }
}

fn reference(cfg: &RunConfig, params: &ModelParams) -> CliResult<ReferenceInformation> {
    note(format!("estimating reference information from a path of {} observations", cfg.reference_n));
    Ok(reference_information(params, cfg.reference_n, cfg.seed)?)
}

fn thresholds_for(cfg: &RunConfig, reference: &ReferenceInformation) -> CliResult<ThresholdTable> {
    match &cfg.table {
        Some(p) => Ok(io::read_json::<ThresholdDocument>(p)?.table),
        None => Ok(threshold_study(reference, &cfg.gammas, &cfg.alphas, &cfg.calibration(), cfg.seed.wrapping_add(1))?),
    }
}

fn monitor_design(cfg: &RunConfig, reference: &ReferenceInformation, m: usize, default_reps: usize) -> CliResult<MonitorDesign> {
    let rescale = match cfg.rescale_key()? {
        RescaleKey::Information => Rescale::InverseInformation,
        RescaleKey::Identity => Rescale::Identity,
        RescaleKey::Reference => Rescale::Matrix(reference.a.clone()),
    };
    Ok(MonitorDesign {
        m,
        horizon: cfg.horizon,
        gammas: cfg.gammas.clone(),
        alphas: cfg.alphas.clone(),
        rescale,
        replications: cfg.replications.unwrap_or(default_reps),
        seed: cfg.seed.wrapping_add(2),
    })
}

fn write_outputs<T: Serialize>(ctx: &Context, study: Study, markdown: &str, csv: &str, json: &T) -> CliResult<()> {
    let name = study.name();
    std::fs::write(ctx.sibling(&format!("{name}.md")), markdown)?;
    std::fs::write(ctx.sibling(&format!("{name}.csv")), csv)?;
    #[derive(Serialize)]
    struct Wrapped<'a, T> {
        schema_version: u32,
        study: &'a str,
        config: &'a RunConfig,
        report: &'a T,
    }
    io::write_json(
        &ctx.sibling(&format!("{name}.json")),
        &Wrapped { schema_version: SCHEMA_VERSION, study: name, config: &ctx.config, report: json },
    )?;
    print!("{markdown}");
    note(format!("wrote {name}.md, {name}.csv and {name}.json to {}", ctx.out_dir.display()));
    Ok(())
}

pub fn experiment(ctx: &Context, study: Study) -> CliResult<()> {
    let cfg = &ctx.config;
    let params = cfg.params()?;
    match study {
        Study::Consistency => {
            let reps = cfg.replications.unwrap_or(100);
            let report = consistency_study(&params, &cfg.sizes, reps, cfg.seed)?;
            let (md, csv) = report::consistency(&report);
            write_outputs(ctx, study, &md, &csv, &report)
        }
        Study::Thresholds => {
            let reference = reference(cfg, &params)?;
            let table = threshold_study(&reference, &cfg.gammas, &cfg.alphas, &cfg.calibration(), cfg.seed.wrapping_add(1))?;
            let (md, csv) = report::thresholds(&table);
            write_outputs(ctx, study, &md, &csv, &table)
        }
        Study::Size => {
            let reference = reference(cfg, &params)?;
            let table = thresholds_for(cfg, &reference)?;
            let sizes = cfg.m.map_or_else(|| vec![500, 1000, 1500], |m| vec![m]);
            let reports = sizes
                .iter()
                .map(|&m| Ok(size_study(&params, &monitor_design(cfg, &reference, m, 1000)?, &table)?))
                .collect::<CliResult<Vec<_>>>()?;
            let (md, csv) = report::size(&reports, &cfg.rescale);
            write_outputs(ctx, study, &md, &csv, &reports)
        }
        Study::Power => {
            let reference = reference(cfg, &params)?;
            let table = thresholds_for(cfg, &reference)?;
            let after = ModelParams {
                tau: cfg.tau_after.unwrap_or(params.tau),
                phi0: cfg.phi0_after.unwrap_or(params.phi0),
                phi1: cfg.phi1_after.unwrap_or(0.2),
                exo_coefs: cfg.exo_coefs_after.clone().unwrap_or_else(|| params.exo_coefs.clone()),
                xlink: params.xlink,
            };
            let sizes = cfg.m.map_or_else(|| vec![100, 500, 1000], |m| vec![m]);
            let reports = sizes
                .iter()
                .map(|&m| {
                    let mut design = monitor_design(cfg, &reference, m, 200)?;
                    design.alphas = vec![cfg.alpha];
                    Ok(power_study(&params, &after, cfg.k_star, &design, &table)?)
                })
                .collect::<CliResult<Vec<_>>>()?;
            let (md, csv) = report::power(&reports, &cfg.rescale);
            write_outputs(ctx, study, &md, &csv, &reports)
        }
        Study::Forecast => {
            let report = coverage_study(&params, cfg.n_train, cfg.n_forecast, cfg.alpha, cfg.seed)?;
            let (md, csv) = report::forecast(&report);
            write_outputs(ctx, study, &md, &csv, &report)
        }
    }
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create output directory {}: {e}", dir.display())))
}
