//! Markdown and CSV rendering of experiment reports.

use std::fmt::Write;

use betaar::detector::ThresholdTable;
use betaar::experiment::{ConsistencyReport, CoverageReport, PowerReport, SizeReport};

fn num(v: f64) -> String {
    format!("{v:.4}")
}

pub fn consistency(r: &ConsistencyReport) -> (String, String) {
    let mut md = String::new();
    let _ = writeln!(md, "# Consistency of the partial-likelihood estimator\n");
    let _ = writeln!(md, "{} replications per size, seed {}.\n", r.replications, r.seed);
    let truth: Vec<String> = r.parameters.iter().zip(&r.truth).map(|(p, t)| format!("{p} = {t}")).collect();
    let _ = writeln!(md, "True values: {}.\n", truth.join(", "));
    let mut head = vec!["m".to_string(), "fits".to_string()];
    for p in &r.parameters {
        head.push(format!("mean {p}"));
        head.push(format!("MSE {p}"));
    }
    let _ = writeln!(md, "| {} |", head.join(" | "));
    let _ = writeln!(md, "|{}", "---|".repeat(head.len()));
    let mut csv = String::from("m,fits,failures,parameter,truth,mean,mse\n");
    for row in &r.rows {
        let mut cells = vec![row.m.to_string(), row.fits.to_string()];
        for (i, p) in r.parameters.iter().enumerate() {
            cells.push(num(row.mean[i]));
            cells.push(format!("{:.3e}", row.mse[i]));
            let _ = writeln!(csv, "{},{},{},{p},{},{},{}", row.m, row.fits, row.failures, r.truth[i], row.mean[i], row.mse[i]);
        }
        let _ = writeln!(md, "| {} |", cells.join(" | "));
    }
    (md, csv)
}

pub fn thresholds(t: &ThresholdTable) -> (String, String) {
    let meta = &t.meta;
    let mut alphas: Vec<f64> = Vec::new();
    for e in &t.entries {
        if !alphas.contains(&e.alpha) {
            alphas.push(e.alpha);
        }
    }
    let mut md = String::new();
    let _ = writeln!(md, "# Critical values\n");
    let _ = writeln!(
        md,
        "{} replications, grid of {} points per unit time, horizon N = {}, dimension {}, seed {}.\n",
        meta.replications, meta.m_grid, meta.horizon, meta.dim, meta.seed
    );
    let _ = writeln!(md, "Covariance: {}.\n", meta.sigma_source);
    let head: Vec<String> = std::iter::once("gamma".to_string()).chain(alphas.iter().map(|a| format!("alpha = {a}"))).collect();
    let _ = writeln!(md, "| {} |", head.join(" | "));
    let _ = writeln!(md, "|{}", "---|".repeat(head.len()));
    for g in t.gammas() {
        let cells: Vec<String> = std::iter::once(g.to_string())
            .chain(alphas.iter().map(|&a| t.get(g, a).map_or_else(|| "-".into(), num)))
            .collect();
        let _ = writeln!(md, "| {} |", cells.join(" | "));
    }
    let mut csv = String::from("gamma,alpha,threshold,replications\n");
    for e in &t.entries {
        let _ = writeln!(csv, "{},{},{},{}", e.gamma, e.alpha, e.c, meta.replications);
    }
    (md, csv)
}

pub fn size(reports: &[SizeReport], rescale: &str) -> (String, String) {
    let mut md = String::new();
    let _ = writeln!(md, "# Empirical size (no change)\n");
    let _ = writeln!(md, "Rescaling: {rescale}.\n");
    let mut csv = String::from("m,gamma,alpha,threshold,rejection_rate,replications,failed_fits\n");
    for r in reports {
        let _ = writeln!(
            md,
            "## m = {}\n\n{} replications ({} failed fits), horizon N = {}, seed {}.\n",
            r.m, r.replications, r.failed_fits, r.horizon, r.seed
        );
        let _ = writeln!(md, "| gamma | alpha | threshold | rejection rate |\n|---|---|---|---|");
        for row in &r.rows {
            let _ = writeln!(md, "| {} | {} | {} | {:.3} |", row.gamma, row.alpha, num(row.threshold), row.rejection_rate);
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                r.m, row.gamma, row.alpha, row.threshold, row.rejection_rate, r.replications, r.failed_fits
            );
        }
        let _ = writeln!(md);
    }
    (md, csv)
}

pub fn power(reports: &[PowerReport], rescale: &str) -> (String, String) {
    let mut md = String::new();
    let _ = writeln!(md, "# Detection under a change\n");
    let _ = writeln!(md, "Rescaling: {rescale}. M1 is the mean delay after the change, M2 the rejection rate, M3 the fraction detected after the change.\n");
    let mut csv = String::from("m,k_star,gamma,alpha,threshold,mean_delay,rejection_rate,sensitivity,replications,failed_fits\n");
    for r in reports {
        let _ = writeln!(
            md,
            "## m = {}, k* = {}\n\n{} replications ({} failed fits), horizon N = {}, seed {}.\n",
            r.m, r.k_star, r.replications, r.failed_fits, r.horizon, r.seed
        );
        let _ = writeln!(md, "| gamma | alpha | threshold | M1 | M2 | M3 |\n|---|---|---|---|---|---|");
        for row in &r.rows {
            let s = &row.summary;
            let delay = s.mean_delay.map_or_else(|| "-".into(), |d| format!("{d:.2}"));
            let _ = writeln!(
                md,
                "| {} | {} | {} | {delay} | {:.1}% | {:.3} |",
                row.gamma,
                row.alpha,
                num(row.threshold),
                100.0 * s.rejection_rate,
                s.sensitivity
            );
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},{}",
                r.m,
                r.k_star,
                row.gamma,
                row.alpha,
                row.threshold,
                s.mean_delay.map_or_else(String::new, |d| d.to_string()),
                s.rejection_rate,
                s.sensitivity,
                r.replications,
                r.failed_fits
            );
        }
        let _ = writeln!(md);
    }
    (md, csv)
}

pub fn forecast(r: &CoverageReport) -> (String, String) {
    let m = &r.metrics;
    let mut md = String::new();
    let _ = writeln!(md, "# One-step forecasts\n");
    let _ = writeln!(
        md,
        "Trained on {} transitions, {} forecasts, interval level {}, seed {}.\n",
        r.n_train,
        r.n_forecast,
        1.0 - r.alpha,
        r.seed
    );
    let est: Vec<String> = r.params_hat.iter().map(|v| num(*v)).collect();
    let _ = writeln!(md, "Estimates: {}.\n", est.join(", "));
    let _ = writeln!(md, "| MAE | MAPE | RMSE | coverage |\n|---|---|---|---|");
    let _ = writeln!(md, "| {:.5} | {:.3}% | {:.5} | {:.2}% |", m.mae, m.mape, m.rmse, m.cp);
    let csv = format!("n_train,n_forecast,alpha,mae,mape,rmse,cp\n{},{},{},{},{},{},{}\n", r.n_train, r.n_forecast, r.alpha, m.mae, m.mape, m.rmse, m.cp);
    (md, csv)
}
