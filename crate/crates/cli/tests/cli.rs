use std::path::Path;
use std::process::{Command, Output};

fn betaar(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_betaar"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn simulate(dir: &Path, name: &str, extra: &[&str]) {
    let mut args = vec!["simulate", "--seed", "11", "--set"];
    let output = format!("output={name}");
    args.push(&output);
    args.extend_from_slice(extra);
    let out = betaar(dir, &args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_is_deterministic_and_writes_the_header() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "a.csv", &["--n", "200"]);
    simulate(dir.path(), "b.csv", &["--n", "200"]);
    let a = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read_to_string(dir.path().join("b.csv")).unwrap());
    assert!(a.starts_with("t,x,w1\n0,"));
    assert_eq!(a.lines().count(), 202);
}

#[test]
fn fit_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "s.csv", &["--n", "800"]);
    let input = d.join("s.csv");
    let input = input.to_str().unwrap();
    assert_eq!(code(&betaar(d, &["fit", "--input", input, "--set", "output=f1.json"])), 0);
    assert_eq!(code(&betaar(d, &["fit", "--input", input, "--set", "output=f2.json"])), 0);
    let mut f1 = json(&d.join("f1.json"));
    let mut f2 = json(&d.join("f2.json"));
    for f in [&mut f1, &mut f2] {
        f["config"]["output"] = serde_json::Value::Null;
    }
    assert_eq!(f1, f2);
    assert_eq!(f1["converged"], true);
    assert_eq!(f1["parameters"].as_array().unwrap().len(), 4);
    assert_eq!(f1["n_obs"], 800);
}

#[test]
fn missing_covariate_column_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("s.csv"), "t,x\n0,0.3\n1,0.4\n2,0.35\n").unwrap();
    let out = betaar(d, &["fit", "--input", d.join("s.csv").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("covariate"));
}

#[test]
fn malformed_rows_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("s.csv"), "t,x,w1\n0,0.3,\n1,0.4,0.1\n2,oops,0.2\n").unwrap();
    let out = betaar(d, &["fit", "--input", d.join("s.csv").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
}

#[test]
fn calibrate_then_monitor() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "train.csv", &["--n", "500"]);
    let fit = d.join("fit.json");
    assert_eq!(code(&betaar(d, &["fit", "--input", d.join("train.csv").to_str().unwrap()])), 0);

    let out = betaar(d, &["calibrate", "--fit", fit.to_str().unwrap(), "--reps", "400", "--set", "m_grid=200"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = json(&d.join("thresholds.json"));
    assert_eq!(table["table"]["meta"]["replications"], 400);
    assert_eq!(table["table"]["meta"]["dim"], 4);
    let entries = table["table"]["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 12);
    for g in [0.0, 0.25, 0.4] {
        let cs: Vec<f64> = entries
            .iter()
            .filter(|e| e["gamma"].as_f64() == Some(g))
            .map(|e| e["c"].as_f64().unwrap())
            .collect();
        assert!(cs.windows(2).all(|w| w[0] < w[1]), "thresholds grow as alpha falls: {cs:?}");
    }

    simulate(d, "stream.csv", &["--n", "2000", "--set", "change_after=520", "--set", "phi1_after=0.6"]);
    let out = betaar(
        d,
        &[
            "monitor",
            "--fit",
            fit.to_str().unwrap(),
            "--stream",
            d.join("stream.csv").to_str().unwrap(),
            "--table",
            d.join("thresholds.json").to_str().unwrap(),
            "--set",
            "start=500",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&d.join("monitor.json"));
    let processed = report["processed"].as_u64().unwrap() as usize;
    let trace = std::fs::read_to_string(d.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), processed + 1);
    assert!(trace.starts_with("k,statistic,threshold\n1,"));
    assert_eq!(report["detected"], true);
    assert_eq!(report["k_detect"].as_u64().unwrap() as usize, processed);
}

#[test]
fn monitor_truncates_streams_beyond_the_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "train.csv", &["--n", "200"]);
    assert_eq!(code(&betaar(d, &["fit", "--input", d.join("train.csv").to_str().unwrap()])), 0);
    simulate(d, "stream.csv", &["--n", "1000"]);
    let out = betaar(
        d,
        &[
            "monitor",
            "--fit",
            d.join("fit.json").to_str().unwrap(),
            "--stream",
            d.join("stream.csv").to_str().unwrap(),
            "--set",
            "threshold=1e9",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let report = json(&d.join("monitor.json"));
    assert_eq!(report["processed"], 600);
    assert_eq!(report["ignored_trailing"], 400);
    assert_eq!(report["detected"], false);
}

#[test]
fn forecast_writes_intervals_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "s.csv", &["--n", "600"]);
    let s = d.join("s.csv");
    assert_eq!(code(&betaar(d, &["fit", "--input", s.to_str().unwrap()])), 0);
    let out = betaar(d, &["forecast", "--fit", d.join("fit.json").to_str().unwrap(), "--input", s.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(d.join("forecast.csv")).unwrap();
    assert!(table.starts_with("t,x,mu_hat,lower,upper,covered\n"));
    assert_eq!(table.lines().count(), 601);
    let cp = json(&d.join("forecast.json"))["metrics"]["cp"].as_f64().unwrap();
    assert!((85.0..=100.0).contains(&cp), "{cp}");
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&betaar(d, &["experiment", "nonsense"])), 1);
    assert_eq!(code(&betaar(d, &["frobnicate"])), 1);
    assert_eq!(code(&betaar(d, &["simulate", "--set", "gamma=0.7"])), 1);
    assert_eq!(code(&betaar(d, &["simulate", "--set", "unknown_key=1"])), 1);
    assert_eq!(code(&betaar(d, &["calibrate"])), 1);
    assert_eq!(code(&betaar(d, &["--help"])), 0);
}

#[test]
fn config_file_and_overrides_combine() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.toml");
    std::fs::write(&cfg, "n = 50\nexo_coefs = [0.1, -0.2]\nseed = 4\n").unwrap();
    let out = betaar(d, &["simulate", "--config", cfg.to_str().unwrap(), "--set", "n=30"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(d.join("simulated.csv")).unwrap();
    assert!(text.starts_with("t,x,w1,w2\n"));
    assert_eq!(text.lines().count(), 32);
}

#[test]
fn experiment_reports_carry_replication_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = betaar(
        d,
        &["experiment", "size", "--replications", "30", "--set", "m=150", "--set", "reps=200", "--set", "reference_n=5000", "--set", "gammas=[0.0]"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&d.join("size.json"));
    assert_eq!(report["report"][0]["replications"].as_u64().unwrap() + report["report"][0]["failed_fits"].as_u64().unwrap(), 30);
    assert!(std::fs::read_to_string(d.join("size.md")).unwrap().contains("30 replications"));
    assert!(std::fs::read_to_string(d.join("size.csv")).unwrap().starts_with("m,gamma,alpha,threshold,rejection_rate"));
}
