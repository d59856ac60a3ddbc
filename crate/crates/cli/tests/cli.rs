use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rtgee"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env("RTGEE_THREADS", "1").output().expect("binary runs")
}

fn scenario_file(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(
        &path,
        r#"
name = "tiny"
n = 20
p = 5
m = 4
errors = "t3"
seed = 11
replicates = 5
methods = [
  { method = "sgee", correlation = "exc" },
  { method = "rtgee", correlation = "exc" },
]

[contamination]
y_rate = 0.1

[tuning]
fixed_b = 4.685
"#,
    )
    .unwrap();
    path
}

fn dataset_file(dir: &Path) -> PathBuf {
    let mut text = String::from("subject,time,y,x1,x2,x3\n");
    for i in 0..12 {
        for t in 1..=3 {
            let x1 = ((i * 7 + t * 3) % 11) as f64 / 5.0 - 1.0;
            let x2 = ((i * 5 + t) % 7) as f64 / 3.0 - 1.0;
            let x3 = ((i + 2 * t) % 5) as f64 / 2.0 - 1.0;
            let noise = (((i * 13 + t * 17) % 9) as f64 - 4.0) / 20.0;
            let y = 1.5 * x1 - 0.8 * x3 + noise;
            text.push_str(&format!("s{i},{t},{y},{x1},{x2},{x3}\n"));
        }
    }
    let path = dir.join("data.csv");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn missing_scenario_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no_such_scenario.toml");
    let out = run(&["simulate", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no_such_scenario.toml"), "{stderr}");
}

#[test]
fn missing_dataset_is_reported() {
    let out = run(&["fit", "/nonexistent/data.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/data.csv"));
}

#[test]
fn simulation_artifacts_parse() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_file(dir.path());
    let out_dir = dir.path().join("out");
    let out = run(&["simulate", scenario.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let mut metrics = csv::Reader::from_path(out_dir.join("metrics.csv")).unwrap();
    let header = metrics.headers().unwrap().clone();
    assert_eq!(&header[0], "scenario");
    let rows: Vec<csv::StringRecord> = metrics.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    for r in &rows {
        let cf: f64 = r[col("cf")].parse().unwrap();
        assert!((0.0..=1.0).contains(&cf));
        assert_eq!(&r[col("seed")], "11");
    }
    assert_eq!(&rows[0][col("relative_efficiency")], "1");

    let jsonl = std::fs::read_to_string(out_dir.join("replicates.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = jsonl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 10);
    assert!(lines.iter().all(|v| v["y_outliers"] == 8));

    let mut path = csv::Reader::from_path(out_dir.join("tuning_path.csv")).unwrap();
    let selected = path
        .records()
        .map(|r| r.unwrap())
        .filter(|r| &r[8] == "true")
        .count();
    assert_eq!(selected, 10);

    let mut re = csv::Reader::from_path(out_dir.join("relative_efficiency.csv")).unwrap();
    assert_eq!(re.records().count(), 2);

    let toml = std::fs::read_to_string(out_dir.join("scenario.toml")).unwrap();
    assert!(toml.contains("seed = 11"));
}

#[test]
fn simulation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_file(dir.path());
    let mut outputs = Vec::new();
    for (k, threads) in ["1", "2"].iter().enumerate() {
        let out_dir = dir.path().join(format!("run{k}"));
        let status = bin()
            .args(["simulate", scenario.to_str().unwrap(), "--out", out_dir.to_str().unwrap()])
            .env("RTGEE_THREADS", threads)
            .output()
            .unwrap();
        assert!(status.status.success());
        outputs.push((
            std::fs::read(out_dir.join("metrics.csv")).unwrap(),
            std::fs::read(out_dir.join("replicates.jsonl")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);

    let out_dir = dir.path().join("reseeded");
    let out = run(&["simulate", scenario.to_str().unwrap(), "--seed", "12", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    assert_ne!(std::fs::read(out_dir.join("metrics.csv")).unwrap(), outputs[0].0);
}

#[test]
fn fit_tune_and_cv_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset_file(dir.path());
    let data = data.to_str().unwrap();

    let out = run(&["fit", data, "--method", "sgee", "--corr", "ind"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["converged"], true);
    assert_eq!(report["coefficients"].as_array().unwrap().len(), 3);
    assert!((report["coefficients"][0]["estimate"].as_f64().unwrap() - 1.5).abs() < 0.1);

    let tune_dir = dir.path().join("tune");
    let out = run(&["tune", data, "--b", "4.685", "--corr", "exc", "--out", tune_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tune_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["lambda_grid"].as_array().unwrap().len(), 31);
    for c in report["coefficients"].as_array().unwrap() {
        if c["selected"] == false {
            assert_eq!(c["estimate"].as_f64().unwrap(), 0.0);
        }
    }
    let mut path = csv::Reader::from_path(tune_dir.join("tuning_path.csv")).unwrap();
    assert_eq!(path.records().count(), 31);
    assert!(tune_dir.join("coefficients.csv").exists());

    let out = run(&[
        "cv",
        data,
        "--method",
        "rsgee",
        "--corr",
        "ar1",
        "--lambda-grid",
        "0,0.01,0.1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["cv"]["folds"], 12);
    assert_eq!(report["cv"]["tuning_frozen"], true);
    assert!(report["cv"]["mse"].as_f64().unwrap() >= 0.0);
}

#[test]
fn rejects_bad_flags() {
    let out = run(&["fit", "x.csv", "--corr", "banded"]);
    assert!(!out.status.success());
    let out = run(&["fit", "x.csv", "--method", "lasso"]);
    assert!(!out.status.success());
}
