//! Reports and CSV/JSON artifacts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use rtgee::cv::CvResult;
use rtgee::simulation::{CellResult, SimScenario};
use rtgee::tuning::PathEntry;
use rtgee::{CorrelationKind, FitResult, LongitudinalDataset, Method, ScoreFunction};

use crate::{DataArgs, ModelArgs};

#[derive(Debug, Serialize)]
pub struct Coefficient {
    pub name: String,
    /// Exactly zero when not selected.
    pub estimate: f64,
    pub std_error: f64,
    pub selected: bool,
}

#[derive(Debug, Serialize)]
pub struct PathRow {
    pub lambda: f64,
    pub b: Option<f64>,
    pub rpwd: f64,
    pub df: usize,
    pub converged: bool,
}

impl From<&PathEntry> for PathRow {
    fn from(e: &PathEntry) -> Self {
        Self {
            lambda: e.lambda,
            b: e.score.and_then(|s| s.constant()),
            rpwd: e.rpwd,
            df: e.df,
            converged: e.converged,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct CvSummary {
    pub mse: f64,
    pub folds: usize,
    pub failed_folds: Vec<String>,
    /// Lambda and score are fixed at the full-data tuned values in every fold.
    pub tuning_frozen: bool,
}

impl From<CvResult> for CvSummary {
    fn from(r: CvResult) -> Self {
        Self {
            mse: r.mse,
            folds: r.folds,
            failed_folds: r.failed,
            tuning_frozen: true,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct AnalysisReport {
    pub command: String,
    pub data: String,
    pub seed: u64,
    pub subjects: usize,
    pub observations: usize,
    pub method: Method,
    pub correlation: CorrelationKind,
    pub tau: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub lambda_grid: Vec<f64>,
    pub score_candidates: Vec<ScoreFunction>,
    pub lambda: f64,
    pub score: ScoreFunction,
    pub converged: bool,
    pub iterations: usize,
    pub phi: f64,
    pub working_correlation: Vec<Vec<f64>>,
    pub coefficients: Vec<Coefficient>,
    pub path: Vec<PathRow>,
    pub path_converged: usize,
    pub cv: Option<CvSummary>,
    /// Wall-clock time; machine dependent.
    pub seconds: f64,
}

impl AnalysisReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        command: &str,
        data_args: &DataArgs,
        model: &ModelArgs,
        data: &LongitudinalDataset,
        fit: &FitResult,
        path: Vec<PathEntry>,
        cv: Option<CvSummary>,
        seconds: f64,
    ) -> Self {
        let se = fit.std_errors();
        let coefficients = data
            .covariate_names()
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let selected = fit.active_set.contains(&j);
                Coefficient {
                    name: name.clone(),
                    estimate: if selected { fit.beta[j] } else { 0.0 },
                    std_error: if selected { se[j] } else { 0.0 },
                    selected,
                }
            })
            .collect();
        let grid: Vec<usize> = (0..data.n_times()).collect();
        let working_correlation = fit
            .correlation
            .matrix_for(&grid)
            .map(|r| r.row_iter().map(|row| row.iter().copied().collect()).collect())
            .unwrap_or_default();
        Self {
            command: command.to_string(),
            data: data_args.data.display().to_string(),
            seed: data_args.seed,
            subjects: data.n_subjects(),
            observations: data.n_obs(),
            method: model.method,
            correlation: model.corr,
            tau: model.tau,
            epsilon: model.epsilon,
            max_iter: model.max_iter,
            lambda_grid: vec![fit.lambda],
            score_candidates: vec![fit.score],
            lambda: fit.lambda,
            score: fit.score,
            converged: fit.converged,
            iterations: fit.iterations,
            phi: fit.phi,
            working_correlation,
            coefficients,
            path_converged: path.iter().filter(|e| e.converged).count(),
            path: path.iter().map(PathRow::from).collect(),
            cv,
            seconds,
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn write_coefficients(path: &Path, report: &AnalysisReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for c in &report.coefficients {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_tuning_path(path: &Path, entries: &[PathEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for e in entries {
        w.serialize(PathRow::from(e))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `metrics.csv`, `replicates.jsonl`, `tuning_path.csv`,
/// `relative_efficiency.csv` and the effective `scenario.toml`.
pub fn write_simulation(dir: &Path, scenario: &SimScenario, cell: &CellResult) -> Result<()> {
    let toml = toml::to_string(scenario).context("serializing scenario")?;
    std::fs::write(dir.join("scenario.toml"), toml).context("writing scenario.toml")?;

    let mut w = csv::Writer::from_writer(create(&dir.join("metrics.csv"))?);
    let nonzero = cell.metrics.first().map(|m| m.nonzero_index.clone()).unwrap_or_default();
    let mut header: Vec<String> = [
        "scenario",
        "seed",
        "method",
        "correlation",
        "replicates",
        "nonconverged",
        "valid",
        "c",
        "ic",
        "cf",
        "amspe",
        "mmspe",
        "amse",
        "relative_efficiency",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for j in &nonzero {
        header.push(format!("bias_{}", j + 1));
        header.push(format!("sd_{}", j + 1));
        header.push(format!("coverage_{}", j + 1));
    }
    w.write_record(&header)?;
    for m in &cell.metrics {
        let mut rec = vec![
            scenario.name.clone(),
            scenario.seed.to_string(),
            m.method.to_string(),
            m.correlation.to_string(),
            m.replicates.to_string(),
            m.nonconverged.to_string(),
            m.valid.to_string(),
            m.c.to_string(),
            m.ic.to_string(),
            m.cf.to_string(),
            m.amspe.to_string(),
            m.mmspe.to_string(),
            m.amse.to_string(),
            m.relative_efficiency.map(|v| v.to_string()).unwrap_or_default(),
        ];
        for k in 0..m.nonzero_index.len() {
            rec.push(m.bias[k].to_string());
            rec.push(m.sd[k].to_string());
            rec.push(m.coverage[k].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut jsonl = create(&dir.join("replicates.jsonl"))?;
    for r in &cell.records {
        serde_json::to_writer(&mut jsonl, r)?;
        jsonl.write_all(b"\n")?;
    }
    jsonl.flush()?;

    let mut w = csv::Writer::from_writer(create(&dir.join("tuning_path.csv"))?);
    for p in &cell.paths {
        w.serialize(p)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(create(&dir.join("relative_efficiency.csv"))?);
    w.write_record(["scenario", "method", "correlation", "amse", "relative_efficiency"])?;
    for m in &cell.metrics {
        w.write_record([
            scenario.name.clone(),
            m.method.to_string(),
            m.correlation.to_string(),
            m.amse.to_string(),
            m.relative_efficiency.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
