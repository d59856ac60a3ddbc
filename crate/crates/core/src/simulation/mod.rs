//! Monte Carlo designs, contamination and summary metrics.

mod generate;
mod scenario;

pub use generate::{
    contaminate, gen_covariates, gen_errors, generate_replicate, replicate_rng, true_correlation_matrix,
    ContaminationCounts, Replicate,
};
pub use scenario::{
    diverging_dims, ClusterSize, Contamination, Dimension, DimensionRule, ErrorDistribution, MethodSpec, Shift,
    SimScenario, TrueCorrelation,
};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::correlation::CorrelationKind;
use crate::error::{Error, Result};
use crate::method::{tune, Method};
use crate::solver::FitResult;

/// Wald interval half-width multiplier.
pub const WALD_Z: f64 = 1.96;
/// A cell is flagged invalid when more than this fraction of replicates fail.
pub const MAX_FAILURE_RATE: f64 = 0.10;

/// Selection and accuracy of one tuned fit against the truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub lambda: f64,
    pub b: Option<f64>,
    pub df: usize,
    pub iterations: usize,
    pub beta: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// True zeros estimated as zero.
    pub correct_zeros: usize,
    /// True nonzeros estimated as zero.
    pub incorrect_zeros: usize,
    pub correct_fit: bool,
    /// Wald interval coverage for each true nonzero, in index order.
    pub covered: Vec<bool>,
    pub mspe: f64,
    pub squared_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub replicate: u64,
    pub method: Method,
    pub correlation: CorrelationKind,
    pub y_outliers: usize,
    pub x_outliers: usize,
    pub error: Option<String>,
    pub fit: Option<FitSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRecord {
    pub replicate: u64,
    pub method: Method,
    pub correlation: CorrelationKind,
    pub lambda: f64,
    pub b: Option<f64>,
    pub rpwd: f64,
    pub df: usize,
    pub converged: bool,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimMetrics {
    pub method: Method,
    pub correlation: CorrelationKind,
    pub replicates: usize,
    pub nonconverged: usize,
    /// False when more than 10% of replicates failed.
    pub valid: bool,
    /// Mean number of true zeros estimated as zero.
    pub c: f64,
    /// Mean number of true nonzeros estimated as zero.
    pub ic: f64,
    /// Proportion of replicates with exact support recovery.
    pub cf: f64,
    /// Indices of the true nonzeros the per-coefficient entries refer to.
    pub nonzero_index: Vec<usize>,
    pub bias: Vec<f64>,
    pub sd: Vec<f64>,
    pub coverage: Vec<f64>,
    pub amspe: f64,
    pub mmspe: f64,
    pub amse: f64,
    /// `AMSE(SGEE) / AMSE(method)` under the same working correlation, when
    /// SGEE is part of the cell.
    pub relative_efficiency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub records: Vec<ReplicateRecord>,
    pub paths: Vec<PathRecord>,
    pub metrics: Vec<SimMetrics>,
}

/// Compares a fit with the true coefficients. Prediction error uses the
/// uncontaminated design: `mean_ij (x_ij'(beta_hat - beta_0))^2`.
pub fn summarize_fit(fit: &FitResult, replicate: &Replicate) -> FitSummary {
    let truth = &replicate.beta_true;
    let se = fit.std_errors();
    let mut correct_zeros = 0;
    let mut incorrect_zeros = 0;
    let mut covered = Vec::new();
    for j in 0..truth.len() {
        let shrunk = !fit.active_set.contains(&j);
        if truth[j] == 0.0 {
            if shrunk {
                correct_zeros += 1;
            }
        } else {
            if shrunk {
                incorrect_zeros += 1;
            }
            covered.push((fit.beta[j] - truth[j]).abs() <= WALD_Z * se[j]);
        }
    }
    let n_zero = truth.iter().filter(|b| **b == 0.0).count();
    let diff: DVector<f64> = &fit.beta - truth;
    let pred = &replicate.clean_design * &diff;
    FitSummary {
        lambda: fit.lambda,
        b: match fit.score {
            crate::ScoreFunction::Tukey { b } => Some(b),
            _ => None,
        },
        df: fit.df(),
        iterations: fit.iterations,
        beta: fit.beta.iter().copied().collect(),
        std_errors: se.iter().copied().collect(),
        correct_zeros,
        incorrect_zeros,
        correct_fit: correct_zeros == n_zero && incorrect_zeros == 0,
        covered,
        mspe: pred.norm_squared() / pred.len() as f64,
        squared_error: diff.norm_squared(),
    }
}

/// Generates replicate `index` and tunes every method of the scenario on it.
pub fn run_replicate(scenario: &SimScenario, index: u64) -> Result<(Vec<ReplicateRecord>, Vec<PathRecord>)> {
    let rep = generate_replicate(scenario, index)?;
    let mut records = Vec::with_capacity(scenario.methods.len());
    let mut paths = Vec::new();
    for spec in &scenario.methods {
        let outcome = tune(&rep.data, spec.method, spec.correlation, &scenario.tuning);
        let (error, fit) = match outcome {
            Ok(tuned) => {
                for entry in &tuned.path {
                    paths.push(PathRecord {
                        replicate: index,
                        method: spec.method,
                        correlation: spec.correlation,
                        lambda: entry.lambda,
                        b: entry.score.and_then(|s| match s {
                            crate::ScoreFunction::Tukey { b } => Some(b),
                            _ => None,
                        }),
                        rpwd: entry.rpwd,
                        df: entry.df,
                        converged: entry.converged,
                        selected: entry.lambda == tuned.lambda_opt,
                    });
                }
                (None, Some(summarize_fit(tuned.best(), &rep)))
            }
            Err(e) => {
                log::warn!("replicate {index} {}/{}: {e}", spec.method, spec.correlation);
                (Some(e.to_string()), None)
            }
        };
        records.push(ReplicateRecord {
            replicate: index,
            method: spec.method,
            correlation: spec.correlation,
            y_outliers: rep.counts.y_cells,
            x_outliers: rep.counts.x_cells,
            error,
            fit,
        });
    }
    Ok((records, paths))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Aggregates the records of one method/correlation pair. Failed
/// replicates are excluded and counted.
pub fn aggregate(
    method: Method,
    correlation: CorrelationKind,
    records: &[&ReplicateRecord],
    beta_true: &[f64],
) -> Result<SimMetrics> {
    let fits: Vec<&FitSummary> = records.iter().filter_map(|r| r.fit.as_ref()).collect();
    if fits.is_empty() {
        return Err(Error::NoConvergence(format!(
            "all {} replicates failed for {method}/{correlation}",
            records.len()
        )));
    }
    let k = fits.len() as f64;
    let nonzero_index: Vec<usize> = (0..beta_true.len()).filter(|&j| beta_true[j] != 0.0).collect();
    let mut bias = Vec::with_capacity(nonzero_index.len());
    let mut sd = Vec::with_capacity(nonzero_index.len());
    let mut coverage = Vec::with_capacity(nonzero_index.len());
    for (slot, &j) in nonzero_index.iter().enumerate() {
        let est: Vec<f64> = fits.iter().map(|f| f.beta[j]).collect();
        let m = mean(&est);
        bias.push(m - beta_true[j]);
        let var = if est.len() > 1 {
            est.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (k - 1.0)
        } else {
            0.0
        };
        sd.push(var.sqrt());
        coverage.push(fits.iter().filter(|f| f.covered[slot]).count() as f64 / k);
    }
    let mut mspe: Vec<f64> = fits.iter().map(|f| f.mspe).collect();
    let amspe = mean(&mspe);
    let mmspe = crate::residuals::median_in_place(&mut mspe);
    let nonconverged = records.len() - fits.len();
    Ok(SimMetrics {
        method,
        correlation,
        replicates: records.len(),
        nonconverged,
        valid: (nonconverged as f64) <= MAX_FAILURE_RATE * records.len() as f64,
        c: fits.iter().map(|f| f.correct_zeros as f64).sum::<f64>() / k,
        ic: fits.iter().map(|f| f.incorrect_zeros as f64).sum::<f64>() / k,
        cf: fits.iter().filter(|f| f.correct_fit).count() as f64 / k,
        nonzero_index,
        bias,
        sd,
        coverage,
        amspe,
        mmspe,
        amse: fits.iter().map(|f| f.squared_error).sum::<f64>() / k,
        relative_efficiency: None,
    })
}

/// Fills in `AMSE(SGEE) / AMSE(method)` for every entry whose working
/// correlation also has an SGEE entry.
pub fn attach_relative_efficiency(metrics: &mut [SimMetrics]) {
    let reference: Vec<(CorrelationKind, f64)> = metrics
        .iter()
        .filter(|m| m.method == Method::Sgee)
        .map(|m| (m.correlation, m.amse))
        .collect();
    for m in metrics.iter_mut() {
        m.relative_efficiency = reference
            .iter()
            .find(|(c, _)| *c == m.correlation)
            .map(|(_, sgee)| if m.method == Method::Sgee { 1.0 } else { sgee / m.amse });
    }
}

/// Runs every replicate of a scenario (in parallel on the current rayon
/// pool) and aggregates per method. Results do not depend on the number
/// of threads.
pub fn run_cell(scenario: &SimScenario) -> Result<CellResult> {
    scenario.validate()?;
    let beta_true = scenario.beta_true()?;
    let per_rep: Vec<(Vec<ReplicateRecord>, Vec<PathRecord>)> = (0..scenario.replicates as u64)
        .into_par_iter()
        .map(|r| run_replicate(scenario, r))
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::new();
    let mut paths = Vec::new();
    for (r, p) in per_rep {
        records.extend(r);
        paths.extend(p);
    }
    let mut metrics = Vec::with_capacity(scenario.methods.len());
    for spec in &scenario.methods {
        let subset: Vec<&ReplicateRecord> = records
            .iter()
            .filter(|r| r.method == spec.method && r.correlation == spec.correlation)
            .collect();
        metrics.push(aggregate(spec.method, spec.correlation, &subset, &beta_true)?);
    }
    attach_relative_efficiency(&mut metrics);
    Ok(CellResult { records, paths, metrics })
}
