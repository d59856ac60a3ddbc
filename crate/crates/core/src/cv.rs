//! Leave-one-subject-out prediction error.

use rayon::prelude::*;
use serde::Serialize;

use crate::correlation::CorrelationKind;
use crate::data::LongitudinalDataset;
use crate::error::{Error, Result};
use crate::method::{Method, TuningOptions};
use crate::score::ScoreFunction;
use crate::solver::solve;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    /// Mean over successful folds of `||Y_i - X_i beta_(-i)||^2`.
    pub mse: f64,
    pub folds: usize,
    /// Subjects whose fold failed to fit; they are left out of `mse`.
    pub failed: Vec<String>,
}

/// Leave-one-subject-out `MSE_CV` with `lambda` and `score` held fixed at
/// the given values (normally the full-data tuned ones). Each fold refits
/// with the method's other settings; folds run in parallel and are reduced
/// in subject order.
pub fn mse_cv(
    data: &LongitudinalDataset,
    method: Method,
    correlation: CorrelationKind,
    opts: &TuningOptions,
    lambda: f64,
    score: ScoreFunction,
) -> Result<CvResult> {
    let n = data.n_subjects();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("cross-validation needs at least 2 subjects, got {n}")));
    }
    score.validate()?;
    let mut config = method.fit_config(correlation, opts);
    config.lambda = lambda;
    config.score = score;
    config.validate()?;

    let outcomes: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let train = data.filter_subjects(|j| j != i).ok()?;
            let fit = match solve(&train, &config) {
                Ok(fit) if fit.converged => fit,
                Ok(_) => {
                    log::debug!("fold {i}: no convergence");
                    return None;
                }
                Err(e) => {
                    log::debug!("fold {i}: {e}");
                    return None;
                }
            };
            let rows = data.layout().rows(i);
            let x = data.design().rows(rows.start, rows.len());
            let y = data.response().rows(rows.start, rows.len());
            Some((y - x * &fit.beta).norm_squared())
        })
        .collect();

    let mut total = 0.0;
    let mut ok = 0usize;
    let mut failed = Vec::new();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Some(v) => {
                total += v;
                ok += 1;
            }
            None => failed.push(data.subject_ids()[i].clone()),
        }
    }
    if ok == 0 {
        return Err(Error::NoConvergence("every cross-validation fold failed".into()));
    }
    Ok(CvResult {
        mse: total / ok as f64,
        folds: n,
        failed,
    })
}
