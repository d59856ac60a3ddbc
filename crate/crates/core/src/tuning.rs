//! Two-level tuning: the score constant by the determinant of the sandwich
//! covariance, then `lambda` by a robust penalized weighted deviance.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::score::ScoreFunction;
use crate::solver::{FitResult, Problem};

/// Fixed Tukey constant for large problems where searching the grid is
/// too costly.
pub const RECOMMENDED_TUKEY_B: f64 = 7.0414;

const GRID_POINTS: usize = 30;
const GRID_RATIO: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct PathEntry {
    pub lambda: f64,
    /// Selected score at this `lambda`; `None` when no candidate converged.
    pub score: Option<ScoreFunction>,
    pub rpwd: f64,
    pub df: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct TuningResult {
    pub lambda_opt: f64,
    pub score_opt: ScoreFunction,
    pub path: Vec<PathEntry>,
    /// Fits aligned with `path`; `None` where no candidate converged.
    pub fits: Vec<Option<FitResult>>,
    best: usize,
}

impl TuningResult {
    /// Tukey constant of the selected score, if it is a Tukey score.
    pub fn b_opt(&self) -> Option<f64> {
        match self.score_opt {
            ScoreFunction::Tukey { b } => Some(b),
            _ => None,
        }
    }

    pub fn best(&self) -> &FitResult {
        self.fits[self.best].as_ref().expect("selected fit exists")
    }

    pub fn into_best(mut self) -> FitResult {
        self.fits.swap_remove(self.best).expect("selected fit exists")
    }
}

/// `log det` of the covariance restricted to the active set; 0 for an
/// empty active set. Singular matrices give `-inf`.
pub fn active_log_det(fit: &FitResult) -> f64 {
    if fit.active_set.is_empty() {
        return 0.0;
    }
    let lu = fit.active_covariance().lu();
    let u = lu.u();
    let mut log_det = 0.0;
    for k in 0..u.nrows() {
        let d = u[(k, k)].abs();
        if d == 0.0 {
            return f64::NEG_INFINITY;
        }
        log_det += d.ln();
    }
    log_det
}

/// Fits every candidate score at `lambda` and keeps the converged fit with
/// the smallest covariance determinant. Candidates are visited in
/// increasing order of their constant, so ties go to the smaller one.
pub fn select_score(problem: &Problem, lambda: f64, candidates: &[ScoreFunction]) -> Result<(ScoreFunction, FitResult)> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("score candidates"));
    }
    let mut order: Vec<ScoreFunction> = candidates.to_vec();
    order.sort_by(|a, b| {
        let ka = a.constant().unwrap_or(f64::INFINITY);
        let kb = b.constant().unwrap_or(f64::INFINITY);
        ka.total_cmp(&kb)
    });
    let mut best: Option<(f64, ScoreFunction, FitResult)> = None;
    let mut last_error = None;
    for score in order {
        let fit = match problem.fit(lambda, score) {
            Ok(fit) if fit.converged => fit,
            Ok(fit) => {
                last_error = Some(Error::NoConvergence(format!(
                    "{score} at lambda {lambda} after {} iterations",
                    fit.iterations
                )));
                continue;
            }
            Err(e) => {
                last_error = Some(e);
                continue;
            }
        };
        let mut crit = active_log_det(&fit);
        if crit.is_nan() {
            crit = f64::INFINITY;
        }
        if best.as_ref().is_none_or(|(c, _, _)| crit < *c) {
            best = Some((crit, score, fit));
        }
    }
    match best {
        Some((_, score, fit)) => Ok((score, fit)),
        None => Err(last_error.unwrap_or_else(|| Error::NoConvergence(format!("no candidate at lambda {lambda}")))),
    }
}

/// [`select_score`] over Tukey constants.
pub fn select_b(problem: &Problem, lambda: f64, candidates: &[f64]) -> Result<(f64, FitResult)> {
    let scores: Vec<ScoreFunction> = candidates.iter().map(|&b| ScoreFunction::Tukey { b }).collect();
    for s in &scores {
        s.validate()?;
    }
    let (score, fit) = select_score(problem, lambda, &scores)?;
    match score {
        ScoreFunction::Tukey { b } => Ok((b, fit)),
        _ => unreachable!("only Tukey candidates"),
    }
}

/// `sum_i h_i' R_i^{-1} h_i + df log n`, with `h = W psi(e) / kappa1`
/// evaluated at the fitted estimate under the fit's own score and working
/// correlation.
///
/// Two normalizations keep the path points comparable. Residuals are
/// standardized by the dispersion of the initial estimate (with each fit's
/// own dispersion the deviance term is nearly constant in `lambda`), and
/// `psi_b` is divided by its Gaussian slope `kappa1(b)` so that scores with
/// different `b` share the residual scale (`sum psi_b^2` alone decreases
/// with `b` and favours whichever `lambda` happened to pick a small `b`).
pub fn rpwd(problem: &Problem, fit: &FitResult) -> Result<f64> {
    let phi = problem.reference_phi().unwrap_or(fit.phi);
    let h = problem.robust_residuals(fit, &fit.score, phi);
    let layout = problem.data().layout();
    let inverses = fit.correlation.pattern_inverses(layout)?;
    let mut total = 0.0;
    for i in 0..layout.n_subjects() {
        let rows = layout.rows(i);
        let hi = h.rows(rows.start, rows.len());
        total += hi.dot(&(&inverses[layout.pattern_of(i)] * hi));
    }
    let kappa1 = fit.score.gaussian_moments().kappa1;
    Ok(total / (kappa1 * kappa1) + rpwd_penalty(fit.df(), layout.n_subjects()))
}

/// `df log n`.
pub fn rpwd_penalty(df: usize, n_subjects: usize) -> f64 {
    df as f64 * (n_subjects as f64).ln()
}

/// Runs [`select_score`] and [`rpwd`] at every grid value, in grid order,
/// and returns the converged entry with the smallest criterion (first one
/// on ties).
pub fn select_lambda(problem: &Problem, grid: &[f64], candidates: &[ScoreFunction]) -> Result<TuningResult> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("lambda grid"));
    }
    if candidates.is_empty() {
        return Err(Error::EmptyInput("score candidates"));
    }
    let mut path = Vec::with_capacity(grid.len());
    let mut fits = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, f64)> = None;
    let mut last_error = None;
    let mut previous: Option<ScoreFunction> = None;
    for &lambda in grid {
        let df_shape = problem.delta(lambda).iter().filter(|d| **d < 1.0).count();
        // With nothing active the determinant is 1 for every candidate, so
        // the score carries over from the preceding grid point.
        let carried;
        let pool = match previous {
            Some(s) if df_shape == 0 => {
                carried = [s];
                &carried[..]
            }
            _ => candidates,
        };
        let outcome = select_score(problem, lambda, pool).and_then(|(s, f)| rpwd(problem, &f).map(|r| (s, f, r)));
        match outcome {
            Ok((score, fit, value)) => {
                let idx = path.len();
                path.push(PathEntry {
                    lambda,
                    score: Some(score),
                    rpwd: value,
                    df: fit.df(),
                    converged: true,
                });
                fits.push(Some(fit));
                previous = Some(score);
                if value.is_finite() && best.is_none_or(|(_, v)| value < v) {
                    best = Some((idx, value));
                }
            }
            Err(e) => {
                log::debug!("lambda {lambda}: {e}");
                path.push(PathEntry {
                    lambda,
                    score: None,
                    rpwd: f64::NAN,
                    df: df_shape,
                    converged: false,
                });
                fits.push(None);
                last_error = Some(e);
            }
        }
    }
    let (best, _) = best.ok_or_else(|| {
        last_error.unwrap_or_else(|| Error::NoConvergence("no lambda produced a finite criterion".into()))
    })?;
    Ok(TuningResult {
        lambda_opt: path[best].lambda,
        score_opt: path[best].score.expect("converged entry"),
        path,
        fits,
        best,
    })
}

/// `0` followed by 30 log-spaced values from `1e-4 lambda_max` to
/// `lambda_max = max_j |beta0_j|^(1 + tau)`, the smallest value that
/// shrinks every coordinate.
pub fn default_lambda_grid(beta0: &DVector<f64>, tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be > 0, got {tau}")));
    }
    let lambda_max = beta0.iter().map(|b| b.abs().powf(1.0 + tau)).fold(0.0, f64::max);
    if !(lambda_max > 0.0 && lambda_max.is_finite()) {
        return Err(Error::DegenerateScale(format!(
            "initial estimate gives lambda_max = {lambda_max}"
        )));
    }
    let lo = (GRID_RATIO * lambda_max).ln();
    let hi = lambda_max.ln();
    let mut grid = Vec::with_capacity(GRID_POINTS + 1);
    grid.push(0.0);
    for k in 0..GRID_POINTS {
        let v = if k + 1 == GRID_POINTS {
            lambda_max
        } else {
            (lo + (hi - lo) * k as f64 / (GRID_POINTS - 1) as f64).exp()
        };
        grid.push(v);
    }
    Ok(grid)
}
