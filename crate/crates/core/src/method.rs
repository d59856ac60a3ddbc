//! Named estimator presets and the tuned fit used by the CLI, the
//! simulations and cross-validation.

use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationKind;
use crate::data::LongitudinalDataset;
use crate::error::{Error, Result};
use crate::leverage::LeverageConfig;
use crate::score::{candidate_b_grid, ScoreFunction, HUBER_DEFAULT_C};
use crate::solver::{FitConfig, InitialEstimator, Problem};
use crate::tuning::{default_lambda_grid, select_lambda, TuningResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Least-squares score, no downweighting.
    Sgee,
    /// Huber score with `c = 1.345`.
    Rsgee,
    /// Tukey biweight score with leverage weights.
    Rtgee,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Sgee, Method::Rsgee, Method::Rtgee];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Sgee => "sgee",
            Method::Rsgee => "rsgee",
            Method::Rtgee => "rtgee",
        }
    }

    pub fn fit_config(&self, correlation: CorrelationKind, opts: &TuningOptions) -> FitConfig {
        let (score, leverage, initial) = match self {
            Method::Sgee => (ScoreFunction::Identity, None, InitialEstimator::LeastSquares),
            Method::Rsgee => (ScoreFunction::Huber { c: HUBER_DEFAULT_C }, None, InitialEstimator::default()),
            Method::Rtgee => (
                ScoreFunction::Tukey {
                    b: opts.fixed_b.unwrap_or(crate::tuning::RECOMMENDED_TUKEY_B),
                },
                Some(opts.leverage),
                InitialEstimator::default(),
            ),
        };
        FitConfig {
            lambda: 0.0,
            tau: opts.tau,
            score,
            correlation,
            leverage,
            epsilon: opts.epsilon,
            max_iter: opts.max_iter,
            initial,
        }
    }

    /// Scores searched at each `lambda`.
    pub fn score_candidates(&self, opts: &TuningOptions) -> Result<Vec<ScoreFunction>> {
        match self {
            Method::Sgee => Ok(vec![ScoreFunction::Identity]),
            Method::Rsgee => Ok(vec![ScoreFunction::Huber { c: HUBER_DEFAULT_C }]),
            Method::Rtgee => {
                let grid = match opts.fixed_b {
                    Some(b) => vec![b],
                    None => candidate_b_grid(opts.b_grid_min_eff)?,
                };
                if grid.is_empty() {
                    return Err(Error::InvalidParameter(format!(
                        "no Tukey constant reaches efficiency {}",
                        opts.b_grid_min_eff
                    )));
                }
                let scores: Vec<ScoreFunction> = grid.into_iter().map(|b| ScoreFunction::Tukey { b }).collect();
                for s in &scores {
                    s.validate()?;
                }
                Ok(scores)
            }
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgee" => Ok(Method::Sgee),
            "rsgee" => Ok(Method::Rsgee),
            "rtgee" => Ok(Method::Rtgee),
            other => Err(Error::InvalidParameter(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningOptions {
    pub tau: f64,
    /// Explicit `lambda` grid; the data-driven default is used when absent.
    pub lambda_grid: Option<Vec<f64>>,
    /// Minimum Gaussian efficiency of the Tukey constants searched.
    pub b_grid_min_eff: f64,
    /// Use this single Tukey constant instead of searching.
    pub fixed_b: Option<f64>,
    pub max_iter: usize,
    pub epsilon: f64,
    #[serde(skip)]
    pub leverage: LeverageConfig,
}

impl Default for TuningOptions {
    fn default() -> Self {
        Self {
            tau: 1.0,
            lambda_grid: None,
            b_grid_min_eff: 0.7,
            fixed_b: None,
            max_iter: 100,
            epsilon: 1e-8,
            leverage: LeverageConfig::default(),
        }
    }
}

/// Tunes `(lambda, score)` for one method and working correlation.
pub fn tune(
    data: &LongitudinalDataset,
    method: Method,
    correlation: CorrelationKind,
    opts: &TuningOptions,
) -> Result<TuningResult> {
    let config = method.fit_config(correlation, opts);
    let problem = Problem::new(data, &config)?;
    let grid = match &opts.lambda_grid {
        Some(g) => {
            if g.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::InvalidParameter("lambda grid values must be finite and >= 0".into()));
            }
            g.clone()
        }
        None => default_lambda_grid(problem.initial(), opts.tau)?,
    };
    let candidates = method.score_candidates(opts)?;
    select_lambda(&problem, &grid, &candidates)
}
