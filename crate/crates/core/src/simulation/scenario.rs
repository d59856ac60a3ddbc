use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationKind;
use crate::error::{Error, Result};
use crate::method::{Method, TuningOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorDistribution {
    Normal,
    /// Multivariate Student t with 3 degrees of freedom.
    T3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrueCorrelation {
    Exchangeable,
    Ar1,
}

/// Distribution of the amount added to a contaminated response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shift {
    Normal { mean: f64, sd: f64 },
    Constant { value: f64 },
}

/// Additive contamination of randomly chosen observation cells. The
/// response cells are drawn first, then the covariate cells; x-outliers
/// add a `t_3` draw to the first covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Contamination {
    pub y_rate: f64,
    pub y_shift: Shift,
    pub x_rate: f64,
}

impl Default for Contamination {
    fn default() -> Self {
        Self {
            y_rate: 0.0,
            y_shift: Shift::Normal { mean: 10.0, sd: 1.0 },
            x_rate: 0.0,
        }
    }
}

impl Contamination {
    pub fn none() -> Self {
        Self::default()
    }

    /// Named contamination cases: `1`, `2`, `3`, `2'`, `3'`, `2''`, `3''`.
    pub fn case(name: &str) -> Result<Self> {
        let shifted = Shift::Normal { mean: 10.0, sd: 1.0 };
        let plus5 = Shift::Constant { value: 5.0 };
        let (y_rate, y_shift, x_rate) = match name.trim() {
            "1" => (0.0, shifted, 0.0),
            "2" => (0.2, shifted, 0.0),
            "3" => (0.2, shifted, 0.1),
            "2'" => (0.1, shifted, 0.0),
            "3'" => (0.1, shifted, 0.1),
            "2''" => (0.1, plus5, 0.0),
            "3''" => (0.1, plus5, 0.05),
            other => return Err(Error::InvalidParameter(format!("unknown contamination case {other:?}"))),
        };
        Ok(Self { y_rate, y_shift, x_rate })
    }

    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [("y_rate", self.y_rate), ("x_rate", self.x_rate)] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1], got {rate}")));
            }
        }
        if let Shift::Normal { sd, .. } = self.y_shift {
            if !(sd >= 0.0) {
                return Err(Error::InvalidParameter(format!("shift sd must be >= 0, got {sd}")));
            }
        }
        Ok(())
    }
}

/// Covariate dimension: fixed, or `p_n = floor(4 n^0.4) - 5` with
/// `s_n = floor(p_n / 5)` nonzero coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Dimension {
    Fixed(usize),
    Rule(DimensionRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimensionRule {
    Diverging,
}

/// Observations per subject: a constant, or uniform on `min..=max`
/// occupying times `1..=m_i` of a grid of length `max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClusterSize {
    Fixed(usize),
    Uniform { min: usize, max: usize },
}

impl ClusterSize {
    pub fn max(&self) -> usize {
        match *self {
            ClusterSize::Fixed(m) => m,
            ClusterSize::Uniform { max, .. } => max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: Method,
    pub correlation: CorrelationKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimScenario {
    pub name: String,
    pub n: usize,
    pub p: Dimension,
    pub m: ClusterSize,
    /// Leading nonzero coefficients, repeated to fill the signal block when
    /// the dimension follows the diverging rule.
    #[serde(default = "default_signal")]
    pub signal: Vec<f64>,
    pub errors: ErrorDistribution,
    #[serde(default = "default_true_corr")]
    pub true_correlation: TrueCorrelation,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_rho")]
    pub covariate_rho: f64,
    #[serde(default)]
    pub contamination: Contamination,
    pub seed: u64,
    pub replicates: usize,
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub tuning: TuningOptions,
}

fn default_signal() -> Vec<f64> {
    vec![0.7, 0.7, -0.4]
}

fn default_true_corr() -> TrueCorrelation {
    TrueCorrelation::Exchangeable
}

fn default_alpha() -> f64 {
    0.7
}

fn default_rho() -> f64 {
    0.5
}

/// `(p_n, s_n) = (floor(4 n^0.4) - 5, floor(p_n / 5))`.
pub fn diverging_dims(n: usize) -> Result<(usize, usize)> {
    let raw = (4.0 * (n as f64).powf(0.4)).floor() as i64 - 5;
    if raw < 1 {
        return Err(Error::InvalidParameter(format!("n = {n} gives no covariates under the diverging rule")));
    }
    let p = raw as usize;
    Ok((p, p / 5))
}

impl SimScenario {
    /// Design with `n` subjects, `m` observations each, `p` covariates and
    /// true coefficients `(0.7, 0.7, -0.4, 0, ...)`, no contamination, all
    /// three methods under the given working correlations.
    pub fn basic(name: &str, n: usize, p: usize, m: usize, errors: ErrorDistribution) -> Self {
        Self {
            name: name.to_string(),
            n,
            p: Dimension::Fixed(p),
            m: ClusterSize::Fixed(m),
            signal: default_signal(),
            errors,
            true_correlation: TrueCorrelation::Exchangeable,
            alpha: 0.7,
            covariate_rho: 0.5,
            contamination: Contamination::none(),
            seed: 1,
            replicates: 100,
            methods: Vec::new(),
            tuning: TuningOptions::default(),
        }
    }

    /// `n = 100`, `p = 20`, `m = 10`.
    pub fn small_p(errors: ErrorDistribution, case: &str) -> Result<Self> {
        let mut s = Self::basic(&format!("small_p_{errors:?}_case{case}"), 100, 20, 10, errors);
        s.contamination = Contamination::case(case)?;
        Ok(s)
    }

    /// `n = 200` with the diverging dimension rule and 2 to 5 observations
    /// per subject.
    pub fn diverging_p(errors: ErrorDistribution, case: &str) -> Result<Self> {
        let mut s = Self::basic(&format!("diverging_p_{errors:?}_case{case}"), 200, 0, 0, errors);
        s.p = Dimension::Rule(DimensionRule::Diverging);
        s.m = ClusterSize::Uniform { min: 2, max: 5 };
        s.contamination = Contamination::case(case)?;
        Ok(s)
    }

    /// `n = 100`, `p = 300`, `m = 10`.
    pub fn large_p(errors: ErrorDistribution, case: &str) -> Result<Self> {
        let mut s = Self::basic(&format!("large_p_{errors:?}_case{case}"), 100, 300, 10, errors);
        s.contamination = Contamination::case(case)?;
        Ok(s)
    }

    pub fn with_methods(mut self, methods: &[(Method, CorrelationKind)]) -> Self {
        self.methods = methods
            .iter()
            .map(|&(method, correlation)| MethodSpec { method, correlation })
            .collect();
        self
    }

    pub fn with_replicates(mut self, replicates: usize, seed: u64) -> Self {
        self.replicates = replicates;
        self.seed = seed;
        self
    }

    /// `(p, number of nonzero coefficients)`.
    pub fn dims(&self) -> Result<(usize, usize)> {
        match self.p {
            Dimension::Fixed(p) => Ok((p, self.signal.len().min(p))),
            Dimension::Rule(DimensionRule::Diverging) => diverging_dims(self.n),
        }
    }

    pub fn beta_true(&self) -> Result<Vec<f64>> {
        let (p, s) = self.dims()?;
        if self.signal.is_empty() && s > 0 {
            return Err(Error::InvalidParameter("signal pattern is empty".into()));
        }
        let mut beta = vec![0.0; p];
        for (j, b) in beta.iter_mut().take(s).enumerate() {
            *b = self.signal[j % self.signal.len()];
        }
        Ok(beta)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 subjects, got {}", self.n)));
        }
        let (p, _) = self.dims()?;
        if p == 0 {
            return Err(Error::InvalidParameter("p must be positive".into()));
        }
        match self.m {
            ClusterSize::Fixed(m) if m == 0 => {
                return Err(Error::InvalidParameter("m must be positive".into()));
            }
            ClusterSize::Uniform { min, max } if min == 0 || min > max => {
                return Err(Error::InvalidParameter(format!("invalid cluster size range {min}..={max}")));
            }
            _ => {}
        }
        if !(self.alpha > -1.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (-1, 1), got {}", self.alpha)));
        }
        if !(self.covariate_rho > -1.0 && self.covariate_rho < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "covariate_rho must lie in (-1, 1), got {}",
                self.covariate_rho
            )));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidParameter("replicates must be positive".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::EmptyInput("methods"));
        }
        self.contamination.validate()
    }
}
