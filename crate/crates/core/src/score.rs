//! Score functions for the robust estimating equations.
//!
//! Three kernels are supported: the identity (ordinary GEE), Huber's
//! clipped-linear score and Tukey's redescending biweight score. Each
//! kernel also exposes its moments under a standard normal reference,
//! which the solver uses for the expected sensitivity matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Conventional Huber tuning constant (95% Gaussian efficiency).
pub const HUBER_DEFAULT_C: f64 = 1.345;

/// Efficiency targets used to build the candidate grid for the Tukey constant.
pub const EFFICIENCY_TARGETS: [f64; 6] = [0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

const QUADRATURE_MIN_NODES: usize = 4001;
const QUADRATURE_MAX_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScoreFunction {
    Identity,
    Huber { c: f64 },
    Tukey { b: f64 },
}

/// Moments of a score function under `Z ~ N(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMoments {
    /// `E[psi'(Z)]`
    pub kappa1: f64,
    /// `E[psi(Z)^2]`
    pub kappa2: f64,
    /// `kappa1^2 / kappa2`
    pub efficiency: f64,
}

impl ScoreFunction {
    pub fn huber(c: f64) -> Result<Self> {
        let score = ScoreFunction::Huber { c };
        score.validate()?;
        Ok(score)
    }

    pub fn tukey(b: f64) -> Result<Self> {
        let score = ScoreFunction::Tukey { b };
        score.validate()?;
        Ok(score)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ScoreFunction::Identity => Ok(()),
            ScoreFunction::Huber { c: k } | ScoreFunction::Tukey { b: k } => {
                if k.is_finite() && k > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "score constant must be positive and finite, got {k}"
                    )))
                }
            }
        }
    }

    /// The tuning constant, if the kernel has one.
    pub fn constant(&self) -> Option<f64> {
        match *self {
            ScoreFunction::Identity => None,
            ScoreFunction::Huber { c } => Some(c),
            ScoreFunction::Tukey { b } => Some(b),
        }
    }

    #[inline]
    pub fn psi(&self, u: f64) -> f64 {
        match *self {
            ScoreFunction::Identity => u,
            ScoreFunction::Huber { c } => u.clamp(-c, c),
            ScoreFunction::Tukey { b } => {
                if u.abs() >= b {
                    0.0
                } else {
                    let s = 1.0 - (u / b) * (u / b);
                    u * s * s
                }
            }
        }
    }

    /// Derivative of [`psi`](Self::psi). At the Huber kinks `|u| = c` the
    /// derivative is taken as 0.
    #[inline]
    pub fn psi_prime(&self, u: f64) -> f64 {
        match *self {
            ScoreFunction::Identity => 1.0,
            ScoreFunction::Huber { c } => {
                if u.abs() < c {
                    1.0
                } else {
                    0.0
                }
            }
            ScoreFunction::Tukey { b } => {
                if u.abs() >= b {
                    0.0
                } else {
                    let t = (u / b) * (u / b);
                    (1.0 - t) * (1.0 - 5.0 * t)
                }
            }
        }
    }

    /// IRLS weight `psi(u) / u`, with the limit 1 at the origin.
    #[inline]
    pub fn weight(&self, u: f64) -> f64 {
        match *self {
            ScoreFunction::Identity => 1.0,
            ScoreFunction::Huber { c } => {
                let a = u.abs();
                if a <= c {
                    1.0
                } else {
                    c / a
                }
            }
            ScoreFunction::Tukey { b } => {
                if u.abs() >= b {
                    0.0
                } else {
                    let s = 1.0 - (u / b) * (u / b);
                    s * s
                }
            }
        }
    }

    /// `kappa1`, `kappa2` and the Gaussian efficiency by composite Simpson
    /// quadrature against the standard normal density. The integration range
    /// is `[-L, L]` with `L = max(8, constant)`, split at the points where the
    /// kernel loses smoothness so every piece has a smooth integrand.
    pub fn gaussian_moments(&self) -> GaussianMoments {
        let limit = self.constant().map_or(8.0, |k| k.max(8.0));
        let pieces: Vec<(f64, f64)> = match *self {
            ScoreFunction::Identity => vec![(-limit, limit)],
            ScoreFunction::Tukey { b } => {
                let edge = b.min(limit);
                vec![(-edge, edge)]
            }
            ScoreFunction::Huber { c } => {
                if c >= limit {
                    vec![(-limit, limit)]
                } else {
                    vec![(-limit, -c), (-c, c), (c, limit)]
                }
            }
        };
        let mut kappa1 = 0.0;
        let mut kappa2 = 0.0;
        for &(lo, hi) in &pieces {
            // E[psi'(Z)] = E[Z psi(Z)] for absolutely continuous psi; the right
            // side has no jumps at the Huber kinks
            kappa1 += simpson(|u| u * self.psi(u) * std_normal_pdf(u), lo, hi);
            kappa2 += simpson(
                |u| {
                    let p = self.psi(u);
                    p * p * std_normal_pdf(u)
                },
                lo,
                hi,
            );
        }
        GaussianMoments {
            kappa1,
            kappa2,
            efficiency: kappa1 * kappa1 / kappa2,
        }
    }
}

impl std::fmt::Display for ScoreFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScoreFunction::Identity => write!(f, "identity"),
            ScoreFunction::Huber { c } => write!(f, "huber({c})"),
            ScoreFunction::Tukey { b } => write!(f, "tukey({b})"),
        }
    }
}

pub(crate) fn std_normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Composite Simpson rule with an odd node count of at least 4001.
pub(crate) fn simpson<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> f64 {
    let width = hi - lo;
    if width <= 0.0 {
        return 0.0;
    }
    let mut intervals = ((width / QUADRATURE_MAX_STEP).ceil() as usize).max(QUADRATURE_MIN_NODES - 1);
    if intervals % 2 == 1 {
        intervals += 1;
    }
    let h = width / intervals as f64;
    let mut acc = f(lo) + f(hi);
    for k in 1..intervals {
        let coef = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += coef * f(lo + k as f64 * h);
    }
    acc * h / 3.0
}

/// Gaussian efficiency of Tukey's biweight with constant `b`.
pub fn tukey_efficiency(b: f64) -> f64 {
    ScoreFunction::Tukey { b }.gaussian_moments().efficiency
}

/// Tukey constant whose Gaussian efficiency equals `target`, by bisection.
pub fn tukey_constant_for_efficiency(target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target efficiency must lie in (0, 1), got {target}"
        )));
    }
    let (mut lo, mut hi) = (0.5_f64, 50.0_f64);
    if tukey_efficiency(lo) > target || tukey_efficiency(hi) < target {
        return Err(Error::InvalidParameter(format!(
            "target efficiency {target} outside the bracket of the Tukey family"
        )));
    }
    while hi - lo > 1e-7 {
        let mid = 0.5 * (lo + hi);
        if tukey_efficiency(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Candidate Tukey constants with Gaussian efficiency at least
/// `min_efficiency`, one per target in [`EFFICIENCY_TARGETS`], ascending.
///
/// Returns an empty list when no target reaches `min_efficiency`.
pub fn candidate_b_grid(min_efficiency: f64) -> Result<Vec<f64>> {
    if !(min_efficiency > 0.0 && min_efficiency < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "minimum efficiency must lie in (0, 1), got {min_efficiency}"
        )));
    }
    EFFICIENCY_TARGETS
        .iter()
        .filter(|&&t| t >= min_efficiency - 1e-12)
        .map(|&t| tukey_constant_for_efficiency(t))
        .collect()
}
