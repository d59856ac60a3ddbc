//! Leverage weights from robust Mahalanobis distances of covariate rows.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, Continuous};
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};
use crate::residuals::{mad, median};

/// Consistency constant for the MAD under normality.
pub const MAD_NORMAL_CONSTANT: f64 = 1.4826;

/// Coordinatewise median and squared scaled MAD of the covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustLocationScale {
    pub location: Vec<f64>,
    /// Diagonal of the robust scatter, in variance units.
    pub scale: Vec<f64>,
    /// Columns whose MAD is zero; their scale entry is set to 1.
    pub degenerate: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeverageConfig {
    /// Downweighting exponent, at least 1.
    pub r: f64,
    /// Chi-square quantile level for the distance cutoff.
    pub quantile: f64,
}

impl Default for LeverageConfig {
    fn default() -> Self {
        Self { r: 1.0, quantile: 0.95 }
    }
}

impl LeverageConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r >= 1.0 && self.r.is_finite()) {
            return Err(Error::InvalidParameter(format!("leverage exponent r must be >= 1, got {}", self.r)));
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "leverage quantile must lie in (0, 1), got {}",
                self.quantile
            )));
        }
        Ok(())
    }
}

pub fn robust_location_scale(rows: &DMatrix<f64>) -> Result<RobustLocationScale> {
    if rows.nrows() == 0 || rows.ncols() == 0 {
        return Err(Error::EmptyInput("covariate matrix"));
    }
    let p = rows.ncols();
    let mut location = Vec::with_capacity(p);
    let mut scale = Vec::with_capacity(p);
    let mut degenerate = Vec::with_capacity(p);
    for col in rows.column_iter() {
        let values = col.as_slice();
        location.push(median(values).expect("non-empty"));
        let s = MAD_NORMAL_CONSTANT * mad(values).expect("non-empty");
        if s > 0.0 && s.is_finite() {
            scale.push(s * s);
            degenerate.push(false);
        } else {
            scale.push(1.0);
            degenerate.push(true);
        }
    }
    Ok(RobustLocationScale {
        location,
        scale,
        degenerate,
    })
}

/// Quantile of the chi-square distribution, solved to `|F(x) - q| < 1e-10`
/// with safeguarded Newton steps on the regularized lower incomplete gamma.
pub fn chi_square_quantile(dof: usize, q: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::InvalidParameter("chi-square degrees of freedom must be >= 1".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!("quantile level must lie in (0, 1), got {q}")));
    }
    let k = dof as f64;
    let cdf = |x: f64| gamma_lr(0.5 * k, 0.5 * x);
    let density = ChiSquared::new(k).expect("positive dof");

    let mut lo = 0.0;
    let mut hi = k.max(1.0);
    while cdf(hi) < q {
        lo = hi;
        hi *= 2.0;
    }
    // Wilson-Hilferty start, kept inside the bracket
    let z = statrs::function::erf::erf_inv(2.0 * q - 1.0) * std::f64::consts::SQRT_2;
    let c = 2.0 / (9.0 * k);
    let mut x = (k * (1.0 - c + z * c.sqrt()).powi(3)).clamp(lo, hi);
    if !(x > lo && x < hi) {
        x = 0.5 * (lo + hi);
    }
    for _ in 0..200 {
        let f = cdf(x) - q;
        if f.abs() < 1e-12 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = density.pdf(x);
        let newton = x - f / d;
        x = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 * hi {
            break;
        }
    }
    Ok(x)
}

/// Squared robust distance `sum_k (x_k - m_k)^2 / S_k`.
pub fn robust_distance_sq(x: &[f64], ls: &RobustLocationScale) -> f64 {
    x.iter()
        .zip(ls.location.iter().zip(&ls.scale))
        .map(|(v, (m, s))| (v - m) * (v - m) / s)
        .sum()
}

/// `min(1, (b0 / d^2)^(r/2))`.
#[inline]
pub fn weight_from_distance(d2: f64, cutoff: f64, r: f64) -> f64 {
    if d2 <= cutoff {
        1.0
    } else {
        (cutoff / d2).powf(0.5 * r)
    }
}

/// Leverage weight of a single covariate row; the cutoff uses `p = x.len()`
/// degrees of freedom.
pub fn leverage_weight(x: &[f64], ls: &RobustLocationScale, cfg: &LeverageConfig) -> Result<f64> {
    cfg.validate()?;
    let cutoff = chi_square_quantile(x.len(), cfg.quantile)?;
    Ok(weight_from_distance(robust_distance_sq(x, ls), cutoff, cfg.r))
}

/// Weights for every row of a stacked design, with location/scale
/// estimated from those same rows.
pub fn leverage_weights(design: &DMatrix<f64>, cfg: &LeverageConfig) -> Result<DVector<f64>> {
    cfg.validate()?;
    let ls = robust_location_scale(design)?;
    let cutoff = chi_square_quantile(design.ncols(), cfg.quantile)?;
    let mut row = vec![0.0; design.ncols()];
    Ok(DVector::from_iterator(
        design.nrows(),
        (0..design.nrows()).map(|i| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = design[(i, j)];
            }
            weight_from_distance(robust_distance_sq(&row, &ls), cutoff, cfg.r)
        }),
    ))
}
