//! Pearson residuals and the MAD dispersion estimate.

use nalgebra::DVector;

use crate::data::LongitudinalDataset;
use crate::error::{Error, Result};

/// Consistency constant applied in the dispersion estimate.
pub const MAD_PHI_CONSTANT: f64 = 1.483;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Link {
    #[default]
    Identity,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum VarianceFunction {
    #[default]
    Constant,
}

/// Mean/variance specification `mu = g(x'beta)`, `Var = phi * v(mu)`.
///
/// Only the identity link with constant variance is implemented, so
/// `mu_ij = x_ij' beta` and `A_i = phi * I`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MarginalModel {
    pub link: Link,
    pub variance: VarianceFunction,
}

impl MarginalModel {
    #[inline]
    pub fn mean(&self, linear_predictor: f64) -> f64 {
        match self.link {
            Link::Identity => linear_predictor,
        }
    }

    #[inline]
    pub fn variance(&self, _mu: f64) -> f64 {
        match self.variance {
            VarianceFunction::Constant => 1.0,
        }
    }
}

/// Stacked residuals, aligned with the dataset rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    /// Standardized Pearson residuals `(y - mu) / sqrt(phi v(mu))`.
    pub standardized: DVector<f64>,
    /// Residuals scaled by `v(mu)` only: `(y - mu) / sqrt(v(mu))`.
    pub raw: DVector<f64>,
}

pub fn pearson_residuals(data: &LongitudinalDataset, beta: &DVector<f64>, phi: f64) -> Result<ResidualSet> {
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::InvalidParameter(format!("dispersion must be positive, got {phi}")));
    }
    if beta.len() != data.n_covariates() {
        return Err(Error::DimensionMismatch(format!(
            "beta has length {}, design has {} columns",
            beta.len(),
            data.n_covariates()
        )));
    }
    let model = MarginalModel::default();
    let eta = data.design() * beta;
    let raw = DVector::from_iterator(
        data.n_obs(),
        data.response()
            .iter()
            .zip(eta.iter())
            .map(|(y, lp)| {
                let mu = model.mean(*lp);
                (y - mu) / model.variance(mu).sqrt()
            }),
    );
    let standardized = &raw / phi.sqrt();
    Ok(ResidualSet { standardized, raw })
}

/// Median; for an even count the mean of the two central order statistics.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    Some(median_in_place(&mut v))
}

pub(crate) fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Median absolute deviation about the median (unscaled).
pub fn mad(values: &[f64]) -> Option<f64> {
    let center = median(values)?;
    let mut dev: Vec<f64> = values.iter().map(|v| (v - center).abs()).collect();
    Some(median_in_place(&mut dev))
}

/// `phi = (1.483 * MAD(eta))^2`, pooled over all observations.
pub fn mad_phi(eta: &[f64]) -> Result<f64> {
    if eta.len() < 2 {
        return Err(Error::DegenerateScale(format!(
            "need at least 2 residuals, got {}",
            eta.len()
        )));
    }
    let m = mad(eta).expect("non-empty");
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::DegenerateScale(format!(
            "median absolute deviation of {} residuals is {m}",
            eta.len()
        )));
    }
    let s = MAD_PHI_CONSTANT * m;
    Ok(s * s)
}

/// Rescales a dispersion estimated after fitting `p` coefficients to `n`
/// residuals by `n / (n - p)`. Left unchanged when `p >= n`.
pub fn df_corrected(phi: f64, n: usize, p: usize) -> f64 {
    if n > p {
        phi * n as f64 / (n - p) as f64
    } else {
        phi
    }
}
