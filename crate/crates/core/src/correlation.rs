//! Working correlation models estimated from robust residuals.
//!
//! All estimators take the stacked, score-transformed residuals
//! `psi(e_ij)` together with the cluster layout. The unstructured robust
//! estimator averages `psi(e_ij) psi(e_ik)` over the subjects observing
//! both grid times `j` and `k`, then rescales to unit diagonal.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::ClusterLayout;
use crate::error::{Error, Result};
use crate::score::ScoreFunction;

/// Off-diagonal entries of the unstructured estimate are clipped to this
/// magnitude.
pub const OFF_DIAGONAL_BOUND: f64 = 1.0 - 1e-6;
/// Bound on the moment estimates of the exchangeable and AR(1) parameters.
pub const ALPHA_BOUND: f64 = 0.99;
/// Smallest eigenvalue guaranteed for every working correlation matrix.
pub const MIN_EIGENVALUE: f64 = 1e-3;
const SHRINK_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CorrelationKind {
    #[serde(rename = "ind")]
    Independence,
    #[serde(rename = "exc")]
    Exchangeable,
    #[serde(rename = "ar1")]
    Ar1,
    #[serde(rename = "run")]
    UnstructuredRobust,
}

impl CorrelationKind {
    pub fn label(&self) -> &'static str {
        match self {
            CorrelationKind::Independence => "ind",
            CorrelationKind::Exchangeable => "exc",
            CorrelationKind::Ar1 => "ar1",
            CorrelationKind::UnstructuredRobust => "run",
        }
    }
}

impl fmt::Display for CorrelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CorrelationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ind" | "independence" => Ok(CorrelationKind::Independence),
            "exc" | "exchangeable" => Ok(CorrelationKind::Exchangeable),
            "ar1" => Ok(CorrelationKind::Ar1),
            "run" | "unstructured" => Ok(CorrelationKind::UnstructuredRobust),
            other => Err(Error::InvalidParameter(format!("unknown correlation structure '{other}'"))),
        }
    }
}

/// A fitted working correlation model.
#[derive(Debug, Clone, PartialEq)]
pub enum CorrelationModel {
    Independence,
    Exchangeable { alpha: f64 },
    Ar1 { alpha: f64 },
    /// Correlation over the full time grid; subjects use the submatrix at
    /// their observed times.
    UnstructuredRobust { matrix: DMatrix<f64> },
}

impl CorrelationModel {
    pub fn kind(&self) -> CorrelationKind {
        match self {
            CorrelationModel::Independence => CorrelationKind::Independence,
            CorrelationModel::Exchangeable { .. } => CorrelationKind::Exchangeable,
            CorrelationModel::Ar1 { .. } => CorrelationKind::Ar1,
            CorrelationModel::UnstructuredRobust { .. } => CorrelationKind::UnstructuredRobust,
        }
    }

    /// `R_i` for a subject observing the given grid time indices.
    /// The result is symmetric with smallest eigenvalue at least
    /// [`MIN_EIGENVALUE`].
    pub fn matrix_for(&self, times: &[usize]) -> Result<DMatrix<f64>> {
        let m = times.len();
        let r = match self {
            CorrelationModel::Independence => return Ok(DMatrix::identity(m, m)),
            CorrelationModel::Exchangeable { alpha } => {
                DMatrix::from_fn(m, m, |j, k| if j == k { 1.0 } else { *alpha })
            }
            CorrelationModel::Ar1 { alpha } => DMatrix::from_fn(m, m, |j, k| {
                if j == k {
                    1.0
                } else {
                    alpha.powi(times[j].abs_diff(times[k]) as i32)
                }
            }),
            CorrelationModel::UnstructuredRobust { matrix } => {
                if let Some(&bad) = times.iter().find(|&&t| t >= matrix.nrows()) {
                    return Err(Error::Structural(format!(
                        "time index {bad} outside the {}-point correlation grid",
                        matrix.nrows()
                    )));
                }
                DMatrix::from_fn(m, m, |j, k| matrix[(times[j], times[k])])
            }
        };
        Ok(repair_positive_definite(r))
    }

    /// Inverse working correlation for each distinct time pattern of the
    /// layout, indexed like [`ClusterLayout::patterns`].
    pub fn pattern_inverses(&self, layout: &ClusterLayout) -> Result<Vec<DMatrix<f64>>> {
        layout
            .patterns()
            .iter()
            .map(|times| {
                let r = self.matrix_for(times)?;
                r.cholesky()
                    .map(|c| c.inverse())
                    .ok_or(Error::Singular("working correlation"))
            })
            .collect()
    }
}

/// Elementwise `psi(e)`.
pub fn robust_residual_transform(standardized: &DVector<f64>, score: &ScoreFunction) -> DVector<f64> {
    standardized.map(|e| score.psi(e))
}

/// Shrinks `R` towards the identity, `(1 - g) R + g I`, with the smallest
/// `g` on a 0.001 grid that lifts the smallest eigenvalue to
/// [`MIN_EIGENVALUE`]. The diagonal is reset to exactly one.
pub fn repair_positive_definite(mut r: DMatrix<f64>) -> DMatrix<f64> {
    let n = r.nrows();
    if n <= 1 {
        return r;
    }
    let lambda_min = min_eigenvalue(&r);
    if lambda_min >= MIN_EIGENVALUE {
        return r;
    }
    let needed = (MIN_EIGENVALUE - lambda_min) / (1.0 - lambda_min);
    let mut steps = (needed / SHRINK_STEP - 1e-9).ceil().max(1.0) as usize;
    let original = r.clone();
    loop {
        let g = (steps as f64 * SHRINK_STEP).min(1.0);
        r = original.map(|v| (1.0 - g) * v);
        for j in 0..n {
            r[(j, j)] = 1.0;
        }
        if g >= 1.0 || min_eigenvalue(&r) >= MIN_EIGENVALUE {
            return r;
        }
        steps += 1;
    }
}

pub fn min_eigenvalue(r: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(r.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// The rescaled unstructured estimate before positive-definiteness repair:
/// unit diagonal, off-diagonals clipped to `+-(1 - 1e-6)`.
pub fn normalized_unstructured(layout: &ClusterLayout, psi: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_len(layout, psi)?;
    let t = layout.n_times();
    let mut sums = DMatrix::<f64>::zeros(t, t);
    let mut counts = DMatrix::<usize>::zeros(t, t);
    for i in 0..layout.n_subjects() {
        let rows = layout.rows(i);
        let times = layout.times(i);
        let values = &psi.as_slice()[rows];
        for (a, &ta) in times.iter().enumerate() {
            for (b, &tb) in times.iter().enumerate() {
                sums[(ta, tb)] += values[a] * values[b];
                counts[(ta, tb)] += 1;
            }
        }
    }
    for j in 0..t {
        if counts[(j, j)] < 2 {
            return Err(Error::Structural(format!(
                "time index {j} observed for {} subject(s); at least 2 required",
                counts[(j, j)]
            )));
        }
        for k in 0..j {
            if counts[(j, k)] == 0 {
                return Err(Error::Structural(format!(
                    "time indices ({k}, {j}) are never observed together"
                )));
            }
        }
    }
    if t * t > layout.n_subjects() {
        log::warn!(
            "unstructured working correlation over {t} time points estimated from only {} subjects",
            layout.n_subjects()
        );
    }
    let scale: Vec<f64> = (0..t)
        .map(|j| {
            let b = sums[(j, j)] / counts[(j, j)] as f64;
            if b > 0.0 {
                Ok(b.sqrt())
            } else {
                Err(Error::DegenerateScale(format!(
                    "all robust residuals at time index {j} are zero"
                )))
            }
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(t, t, |j, k| {
        if j == k {
            1.0
        } else {
            let ru = sums[(j, k)] / counts[(j, k)] as f64;
            (ru / (scale[j] * scale[k])).clamp(-OFF_DIAGONAL_BOUND, OFF_DIAGONAL_BOUND)
        }
    }))
}

pub fn estimate_unstructured(layout: &ClusterLayout, psi: &DVector<f64>) -> Result<CorrelationModel> {
    let matrix = repair_positive_definite(normalized_unstructured(layout, psi)?);
    Ok(CorrelationModel::UnstructuredRobust { matrix })
}

pub fn estimate_exchangeable(layout: &ClusterLayout, psi: &DVector<f64>) -> Result<CorrelationModel> {
    let alpha = pairwise_moment(layout, psi, |_, _| true, "no subject has two or more observations")?;
    Ok(CorrelationModel::Exchangeable { alpha })
}

pub fn estimate_ar1(layout: &ClusterLayout, psi: &DVector<f64>) -> Result<CorrelationModel> {
    let alpha = pairwise_moment(
        layout,
        psi,
        |tj, tk| tk == tj + 1,
        "no subject has observations at adjacent times",
    )?;
    Ok(CorrelationModel::Ar1 { alpha })
}

pub fn estimate(kind: CorrelationKind, layout: &ClusterLayout, psi: &DVector<f64>) -> Result<CorrelationModel> {
    match kind {
        CorrelationKind::Independence => Ok(CorrelationModel::Independence),
        CorrelationKind::Exchangeable => estimate_exchangeable(layout, psi),
        CorrelationKind::Ar1 => estimate_ar1(layout, psi),
        CorrelationKind::UnstructuredRobust => estimate_unstructured(layout, psi),
    }
}

/// Mean of `psi_ij psi_ik` over within-subject pairs `j < k` accepted by
/// `keep`, divided by the mean of `psi^2`, clipped to `+-0.99`.
fn pairwise_moment<F: Fn(usize, usize) -> bool>(
    layout: &ClusterLayout,
    psi: &DVector<f64>,
    keep: F,
    empty_msg: &str,
) -> Result<f64> {
    check_len(layout, psi)?;
    let mut cross = 0.0;
    let mut pairs = 0usize;
    for i in 0..layout.n_subjects() {
        let values = &psi.as_slice()[layout.rows(i)];
        let times = layout.times(i);
        for j in 0..values.len() {
            for k in j + 1..values.len() {
                if keep(times[j], times[k]) {
                    cross += values[j] * values[k];
                    pairs += 1;
                }
            }
        }
    }
    if pairs == 0 {
        return Err(Error::Structural(empty_msg.to_string()));
    }
    let second = psi.iter().map(|v| v * v).sum::<f64>() / psi.len() as f64;
    if !(second > 0.0) {
        return Err(Error::DegenerateScale("all robust residuals are zero".into()));
    }
    Ok((cross / pairs as f64 / second).clamp(-ALPHA_BOUND, ALPHA_BOUND))
}

fn check_len(layout: &ClusterLayout, psi: &DVector<f64>) -> Result<()> {
    if psi.len() != layout.n_obs() {
        return Err(Error::DimensionMismatch(format!(
            "{} residuals for {} observations",
            psi.len(),
            layout.n_obs()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(n: usize, t: usize) -> ClusterLayout {
        ClusterLayout::new(&vec![(0..t).collect::<Vec<_>>(); n], t).unwrap()
    }

    #[test]
    fn transform_examples() {
        let e = DVector::from_vec(vec![1.0, -1.0, 2.5]);
        assert_eq!(robust_residual_transform(&e, &ScoreFunction::Identity), e);
        let t = robust_residual_transform(&e, &ScoreFunction::Tukey { b: 2.0 });
        assert!((t[0] - 0.5625).abs() < 1e-15);
        assert!((t[1] + 0.5625).abs() < 1e-15);
        assert_eq!(t[2], 0.0);
    }

    #[test]
    fn identical_vectors_hit_the_clip() {
        let layout = balanced(4, 3);
        let psi = DVector::from_vec([0.5, -1.0, 2.0].repeat(4));
        let r = normalized_unstructured(&layout, &psi).unwrap();
        for j in 0..3 {
            assert_eq!(r[(j, j)], 1.0);
            for k in 0..3 {
                if j != k {
                    let expected = if (j == 1) ^ (k == 1) { -OFF_DIAGONAL_BOUND } else { OFF_DIAGONAL_BOUND };
                    assert_eq!(r[(j, k)], expected);
                }
            }
        }
        let CorrelationModel::UnstructuredRobust { matrix } = estimate_unstructured(&layout, &psi).unwrap() else {
            panic!()
        };
        assert!(min_eigenvalue(&matrix) >= MIN_EIGENVALUE - 1e-12);
        assert!((0..3).all(|j| matrix[(j, j)] == 1.0));
    }

    #[test]
    fn orthogonal_pair_gives_identity() {
        let layout = balanced(2, 2);
        let psi = DVector::from_vec(vec![1.0, 0.0, 0.0, 1.0]);
        let r = normalized_unstructured(&layout, &psi).unwrap();
        assert_eq!(r, DMatrix::identity(2, 2));
    }

    #[test]
    fn unobserved_pair_is_reported() {
        let layout = ClusterLayout::new(&[vec![0, 1], vec![0, 1], vec![2], vec![2]], 3).unwrap();
        let psi = DVector::from_vec(vec![1.0, 0.5, -0.3, 0.2, 0.7, -0.1]);
        let err = normalized_unstructured(&layout, &psi).unwrap_err();
        assert!(matches!(err, Error::Structural(ref m) if m.contains("(0, 2)")), "{err}");
    }

    #[test]
    fn zero_column_is_degenerate() {
        let layout = balanced(3, 2);
        let psi = DVector::from_vec(vec![1.0, 0.0, -1.0, 0.0, 0.5, 0.0]);
        assert!(matches!(normalized_unstructured(&layout, &psi), Err(Error::DegenerateScale(_))));
    }

    #[test]
    fn exchangeable_single_pair_formula() {
        let layout = balanced(5, 2);
        let (a, b) = (1.3, -0.4);
        let psi = DVector::from_vec([a, b].repeat(5));
        let CorrelationModel::Exchangeable { alpha } = estimate_exchangeable(&layout, &psi).unwrap() else {
            panic!()
        };
        assert!((alpha - a * b / ((a * a + b * b) / 2.0)).abs() < 1e-14);
    }

    #[test]
    fn exchangeable_perfect_correlation_clips() {
        let layout = balanced(3, 4);
        let psi = DVector::from_vec(vec![0.3, 0.3, 0.3, 0.3, -1.0, -1.0, -1.0, -1.0, 2.0, 2.0, 2.0, 2.0]);
        let CorrelationModel::Exchangeable { alpha } = estimate_exchangeable(&layout, &psi).unwrap() else {
            panic!()
        };
        assert_eq!(alpha, ALPHA_BOUND);
        let single = ClusterLayout::new(&[vec![0], vec![0]], 1).unwrap();
        assert!(estimate_exchangeable(&single, &DVector::from_vec(vec![1.0, 2.0])).is_err());
        assert!(estimate_ar1(&single, &DVector::from_vec(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn ar1_uses_adjacent_pairs_only() {
        let layout = ClusterLayout::new(&[vec![0, 2], vec![0, 2]], 3).unwrap();
        assert!(estimate_ar1(&layout, &DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn build_matrices() {
        assert_eq!(
            CorrelationModel::Independence.matrix_for(&[0, 1, 2, 3]).unwrap(),
            DMatrix::identity(4, 4)
        );
        let exc = CorrelationModel::Exchangeable { alpha: 0.7 }.matrix_for(&[0, 1]).unwrap();
        assert_eq!(exc, DMatrix::from_row_slice(2, 2, &[1.0, 0.7, 0.7, 1.0]));
        let ar = CorrelationModel::Ar1 { alpha: 0.7 }.matrix_for(&[0, 1, 2]).unwrap();
        assert!((ar[(0, 2)] - 0.49).abs() < 1e-15);
        assert_eq!(CorrelationModel::Ar1 { alpha: 0.0 }.matrix_for(&[0, 1, 2]).unwrap(), DMatrix::identity(3, 3));
        let grid = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.3, 0.2, 1.0, 0.4, 0.3, 0.4, 1.0]);
        let un = CorrelationModel::UnstructuredRobust { matrix: grid };
        assert_eq!(un.matrix_for(&[0, 2]).unwrap(), DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]));
        assert!(un.matrix_for(&[0, 3]).is_err());
    }

    #[test]
    fn negative_exchangeable_is_repaired() {
        let r = CorrelationModel::Exchangeable { alpha: -0.5 }.matrix_for(&[0, 1, 2, 3]).unwrap();
        assert!(min_eigenvalue(&r) >= MIN_EIGENVALUE - 1e-12);
        assert!((0..4).all(|j| r[(j, j)] == 1.0));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("run".parse::<CorrelationKind>().unwrap(), CorrelationKind::UnstructuredRobust);
        assert_eq!("EXC".parse::<CorrelationKind>().unwrap(), CorrelationKind::Exchangeable);
        assert!("toeplitz".parse::<CorrelationKind>().is_err());
    }
}
