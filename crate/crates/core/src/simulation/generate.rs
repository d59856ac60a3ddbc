use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, Normal, StandardNormal, StudentT};

use super::scenario::{ClusterSize, Contamination, ErrorDistribution, Shift, SimScenario, TrueCorrelation};
use crate::data::LongitudinalDataset;
use crate::error::{Error, Result};

/// Generator for replicate `replicate` of a scenario seeded with `seed`:
/// ChaCha20 keyed by the seed, one stream per replicate.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// `rows x p` matrix of independent rows drawn from `N(0, S)` with
/// `S_kl = rho^|k - l|`.
pub fn gen_covariates<R: Rng + ?Sized>(rows: usize, p: usize, rho: f64, rng: &mut R) -> DMatrix<f64> {
    let innovation = (1.0 - rho * rho).sqrt();
    let mut x = DMatrix::zeros(rows, p);
    for i in 0..rows {
        let mut prev = 0.0;
        for k in 0..p {
            let z: f64 = rng.sample(StandardNormal);
            let v = if k == 0 { z } else { rho * prev + innovation * z };
            x[(i, k)] = v;
            prev = v;
        }
    }
    x
}

/// Correlation matrix of the true error process for `m` equally spaced times.
pub fn true_correlation_matrix(kind: TrueCorrelation, alpha: f64, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |j, k| {
        if j == k {
            1.0
        } else {
            match kind {
                TrueCorrelation::Exchangeable => alpha,
                TrueCorrelation::Ar1 => alpha.powi((j as i32 - k as i32).abs()),
            }
        }
    })
}

/// Stacked error vectors, subject `i` contributing `sizes[i]` values:
/// `L z` for normal errors and `L z / sqrt(w / 3)`, `w ~ chi2_3` per
/// subject, for `t_3` errors, with `L L' = R(alpha)`.
pub fn gen_errors<R: Rng + ?Sized>(
    sizes: &[usize],
    dist: ErrorDistribution,
    kind: TrueCorrelation,
    alpha: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let max_m = sizes.iter().copied().max().unwrap_or(0);
    let mut factors: Vec<Option<DMatrix<f64>>> = vec![None; max_m + 1];
    let chi = ChiSquared::new(3.0).expect("valid dof");
    let total: usize = sizes.iter().sum();
    let mut out = DVector::zeros(total);
    let mut offset = 0;
    for &m in sizes {
        if factors[m].is_none() {
            let r = true_correlation_matrix(kind, alpha, m);
            let l = r
                .cholesky()
                .ok_or_else(|| Error::InvalidParameter(format!("true correlation with alpha {alpha} is not positive definite")))?
                .unpack();
            factors[m] = Some(l);
        }
        let l = factors[m].as_ref().expect("cached");
        let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut e = l * z;
        if dist == ErrorDistribution::T3 {
            let w: f64 = chi.sample(rng);
            e /= (w / 3.0).sqrt();
        }
        out.rows_mut(offset, m).copy_from(&e);
        offset += m;
    }
    Ok(out)
}

/// Counts of modified cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ContaminationCounts {
    pub y_cells: usize,
    pub x_cells: usize,
}

/// Adds outliers in place: `round(y_rate N)` responses get a shift drawn
/// from `y_shift`, then `round(x_rate N)` rows get an independent `t_3`
/// draw added to the first covariate. Cells are chosen without
/// replacement.
pub fn contaminate<R: Rng + ?Sized>(
    y: &mut DVector<f64>,
    x: &mut DMatrix<f64>,
    spec: &Contamination,
    rng: &mut R,
) -> Result<ContaminationCounts> {
    spec.validate()?;
    let n = y.len();
    let ny = (spec.y_rate * n as f64).round() as usize;
    let nx = (spec.x_rate * n as f64).round() as usize;
    if ny > 0 {
        let cells = sample(rng, n, ny.min(n));
        match spec.y_shift {
            Shift::Normal { mean, sd } => {
                let dist = Normal::new(mean, sd).map_err(|e| Error::InvalidParameter(e.to_string()))?;
                for i in cells.iter() {
                    y[i] += dist.sample(rng);
                }
            }
            Shift::Constant { value } => {
                for i in cells.iter() {
                    y[i] += value;
                }
            }
        }
    }
    if nx > 0 && x.ncols() > 0 {
        let t3 = StudentT::new(3.0).expect("valid dof");
        let cells = sample(rng, n, nx.min(n));
        for i in cells.iter() {
            x[(i, 0)] += t3.sample(rng);
        }
    }
    Ok(ContaminationCounts {
        y_cells: ny.min(n),
        x_cells: if x.ncols() > 0 { nx.min(n) } else { 0 },
    })
}

/// One simulated dataset.
#[derive(Debug, Clone)]
pub struct Replicate {
    /// Contaminated data used for fitting.
    pub data: LongitudinalDataset,
    /// Design before x-contamination, for prediction error.
    pub clean_design: DMatrix<f64>,
    pub beta_true: DVector<f64>,
    pub counts: ContaminationCounts,
}

/// Draws replicate `index`: cluster sizes, covariates, errors, then
/// contamination, all from [`replicate_rng`].
pub fn generate_replicate(scenario: &SimScenario, index: u64) -> Result<Replicate> {
    scenario.validate()?;
    let mut rng = replicate_rng(scenario.seed, index);
    let (p, _) = scenario.dims()?;
    let beta = DVector::from_vec(scenario.beta_true()?);
    let sizes: Vec<usize> = match scenario.m {
        ClusterSize::Fixed(m) => vec![m; scenario.n],
        ClusterSize::Uniform { min, max } => (0..scenario.n).map(|_| rng.random_range(min..=max)).collect(),
    };
    let total: usize = sizes.iter().sum();
    let clean_design = gen_covariates(total, p, scenario.covariate_rho, &mut rng);
    let errors = gen_errors(&sizes, scenario.errors, scenario.true_correlation, scenario.alpha, &mut rng)?;
    let mut y = &clean_design * &beta + errors;
    let mut x = clean_design.clone();
    let counts = contaminate(&mut y, &mut x, &scenario.contamination, &mut rng)?;
    let times: Vec<Vec<usize>> = sizes.iter().map(|&m| (0..m).collect()).collect();
    let data = LongitudinalDataset::from_stacked(&times, scenario.m.max(), y, x)?;
    Ok(Replicate {
        data,
        clean_design,
        beta_true: beta,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn covariate_moments() {
        let mut rng = replicate_rng(11, 0);
        let x = gen_covariates(100_000, 3, 0.5, &mut rng);
        let c0: Vec<f64> = x.column(0).iter().copied().collect();
        let c1: Vec<f64> = x.column(1).iter().copied().collect();
        let c2: Vec<f64> = x.column(2).iter().copied().collect();
        assert!((corr(&c0, &c1) - 0.5).abs() < 0.02);
        assert!((corr(&c0, &c2) - 0.25).abs() < 0.02);
        for c in [&c0, &c1, &c2] {
            let v = c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64;
            assert!((v - 1.0).abs() < 0.02, "{v}");
        }
    }

    #[test]
    fn error_correlation() {
        let mut rng = replicate_rng(5, 0);
        let n = 100_000;
        let e = gen_errors(&vec![2; n], ErrorDistribution::Normal, TrueCorrelation::Exchangeable, 0.7, &mut rng).unwrap();
        let a: Vec<f64> = (0..n).map(|i| e[2 * i]).collect();
        let b: Vec<f64> = (0..n).map(|i| e[2 * i + 1]).collect();
        assert!((corr(&a, &b) - 0.7).abs() < 0.03);
        let e = gen_errors(&vec![2; n], ErrorDistribution::Normal, TrueCorrelation::Exchangeable, 0.0, &mut rng).unwrap();
        let a: Vec<f64> = (0..n).map(|i| e[2 * i]).collect();
        let b: Vec<f64> = (0..n).map(|i| e[2 * i + 1]).collect();
        assert!(corr(&a, &b).abs() < 0.02);
    }

    #[test]
    fn t3_heavier_tails() {
        let kurt = |v: &DVector<f64>| {
            let n = v.len() as f64;
            let m2 = v.iter().map(|x| x * x).sum::<f64>() / n;
            let m4 = v.iter().map(|x| x.powi(4)).sum::<f64>() / n;
            m4 / (m2 * m2)
        };
        let mut rng = replicate_rng(9, 0);
        let sizes = vec![1; 100_000];
        let normal = gen_errors(&sizes, ErrorDistribution::Normal, TrueCorrelation::Exchangeable, 0.7, &mut rng).unwrap();
        let t3 = gen_errors(&sizes, ErrorDistribution::T3, TrueCorrelation::Exchangeable, 0.7, &mut rng).unwrap();
        assert!(kurt(&t3) > kurt(&normal));
    }

    #[test]
    fn contamination_counts() {
        let mut rng = replicate_rng(3, 0);
        let mut y = DVector::zeros(1000);
        let mut x = DMatrix::zeros(1000, 2);
        let none = contaminate(&mut y, &mut x, &Contamination::none(), &mut rng).unwrap();
        assert_eq!(none, ContaminationCounts::default());
        assert!(y.iter().all(|v| *v == 0.0));

        let case3 = Contamination::case("3").unwrap();
        let counts = contaminate(&mut y, &mut x, &case3, &mut rng).unwrap();
        assert_eq!(counts.y_cells, 200);
        assert_eq!(counts.x_cells, 100);
        let shifted: Vec<f64> = y.iter().copied().filter(|v| *v != 0.0).collect();
        assert_eq!(shifted.len(), 200);
        let mean = shifted.iter().sum::<f64>() / 200.0;
        let sd = (shifted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 199.0).sqrt();
        assert!((mean - 10.0).abs() < 0.3, "{mean}");
        assert!((sd - 1.0).abs() < 0.2, "{sd}");
        assert_eq!(x.column(0).iter().filter(|v| **v != 0.0).count(), 100);
        assert!(x.column(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn replicates_are_reproducible() {
        let s = SimScenario::diverging_p(ErrorDistribution::T3, "3")
            .unwrap()
            .with_methods(&[(crate::method::Method::Sgee, crate::CorrelationKind::Exchangeable)]);
        let a = generate_replicate(&s, 4).unwrap();
        let b = generate_replicate(&s, 4).unwrap();
        let c = generate_replicate(&s, 5).unwrap();
        assert_eq!(a.data.response(), b.data.response());
        assert_ne!(a.data.response()[0], c.data.response()[0]);
        assert_eq!(a.data.n_covariates(), 28);
        assert_eq!(a.data.n_times(), 5);
        assert!(a.data.layout().patterns().len() <= 4);
    }
}
