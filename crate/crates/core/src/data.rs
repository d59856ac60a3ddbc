//! Longitudinal data in stacked (long) form.
//!
//! Observations of all subjects are stored contiguously: subject `i` owns
//! rows `offsets[i]..offsets[i + 1]` of the response vector and design
//! matrix. Observation times are indices into a global, sorted time grid.

use std::collections::HashMap;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Cluster structure shared by every per-subject computation: row ranges,
/// global time indices and the distinct time patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLayout {
    offsets: Vec<usize>,
    times: Vec<usize>,
    n_times: usize,
    patterns: Vec<Vec<usize>>,
    subject_pattern: Vec<usize>,
}

impl ClusterLayout {
    /// Builds a layout from per-subject time indices on a grid of `n_times`
    /// points. Times within a subject must be strictly increasing.
    pub fn new(subject_times: &[Vec<usize>], n_times: usize) -> Result<Self> {
        let mut offsets = Vec::with_capacity(subject_times.len() + 1);
        let mut times = Vec::new();
        let mut pattern_ids: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut patterns = Vec::new();
        let mut subject_pattern = Vec::with_capacity(subject_times.len());
        offsets.push(0);
        for (i, t) in subject_times.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::InvalidParameter(format!("subject {i} has no observations")));
            }
            if t.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidParameter(format!(
                    "subject {i}: time indices must be strictly increasing"
                )));
            }
            if let Some(&bad) = t.iter().find(|&&k| k >= n_times) {
                return Err(Error::InvalidParameter(format!(
                    "subject {i}: time index {bad} outside grid of {n_times}"
                )));
            }
            times.extend_from_slice(t);
            offsets.push(times.len());
            let next = patterns.len();
            let id = *pattern_ids.entry(t.clone()).or_insert_with(|| {
                patterns.push(t.clone());
                next
            });
            subject_pattern.push(id);
        }
        Ok(Self {
            offsets,
            times,
            n_times,
            patterns,
            subject_pattern,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_obs(&self) -> usize {
        self.times.len()
    }

    /// Size of the global time grid.
    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn rows(&self, subject: usize) -> Range<usize> {
        self.offsets[subject]..self.offsets[subject + 1]
    }

    pub fn times(&self, subject: usize) -> &[usize] {
        &self.times[self.rows(subject)]
    }

    pub fn all_times(&self) -> &[usize] {
        &self.times
    }

    pub fn patterns(&self) -> &[Vec<usize>] {
        &self.patterns
    }

    pub fn pattern_of(&self, subject: usize) -> usize {
        self.subject_pattern[subject]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalDataset {
    subject_ids: Vec<String>,
    layout: ClusterLayout,
    /// Time value of each grid point (sorted ascending).
    time_values: Vec<i64>,
    response: DVector<f64>,
    design: DMatrix<f64>,
    covariate_names: Vec<String>,
}

/// Observations of one subject, in time order.
#[derive(Debug, Clone)]
pub struct SubjectData {
    pub id: String,
    pub times: Vec<i64>,
    pub response: Vec<f64>,
    /// One covariate row per observation.
    pub covariates: Vec<Vec<f64>>,
}

impl LongitudinalDataset {
    /// Assembles a dataset from per-subject records. Time values are mapped
    /// onto the sorted grid of all distinct values.
    pub fn from_subjects(subjects: Vec<SubjectData>, covariate_names: Vec<String>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::EmptyInput("dataset has no subjects"));
        }
        let p = covariate_names.len();
        let mut grid: Vec<i64> = subjects.iter().flat_map(|s| s.times.iter().copied()).collect();
        grid.sort_unstable();
        grid.dedup();
        let index_of: HashMap<i64, usize> = grid.iter().enumerate().map(|(k, &t)| (t, k)).collect();

        let n_obs: usize = subjects.iter().map(|s| s.response.len()).sum();
        let mut response = Vec::with_capacity(n_obs);
        let mut design = DMatrix::zeros(n_obs, p);
        let mut subject_times = Vec::with_capacity(subjects.len());
        let mut ids = Vec::with_capacity(subjects.len());
        let mut row = 0;
        for s in subjects {
            let m = s.response.len();
            if s.times.len() != m || s.covariates.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "subject {}: {} times, {} responses, {} covariate rows",
                    s.id,
                    s.times.len(),
                    m,
                    s.covariates.len()
                )));
            }
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by_key(|&k| s.times[k]);
            let mut t_idx = Vec::with_capacity(m);
            for &k in &order {
                if s.covariates[k].len() != p {
                    return Err(Error::DimensionMismatch(format!(
                        "subject {}: covariate row of length {}, expected {p}",
                        s.id,
                        s.covariates[k].len()
                    )));
                }
                t_idx.push(index_of[&s.times[k]]);
                response.push(s.response[k]);
                for (j, v) in s.covariates[k].iter().enumerate() {
                    design[(row, j)] = *v;
                }
                row += 1;
            }
            if t_idx.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidParameter(format!(
                    "subject {}: duplicate observation time",
                    s.id
                )));
            }
            subject_times.push(t_idx);
            ids.push(s.id);
        }
        let layout = ClusterLayout::new(&subject_times, grid.len())?;
        Ok(Self {
            subject_ids: ids,
            layout,
            time_values: grid,
            response: DVector::from_vec(response),
            design,
            covariate_names,
        })
    }

    /// Builds a dataset directly from stacked arrays. Subject `i` observes
    /// grid indices `subject_times[i]`; grid point `k` has time value `k + 1`.
    pub fn from_stacked(
        subject_times: &[Vec<usize>],
        n_times: usize,
        response: DVector<f64>,
        design: DMatrix<f64>,
    ) -> Result<Self> {
        let layout = ClusterLayout::new(subject_times, n_times)?;
        if response.len() != layout.n_obs() || design.nrows() != layout.n_obs() {
            return Err(Error::DimensionMismatch(format!(
                "{} observations in layout, {} responses, {} design rows",
                layout.n_obs(),
                response.len(),
                design.nrows()
            )));
        }
        let p = design.ncols();
        Ok(Self {
            subject_ids: (0..layout.n_subjects()).map(|i| (i + 1).to_string()).collect(),
            layout,
            time_values: (1..=n_times as i64).collect(),
            response,
            design,
            covariate_names: (1..=p).map(|j| format!("x{j}")).collect(),
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.layout.n_subjects()
    }

    pub fn n_obs(&self) -> usize {
        self.layout.n_obs()
    }

    pub fn n_covariates(&self) -> usize {
        self.design.ncols()
    }

    pub fn n_times(&self) -> usize {
        self.layout.n_times()
    }

    pub fn layout(&self) -> &ClusterLayout {
        &self.layout
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    /// Stacked `N x p` design matrix.
    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn time_values(&self) -> &[i64] {
        &self.time_values
    }

    /// Time value of every stacked observation.
    pub fn observation_times(&self) -> impl Iterator<Item = i64> + '_ {
        self.layout.all_times().iter().map(|&k| self.time_values[k])
    }

    /// Replaces the response vector, keeping everything else.
    pub fn with_response(&self, response: DVector<f64>) -> Result<Self> {
        if response.len() != self.n_obs() {
            return Err(Error::DimensionMismatch(format!(
                "{} responses for {} observations",
                response.len(),
                self.n_obs()
            )));
        }
        Ok(Self {
            response,
            ..self.clone()
        })
    }

    /// Replaces the design matrix (same number of rows, any number of columns).
    pub fn with_design(&self, design: DMatrix<f64>, covariate_names: Vec<String>) -> Result<Self> {
        if design.nrows() != self.n_obs() || design.ncols() != covariate_names.len() {
            return Err(Error::DimensionMismatch(format!(
                "design {}x{} for {} observations and {} names",
                design.nrows(),
                design.ncols(),
                self.n_obs(),
                covariate_names.len()
            )));
        }
        Ok(Self {
            design,
            covariate_names,
            ..self.clone()
        })
    }

    /// Prepends a column of ones named `intercept`.
    pub fn with_intercept(&self) -> Self {
        let n = self.n_obs();
        let p = self.n_covariates();
        let design = DMatrix::from_fn(n, p + 1, |r, c| if c == 0 { 1.0 } else { self.design[(r, c - 1)] });
        let mut names = Vec::with_capacity(p + 1);
        names.push("intercept".to_string());
        names.extend(self.covariate_names.iter().cloned());
        Self {
            design,
            covariate_names: names,
            ..self.clone()
        }
    }

    /// Dataset with subjects selected by `keep(i)`; the time grid is kept.
    pub fn filter_subjects<F: Fn(usize) -> bool>(&self, keep: F) -> Result<Self> {
        let kept: Vec<usize> = (0..self.n_subjects()).filter(|&i| keep(i)).collect();
        if kept.is_empty() {
            return Err(Error::EmptyInput("no subjects selected"));
        }
        let rows: Vec<usize> = kept.iter().flat_map(|&i| self.layout.rows(i)).collect();
        let times: Vec<Vec<usize>> = kept.iter().map(|&i| self.layout.times(i).to_vec()).collect();
        let layout = ClusterLayout::new(&times, self.n_times())?;
        let design = self.design.select_rows(rows.iter());
        let response = self.response.select_rows(rows.iter());
        Ok(Self {
            subject_ids: kept.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            layout,
            time_values: self.time_values.clone(),
            response,
            design,
            covariate_names: self.covariate_names.clone(),
        })
    }
}
