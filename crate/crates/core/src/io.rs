//! Long-format CSV datasets and scenario files.
//!
//! A dataset file has a header `subject,time,y,<covariate names...>` and
//! one row per observation. Rows of a subject need not be contiguous or
//! time-ordered; subjects keep their order of first appearance.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::{LongitudinalDataset, SubjectData};
use crate::error::{Error, Result};
use crate::simulation::SimScenario;

const REQUIRED: [&str; 3] = ["subject", "time", "y"];

/// How the design matrix is built from the file's columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadOptions {
    /// Prepend a column of ones.
    pub intercept: bool,
    /// Use the time value as a covariate (placed before the file's covariates).
    pub time_covariate: bool,
}

fn data_error(line: usize, message: impl Into<String>) -> Error {
    Error::Data {
        line,
        message: message.into(),
    }
}

/// Reads a long-format dataset from `path`.
pub fn load_dataset(path: impl AsRef<Path>, options: LoadOptions) -> Result<LongitudinalDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_dataset(file, options).map_err(|e| match e {
        Error::Data { line, message } => Error::Data {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Parses a long-format dataset from any reader. Line numbers in errors are
/// 1-based and count the header.
pub fn read_dataset<R: Read>(reader: R, options: LoadOptions) -> Result<LongitudinalDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| data_error(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect::<Vec<_>>();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::EmptyInput("dataset file is empty"));
    }
    for (k, name) in REQUIRED.iter().enumerate() {
        match headers.get(k) {
            Some(h) if h.eq_ignore_ascii_case(name) => {}
            Some(h) => {
                return Err(data_error(1, format!("column {} must be {name:?}, found {h:?}", k + 1)));
            }
            None => return Err(data_error(1, format!("missing required column {name:?}"))),
        }
    }
    let mut covariate_names: Vec<String> = headers[3..].to_vec();
    let mut seen_names = HashMap::new();
    for (k, name) in covariate_names.iter().enumerate() {
        if name.is_empty() {
            return Err(data_error(1, format!("covariate column {} has no name", k + 4)));
        }
        if seen_names.insert(name.clone(), k).is_some() {
            return Err(data_error(1, format!("duplicate column name {name:?}")));
        }
    }

    let mut subjects: Vec<SubjectData> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut seen: HashMap<(usize, i64), usize> = HashMap::new();
    for (k, record) in rdr.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| data_error(line, e.to_string()))?;
        if record.len() != headers.len() {
            return Err(data_error(
                line,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(data_error(line, "empty subject id"));
        }
        let time: i64 = record[1]
            .parse()
            .map_err(|_| data_error(line, format!("time {:?} is not an integer", &record[1])))?;
        let number = |col: usize| -> Result<f64> {
            let v: f64 = record[col]
                .parse()
                .map_err(|_| data_error(line, format!("{} = {:?} is not a number", headers[col], &record[col])))?;
            if !v.is_finite() {
                return Err(data_error(line, format!("{} is not finite", headers[col])));
            }
            Ok(v)
        };
        let y = number(2)?;
        let mut row = Vec::with_capacity(headers.len() - 3 + usize::from(options.time_covariate));
        if options.time_covariate {
            row.push(time as f64);
        }
        for col in 3..headers.len() {
            row.push(number(col)?);
        }
        let s = *index.entry(id.clone()).or_insert_with(|| {
            subjects.push(SubjectData {
                id: id.clone(),
                times: Vec::new(),
                response: Vec::new(),
                covariates: Vec::new(),
            });
            subjects.len() - 1
        });
        if let Some(first) = seen.insert((s, time), line) {
            return Err(data_error(
                line,
                format!("duplicate row for subject {id:?} at time {time} (first seen on line {first})"),
            ));
        }
        let subject = &mut subjects[s];
        subject.times.push(time);
        subject.response.push(y);
        subject.covariates.push(row);
    }
    if subjects.is_empty() {
        return Err(Error::EmptyInput("dataset has no rows"));
    }
    if options.time_covariate {
        covariate_names.insert(0, "time".to_string());
    }
    let data = LongitudinalDataset::from_subjects(subjects, covariate_names)?;
    Ok(if options.intercept { data.with_intercept() } else { data })
}

/// Writes `data` in the format read by [`load_dataset`], with 17
/// significant digits so that reading it back is exact.
pub fn write_dataset<W: Write>(data: &LongitudinalDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["subject".to_string(), "time".to_string(), "y".to_string()];
    header.extend(data.covariate_names().iter().cloned());
    wtr.write_record(&header).map_err(csv_error)?;
    let times: Vec<i64> = data.observation_times().collect();
    let layout = data.layout();
    for i in 0..data.n_subjects() {
        for r in layout.rows(i) {
            let mut rec = Vec::with_capacity(header.len());
            rec.push(data.subject_ids()[i].clone());
            rec.push(times[r].to_string());
            rec.push(format_real(data.response()[r]));
            for j in 0..data.n_covariates() {
                rec.push(format_real(data.design()[(r, j)]));
            }
            wtr.write_record(&rec).map_err(csv_error)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_dataset(data: &LongitudinalDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_dataset(data, file)
}

/// Shortest-safe round-trip formatting: 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Reads a simulation scenario from a TOML file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<SimScenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let scenario: SimScenario =
        toml::from_str(&text).map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))?;
    scenario.validate()?;
    Ok(scenario)
}
