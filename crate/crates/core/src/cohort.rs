//! Subject and cohort data model, CSV ingestion, eligibility filtering and
//! train/test splitting.
//!
//! Statin-use and prior-CVD exclusions are expected to be applied upstream;
//! the subject record carries no flags for them.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Five-year horizon in days.
pub const FIVE_YEARS_DAYS: f64 = 1826.0;

/// CSV columns in canonical order.
pub const CSV_COLUMNS: [&str; 14] = [
    "id",
    "age",
    "sex",
    "hdl",
    "total_cholesterol",
    "hypertension",
    "diabetes",
    "smoker",
    "antihypertensive",
    "ckd",
    "ra",
    "zip5",
    "follow_up_days",
    "event",
];

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("duplicate subject id `{0}`")]
    DuplicateId(String),
    #[error("cohort is empty")]
    Empty,
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub age: u32,
    pub sex: Sex,
    pub hdl: f64,
    pub total_cholesterol: f64,
    pub hypertension: bool,
    pub diabetes: bool,
    pub smoker: bool,
    pub antihypertensive: bool,
    pub ckd: bool,
    pub ra: bool,
    pub zip5: String,
    pub follow_up_days: f64,
    pub event: bool,
}

impl Subject {
    /// Checks the per-subject invariants, returning a message on failure.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.follow_up_days > 0.0) || !self.follow_up_days.is_finite() {
            return Err(format!(
                "follow_up_days must be positive, got {}",
                self.follow_up_days
            ));
        }
        if !is_zip5(&self.zip5) {
            return Err("zip5 must be 5 digits".to_string());
        }
        if !self.hdl.is_finite() || !self.total_cholesterol.is_finite() {
            return Err("lab values must be finite".to_string());
        }
        Ok(())
    }

    /// First three digits of the zip code.
    pub fn zip3(&self) -> u16 {
        zip3_of(&self.zip5)
    }

    /// Numeric value of a named covariate; booleans map to {0,1} and sex to
    /// female = 0, male = 1.
    pub fn covariate(&self, name: &str) -> Option<f64> {
        let b = |v: bool| if v { 1.0 } else { 0.0 };
        Some(match name {
            "age" => f64::from(self.age),
            "sex" => b(self.sex == Sex::Male),
            "hdl" => self.hdl,
            "total_cholesterol" => self.total_cholesterol,
            "hypertension" => b(self.hypertension),
            "diabetes" => b(self.diabetes),
            "smoker" => b(self.smoker),
            "antihypertensive" => b(self.antihypertensive),
            "ckd" => b(self.ckd),
            "ra" => b(self.ra),
            _ => return None,
        })
    }

    /// Boolean flag by name (the binary covariates plus `male`).
    pub fn flag(&self, name: &str) -> Option<bool> {
        Some(match name {
            "hypertension" => self.hypertension,
            "diabetes" => self.diabetes,
            "smoker" => self.smoker,
            "antihypertensive" => self.antihypertensive,
            "ckd" => self.ckd,
            "ra" => self.ra,
            "male" | "sex" => self.sex == Sex::Male,
            "event" => self.event,
            _ => return None,
        })
    }
}

/// Names accepted by [`Subject::covariate`].
pub const COVARIATE_NAMES: [&str; 10] = [
    "age",
    "sex",
    "hdl",
    "total_cholesterol",
    "hypertension",
    "diabetes",
    "smoker",
    "antihypertensive",
    "ckd",
    "ra",
];

pub(crate) fn is_zip5(s: &str) -> bool {
    s.len() == 5 && s.bytes().all(|b| b.is_ascii_digit())
}

pub(crate) fn zip3_of(zip5: &str) -> u16 {
    zip5[..3].parse().expect("validated zip5")
}

/// Ordered, non-empty collection of subjects with unique ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    subjects: Vec<Subject>,
    pub provenance: String,
}

impl Cohort {
    pub fn new(subjects: Vec<Subject>, provenance: impl Into<String>) -> Result<Self, CohortError> {
        if subjects.is_empty() {
            return Err(CohortError::Empty);
        }
        let mut seen = HashSet::with_capacity(subjects.len());
        for s in &subjects {
            if !seen.insert(s.id.as_str()) {
                return Err(CohortError::DuplicateId(s.id.clone()));
            }
        }
        Ok(Self {
            subjects,
            provenance: provenance.into(),
        })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| s.follow_up_days).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.subjects.iter().map(|s| s.event).collect()
    }

    /// Sub-cohort of the given indices (in the given order).
    pub fn select(&self, indices: &[usize], provenance: impl Into<String>) -> Result<Self, CohortError> {
        let subjects = indices.iter().map(|&i| self.subjects[i].clone()).collect();
        Cohort::new(subjects, provenance)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), CohortError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_COLUMNS)?;
        let b = |v: bool| if v { "1" } else { "0" };
        for s in &self.subjects {
            w.write_record([
                s.id.clone(),
                s.age.to_string(),
                match s.sex {
                    Sex::Female => "F".to_string(),
                    Sex::Male => "M".to_string(),
                },
                s.hdl.to_string(),
                s.total_cholesterol.to_string(),
                b(s.hypertension).to_string(),
                b(s.diabetes).to_string(),
                b(s.smoker).to_string(),
                b(s.antihypertensive).to_string(),
                b(s.ckd).to_string(),
                b(s.ra).to_string(),
                s.zip5.clone(),
                s.follow_up_days.to_string(),
                b(s.event).to_string(),
            ])?;
        }
        w.flush().map_err(|e| CohortError::Io {
            path: "<writer>".into(),
            source: e,
        })?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), CohortError> {
        let file = File::create(path).map_err(|e| CohortError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Maps canonical column names to the header names used in a file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CsvSchema {
    renames: BTreeMap<String, String>,
}

impl CsvSchema {
    /// Canonical names used verbatim.
    pub fn canonical() -> Self {
        Self::default()
    }

    pub fn with_column(mut self, canonical: &str, header: &str) -> Self {
        self.renames.insert(canonical.to_string(), header.to_string());
        self
    }

    fn header_for<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.renames.get(canonical).map(String::as_str).unwrap_or(canonical)
    }
}

pub fn load_cohort(path: &Path, schema: &CsvSchema) -> Result<Cohort, CohortError> {
    let file = File::open(path).map_err(|e| CohortError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_cohort(file, schema, path.display().to_string())
}

pub fn read_cohort<R: Read>(
    reader: R,
    schema: &CsvSchema,
    provenance: impl Into<String>,
) -> Result<Cohort, CohortError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut index = [0usize; 14];
    for (slot, canonical) in index.iter_mut().zip(CSV_COLUMNS) {
        let wanted = schema.header_for(canonical);
        *slot = headers
            .iter()
            .position(|h| h.trim() == wanted)
            .ok_or_else(|| CohortError::MissingColumn(wanted.to_string()))?;
    }

    let mut subjects = Vec::new();
    let mut seen = HashSet::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row_err = |message: String| CohortError::Row { line, message };
        let cell = |k: usize| record.get(index[k]).unwrap_or("").trim();

        let parse_f = |k: usize| -> Result<f64, CohortError> {
            cell(k)
                .parse::<f64>()
                .map_err(|_| row_err(format!("cannot parse {} from `{}`", CSV_COLUMNS[k], cell(k))))
        };
        let parse_b = |k: usize| -> Result<bool, CohortError> {
            match cell(k) {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(row_err(format!("{} must be 0 or 1, got `{other}`", CSV_COLUMNS[k]))),
            }
        };
        let id = cell(0).to_string();
        if id.is_empty() {
            return Err(row_err("empty id".into()));
        }
        let age = cell(1)
            .parse::<u32>()
            .map_err(|_| row_err(format!("cannot parse age from `{}`", cell(1))))?;
        let sex = match cell(2) {
            "F" | "f" => Sex::Female,
            "M" | "m" => Sex::Male,
            other => return Err(row_err(format!("sex must be F or M, got `{other}`"))),
        };
        let subject = Subject {
            id,
            age,
            sex,
            hdl: parse_f(3)?,
            total_cholesterol: parse_f(4)?,
            hypertension: parse_b(5)?,
            diabetes: parse_b(6)?,
            smoker: parse_b(7)?,
            antihypertensive: parse_b(8)?,
            ckd: parse_b(9)?,
            ra: parse_b(10)?,
            zip5: cell(11).to_string(),
            follow_up_days: parse_f(12)?,
            event: parse_b(13)?,
        };
        subject.validate().map_err(row_err)?;
        if !seen.insert(subject.id.clone()) {
            return Err(CohortError::DuplicateId(subject.id));
        }
        subjects.push(subject);
    }
    Cohort::new(subjects, provenance)
}

/// Inclusive eligibility bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EligibilityBounds {
    pub age: (u32, u32),
    pub hdl: (f64, f64),
    pub total_cholesterol: (f64, f64),
}

impl Default for EligibilityBounds {
    fn default() -> Self {
        Self {
            age: (40, 75),
            hdl: (20.0, 100.0),
            total_cholesterol: (130.0, 320.0),
        }
    }
}

impl EligibilityBounds {
    pub fn admits(&self, s: &Subject) -> bool {
        (self.age.0..=self.age.1).contains(&s.age)
            && s.hdl >= self.hdl.0
            && s.hdl <= self.hdl.1
            && s.total_cholesterol >= self.total_cholesterol.0
            && s.total_cholesterol <= self.total_cholesterol.1
    }
}

/// Keeps subjects aged 40-75 with HDL in [20, 100] and total cholesterol in
/// [130, 320], preserving order.
pub fn apply_eligibility(cohort: &Cohort) -> Result<Cohort, CohortError> {
    apply_eligibility_with(cohort, &EligibilityBounds::default())
}

pub fn apply_eligibility_with(cohort: &Cohort, bounds: &EligibilityBounds) -> Result<Cohort, CohortError> {
    let kept: Vec<Subject> = cohort
        .subjects()
        .iter()
        .filter(|s| bounds.admits(s))
        .cloned()
        .collect();
    Cohort::new(kept, cohort.provenance.clone())
}

/// Seeded random partition into (train, test); train has
/// `round(train_fraction * N)` subjects. Both parts keep the source order.
pub fn split_train_test(
    cohort: &Cohort,
    train_fraction: f64,
    seed: u64,
) -> Result<(Cohort, Cohort), CohortError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CohortError::Parameter(format!(
            "train fraction must lie in (0,1), got {train_fraction}"
        )));
    }
    let n = cohort.len();
    if n < 2 {
        return Err(CohortError::Parameter("need at least 2 subjects to split".into()));
    }
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(CohortError::Parameter(format!(
            "train fraction {train_fraction} leaves an empty partition for N={n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut train_idx = order[..n_train].to_vec();
    let mut test_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((
        cohort.select(&train_idx, format!("{} [train]", cohort.provenance))?,
        cohort.select(&test_idx, format!("{} [test]", cohort.provenance))?,
    ))
}
