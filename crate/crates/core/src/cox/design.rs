use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::Cohort;
use crate::location::{format_group_id, LocationMap};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DesignError {
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("subject `{id}` has zip3 {zip3:03} not covered by the location map")]
    UncoveredZip3 { id: String, zip3: u16 },
    #[error("row {row} has {got} values, expected {expected}")]
    RowLength { row: usize, got: usize, expected: usize },
}

/// Location factor encoded as one indicator per non-reference group. The
/// lowest group id is the reference level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationEncoding {
    pub map: LocationMap,
    pub reference: u16,
    pub indicator_groups: Vec<u16>,
}

impl LocationEncoding {
    pub fn new(map: LocationMap) -> Self {
        let ids = map.group_ids();
        Self {
            reference: ids[0],
            indicator_groups: ids[1..].to_vec(),
            map,
        }
    }
}

/// How a design is built from a cohort: plain covariates followed by
/// optional location indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignEncoding {
    pub covariates: Vec<String>,
    pub location: Option<LocationEncoding>,
}

impl DesignEncoding {
    pub fn column_names(&self) -> Vec<String> {
        let mut names = self.covariates.clone();
        if let Some(loc) = &self.location {
            names.extend(loc.indicator_groups.iter().map(|g| format!("loc_{}", format_group_id(*g))));
        }
        names
    }

    pub fn encode<T: Real>(&self, cohort: &Cohort) -> Result<DesignMatrix<T>, DesignError> {
        let names = self.column_names();
        let p = names.len();
        let mut data = Vec::with_capacity(cohort.len() * p);
        for s in cohort.subjects() {
            for c in &self.covariates {
                let v = s.covariate(c).ok_or_else(|| DesignError::UnknownCovariate(c.clone()))?;
                data.push(T::lit(v));
            }
            if let Some(loc) = &self.location {
                let g = loc.map.group_of(s.zip3()).ok_or_else(|| DesignError::UncoveredZip3 {
                    id: s.id.clone(),
                    zip3: s.zip3(),
                })?;
                data.extend(
                    loc.indicator_groups
                        .iter()
                        .map(|&h| if h == g { T::one() } else { T::zero() }),
                );
            }
        }
        Ok(DesignMatrix {
            n_rows: cohort.len(),
            n_cols: p,
            data,
            column_names: names,
            encoding: Some(self.clone()),
        })
    }
}

/// Dense row-major covariate matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix<T> {
    n_rows: usize,
    n_cols: usize,
    data: Vec<T>,
    pub column_names: Vec<String>,
    pub encoding: Option<DesignEncoding>,
}

impl<T: Real> DesignMatrix<T> {
    pub fn from_rows(rows: &[Vec<T>], column_names: Vec<String>) -> Result<Self, DesignError> {
        let p = column_names.len();
        let mut data = Vec::with_capacity(rows.len() * p);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != p {
                return Err(DesignError::RowLength {
                    row: i,
                    got: r.len(),
                    expected: p,
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            n_rows: rows.len(),
            n_cols: p,
            data,
            column_names,
            encoding: None,
        })
    }

    /// Design with no columns (the null model).
    pub fn empty(n_rows: usize) -> Self {
        Self {
            n_rows,
            n_cols: 0,
            data: Vec::new(),
            column_names: Vec::new(),
            encoding: None,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.n_rows).map(|i| self.data[i * self.n_cols + j]).collect()
    }

    /// Indices of columns that are identically zero.
    pub fn zero_columns(&self) -> Vec<usize> {
        (0..self.n_cols)
            .filter(|&j| (0..self.n_rows).all(|i| self.data[i * self.n_cols + j] == T::zero()))
            .collect()
    }

    /// `X beta` for every row.
    pub fn linear_predictor(&self, beta: &[T]) -> Vec<T> {
        assert_eq!(beta.len(), self.n_cols, "coefficient length must match column count");
        (0..self.n_rows)
            .map(|i| dot(self.row(i), beta))
            .collect()
    }

    /// Rows in the given order (used for resampling).
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.n_cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            n_rows: indices.len(),
            n_cols: self.n_cols,
            data,
            column_names: self.column_names.clone(),
            encoding: self.encoding.clone(),
        }
    }
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Builds a design from named covariates and, optionally, location indicators.
pub fn encode_design<T: Real>(
    cohort: &Cohort,
    covariates: &[&str],
    location_map: Option<&LocationMap>,
) -> Result<DesignMatrix<T>, DesignError> {
    let encoding = DesignEncoding {
        covariates: covariates.iter().map(|s| s.to_string()).collect(),
        location: location_map.map(|m| LocationEncoding::new(m.clone())),
    };
    encoding.encode(cohort)
}
