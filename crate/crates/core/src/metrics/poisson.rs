//! Poisson log-linear regression by iteratively reweighted least squares.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::MetricError;
use crate::cox::DesignMatrix;
use crate::linalg::{Cholesky, SquareMatrix};
use crate::scalar::Real;

const REL_TOL: f64 = 1e-10;
const MAX_ITER: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonFit<T> {
    pub column_names: Vec<String>,
    pub coefficients: Vec<T>,
    /// Inverse Fisher information.
    pub covariance: Vec<Vec<T>>,
    pub log_likelihood: T,
    pub iterations: usize,
}

impl<T: Real> PoissonFit<T> {
    pub fn standard_error(&self, j: usize) -> T {
        self.covariance[j][j].sqrt()
    }

    /// Wald interval `coef +/- z * se`.
    pub fn wald_interval(&self, j: usize, z: T) -> (T, T) {
        let se = self.standard_error(j);
        (self.coefficients[j] - z * se, self.coefficients[j] + z * se)
    }
}

fn log_likelihood<T: Real>(y: &[T], eta: &[T]) -> T {
    y.iter()
        .zip(eta)
        .map(|(&yi, &e)| yi * e - e.exp() - T::lit(ln_gamma(yi.as_f64() + 1.0)))
        .sum()
}

/// Fit `log E[y] = X b + offset`. Iterates until the relative change in
/// log-likelihood drops below 1e-10, for at most 50 iterations.
pub fn poisson_glm<T: Real>(
    y: &[T],
    design: &DesignMatrix<T>,
    offset: Option<&[T]>,
) -> Result<PoissonFit<T>, MetricError> {
    let n = y.len();
    let p = design.n_cols();
    if design.n_rows() != n || offset.is_some_and(|o| o.len() != n) {
        return Err(MetricError::Length);
    }
    if y.iter().any(|&v| !(v >= T::zero()) || !v.is_finite()) {
        return Err(MetricError::Input("Poisson responses must be non-negative".into()));
    }
    if !y.iter().any(|&v| v > T::zero()) {
        return Err(MetricError::Input("Poisson responses are all zero".into()));
    }
    let off = |i: usize| offset.map_or(T::zero(), |o| o[i]);

    let mut eta: Vec<T> = y.iter().map(|&v| (v + T::lit(0.1)).ln()).collect();
    let mut beta = vec![T::zero(); p];
    let mut ll_old = T::neg_infinity();
    for iter in 1..=MAX_ITER {
        let mut info = SquareMatrix::zeros(p);
        let mut rhs = vec![T::zero(); p];
        for i in 0..n {
            let mu = eta[i].exp();
            let z = eta[i] - off(i) + (y[i] - mu) / mu;
            let x = design.row(i);
            for a in 0..p {
                rhs[a] += mu * x[a] * z;
                for b in 0..=a {
                    info.add_to(a, b, mu * x[a] * x[b]);
                }
            }
        }
        info.symmetrize_from_lower();
        let chol = Cholesky::factor(&info, T::lit(1e-12)).map_err(|e| MetricError::Singular {
            column: design.column_names[e.column].clone(),
        })?;
        beta = chol.solve(&rhs);
        eta = design.linear_predictor(&beta);
        for (i, e) in eta.iter_mut().enumerate() {
            *e += off(i);
        }
        let ll = log_likelihood(y, &eta);
        if !ll.is_finite() {
            return Err(MetricError::NotConverged { iterations: iter });
        }
        if ((ll - ll_old) / (ll.abs() + T::lit(0.1))).abs() < T::lit(REL_TOL) {
            let cov = fisher_inverse(design, &eta)?;
            return Ok(PoissonFit {
                column_names: design.column_names.clone(),
                coefficients: beta,
                covariance: cov.to_rows(),
                log_likelihood: ll,
                iterations: iter,
            });
        }
        ll_old = ll;
    }
    Err(MetricError::NotConverged { iterations: MAX_ITER })
}

fn fisher_inverse<T: Real>(design: &DesignMatrix<T>, eta: &[T]) -> Result<SquareMatrix<T>, MetricError> {
    let p = design.n_cols();
    let mut info = SquareMatrix::zeros(p);
    for (i, &e) in eta.iter().enumerate() {
        let mu = e.exp();
        let x = design.row(i);
        for a in 0..p {
            for b in 0..=a {
                info.add_to(a, b, mu * x[a] * x[b]);
            }
        }
    }
    info.symmetrize_from_lower();
    let chol = Cholesky::factor(&info, T::lit(1e-12)).map_err(|e| MetricError::Singular {
        column: design.column_names[e.column].clone(),
    })?;
    Ok(chol.inverse())
}
