//! Cox proportional-hazards regression with Breslow ties.
//!
//! The hazard of subject `j` is `h0(t) exp(beta' x_j)`. Coefficients maximise
//! the Breslow partial likelihood by Newton-Raphson with step halving; the
//! cumulative baseline hazard `H0` is the Breslow estimator at the optimum and
//! absolute risk at horizon `t` is `1 - exp(-H0(t) exp(beta' x))`.
//! Covariates are used uncentred.

mod design;
mod risk_set;

pub use design::{encode_design, DesignEncoding, DesignError, DesignMatrix, LocationEncoding};
pub use risk_set::RiskSets;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Cholesky;
use crate::scalar::Real;
use crate::step::StepFunction;

use design::dot;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoxError {
    #[error("cannot fit a Cox model without events")]
    NoEvents,
    #[error("information matrix is singular; offending columns: {columns:?}")]
    Singular { columns: Vec<String> },
    #[error("Newton-Raphson did not converge after {iterations} iterations (log-PL {log_likelihood})")]
    NotConverged {
        iterations: usize,
        beta: Vec<f64>,
        log_likelihood: f64,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("input lengths differ: {0}")]
    Length(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoxOptions {
    /// Relative change in log partial likelihood that counts as converged.
    pub tol: f64,
    /// Max-norm of the score that counts as converged.
    pub grad_tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for CoxOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            grad_tol: 1e-8,
            max_iter: 100,
            max_halvings: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit<T> {
    pub column_names: Vec<String>,
    pub beta: Vec<T>,
    /// Inverse observed information at the optimum.
    pub covariance: Vec<Vec<T>>,
    pub baseline_cumhaz: StepFunction<T>,
    pub log_partial_likelihood: T,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Real> CoxFit<T> {
    pub fn standard_errors(&self) -> Vec<T> {
        (0..self.beta.len()).map(|i| self.covariance[i][i].sqrt()).collect()
    }

    pub fn linear_predictor(&self, x: &[T]) -> Result<T, CoxError> {
        check_dim(self.beta.len(), x.len())?;
        Ok(dot(x, &self.beta))
    }

    /// `H0(t) exp(beta' x)`.
    pub fn cumulative_hazard(&self, x: &[T], t: T) -> Result<T, CoxError> {
        Ok(self.baseline_cumhaz.eval(t) * self.linear_predictor(x)?.exp())
    }
}

fn check_dim(expected: usize, got: usize) -> Result<(), CoxError> {
    if expected == got {
        Ok(())
    } else {
        Err(CoxError::Dimension { expected, got })
    }
}

fn check_lengths<T: Real>(design: &DesignMatrix<T>, times: &[T], events: &[bool]) -> Result<(), CoxError> {
    if design.n_rows() != times.len() || times.len() != events.len() {
        return Err(CoxError::Length(format!(
            "{} design rows, {} times, {} events",
            design.n_rows(),
            times.len(),
            events.len()
        )));
    }
    Ok(())
}

/// Breslow log partial likelihood and its gradient at `beta`.
pub fn partial_loglik_and_gradient<T: Real>(
    design: &DesignMatrix<T>,
    times: &[T],
    events: &[bool],
    beta: &[T],
) -> (T, Vec<T>) {
    let rs = RiskSets::new(times, events);
    let (ll, grad, _) = rs.derivatives(design, beta, None, false);
    (ll, grad)
}

/// Breslow estimator of the cumulative baseline hazard at `beta`.
pub fn breslow_baseline<T: Real>(
    design: &DesignMatrix<T>,
    times: &[T],
    events: &[bool],
    beta: &[T],
) -> StepFunction<T> {
    RiskSets::new(times, events).breslow(&design.linear_predictor(beta))
}

pub fn fit_cox<T: Real>(
    design: &DesignMatrix<T>,
    times: &[T],
    events: &[bool],
    options: &CoxOptions,
) -> Result<CoxFit<T>, CoxError> {
    check_lengths(design, times, events)?;
    let rs = RiskSets::new(times, events);
    fit_cox_prepared(design, &rs, None, None, options)
}

/// Fit with a fixed per-subject offset added to the linear predictor.
pub fn fit_cox_with_offset<T: Real>(
    design: &DesignMatrix<T>,
    times: &[T],
    events: &[bool],
    offset: &[T],
    options: &CoxOptions,
) -> Result<CoxFit<T>, CoxError> {
    check_lengths(design, times, events)?;
    check_dim(times.len(), offset.len())?;
    let rs = RiskSets::new(times, events);
    fit_cox_prepared(design, &rs, Some(offset), None, options)
}

/// Newton-Raphson on pre-built risk sets, optionally warm-started.
pub(crate) fn fit_cox_prepared<T: Real>(
    design: &DesignMatrix<T>,
    rs: &RiskSets<T>,
    offset: Option<&[T]>,
    start: Option<&[T]>,
    options: &CoxOptions,
) -> Result<CoxFit<T>, CoxError> {
    if rs.n_events() == 0 {
        return Err(CoxError::NoEvents);
    }
    let p = design.n_cols();
    let zero_cols = design.zero_columns();
    if !zero_cols.is_empty() && design.n_rows() > 0 {
        return Err(CoxError::Singular {
            columns: zero_cols.iter().map(|&j| design.column_names[j].clone()).collect(),
        });
    }
    let mut beta = start.map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); p]);
    let (mut ll, mut grad, mut hess) = rs.derivatives(design, &beta, offset, true);
    let grad_tol = T::lit(options.grad_tol);
    let tol = T::lit(options.tol);
    let singular_tol = T::lit(1e-12);

    let mut iterations = 0;
    let mut converged = p == 0;
    while !converged && iterations < options.max_iter {
        if grad.iter().all(|g| g.abs() < grad_tol) {
            converged = true;
            break;
        }
        iterations += 1;
        let mut info = hess.clone();
        for i in 0..p {
            for j in 0..p {
                info.set(i, j, -hess.get(i, j));
            }
        }
        let chol = Cholesky::factor(&info, singular_tol).map_err(|e| CoxError::Singular {
            columns: vec![design.column_names[e.column].clone()],
        })?;
        let step = chol.solve(&grad);

        let mut accepted = None;
        let mut scale = T::one();
        for _ in 0..=options.max_halvings {
            let cand: Vec<T> = beta.iter().zip(&step).map(|(&b, &s)| b + scale * s).collect();
            let eta = risk_set::linear_predictor(design, &cand, offset);
            let cand_ll = rs.log_likelihood(&eta);
            if cand_ll.is_finite() && cand_ll >= ll {
                accepted = Some((cand, cand_ll));
                break;
            }
            scale /= T::lit(2.0);
        }
        let Some((cand, cand_ll)) = accepted else {
            // no ascent possible along the Newton direction: at numerical optimum
            converged = true;
            break;
        };
        let rel = (cand_ll - ll).abs() / ll.abs().max(T::min_positive_value());
        beta = cand;
        (ll, grad, hess) = rs.derivatives(design, &beta, offset, true);
        if rel < tol {
            converged = true;
        }
    }
    if !converged {
        return Err(CoxError::NotConverged {
            iterations,
            beta: beta.iter().map(|b| b.as_f64()).collect(),
            log_likelihood: ll.as_f64(),
        });
    }

    let covariance = if p == 0 {
        Vec::new()
    } else {
        let mut info = hess.clone();
        for i in 0..p {
            for j in 0..p {
                info.set(i, j, -hess.get(i, j));
            }
        }
        Cholesky::factor(&info, singular_tol)
            .map_err(|e| CoxError::Singular {
                columns: vec![design.column_names[e.column].clone()],
            })?
            .inverse()
            .to_rows()
    };
    let eta = risk_set::linear_predictor(design, &beta, offset);
    Ok(CoxFit {
        column_names: design.column_names.clone(),
        beta,
        covariance,
        baseline_cumhaz: rs.breslow(&eta),
        log_partial_likelihood: ll,
        iterations,
        converged,
    })
}

/// Absolute risk by horizon `t`: `1 - exp(-H0(t) exp(beta' x))`.
pub fn predict_risk<T: Real>(fit: &CoxFit<T>, x: &[T], horizon: T) -> Result<T, CoxError> {
    let h = fit.cumulative_hazard(x, horizon)?;
    Ok(risk_from_cumhaz(h))
}

/// `1 - exp(-H)`, computed without cancellation for small `H`.
#[inline]
pub fn risk_from_cumhaz<T: Real>(h: T) -> T {
    -(-h).exp_m1()
}
