//! Shared gamma-frailty Cox model over location groups.
//!
//! Subjects in group `g` share a frailty `Z_g ~ Gamma(1/theta, theta)` (mean
//! 1, variance theta) multiplying the hazard: `Z_g h0(t) exp(beta' x)`.
//! For fixed theta the model is fitted by EM: the E-step sets the posterior
//! mean `Z_g = (1/theta + D_g) / (1/theta + sum_{j in g} H_j)` where `D_g`
//! counts events in the group and `H_j = H0(T_j) exp(beta' x_j)`; the M-step
//! refits the Cox model with `ln Z_g` as offset. Theta maximises the profile
//! marginal log-likelihood by golden-section search.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cox::{fit_cox_prepared, risk_from_cumhaz, CoxError, CoxFit, CoxOptions, DesignMatrix, RiskSets};
use crate::scalar::Real;
use crate::step::StepFunction;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrailtyError {
    #[error(transparent)]
    Cox(#[from] CoxError),
    #[error("EM did not converge at theta={theta} after {iterations} iterations")]
    NotConverged { theta: f64, iterations: usize },
    #[error("need at least one group")]
    NoGroups,
    #[error("input lengths differ")]
    Length,
    #[error("invalid option: {0}")]
    Option(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaMode {
    /// Golden-section search for theta on `[lower, upper]`.
    Estimate { lower: f64, upper: f64, tol: f64 },
    Fixed(f64),
}

impl Default for ThetaMode {
    fn default() -> Self {
        ThetaMode::Estimate {
            lower: 1e-8,
            upper: 10.0,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrailtyOptions {
    pub theta: ThetaMode,
    /// Convergence threshold on successive beta and frailty changes.
    pub em_tol: f64,
    pub max_em_iter: usize,
    pub cox: CoxOptions,
}

impl Default for FrailtyOptions {
    fn default() -> Self {
        Self {
            theta: ThetaMode::default(),
            em_tol: 1e-6,
            max_em_iter: 1000,
            cox: CoxOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrailtyFit<T> {
    pub column_names: Vec<String>,
    pub beta: Vec<T>,
    /// Covariance of beta conditional on the estimated frailties.
    pub covariance: Vec<Vec<T>>,
    pub theta: T,
    pub frailty_means: BTreeMap<u16, T>,
    pub baseline_cumhaz: StepFunction<T>,
    pub marginal_loglik: T,
    pub converged: bool,
    /// Theta estimate sits on an end of the search interval.
    pub at_boundary: bool,
    pub em_iterations: usize,
    /// Marginal log-likelihood after each EM iteration at the final theta.
    pub loglik_trace: Vec<T>,
}

impl<T: Real> FrailtyFit<T> {
    /// Posterior frailty for `group`, or 1 for unseen / absent groups.
    pub fn frailty_for(&self, group: Option<u16>) -> T {
        group
            .and_then(|g| self.frailty_means.get(&g).copied())
            .unwrap_or_else(T::one)
    }

    pub fn linear_predictor(&self, x: &[T]) -> T {
        assert_eq!(x.len(), self.beta.len(), "covariate dimension mismatch");
        x.iter().zip(&self.beta).fold(T::zero(), |a, (&u, &b)| a + u * b)
    }
}

/// `1 - exp(-Z_group H0(t) exp(beta' x))`, with `Z = 1` for unknown groups.
pub fn predict_risk_frailty<T: Real>(fit: &FrailtyFit<T>, x: &[T], group: Option<u16>, horizon: T) -> T {
    let h = fit.frailty_for(group) * fit.baseline_cumhaz.eval(horizon) * fit.linear_predictor(x).exp();
    risk_from_cumhaz(h)
}

struct Problem<'a, T> {
    design: &'a DesignMatrix<T>,
    rs: RiskSets<T>,
    times: &'a [T],
    events: &'a [bool],
    group_of: Vec<usize>,
    group_events: Vec<usize>,
}

struct EmState<T> {
    fit: CoxFit<T>,
    frailty: Vec<T>,
    marginal: T,
    iterations: usize,
    trace: Vec<T>,
}

impl<'a, T: Real> Problem<'a, T> {
    fn n_groups(&self) -> usize {
        self.group_events.len()
    }

    fn offsets(&self, frailty: &[T]) -> Vec<T> {
        self.group_of.iter().map(|&g| frailty[g].ln()).collect()
    }

    /// Per-group sums of `H0(T_j) exp(beta' x_j)`.
    fn group_hazards(&self, fit: &CoxFit<T>) -> Vec<T> {
        let eta = self.design.linear_predictor(&fit.beta);
        let mut acc = vec![T::zero(); self.n_groups()];
        for (i, &g) in self.group_of.iter().enumerate() {
            acc[g] += fit.baseline_cumhaz.eval(self.times[i]) * eta[i].exp();
        }
        acc
    }

    /// Marginal log-likelihood with the frailties integrated out and the
    /// Breslow baseline treated as a discrete hazard.
    fn marginal_loglik(&self, fit: &CoxFit<T>, group_hazard: &[T], theta: T) -> T {
        let h0 = &fit.baseline_cumhaz;
        let eta = self.design.linear_predictor(&fit.beta);
        let mut ll = T::zero();
        for (i, &e) in self.events.iter().enumerate() {
            if e {
                let t = self.times[i];
                let jump = h0.eval(t) - h0.eval_left(t);
                ll += jump.ln() + eta[i];
            }
        }
        for (g, &a_g) in group_hazard.iter().enumerate() {
            ll += group_marginal_term(self.group_events[g], a_g, theta);
        }
        ll
    }

    /// Multiplier `c` on the baseline hazard that maximises the marginal
    /// likelihood with everything else fixed: the root of
    /// `sum_g (a + D_g) c A_g / (a + c A_g) = D`, with `a = 1/theta`. Without
    /// this step EM drifts slowly along the frailty scale when theta is large.
    fn baseline_scale(&self, hazards: &[T], a: T) -> T {
        let total: T = T::from_usize_lossy(self.group_events.iter().sum());
        let f = |c: T| -> (T, T) {
            let mut v = -total;
            let mut d = T::zero();
            for (&h, &ev) in hazards.iter().zip(&self.group_events) {
                let w = a + T::from_usize_lossy(ev);
                let den = a + c * h;
                v += w * c * h / den;
                d += w * h * a / (den * den);
            }
            (v, d)
        };
        let (mut lo, mut hi) = (T::zero(), T::infinity());
        let mut c = T::one();
        for _ in 0..200 {
            let (v, d) = f(c);
            if v.abs() <= T::lit(1e-13) * total {
                break;
            }
            if v < T::zero() {
                lo = c;
            } else {
                hi = c;
            }
            let mut next = c - v / d;
            if !(next > lo && next < hi) {
                next = if hi.is_finite() { (lo + hi) / T::lit(2.0) } else { c * T::lit(2.0) };
            }
            c = next;
        }
        c
    }

    fn em(&self, theta: T, warm: Option<&EmState<T>>, options: &FrailtyOptions) -> Result<EmState<T>, FrailtyError> {
        let inv = T::one() / theta;
        let mut frailty = warm.map(|w| w.frailty.clone()).unwrap_or_else(|| vec![T::one(); self.n_groups()]);
        let mut beta: Option<Vec<T>> = warm.map(|w| w.fit.beta.clone());
        let tol = T::lit(options.em_tol);
        let mut trace = Vec::new();
        for iter in 1..=options.max_em_iter {
            let offset = self.offsets(&frailty);
            let mut fit = fit_cox_prepared(self.design, &self.rs, Some(&offset), beta.as_deref(), &options.cox)?;
            let mut hazards = self.group_hazards(&fit);
            let c = self.baseline_scale(&hazards, inv);
            for v in fit.baseline_cumhaz.values.iter_mut() {
                *v *= c;
            }
            for a in hazards.iter_mut() {
                *a *= c;
            }
            let marginal = self.marginal_loglik(&fit, &hazards, theta);
            trace.push(marginal);
            let next: Vec<T> = hazards
                .iter()
                .zip(&self.group_events)
                .map(|(&a, &d)| (inv + T::from_usize_lossy(d)) / (inv + a))
                .collect();
            let dz = max_abs_diff(&next, &frailty);
            let db = beta.as_ref().map(|b| max_abs_diff(b, &fit.beta)).unwrap_or_else(T::infinity);
            frailty = next;
            beta = Some(fit.beta.clone());
            if dz < tol && db < tol {
                return Ok(EmState {
                    fit,
                    frailty,
                    marginal,
                    iterations: iter,
                    trace,
                });
            }
        }
        Err(FrailtyError::NotConverged {
            theta: theta.as_f64(),
            iterations: options.max_em_iter,
        })
    }
}

fn max_abs_diff<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}

/// Log of `E[Z^D exp(-Z A)]` for `Z ~ Gamma(1/theta, theta)`, written to stay
/// accurate as theta approaches 0 (where it tends to `-A`).
pub(crate) fn group_marginal_term<T: Real>(events: usize, hazard: T, theta: T) -> T {
    if theta == T::zero() {
        return -hazard;
    }
    let a = T::one() / theta;
    let mut s = T::zero();
    for k in 0..events {
        s += ((a + T::from_usize_lossy(k)) / (a + hazard)).ln();
    }
    s - a * (hazard / a).ln_1p()
}

/// Fits the shared gamma-frailty model; `groups` gives each subject's group id.
pub fn fit_gamma_frailty<T: Real>(
    design: &DesignMatrix<T>,
    times: &[T],
    events: &[bool],
    groups: &[u16],
    options: &FrailtyOptions,
) -> Result<FrailtyFit<T>, FrailtyError> {
    let n = design.n_rows();
    if times.len() != n || events.len() != n || groups.len() != n {
        return Err(FrailtyError::Length);
    }
    if n == 0 {
        return Err(FrailtyError::NoGroups);
    }
    let ids: Vec<u16> = {
        let mut v = groups.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    };
    let index: BTreeMap<u16, usize> = ids.iter().enumerate().map(|(i, &g)| (g, i)).collect();
    let group_of: Vec<usize> = groups.iter().map(|g| index[g]).collect();
    let mut group_events = vec![0usize; ids.len()];
    for (i, &g) in group_of.iter().enumerate() {
        group_events[g] += usize::from(events[i]);
    }
    let problem = Problem {
        design,
        rs: RiskSets::new(times, events),
        times,
        events,
        group_of,
        group_events,
    };

    let (theta, state, at_boundary) = match options.theta {
        ThetaMode::Fixed(theta) => {
            if !(theta >= 0.0) || !theta.is_finite() {
                return Err(FrailtyError::Option(format!("theta must be >= 0, got {theta}")));
            }
            if theta == 0.0 {
                let fit = fit_cox_prepared(design, &problem.rs, None, None, &options.cox)?;
                let hazards = problem.group_hazards(&fit);
                let marginal = problem.marginal_loglik(&fit, &hazards, T::zero());
                let state = EmState {
                    fit,
                    frailty: vec![T::one(); ids.len()],
                    marginal,
                    iterations: 0,
                    trace: vec![marginal],
                };
                (T::zero(), state, false)
            } else {
                let theta = T::lit(theta);
                (theta, problem.em(theta, None, options)?, false)
            }
        }
        ThetaMode::Estimate { lower, upper, tol } => {
            if !(lower > 0.0 && upper > lower) {
                return Err(FrailtyError::Option(format!("bad theta interval [{lower}, {upper}]")));
            }
            let (theta, state) = golden_section_theta(&problem, T::lit(lower), T::lit(upper), T::lit(tol), options)?;
            let edge = T::lit(10.0 * tol);
            let at_boundary = theta - T::lit(lower) <= edge || T::lit(upper) - theta <= edge;
            (theta, state, at_boundary)
        }
    };

    Ok(FrailtyFit {
        column_names: design.column_names.clone(),
        beta: state.fit.beta.clone(),
        covariance: state.fit.covariance.clone(),
        theta,
        frailty_means: ids.iter().copied().zip(state.frailty.iter().copied()).collect(),
        baseline_cumhaz: state.fit.baseline_cumhaz.clone(),
        marginal_loglik: state.marginal,
        converged: true,
        at_boundary,
        em_iterations: state.iterations,
        loglik_trace: state.trace,
    })
}

fn golden_section_theta<T: Real>(
    problem: &Problem<'_, T>,
    lower: T,
    upper: T,
    tol: T,
    options: &FrailtyOptions,
) -> Result<(T, EmState<T>), FrailtyError> {
    let ratio = T::lit((5f64.sqrt() - 1.0) / 2.0);
    let (mut a, mut b) = (lower, upper);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut sc = problem.em(c, None, options)?;
    let mut sd = problem.em(d, Some(&sc), options)?;
    while b - a > tol {
        if sc.marginal >= sd.marginal {
            b = d;
            d = c;
            sd = sc;
            c = b - ratio * (b - a);
            sc = problem.em(c, Some(&sd), options)?;
        } else {
            a = c;
            c = d;
            sc = sd;
            d = a + ratio * (b - a);
            sd = problem.em(d, Some(&sc), options)?;
        }
    }
    // also consider the interval ends so a boundary optimum is reported there
    let mut best = if sc.marginal >= sd.marginal { (c, sc) } else { (d, sd) };
    for end in [lower, upper] {
        if (best.0 - end).abs() <= T::lit(10.0) * tol {
            let s = problem.em(end, Some(&best.1), options)?;
            if s.marginal > best.1.marginal {
                best = (end, s);
            }
        }
    }
    Ok(best)
}
