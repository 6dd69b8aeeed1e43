//! Breslow-tie risk-set sweeps over subjects sorted by follow-up time.

use crate::linalg::SquareMatrix;
use crate::scalar::{max_of, Real};
use crate::step::StepFunction;

use super::design::DesignMatrix;

/// Subjects ordered by decreasing time, grouped into blocks of tied times.
#[derive(Debug, Clone)]
pub struct RiskSets<T> {
    order: Vec<usize>,
    /// `(start, end, n_events)` into `order`, latest time first.
    blocks: Vec<(usize, usize, usize)>,
    block_times: Vec<T>,
    events: Vec<bool>,
}

impl<T: Real> RiskSets<T> {
    pub fn new(times: &[T], events: &[bool]) -> Self {
        assert_eq!(times.len(), events.len(), "times and events must have equal length");
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[b].partial_cmp(&times[a]).expect("finite times"));
        let mut blocks = Vec::new();
        let mut block_times = Vec::new();
        let mut i = 0;
        while i < order.len() {
            let t = times[order[i]];
            let mut j = i;
            let mut d = 0;
            while j < order.len() && times[order[j]] == t {
                d += usize::from(events[order[j]]);
                j += 1;
            }
            blocks.push((i, j, d));
            block_times.push(t);
            i = j;
        }
        Self {
            order,
            blocks,
            block_times,
            events: events.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.blocks.iter().map(|b| b.2).sum()
    }

    /// Breslow log partial likelihood at linear predictors `eta`.
    pub fn log_likelihood(&self, eta: &[T]) -> T {
        let shift = max_of(eta);
        if !shift.is_finite() {
            return T::nan();
        }
        let mut s0 = T::zero();
        let mut ll = T::zero();
        for &(start, end, d) in &self.blocks {
            for &i in &self.order[start..end] {
                s0 += (eta[i] - shift).exp();
            }
            if d > 0 {
                for &i in &self.order[start..end] {
                    if self.events[i] {
                        ll += eta[i];
                    }
                }
                ll -= T::from_usize_lossy(d) * (s0.ln() + shift);
            }
        }
        ll
    }

    /// Log partial likelihood, score and Hessian with respect to `beta`
    /// for `eta = X beta + offset`.
    pub fn derivatives(
        &self,
        design: &DesignMatrix<T>,
        beta: &[T],
        offset: Option<&[T]>,
        want_hessian: bool,
    ) -> (T, Vec<T>, SquareMatrix<T>) {
        let p = design.n_cols();
        let eta = linear_predictor(design, beta, offset);
        let shift = max_of(&eta);
        let mut grad = vec![T::zero(); p];
        let mut hess = SquareMatrix::zeros(if want_hessian { p } else { 0 });
        if !shift.is_finite() {
            return (T::nan(), grad, hess);
        }
        let mut s0 = T::zero();
        let mut s1 = vec![T::zero(); p];
        let mut s2 = SquareMatrix::zeros(if want_hessian { p } else { 0 });
        let mut ll = T::zero();
        for &(start, end, d) in &self.blocks {
            for &i in &self.order[start..end] {
                let w = (eta[i] - shift).exp();
                let x = design.row(i);
                s0 += w;
                for a in 0..p {
                    let wx = w * x[a];
                    s1[a] += wx;
                    if want_hessian {
                        for b in 0..=a {
                            s2.add_to(a, b, wx * x[b]);
                        }
                    }
                }
            }
            if d == 0 {
                continue;
            }
            let df = T::from_usize_lossy(d);
            for &i in &self.order[start..end] {
                if self.events[i] {
                    ll += eta[i];
                    for (g, &x) in grad.iter_mut().zip(design.row(i)) {
                        *g += x;
                    }
                }
            }
            ll -= df * (s0.ln() + shift);
            for a in 0..p {
                let mean_a = s1[a] / s0;
                grad[a] -= df * mean_a;
                if want_hessian {
                    for b in 0..=a {
                        let cov = s2.get(a, b) / s0 - mean_a * (s1[b] / s0);
                        hess.add_to(a, b, -df * cov);
                    }
                }
            }
        }
        if want_hessian {
            hess.symmetrize_from_lower();
        }
        (ll, grad, hess)
    }

    /// Breslow cumulative baseline hazard for linear predictors `eta`.
    pub fn breslow(&self, eta: &[T]) -> StepFunction<T> {
        let shift = max_of(eta);
        let mut s0 = T::zero();
        let mut jumps: Vec<(T, T)> = Vec::new();
        for (&(start, end, d), &t) in self.blocks.iter().zip(&self.block_times) {
            for &i in &self.order[start..end] {
                s0 += (eta[i] - shift).exp();
            }
            if d > 0 {
                jumps.push((t, T::from_usize_lossy(d) / s0 * (-shift).exp()));
            }
        }
        jumps.reverse();
        let mut cum = T::zero();
        let (times, values): (Vec<T>, Vec<T>) = jumps
            .into_iter()
            .map(|(t, h)| {
                cum += h;
                (t, cum)
            })
            .unzip();
        StepFunction::new(T::zero(), times, values)
    }
}

pub(crate) fn linear_predictor<T: Real>(design: &DesignMatrix<T>, beta: &[T], offset: Option<&[T]>) -> Vec<T> {
    let mut eta = design.linear_predictor(beta);
    if let Some(off) = offset {
        for (e, &o) in eta.iter_mut().zip(off) {
            *e += o;
        }
    }
    eta
}
