//! Kaplan-Meier product-limit curves with Greenwood variance, and the
//! reverse Kaplan-Meier estimate of the censoring survival function.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::step::StepFunction;

/// Product-limit estimate on the distinct event times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KaplanMeierCurve<T> {
    pub event_times: Vec<T>,
    pub survival: Vec<T>,
    pub greenwood_variance: Vec<T>,
    pub at_risk: Vec<usize>,
    pub deaths: Vec<usize>,
}

impl<T: Real> KaplanMeierCurve<T> {
    /// Survival at `t`; 1 before the first event time.
    pub fn survival_at(&self, t: T) -> T {
        let idx = self.event_times.partition_point(|&s| s <= t);
        if idx == 0 {
            T::one()
        } else {
            self.survival[idx - 1]
        }
    }

    /// Survival just before `t`.
    pub fn survival_before(&self, t: T) -> T {
        let idx = self.event_times.partition_point(|&s| s < t);
        if idx == 0 {
            T::one()
        } else {
            self.survival[idx - 1]
        }
    }

    pub fn variance_at(&self, t: T) -> T {
        let idx = self.event_times.partition_point(|&s| s <= t);
        if idx == 0 {
            T::zero()
        } else {
            self.greenwood_variance[idx - 1]
        }
    }

    pub fn as_step_function(&self) -> StepFunction<T> {
        StepFunction::new(T::one(), self.event_times.clone(), self.survival.clone())
    }
}

/// Kaplan-Meier estimate. Subjects censored at an event time remain in that
/// time's risk set.
pub fn kaplan_meier<T: Real>(times: &[T], events: &[bool]) -> KaplanMeierCurve<T> {
    assert_eq!(times.len(), events.len(), "times and events must have equal length");
    product_limit(times, events, false)
}

/// Reverse Kaplan-Meier: the censoring indicator is the event. At tied times
/// events precede censorings, so a subject with an event at `t` is not in the
/// censoring risk set at `t`.
pub fn censoring_survival<T: Real>(times: &[T], events: &[bool]) -> KaplanMeierCurve<T> {
    assert_eq!(times.len(), events.len(), "times and events must have equal length");
    let censored: Vec<bool> = events.iter().map(|&e| !e).collect();
    product_limit(times, &censored, true)
}

/// Shared product-limit engine. With `exclude_others_at_tie`, subjects
/// without the counted outcome at time `t` leave the risk set before `t`.
fn product_limit<T: Real>(times: &[T], outcome: &[bool], exclude_others_at_tie: bool) -> KaplanMeierCurve<T> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).expect("finite times"));

    let mut curve = KaplanMeierCurve {
        event_times: Vec::new(),
        survival: Vec::new(),
        greenwood_variance: Vec::new(),
        at_risk: Vec::new(),
        deaths: Vec::new(),
    };
    let mut remaining = times.len();
    let mut surv = T::one();
    let mut gw_sum = T::zero();
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut j = i;
        let mut d = 0usize;
        while j < order.len() && times[order[j]] == t {
            if outcome[order[j]] {
                d += 1;
            }
            j += 1;
        }
        let tied = j - i;
        if d > 0 {
            let n = if exclude_others_at_tie {
                remaining - (tied - d)
            } else {
                remaining
            };
            let (nf, df) = (T::from_usize_lossy(n), T::from_usize_lossy(d));
            surv *= T::one() - df / nf;
            let variance = if d < n {
                gw_sum += df / (nf * (nf - df));
                surv * surv * gw_sum
            } else {
                surv = T::zero();
                T::zero()
            };
            curve.event_times.push(t);
            curve.survival.push(surv);
            curve.greenwood_variance.push(variance);
            curve.at_risk.push(n);
            curve.deaths.push(d);
        }
        remaining -= tied;
        i = j;
    }
    curve
}
