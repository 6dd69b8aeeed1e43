use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Right-continuous step function: `initial` before the first breakpoint and
/// `values[i]` on `[times[i], times[i+1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction<T> {
    pub initial: T,
    pub times: Vec<T>,
    pub values: Vec<T>,
}

impl<T: Real> StepFunction<T> {
    pub fn new(initial: T, times: Vec<T>, values: Vec<T>) -> Self {
        debug_assert_eq!(times.len(), values.len());
        debug_assert!(times.windows(2).all(|w| w[0] < w[1]));
        Self {
            initial,
            times,
            values,
        }
    }

    pub fn constant(initial: T) -> Self {
        Self::new(initial, Vec::new(), Vec::new())
    }

    /// Value at `t` (right-continuous).
    pub fn eval(&self, t: T) -> T {
        let idx = self.times.partition_point(|&s| s <= t);
        if idx == 0 {
            self.initial
        } else {
            self.values[idx - 1]
        }
    }

    /// Left limit at `t`, i.e. the value just before `t`.
    pub fn eval_left(&self, t: T) -> T {
        let idx = self.times.partition_point(|&s| s < t);
        if idx == 0 {
            self.initial
        } else {
            self.values[idx - 1]
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}
