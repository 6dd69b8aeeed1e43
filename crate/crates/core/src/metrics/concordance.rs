//! Truncated Harrell and inverse-probability-of-censoring weighted C.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{percentile, MetricError};
use crate::scalar::Real;
use crate::survival::{censoring_survival, KaplanMeierCurve};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcordanceMethod {
    HarrellTruncated,
    Ipcw,
}

/// Credit given to a usable pair with equal predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieHandling {
    #[default]
    Zero,
    Half,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcordanceOptions {
    pub ties: TieHandling,
    /// Bootstrap replicates for the percentile interval; 0 disables it.
    pub bootstrap: usize,
    pub seed: u64,
    pub level: f64,
}

impl Default for ConcordanceOptions {
    fn default() -> Self {
        Self {
            ties: TieHandling::Zero,
            bootstrap: 200,
            seed: 0,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceResult<T> {
    pub estimate: T,
    pub ci_low: T,
    pub ci_high: T,
    pub n_usable_pairs: u64,
    /// Usable pairs discarded because their weight was undefined.
    pub n_dropped_pairs: u64,
    pub method: ConcordanceMethod,
}

#[derive(Debug, Clone, Copy)]
struct PairSums<T> {
    concordant: T,
    total: T,
    usable: u64,
    dropped: u64,
}

struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self { tree: vec![0; n + 1] }
    }

    fn add(&mut self, rank: usize) {
        let mut i = rank + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks strictly below `rank`.
    fn below(&self, rank: usize) -> u64 {
        let mut i = rank;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Weighted pair sums in O(n log n). A pair `(i, j)` is usable when `i` has
/// an event at `T_i <= horizon` and `T_i < T_j`; it is concordant when
/// `pred_i > pred_j`. `weight(i)` returns `None` to drop all pairs anchored at `i`.
fn pair_sums<T: Real>(
    predictions: &[T],
    times: &[T],
    events: &[bool],
    horizon: T,
    ties: TieHandling,
    weight: impl Fn(usize) -> Option<T>,
) -> PairSums<T> {
    let n = predictions.len();
    let mut distinct: Vec<T> = predictions.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite predictions"));
    distinct.dedup();
    let rank = |v: T| distinct.partition_point(|&d| d < v);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].partial_cmp(&times[a]).expect("finite times"));

    let mut later = Fenwick::new(distinct.len());
    let mut n_later = 0u64;
    let mut sums = PairSums {
        concordant: T::zero(),
        total: T::zero(),
        usable: 0,
        dropped: 0,
    };
    let half = T::lit(0.5);
    let mut i = 0;
    while i < n {
        let t = times[order[i]];
        let mut j = i;
        while j < n && times[order[j]] == t {
            j += 1;
        }
        if t <= horizon && n_later > 0 {
            for &a in &order[i..j] {
                if !events[a] {
                    continue;
                }
                let Some(w) = weight(a) else {
                    sums.dropped += n_later;
                    continue;
                };
                let r = rank(predictions[a]);
                let lower = later.below(r);
                let mut credit = T::from_u64(lower).expect("count fits");
                if ties == TieHandling::Half {
                    let equal = later.below(r + 1) - lower;
                    credit += half * T::from_u64(equal).expect("count fits");
                }
                sums.concordant += w * credit;
                sums.total += w * T::from_u64(n_later).expect("count fits");
                sums.usable += n_later;
            }
        }
        for &a in &order[i..j] {
            later.add(rank(predictions[a]));
        }
        n_later += (j - i) as u64;
        i = j;
    }
    sums
}

fn check_inputs<T: Real>(predictions: &[T], times: &[T], events: &[bool], horizon: T) -> Result<(), MetricError> {
    if predictions.len() != times.len() || times.len() != events.len() {
        return Err(MetricError::Length);
    }
    if predictions.iter().any(|p| !p.is_finite()) {
        return Err(MetricError::Input("predictions must be finite".into()));
    }
    if !(horizon > T::zero()) {
        return Err(MetricError::Input("horizon must be positive".into()));
    }
    Ok(())
}

fn harrell_point<T: Real>(predictions: &[T], times: &[T], events: &[bool], horizon: T, ties: TieHandling) -> Option<(T, PairSums<T>)> {
    let s = pair_sums(predictions, times, events, horizon, ties, |_| Some(T::one()));
    (s.usable > 0).then(|| (s.concordant / s.total, s))
}

fn ipcw_point<T: Real>(
    predictions: &[T],
    times: &[T],
    events: &[bool],
    horizon: T,
    ties: TieHandling,
    censor: &KaplanMeierCurve<T>,
) -> Option<(T, PairSums<T>)> {
    let s = pair_sums(predictions, times, events, horizon, ties, |i| {
        let g = censor.survival_before(times[i]);
        (g > T::zero()).then(|| T::one() / (g * g))
    });
    (s.usable > 0 && s.total > T::zero()).then(|| (s.concordant / s.total, s))
}

fn bootstrap_interval<T: Real>(
    n: usize,
    estimate: T,
    options: &ConcordanceOptions,
    replicate: impl Fn(&[usize]) -> Option<T> + Sync,
) -> (T, T) {
    if options.bootstrap == 0 {
        return (estimate, estimate);
    }
    let mut values: Vec<T> = (0..options.bootstrap)
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            rng.set_stream(b as u64 + 1);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            replicate(&idx)
        })
        .collect();
    if values.is_empty() {
        return (estimate, estimate);
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite replicate"));
    let alpha = (1.0 - options.level) / 2.0;
    let lo = percentile(&values, alpha);
    let hi = percentile(&values, 1.0 - alpha);
    (lo.min(estimate), hi.max(estimate))
}

fn gather<T: Copy>(xs: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| xs[i]).collect()
}

/// Harrell's C restricted to pairs whose earlier member has an event by
/// `horizon`, with a seeded percentile-bootstrap interval.
pub fn harrell_c<T: Real>(
    predictions: &[T],
    times: &[T],
    events: &[bool],
    horizon: T,
    options: &ConcordanceOptions,
) -> Result<ConcordanceResult<T>, MetricError> {
    check_inputs(predictions, times, events, horizon)?;
    let (estimate, sums) =
        harrell_point(predictions, times, events, horizon, options.ties).ok_or(MetricError::UndefinedConcordance)?;
    let (ci_low, ci_high) = bootstrap_interval(predictions.len(), estimate, options, |idx| {
        harrell_point(&gather(predictions, idx), &gather(times, idx), &gather(events, idx), horizon, options.ties)
            .map(|r| r.0)
    });
    Ok(ConcordanceResult {
        estimate,
        ci_low,
        ci_high,
        n_usable_pairs: sums.usable,
        n_dropped_pairs: 0,
        method: ConcordanceMethod::HarrellTruncated,
    })
}

/// IPCW C with pair weights `1 / G(T_i-)^2` from the marginal censoring
/// curve. Bootstrap replicates re-estimate the censoring curve.
pub fn ipcw_c<T: Real>(
    predictions: &[T],
    times: &[T],
    events: &[bool],
    horizon: T,
    censor_curve: &KaplanMeierCurve<T>,
    options: &ConcordanceOptions,
) -> Result<ConcordanceResult<T>, MetricError> {
    check_inputs(predictions, times, events, horizon)?;
    let (estimate, sums) = ipcw_point(predictions, times, events, horizon, options.ties, censor_curve)
        .ok_or(MetricError::UndefinedConcordance)?;
    let (ci_low, ci_high) = bootstrap_interval(predictions.len(), estimate, options, |idx| {
        let (t, e) = (gather(times, idx), gather(events, idx));
        let g = censoring_survival(&t, &e);
        ipcw_point(&gather(predictions, idx), &t, &e, horizon, options.ties, &g).map(|r| r.0)
    });
    Ok(ConcordanceResult {
        estimate,
        ci_low,
        ci_high,
        n_usable_pairs: sums.usable,
        n_dropped_pairs: sums.dropped,
        method: ConcordanceMethod::Ipcw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest};

    fn no_boot() -> ConcordanceOptions {
        ConcordanceOptions {
            bootstrap: 0,
            ..Default::default()
        }
    }

    fn brute(pred: &[f64], times: &[f64], events: &[bool], horizon: f64, half: bool) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..pred.len() {
            for j in 0..pred.len() {
                if events[i] && times[i] <= horizon && times[i] < times[j] {
                    den += 1.0;
                    if pred[i] > pred[j] {
                        num += 1.0;
                    } else if half && pred[i] == pred[j] {
                        num += 0.5;
                    }
                }
            }
        }
        (den > 0.0).then(|| num / den)
    }

    #[test]
    fn hand_enumerated_pairs() {
        let t = [1.0f64, 2.0, 3.0];
        let e = [true, true, false];
        let c = harrell_c(&[0.9, 0.5, 0.1], &t, &e, 10.0, &no_boot()).unwrap();
        assert_eq!(c.estimate, 1.0);
        assert_eq!(c.n_usable_pairs, 3);
        let c = harrell_c(&[0.5, 0.9, 0.1], &t, &e, 10.0, &no_boot()).unwrap();
        assert!((c.estimate - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn no_usable_pairs_is_an_error() {
        let r = harrell_c(&[0.1, 0.2], &[1.0, 2.0], &[false, false], 5.0, &no_boot());
        assert_eq!(r, Err(MetricError::UndefinedConcordance));
        // event after the horizon does not count
        let r = harrell_c(&[0.1, 0.2], &[6.0, 7.0], &[true, true], 5.0, &no_boot());
        assert_eq!(r, Err(MetricError::UndefinedConcordance));
    }

    #[test]
    fn ipcw_without_censoring_equals_harrell() {
        let t = [1.0, 2.0, 2.0, 4.0, 5.0];
        let e = [true; 5];
        let p = [0.4, 0.3, 0.35, 0.1, 0.2];
        let g = censoring_survival(&t, &e);
        let h = harrell_c(&p, &t, &e, 10.0, &no_boot()).unwrap();
        let w = ipcw_c(&p, &t, &e, 10.0, &g, &no_boot()).unwrap();
        assert_eq!(h.estimate, w.estimate);
    }

    #[test]
    fn single_pair_ignores_weight() {
        let t = [1.0, 2.0, 3.0];
        let e = [false, true, false];
        let g = censoring_survival(&t, &e);
        let w = ipcw_c(&[0.0, 0.9, 0.1], &t, &e, 10.0, &g, &no_boot()).unwrap();
        assert_eq!(w.n_usable_pairs, 1);
        assert_eq!(w.estimate, 1.0);
    }

    #[test]
    fn bootstrap_interval_contains_estimate_and_is_seeded() {
        let n = 200;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let t: Vec<f64> = p.iter().map(|&x| (1.0 - x) * 10.0 + rng.random_range(0.0..5.0)).collect();
        let e: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        let opts = ConcordanceOptions {
            seed: 4,
            ..Default::default()
        };
        let a = harrell_c(&p, &t, &e, 12.0, &opts).unwrap();
        assert!(a.ci_low <= a.estimate && a.estimate <= a.ci_high);
        assert!(a.ci_low < a.ci_high);
        assert_eq!(a, harrell_c(&p, &t, &e, 12.0, &opts).unwrap());
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            rows in prop::collection::vec((0u8..12, any::<bool>(), 0u8..8), 2..200),
            horizon in 1u8..14,
            half in any::<bool>(),
        ) {
            let t: Vec<f64> = rows.iter().map(|r| f64::from(r.0) + 1.0).collect();
            let e: Vec<bool> = rows.iter().map(|r| r.1).collect();
            let p: Vec<f64> = rows.iter().map(|r| f64::from(r.2) / 8.0).collect();
            let h = f64::from(horizon);
            let opts = ConcordanceOptions {
                ties: if half { TieHandling::Half } else { TieHandling::Zero },
                ..no_boot()
            };
            match (harrell_c(&p, &t, &e, h, &opts), brute(&p, &t, &e, h, half)) {
                (Ok(c), Some(b)) => prop_assert!((c.estimate - b).abs() < 1e-12),
                (Err(MetricError::UndefinedConcordance), None) => {}
                (got, want) => prop_assert!(false, "{got:?} vs {want:?}"),
            }
        }

        #[test]
        fn invariant_under_increasing_transform(
            rows in prop::collection::vec((0.1f64..10.0, any::<bool>(), -3.0f64..3.0), 3..60),
        ) {
            let t: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let e: Vec<bool> = rows.iter().map(|r| r.1).collect();
            let p: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let q: Vec<f64> = p.iter().map(|x| x.exp() * 2.0 + 1.0).collect();
            let g = censoring_survival(&t, &e);
            if let Ok(a) = harrell_c(&p, &t, &e, 8.0, &no_boot()) {
                let b = harrell_c(&q, &t, &e, 8.0, &no_boot()).unwrap();
                prop_assert_eq!(a.estimate, b.estimate);
                let a = ipcw_c(&p, &t, &e, 8.0, &g, &no_boot()).unwrap();
                let b = ipcw_c(&q, &t, &e, 8.0, &g, &no_boot()).unwrap();
                prop_assert_eq!(a.estimate, b.estimate);
            }
        }
    }
}
