//! Observed/expected ratios, the calibration line, binned calibration and the
//! Greenwood-Nam-D'Agostino goodness-of-fit test.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use super::poisson::poisson_glm;
use super::{MetricError, Z_95};
use crate::cox::DesignMatrix;
use crate::scalar::Real;
use crate::survival::kaplan_meier;

/// Minimum events per bin before the test statistic is computed.
pub const MIN_BIN_EVENTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedExpected<T> {
    pub n: usize,
    pub observed: T,
    pub expected: T,
    /// `None` when the ratio is undefined; see `undefined_reason`.
    pub ratio: Option<T>,
    pub ci_low: Option<T>,
    pub ci_high: Option<T>,
    pub undefined_reason: Option<String>,
}

fn oe_from_sums<T: Real>(n: usize, observed: T, expected: T) -> ObservedExpected<T> {
    let mut out = ObservedExpected {
        n,
        observed,
        expected,
        ratio: None,
        ci_low: None,
        ci_high: None,
        undefined_reason: None,
    };
    if !(expected > T::zero()) {
        out.undefined_reason = Some("expected count is zero".into());
        return out;
    }
    let ratio = observed / expected;
    out.ratio = Some(ratio);
    if observed > T::zero() {
        // the intercept of the offset Poisson model is log(O/E) with
        // variance 1/O
        let half = T::lit(Z_95) / observed.sqrt();
        out.ci_low = Some((ratio.ln() - half).exp());
        out.ci_high = Some((ratio.ln() + half).exp());
    } else {
        out.undefined_reason = Some("no observed events; interval undefined".into());
    }
    out
}

fn check_oe<T: Real>(events: &[bool], expected: &[T]) -> Result<(), MetricError> {
    if events.len() != expected.len() {
        return Err(MetricError::Length);
    }
    if expected.iter().any(|&h| !(h >= T::zero()) || !h.is_finite()) {
        return Err(MetricError::Input("expected counts must be finite and non-negative".into()));
    }
    Ok(())
}

/// Ratio of observed events to the sum of expected cumulative hazards
/// `H_i(T_i)`, the maximum-likelihood `exp(alpha)` of the intercept-only
/// Poisson model with offset `log H_i`.
pub fn observed_expected<T: Real>(events: &[bool], expected: &[T]) -> Result<ObservedExpected<T>, MetricError> {
    check_oe(events, expected)?;
    let observed = T::from_usize_lossy(events.iter().filter(|&&e| e).count());
    Ok(oe_from_sums(events.len(), observed, expected.iter().copied().sum()))
}

/// Per-group ratios from the Poisson model with the group as a factor and no
/// reference level; each group's coefficient is its own `log(O/E)`.
pub fn observed_expected_by_group<T: Real, G: Ord + Clone>(
    events: &[bool],
    expected: &[T],
    groups: &[G],
) -> Result<BTreeMap<G, ObservedExpected<T>>, MetricError> {
    check_oe(events, expected)?;
    if groups.len() != events.len() {
        return Err(MetricError::Length);
    }
    let mut sums: BTreeMap<G, (usize, T, T)> = BTreeMap::new();
    for ((g, &e), &h) in groups.iter().zip(events).zip(expected) {
        let s = sums.entry(g.clone()).or_insert((0, T::zero(), T::zero()));
        s.0 += 1;
        if e {
            s.1 += T::one();
        }
        s.2 += h;
    }
    Ok(sums.into_iter().map(|(g, (n, o, e))| (g, oe_from_sums(n, o, e))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationLine<T> {
    pub intercept: T,
    pub intercept_ci: (T, T),
    pub slope: T,
    pub slope_ci: (T, T),
    pub n_used: usize,
    /// Subjects whose `R` was not finite (zero cumulative hazard).
    pub n_excluded: usize,
}

/// Poisson regression of the event indicator on an intercept and `R`
/// (normally `log H_i(T_i)`). Non-finite `R` values are excluded.
pub fn calibration_line<T: Real>(events: &[bool], r: &[T]) -> Result<CalibrationLine<T>, MetricError> {
    if events.len() != r.len() {
        return Err(MetricError::Length);
    }
    let keep: Vec<usize> = (0..r.len()).filter(|&i| r[i].is_finite()).collect();
    let rows: Vec<Vec<T>> = keep.iter().map(|&i| vec![T::one(), r[i]]).collect();
    let y: Vec<T> = keep.iter().map(|&i| if events[i] { T::one() } else { T::zero() }).collect();
    if keep.is_empty() || keep.iter().all(|&i| r[i] == r[keep[0]]) {
        return Err(MetricError::Singular { column: "R".into() });
    }
    let design = DesignMatrix::from_rows(&rows, vec!["intercept".into(), "R".into()])
        .map_err(|e| MetricError::Input(e.to_string()))?;
    let fit = poisson_glm(&y, &design, None)?;
    let z = T::lit(Z_95);
    Ok(CalibrationLine {
        intercept: fit.coefficients[0],
        intercept_ci: fit.wald_interval(0, z),
        slope: fit.coefficients[1],
        slope_ci: fit.wald_interval(1, z),
        n_used: keep.len(),
        n_excluded: r.len() - keep.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin<T> {
    pub n: usize,
    /// Events observed by the horizon.
    pub events: usize,
    pub mean_predicted: T,
    pub min_predicted: T,
    pub max_predicted: T,
    /// `1 - KM(horizon)` within the bin.
    pub observed_risk: T,
    pub variance: T,
    pub ci_low: T,
    pub ci_high: T,
    #[serde(skip)]
    members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBins<T> {
    pub requested: usize,
    pub bins: Vec<CalibrationBin<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GndResult<T> {
    pub statistic: T,
    pub df: usize,
    pub p_value: T,
    pub bins: CalibrationBins<T>,
}

/// `round(n^(1/3))`, at least 1.
pub fn default_bin_count(n: usize) -> usize {
    ((n as f64).cbrt().round() as usize).max(1)
}

/// Split subject indices into `k` groups of consecutive predicted risk with
/// sizes differing by at most one; a boundary inside a run of tied
/// predictions moves to the end of that run.
pub fn quantile_groups<T: Real>(predictions: &[T], k: usize) -> Vec<Vec<usize>> {
    let n = predictions.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| predictions[a].partial_cmp(&predictions[b]).expect("finite predictions"));
    let k = k.clamp(1, n.max(1));
    let mut cuts = vec![0];
    for j in 1..k {
        let mut b = ((j * n) as f64 / k as f64).round() as usize;
        while b > 0 && b < n && predictions[order[b]] == predictions[order[b - 1]] {
            b += 1;
        }
        if b > *cuts.last().unwrap() && b < n {
            cuts.push(b);
        }
    }
    cuts.push(n);
    cuts.windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| order[w[0]..w[1]].to_vec())
        .collect()
}

fn make_bin<T: Real>(members: Vec<usize>, predictions: &[T], times: &[T], events: &[bool], horizon: T) -> CalibrationBin<T> {
    let t: Vec<T> = members.iter().map(|&i| times[i]).collect();
    let e: Vec<bool> = members.iter().map(|&i| events[i]).collect();
    let km = kaplan_meier(&t, &e);
    let observed_risk = T::one() - km.survival_at(horizon);
    let variance = km.variance_at(horizon);
    let half = T::lit(Z_95) * variance.sqrt();
    let preds = members.iter().map(|&i| predictions[i]);
    let sum: T = preds.clone().sum();
    CalibrationBin {
        n: members.len(),
        events: members.iter().filter(|&&i| events[i] && times[i] <= horizon).count(),
        mean_predicted: sum / T::from_usize_lossy(members.len()),
        min_predicted: preds.clone().fold(T::infinity(), T::min),
        max_predicted: preds.fold(T::neg_infinity(), T::max),
        observed_risk,
        variance,
        ci_low: (observed_risk - half).max(T::zero()),
        ci_high: (observed_risk + half).min(T::one()),
        members,
    }
}

fn check_curve_inputs<T: Real>(predictions: &[T], times: &[T], events: &[bool]) -> Result<(), MetricError> {
    if predictions.len() != times.len() || times.len() != events.len() {
        return Err(MetricError::Length);
    }
    if predictions.iter().any(|p| !p.is_finite()) {
        return Err(MetricError::Input("predictions must be finite".into()));
    }
    Ok(())
}

/// Observed versus predicted risk by quantile group, with Greenwood 95%
/// intervals clipped to `[0, 1]`. No merging.
pub fn calibration_plot_data<T: Real>(
    predictions: &[T],
    times: &[T],
    events: &[bool],
    horizon: T,
    k: usize,
) -> Result<CalibrationBins<T>, MetricError> {
    check_curve_inputs(predictions, times, events)?;
    if predictions.is_empty() {
        return Err(MetricError::Input("no subjects".into()));
    }
    let bins = quantile_groups(predictions, k)
        .into_iter()
        .map(|m| make_bin(m, predictions, times, events, horizon))
        .collect();
    Ok(CalibrationBins { requested: k, bins })
}

/// Merge the bin with the fewest events (lowest index on ties) into its
/// neighbour with fewer events (the lower neighbour on ties) until every bin
/// has at least `MIN_BIN_EVENTS` events or one bin remains.
fn merge_sparse_bins<T: Real>(
    mut bins: Vec<CalibrationBin<T>>,
    predictions: &[T],
    times: &[T],
    events: &[bool],
    horizon: T,
) -> Vec<CalibrationBin<T>> {
    while bins.len() > 1 {
        let Some(worst) = (0..bins.len())
            .filter(|&i| bins[i].events < MIN_BIN_EVENTS)
            .min_by_key(|&i| (bins[i].events, i))
        else {
            break;
        };
        let other = match (worst.checked_sub(1), (worst + 1 < bins.len()).then_some(worst + 1)) {
            (Some(l), Some(r)) => {
                if bins[r].events < bins[l].events {
                    r
                } else {
                    l
                }
            }
            (Some(l), None) => l,
            (None, Some(r)) => r,
            (None, None) => unreachable!("more than one bin"),
        };
        let (lo, hi) = (worst.min(other), worst.max(other));
        let upper = bins.remove(hi);
        let mut members = std::mem::take(&mut bins[lo].members);
        members.extend(upper.members);
        bins[lo] = make_bin(members, predictions, times, events, horizon);
    }
    bins
}

/// Greenwood-Nam-D'Agostino test: `sum_k (KM_k - pbar_k)^2 / Var_k` over
/// quantile bins of predicted risk, referred to chi-square with `K - 1`
/// degrees of freedom. `k` defaults to `round(N^(1/3))`.
pub fn gnd_test<T: Real>(
    predictions: &[T],
    times: &[T],
    events: &[bool],
    horizon: T,
    k: Option<usize>,
) -> Result<GndResult<T>, MetricError> {
    check_curve_inputs(predictions, times, events)?;
    if predictions.len() < 8 {
        return Err(MetricError::Input("GND test needs at least 8 subjects".into()));
    }
    let k = k.unwrap_or_else(|| default_bin_count(predictions.len()));
    let initial = calibration_plot_data(predictions, times, events, horizon, k)?;
    let bins = merge_sparse_bins(initial.bins, predictions, times, events, horizon);
    if bins.len() < 2 {
        return Err(MetricError::Untestable { bins: bins.len() });
    }
    let mut statistic = T::zero();
    for (idx, b) in bins.iter().enumerate() {
        if !(b.variance > T::zero()) {
            return Err(MetricError::ZeroVariance { bin: idx });
        }
        let d = b.observed_risk - b.mean_predicted;
        statistic += d * d / b.variance;
    }
    let df = bins.len() - 1;
    let p_value = T::lit(chi_square_sf(statistic.as_f64(), df));
    Ok(GndResult {
        statistic,
        df,
        p_value,
        bins: CalibrationBins { requested: k, bins },
    })
}

/// Upper tail of the chi-square distribution.
pub fn chi_square_sf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(df as f64 / 2.0, x / 2.0).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn oe_hand_case_and_scaling() {
        let e = [true, false, true];
        let oe = observed_expected(&e, &[0.5, 0.5, 1.0]).unwrap();
        assert_eq!(oe.ratio, Some(1.0));
        let lo = oe.ci_low.unwrap();
        assert_relative_eq!(lo, (-Z_95 / 2f64.sqrt()).exp(), epsilon = 1e-14);
        let doubled = observed_expected(&e, &[1.0, 1.0, 2.0]).unwrap();
        assert_eq!(doubled.ratio, Some(0.5));
    }

    #[test]
    fn oe_matches_poisson_intercept() {
        let e = [true, false, true, true, false, false];
        let h = [0.3, 0.2, 0.9, 0.4, 0.05, 0.6];
        let oe = observed_expected(&e, &h).unwrap();
        let y: Vec<f64> = e.iter().map(|&v| f64::from(u8::from(v))).collect();
        let off: Vec<f64> = h.iter().map(|v: &f64| v.ln()).collect();
        let d = DesignMatrix::from_rows(&vec![vec![1.0]; 6], vec!["a".into()]).unwrap();
        let fit = poisson_glm(&y, &d, Some(&off)).unwrap();
        assert_relative_eq!(oe.ratio.unwrap(), fit.coefficients[0].exp(), epsilon = 1e-10);
        let (lo, hi) = fit.wald_interval(0, Z_95);
        assert_relative_eq!(oe.ci_low.unwrap(), lo.exp(), epsilon = 1e-8);
        assert_relative_eq!(oe.ci_high.unwrap(), hi.exp(), epsilon = 1e-8);
    }

    #[test]
    fn oe_groups_and_undefined() {
        let e = [true, false, true, false];
        let h = [0.5, 0.5, 0.0, 0.0];
        let g = ["a", "a", "b", "b"];
        let by = observed_expected_by_group(&e, &h, &g).unwrap();
        assert_eq!(by["a"].ratio, Some(1.0));
        assert!(by["b"].ratio.is_none());
        assert!(by["b"].undefined_reason.is_some());
    }

    #[test]
    fn calibration_line_shift_identity() {
        let e = [true, false, true, false, false, true, false, false];
        let r = [-1.0, -2.0, 0.2, -0.5, -3.0, -0.1, -1.5, -0.8];
        let a = calibration_line(&e, &r).unwrap();
        let c = 0.7;
        let shifted: Vec<f64> = r.iter().map(|v| v + c).collect();
        let b = calibration_line(&e, &shifted).unwrap();
        assert_relative_eq!(a.slope, b.slope, epsilon = 1e-8);
        assert_relative_eq!(b.intercept, a.intercept - a.slope * c, epsilon = 1e-8);
    }

    #[test]
    fn calibration_line_degenerate_and_exclusions() {
        assert!(matches!(calibration_line(&[true, false], &[0.0, 0.0]), Err(MetricError::Singular { .. })));
        let e = [true, false, true, false, true];
        let r = [f64::NEG_INFINITY, -1.0, -0.5, -2.0, 0.1];
        let line = calibration_line(&e, &r).unwrap();
        assert_eq!(line.n_excluded, 1);
        assert_eq!(line.n_used, 4);
    }

    #[test]
    fn bin_count_rule() {
        assert_eq!(default_bin_count(1000), 10);
        assert_eq!(default_bin_count(8), 2);
        assert_eq!(default_bin_count(1_000_000), 100);
    }

    #[test]
    fn quantile_groups_balanced_and_tie_aware() {
        let p: Vec<f64> = (0..23).map(|i| f64::from(i) * 0.01).collect();
        let g = quantile_groups(&p, 5);
        let sizes: Vec<usize> = g.iter().map(Vec::len).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 23);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);

        let p = [0.1, 0.2, 0.2, 0.2, 0.2, 0.3];
        let g = quantile_groups(&p, 3);
        for grp in &g {
            let has = grp.iter().any(|&i| p[i] == 0.2);
            if has {
                assert_eq!(grp.iter().filter(|&&i| p[i] == 0.2).count(), 4);
            }
        }
    }

    // three groups of ten; each group's events produce a known KM
    fn thirty() -> (Vec<f64>, Vec<bool>, Vec<f64>) {
        let mut t = Vec::new();
        let mut e = Vec::new();
        let mut p = Vec::new();
        for (g, n_events) in [(0usize, 5usize), (1, 6), (2, 8)] {
            for i in 0..10 {
                let event = i < n_events;
                t.push(if event { 1.0 + i as f64 } else { 5.0 + i as f64 * 0.5 + g as f64 * 0.01 });
                e.push(event);
                p.push(0.3 + 0.2 * g as f64 + 0.001 * i as f64);
            }
        }
        (t, e, p)
    }

    fn hand_km(t: &[f64], e: &[bool], horizon: f64) -> (f64, f64) {
        let mut s = 1.0;
        let mut gw = 0.0;
        let mut times: Vec<f64> = t.iter().zip(e).filter(|(&x, &d)| d && x <= horizon).map(|(&x, _)| x).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        for &u in &times {
            let n = t.iter().filter(|&&x| x >= u).count() as f64;
            let d = t.iter().zip(e).filter(|(&x, &ev)| ev && x == u).count() as f64;
            s *= 1.0 - d / n;
            gw += d / (n * (n - d));
        }
        (1.0 - s, s * s * gw)
    }

    #[test]
    fn gnd_thirty_subject_hand_oracle() {
        let (t, e, p) = thirty();
        let horizon = 20.0;
        let res = gnd_test(&p, &t, &e, horizon, Some(3)).unwrap();
        assert_eq!(res.df, 2);
        let mut stat = 0.0;
        for g in 0..3 {
            let r = g * 10..(g + 1) * 10;
            let (obs, var) = hand_km(&t[r.clone()], &e[r.clone()], horizon);
            let pbar = p[r].iter().sum::<f64>() / 10.0;
            stat += (obs - pbar).powi(2) / var;
        }
        assert!((res.statistic - stat).abs() < 1e-10, "{} vs {stat}", res.statistic);
        assert_relative_eq!(res.p_value, (-stat / 2.0).exp(), epsilon = 1e-12);
    }

    #[test]
    fn gnd_perfect_predictions() {
        let (t, e, _) = thirty();
        let horizon = 20.0;
        let mut p = vec![0.0; 30];
        for g in 0..3 {
            let r = g * 10..(g + 1) * 10;
            let (obs, _) = hand_km(&t[r.clone()], &e[r.clone()], horizon);
            p[r].iter_mut().for_each(|v| *v = obs);
        }
        let res = gnd_test(&p, &t, &e, horizon, Some(3)).unwrap();
        assert!(res.statistic.abs() < 1e-24);
        assert_eq!(res.p_value, 1.0);
    }

    #[test]
    fn gnd_merges_sparse_bins() {
        // ten bins of five with events 1..=5 per bin spread: merging is required
        let mut t = Vec::new();
        let mut e = Vec::new();
        let mut p = Vec::new();
        for b in 0..10 {
            for i in 0..5 {
                let ev = i < 1 + b % 5;
                t.push(if ev { 1.0 + i as f64 } else { 30.0 });
                e.push(ev);
                p.push(b as f64 * 0.1 + i as f64 * 0.001);
            }
        }
        let res = gnd_test(&p, &t, &e, 20.0, Some(10)).unwrap();
        assert!(res.bins.bins.iter().all(|b| b.events >= MIN_BIN_EVENTS));
        assert_eq!(res.df + 1, res.bins.bins.len());
        assert_eq!(res.bins.bins.iter().map(|b| b.n).sum::<usize>(), 50);
    }

    #[test]
    fn gnd_untestable() {
        let p: Vec<f64> = (0..10).map(|i| f64::from(i) / 10.0).collect();
        let t = vec![5.0; 10];
        let mut e = vec![false; 10];
        e[0] = true;
        assert_eq!(gnd_test(&p, &t, &e, 10.0, None), Err(MetricError::Untestable { bins: 1 }));
    }

    #[test]
    fn plot_data_bins() {
        let (t, e, p) = thirty();
        let one = calibration_plot_data(&p, &t, &e, 20.0, 1).unwrap();
        assert_eq!(one.bins.len(), 1);
        assert_relative_eq!(one.bins[0].mean_predicted, p.iter().sum::<f64>() / 30.0, epsilon = 1e-15);

        let two = calibration_plot_data(&p[..20], &t[..20], &e[..20], 20.0, 2).unwrap();
        for (g, b) in two.bins.iter().enumerate() {
            let r = g * 10..(g + 1) * 10;
            let (obs, var) = hand_km(&t[r.clone()], &e[r], 20.0);
            assert_relative_eq!(b.ci_low, (obs - 1.96 * var.sqrt()).max(0.0), epsilon = 1e-12);
            assert_relative_eq!(b.ci_high, (obs + 1.96 * var.sqrt()).min(1.0), epsilon = 1e-12);
        }

        let zero = calibration_plot_data(&[0.1, 0.2], &[5.0, 6.0], &[false, false], 4.0, 1).unwrap();
        assert_eq!(zero.bins[0].observed_risk, 0.0);
        assert_eq!(zero.bins[0].ci_low, 0.0);
    }

    proptest! {
        #[test]
        fn gnd_invariant_to_within_bin_permutation(seed in 0u64..1000) {
            let (t, e, p) = thirty();
            // permute subjects inside group 1 without changing its members' predictions order
            let mut idx: Vec<usize> = (0..30).collect();
            let k = (seed % 9) as usize + 1;
            idx[10..20].rotate_left(k);
            let t2: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
            let e2: Vec<bool> = idx.iter().map(|&i| e[i]).collect();
            let p2: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
            let a = gnd_test(&p, &t, &e, 20.0, Some(3)).unwrap();
            let b = gnd_test(&p2, &t2, &e2, 20.0, Some(3)).unwrap();
            prop_assert!((a.statistic - b.statistic).abs() < 1e-12);
        }
    }
}
