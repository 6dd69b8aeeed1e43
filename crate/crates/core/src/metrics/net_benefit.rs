//! Net benefit, decision curves and conversion of net-benefit differences
//! into counts per 1000 patients.

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::scalar::Real;
use crate::survival::kaplan_meier;

/// Thresholds reported by default.
pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.025, 0.0375, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetBenefitMode {
    /// Event probability among the treated from a Kaplan-Meier curve.
    #[default]
    Km,
    /// Raw counts; every subject must have an event by the horizon or be
    /// followed up to it.
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetBenefit<T> {
    pub value: T,
    pub n_treated: usize,
    /// Nobody was treated, so the value is the treat-none benefit.
    pub none_treated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionCurve<T> {
    pub thresholds: Vec<T>,
    pub nb_model: Vec<T>,
    pub nb_treat_all: Vec<T>,
    pub nb_treat_none: Vec<T>,
    pub event_probability: T,
}

fn odds<T: Real>(p: T) -> T {
    p / (T::one() - p)
}

fn check_threshold<T: Real>(p: T) -> Result<(), MetricError> {
    if p > T::zero() && p < T::one() {
        Ok(())
    } else {
        Err(MetricError::Input(format!("threshold must lie in (0, 1), got {p}")))
    }
}

fn binary_outcomes<T: Real>(times: &[T], events: &[bool], horizon: T) -> Result<Vec<bool>, MetricError> {
    times
        .iter()
        .zip(events)
        .map(|(&t, &e)| {
            if e && t <= horizon {
                Ok(true)
            } else if t >= horizon {
                Ok(false)
            } else {
                Err(MetricError::Mode(
                    "binary net benefit needs complete follow-up to the horizon".into(),
                ))
            }
        })
        .collect()
}

/// Event probability by `horizon` over the whole sample, estimated the same
/// way `mode` estimates it among the treated.
pub fn event_probability<T: Real>(times: &[T], events: &[bool], horizon: T, mode: NetBenefitMode) -> Result<T, MetricError> {
    if times.is_empty() {
        return Err(MetricError::Input("no subjects".into()));
    }
    Ok(match mode {
        NetBenefitMode::Km => T::one() - kaplan_meier(times, events).survival_at(horizon),
        NetBenefitMode::Binary => {
            let y = binary_outcomes(times, events, horizon)?;
            T::from_usize_lossy(y.iter().filter(|&&v| v).count()) / T::from_usize_lossy(y.len())
        }
    })
}

/// `TP/N - FP/N * p_t / (1 - p_t)` treating subjects with risk above `p_t`.
pub fn net_benefit<T: Real>(
    predictions: &[T],
    times: &[T],
    events: &[bool],
    horizon: T,
    threshold: T,
    mode: NetBenefitMode,
) -> Result<NetBenefit<T>, MetricError> {
    check_threshold(threshold)?;
    if predictions.len() != times.len() || times.len() != events.len() {
        return Err(MetricError::Length);
    }
    if predictions.is_empty() {
        return Err(MetricError::Input("no subjects".into()));
    }
    let n = T::from_usize_lossy(predictions.len());
    let k = odds(threshold);
    let treated: Vec<usize> = (0..predictions.len()).filter(|&i| predictions[i] > threshold).collect();
    let outcomes = match mode {
        NetBenefitMode::Binary => Some(binary_outcomes(times, events, horizon)?),
        NetBenefitMode::Km => None,
    };
    if treated.is_empty() {
        return Ok(NetBenefit {
            value: T::zero(),
            n_treated: 0,
            none_treated: true,
        });
    }
    let value = match outcomes {
        Some(y) => {
            let tp = treated.iter().filter(|&&i| y[i]).count();
            let fp = treated.len() - tp;
            T::from_usize_lossy(tp) / n - T::from_usize_lossy(fp) / n * k
        }
        None => {
            let t: Vec<T> = treated.iter().map(|&i| times[i]).collect();
            let e: Vec<bool> = treated.iter().map(|&i| events[i]).collect();
            let risk = T::one() - kaplan_meier(&t, &e).survival_at(horizon);
            let share = T::from_usize_lossy(treated.len()) / n;
            share * risk - share * (T::one() - risk) * k
        }
    };
    Ok(NetBenefit {
        value,
        n_treated: treated.len(),
        none_treated: false,
    })
}

/// Net benefit of the model, treat-all and treat-none across `thresholds`.
pub fn decision_curve<T: Real>(
    predictions: &[T],
    times: &[T],
    events: &[bool],
    horizon: T,
    thresholds: &[T],
    mode: NetBenefitMode,
) -> Result<DecisionCurve<T>, MetricError> {
    for &p in thresholds {
        check_threshold(p)?;
    }
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(MetricError::Input("thresholds must be strictly increasing".into()));
    }
    let pi = event_probability(times, events, horizon, mode)?;
    let nb_model = thresholds
        .iter()
        .map(|&p| net_benefit(predictions, times, events, horizon, p, mode).map(|nb| nb.value))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DecisionCurve {
        thresholds: thresholds.to_vec(),
        nb_model,
        nb_treat_all: thresholds.iter().map(|&p| pi - (T::one() - pi) * odds(p)).collect(),
        nb_treat_none: vec![T::zero(); thresholds.len()],
        event_probability: pi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NbCounts<T> {
    pub extra_tp_per_1000: T,
    pub avoided_fp_per_1000: T,
}

/// Additional correctly treated patients and avoided unnecessary treatments
/// per 1000 implied by a net-benefit gain `nb - nb0` at threshold `p_t`.
pub fn nb_difference_to_counts<T: Real>(nb: T, nb0: T, threshold: T) -> Result<NbCounts<T>, MetricError> {
    check_threshold(threshold)?;
    let extra = T::lit(1000.0) * (nb - nb0);
    Ok(NbCounts {
        extra_tp_per_1000: extra,
        avoided_fp_per_1000: extra / odds(threshold),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn binary_formula_example() {
        // 10 subjects, events in 0..4; treated 0,1,2 (events) and 5,6 (no events)
        let times = vec![1.0; 4].into_iter().chain(vec![10.0; 6]).collect::<Vec<f64>>();
        let events: Vec<bool> = (0..10).map(|i| i < 4).collect();
        let mut pred = vec![0.05; 10];
        for i in [0, 1, 2, 5, 6] {
            pred[i] = 0.5;
        }
        let nb = net_benefit(&pred, &times, &events, 5.0, 0.1, NetBenefitMode::Binary).unwrap();
        assert_eq!(nb.n_treated, 5);
        assert_relative_eq!(nb.value, 0.3 - 0.2 / 9.0, epsilon = 1e-15);
        assert_relative_eq!(nb.value, 0.27778, epsilon = 1e-5);
    }

    #[test]
    fn treat_none_and_treat_all_identity() {
        let times: Vec<f64> = vec![1.0, 2.0, 8.0, 9.0, 9.5];
        let events = vec![true, true, false, false, false];
        let none = net_benefit(&[0.0; 5], &times, &events, 5.0, 0.1, NetBenefitMode::Km).unwrap();
        assert_eq!(none.value, 0.0);
        assert!(none.none_treated);
        let pi = 0.4;
        let all = net_benefit(&[1.0; 5], &times, &events, 5.0, pi, NetBenefitMode::Binary).unwrap();
        assert!(all.value.abs() < 1e-15);
    }

    #[test]
    fn binary_mode_rejects_early_censoring() {
        let r = net_benefit(&[0.5, 0.5], &[1.0, 6.0], &[false, false], 5.0, 0.1, NetBenefitMode::Binary);
        assert!(matches!(r, Err(MetricError::Mode(_))));
        assert!(net_benefit(&[0.5], &[1.0], &[true], 5.0, 1.0, NetBenefitMode::Km).is_err());
    }

    #[test]
    fn decision_curve_references() {
        let times = vec![1.0, 2.0, 3.0, 4.0, 6.0, 7.0, 8.0, 9.0];
        let events = vec![true, false, true, true, false, true, false, false];
        let th = [0.05, 0.1, 0.3];
        let all = decision_curve(&[1.0; 8], &times, &events, 5.0, &th, NetBenefitMode::Km).unwrap();
        assert_eq!(all.nb_model, all.nb_treat_all);
        assert!(all.nb_treat_none.iter().all(|&v| v == 0.0));
        let none = decision_curve(&[0.0; 8], &times, &events, 5.0, &th, NetBenefitMode::Km).unwrap();
        assert!(none.nb_model.iter().all(|&v| v == 0.0));
        assert!(decision_curve(&[0.0; 8], &times, &events, 5.0, &[0.2, 0.1], NetBenefitMode::Km).is_err());
    }

    #[test]
    fn decision_curve_matches_pointwise_calls() {
        let times = vec![1.0, 2.0, 5.0, 5.0, 6.0, 7.0];
        let events = vec![true, true, false, true, false, false];
        let pred = [0.3, 0.02, 0.5, 0.04, 0.2, 0.01];
        let th = [0.025, 0.0375, 0.1, 0.25];
        let dc = decision_curve(&pred, &times, &events, 5.0, &th, NetBenefitMode::Binary).unwrap();
        for (i, &p) in th.iter().enumerate() {
            let nb = net_benefit(&pred, &times, &events, 5.0, p, NetBenefitMode::Binary).unwrap();
            assert_eq!(dc.nb_model[i], nb.value);
        }
        assert_relative_eq!(dc.event_probability, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn count_conversions() {
        let c = nb_difference_to_counts(0.004f64, 0.0, 0.0375).unwrap();
        assert_relative_eq!(c.extra_tp_per_1000, 4.0, epsilon = 1e-12);
        assert_relative_eq!(c.avoided_fp_per_1000, 102.666_666_666_666_67, epsilon = 1e-9);
        assert_eq!(c.avoided_fp_per_1000.round(), 103.0);
        let c = nb_difference_to_counts(0.004, 0.0, 0.1).unwrap();
        assert_relative_eq!(c.avoided_fp_per_1000, 36.0, epsilon = 1e-9);
        let c = nb_difference_to_counts(0.01, 0.01, 0.1).unwrap();
        assert_eq!((c.extra_tp_per_1000, c.avoided_fp_per_1000), (0.0, 0.0));
        // linear in the difference
        let a = nb_difference_to_counts(0.003, 0.001, 0.2).unwrap();
        let b = nb_difference_to_counts(0.006, 0.002, 0.2).unwrap();
        assert_relative_eq!(b.avoided_fp_per_1000, 2.0 * a.avoided_fp_per_1000, epsilon = 1e-12);
    }
}
