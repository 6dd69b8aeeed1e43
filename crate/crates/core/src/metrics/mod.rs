//! Discrimination, calibration and clinical-utility metrics for risk
//! predictions at a fixed horizon.

mod calibration;
mod concordance;
mod net_benefit;
mod poisson;

pub use calibration::{
    calibration_line, calibration_plot_data, chi_square_sf, default_bin_count, gnd_test, observed_expected,
    observed_expected_by_group, quantile_groups, CalibrationBin, CalibrationBins, CalibrationLine, GndResult,
    ObservedExpected, MIN_BIN_EVENTS,
};
pub use concordance::{harrell_c, ipcw_c, ConcordanceMethod, ConcordanceOptions, ConcordanceResult, TieHandling};
pub use net_benefit::{
    decision_curve, event_probability, nb_difference_to_counts, net_benefit, DecisionCurve, NbCounts, NetBenefit,
    NetBenefitMode, DEFAULT_THRESHOLDS,
};
pub use poisson::{poisson_glm, PoissonFit};

use thiserror::Error;

use crate::scalar::Real;

pub(crate) const Z_95: f64 = 1.96;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("concordance is undefined: no usable pairs")]
    UndefinedConcordance,
    #[error("design is singular at column {column}")]
    Singular { column: String },
    #[error("Poisson IRLS did not converge in {iterations} iterations")]
    NotConverged { iterations: usize },
    #[error("calibration test needs at least 2 bins after merging, got {bins}")]
    Untestable { bins: usize },
    #[error("calibration bin {bin} has zero Greenwood variance")]
    ZeroVariance { bin: usize },
    #[error("{0}")]
    Mode(String),
    #[error("input lengths differ")]
    Length,
    #[error("{0}")]
    Input(String),
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn percentile<T: Real>(sorted: &[T], q: f64) -> T {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = T::lit(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Record key for a threshold: `nb_` followed by its decimal digits with the
/// point removed, so 0.0375 becomes `nb_00375`.
pub fn threshold_key(threshold: f64) -> String {
    format!("nb_{}", threshold.to_string().replace('.', ""))
}
