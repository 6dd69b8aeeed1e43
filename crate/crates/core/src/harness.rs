//! Evaluation workflows: overall and subgroup reports, model comparisons and
//! cross-validated boosting hyperparameter selection.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boost::{train_boosted, BoostConfig, BoostData, BoostError};
use crate::cohort::{Cohort, COVARIATE_NAMES};
use crate::location::{format_group_id, LocationMap};
use crate::metrics::{
    calibration_line, calibration_plot_data, decision_curve, default_bin_count, gnd_test,
    harrell_c, ipcw_c, nb_difference_to_counts, net_benefit, observed_expected, threshold_key, CalibrationBins,
    CalibrationLine, ConcordanceOptions, ConcordanceResult, DecisionCurve, GndResult, NbCounts, NetBenefitMode,
    ObservedExpected, DEFAULT_THRESHOLDS,
};
use crate::survival::censoring_survival;
use crate::model::{boost_features, FittedModel, ModelError, SCHEMA_VERSION};

/// Subgroups smaller than this get a small-sample flag and no metrics.
pub const DEFAULT_MIN_SUBGROUP: usize = 50;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Boost(#[from] BoostError),
    #[error("group ids differ between reports: {0}")]
    GroupMismatch(String),
    #[error("{0}")]
    Input(String),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSettings {
    pub horizon: f64,
    pub thresholds: Vec<f64>,
    pub concordance: ConcordanceOptionsConfig,
    pub net_benefit_mode: NetBenefitMode,
    pub min_subgroup: usize,
    /// Calibration bins; `None` uses `round(N^(1/3))`.
    pub gnd_bins: Option<usize>,
}

/// Serializable mirror of [`ConcordanceOptions`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceOptionsConfig {
    pub bootstrap: usize,
    pub seed: u64,
    pub ties_half: bool,
}

impl From<ConcordanceOptionsConfig> for ConcordanceOptions {
    fn from(c: ConcordanceOptionsConfig) -> Self {
        ConcordanceOptions {
            ties: if c.ties_half {
                crate::metrics::TieHandling::Half
            } else {
                crate::metrics::TieHandling::Zero
            },
            bootstrap: c.bootstrap,
            seed: c.seed,
            level: 0.95,
        }
    }
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        Self {
            horizon: crate::cohort::FIVE_YEARS_DAYS,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            concordance: ConcordanceOptionsConfig {
                bootstrap: 200,
                seed: 0,
                ties_half: false,
            },
            net_benefit_mode: NetBenefitMode::Km,
            min_subgroup: DEFAULT_MIN_SUBGROUP,
            gnd_bins: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdBenefit {
    pub threshold: f64,
    pub net_benefit: f64,
    pub treat_all: f64,
    pub n_treated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub model_id: String,
    pub group_id: String,
    pub n: usize,
    pub events_by_horizon: usize,
    pub small_sample: bool,
    pub harrell_c: Option<ConcordanceResult<f64>>,
    pub ipcw_c: Option<ConcordanceResult<f64>>,
    pub observed_expected: Option<ObservedExpected<f64>>,
    pub gnd: Option<GndResult<f64>>,
    pub calibration_line: Option<CalibrationLine<f64>>,
    pub net_benefit: Vec<ThresholdBenefit>,
    pub decision_curve: Option<DecisionCurve<f64>>,
    /// Reason per metric that could not be computed.
    pub undefined: BTreeMap<String, String>,
}

/// Flat metric record with fixed field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub model_id: String,
    pub group_id: String,
    pub c_index: Option<f64>,
    pub c_low: Option<f64>,
    pub c_high: Option<f64>,
    pub oe: Option<f64>,
    pub gnd_stat: Option<f64>,
    pub gnd_df: Option<usize>,
    pub gnd_p: Option<f64>,
    pub cal_intercept: Option<f64>,
    pub cal_slope: Option<f64>,
    #[serde(flatten)]
    pub net_benefit: BTreeMap<String, Option<f64>>,
}

impl EvaluationReport {
    pub fn record(&self) -> MetricRecord {
        MetricRecord {
            model_id: self.model_id.clone(),
            group_id: self.group_id.clone(),
            c_index: self.harrell_c.as_ref().map(|c| c.estimate),
            c_low: self.harrell_c.as_ref().map(|c| c.ci_low),
            c_high: self.harrell_c.as_ref().map(|c| c.ci_high),
            oe: self.observed_expected.as_ref().and_then(|o| o.ratio),
            gnd_stat: self.gnd.as_ref().map(|g| g.statistic),
            gnd_df: self.gnd.as_ref().map(|g| g.df),
            gnd_p: self.gnd.as_ref().map(|g| g.p_value),
            cal_intercept: self.calibration_line.as_ref().map(|l| l.intercept),
            cal_slope: self.calibration_line.as_ref().map(|l| l.slope),
            net_benefit: self
                .net_benefit
                .iter()
                .map(|b| (threshold_key(b.threshold), Some(b.net_benefit)))
                .collect(),
        }
    }

    pub fn net_benefit_at(&self, threshold: f64) -> Option<f64> {
        self.net_benefit
            .iter()
            .find(|b| b.threshold == threshold)
            .map(|b| b.net_benefit)
    }
}

fn note<T, E: std::fmt::Display>(undefined: &mut BTreeMap<String, String>, key: &str, r: Result<T, E>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            undefined.insert(key.to_string(), e.to_string());
            None
        }
    }
}

/// Per-subject inputs shared by every metric.
#[derive(Debug, Clone, Copy)]
pub struct PredictionSet<'a> {
    pub risks: &'a [f64],
    /// `H_i(T_i)` at each subject's own follow-up time.
    pub expected: &'a [f64],
    pub times: &'a [f64],
    pub events: &'a [bool],
}

/// All metrics on one set of predictions. Metric failures are recorded in
/// `undefined` and never abort the report.
pub fn evaluate_predictions(
    model_id: &str,
    group_id: &str,
    data: PredictionSet<'_>,
    settings: &EvaluationSettings,
) -> EvaluationReport {
    let n = data.risks.len();
    let horizon = settings.horizon;
    let mut report = EvaluationReport {
        schema_version: SCHEMA_VERSION,
        model_id: model_id.to_string(),
        group_id: group_id.to_string(),
        n,
        events_by_horizon: data
            .times
            .iter()
            .zip(data.events)
            .filter(|(&t, &e)| e && t <= horizon)
            .count(),
        small_sample: n < settings.min_subgroup,
        harrell_c: None,
        ipcw_c: None,
        observed_expected: None,
        gnd: None,
        calibration_line: None,
        net_benefit: Vec::new(),
        decision_curve: None,
        undefined: BTreeMap::new(),
    };
    if report.small_sample {
        report.undefined.insert(
            "all".into(),
            format!("small sample: n = {n} < {}", settings.min_subgroup),
        );
        return report;
    }
    let u = &mut report.undefined;
    let opts: ConcordanceOptions = settings.concordance.into();
    report.harrell_c = note(u, "harrell_c", harrell_c(data.risks, data.times, data.events, horizon, &opts));
    let censor = censoring_survival(data.times, data.events);
    report.ipcw_c = note(u, "ipcw_c", ipcw_c(data.risks, data.times, data.events, horizon, &censor, &opts));
    report.observed_expected = note(u, "observed_expected", observed_expected(data.events, data.expected));
    if let Some(reason) = report.observed_expected.as_ref().and_then(|o| o.undefined_reason.clone()) {
        u.insert("observed_expected".into(), reason);
    }
    report.gnd = note(u, "gnd", gnd_test(data.risks, data.times, data.events, horizon, settings.gnd_bins));
    let r: Vec<f64> = data.expected.iter().map(|h| h.ln()).collect();
    report.calibration_line = note(u, "calibration_line", calibration_line(data.events, &r));
    let dc = note(
        u,
        "decision_curve",
        decision_curve(
            data.risks,
            data.times,
            data.events,
            horizon,
            &settings.thresholds,
            settings.net_benefit_mode,
        ),
    );
    if let Some(dc) = &dc {
        for (i, &p) in settings.thresholds.iter().enumerate() {
            let treated = net_benefit(data.risks, data.times, data.events, horizon, p, settings.net_benefit_mode)
                .map(|nb| nb.n_treated)
                .unwrap_or(0);
            report.net_benefit.push(ThresholdBenefit {
                threshold: p,
                net_benefit: dc.nb_model[i],
                treat_all: dc.nb_treat_all[i],
                n_treated: treated,
            });
        }
    }
    report.decision_curve = dc;
    report
}

fn model_inputs(model: &FittedModel<f64>, cohort: &Cohort, horizon: f64) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    Ok((model.predict_risks(cohort, horizon)?, model.expected_cumhaz(cohort)?))
}

/// Report for a model on a whole cohort (group id `overall`).
pub fn evaluate_model(
    model_id: &str,
    model: &FittedModel<f64>,
    cohort: &Cohort,
    settings: &EvaluationSettings,
) -> Result<EvaluationReport, HarnessError> {
    let (risks, expected) = model_inputs(model, cohort, settings.horizon)?;
    let times = cohort.times();
    let events = cohort.events();
    Ok(evaluate_predictions(
        model_id,
        "overall",
        PredictionSet {
            risks: &risks,
            expected: &expected,
            times: &times,
            events: &events,
        },
        settings,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub enum SubgroupSpec {
    Ckd,
    Ra,
    Location(LocationMap),
    /// Any boolean subject flag by name.
    Flag(String),
}

impl SubgroupSpec {
    /// Group label for every subject.
    pub fn assign(&self, cohort: &Cohort) -> Result<Vec<String>, HarnessError> {
        let flag = |name: &str| -> Result<Vec<String>, HarnessError> {
            cohort
                .subjects()
                .iter()
                .map(|s| {
                    s.flag(name)
                        .map(|v| format!("{name}={}", u8::from(v)))
                        .ok_or_else(|| HarnessError::Input(format!("unknown subgroup flag `{name}`")))
                })
                .collect()
        };
        match self {
            SubgroupSpec::Ckd => flag("ckd"),
            SubgroupSpec::Ra => flag("ra"),
            SubgroupSpec::Flag(name) => flag(name),
            SubgroupSpec::Location(map) => Ok(cohort
                .subjects()
                .iter()
                .map(|s| match map.group_of(s.zip3()) {
                    Some(g) => format!("loc_{}", format_group_id(g)),
                    None => "loc_unmapped".to_string(),
                })
                .collect()),
        }
    }
}

/// One report per subgroup, ordered by group id. Predictions are computed
/// once on the full cohort.
pub fn evaluate_subgroups(
    model_id: &str,
    model: &FittedModel<f64>,
    cohort: &Cohort,
    spec: &SubgroupSpec,
    settings: &EvaluationSettings,
) -> Result<Vec<EvaluationReport>, HarnessError> {
    let (risks, expected) = model_inputs(model, cohort, settings.horizon)?;
    let times = cohort.times();
    let events = cohort.events();
    let labels = spec.assign(cohort)?;
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        members.entry(l.as_str()).or_default().push(i);
    }
    let groups: Vec<(&str, Vec<usize>)> = members.into_iter().collect();
    Ok(groups
        .par_iter()
        .map(|(label, idx)| {
            let pick_f = |xs: &[f64]| idx.iter().map(|&i| xs[i]).collect::<Vec<f64>>();
            let (r, h, t) = (pick_f(&risks), pick_f(&expected), pick_f(&times));
            let e: Vec<bool> = idx.iter().map(|&i| events[i]).collect();
            evaluate_predictions(
                model_id,
                label,
                PredictionSet {
                    risks: &r,
                    expected: &h,
                    times: &t,
                    events: &e,
                },
                settings,
            )
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdDelta {
    pub threshold: f64,
    pub delta_nb: f64,
    pub counts: NbCounts<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub group_id: String,
    pub delta_c: Option<f64>,
    /// `|O/E_base - 1| - |O/E_rev - 1|`; positive favours the revised model.
    pub oe_improvement: Option<f64>,
    pub alpha_improvement: Option<f64>,
    pub slope_improvement: Option<f64>,
    pub net_benefit: Vec<Option<ThresholdDelta>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub baseline_model: String,
    pub revised_model: String,
    pub thresholds: Vec<f64>,
    pub groups: Vec<GroupComparison>,
    /// Distribution of each delta column across groups.
    pub summaries: BTreeMap<String, DistributionSummary>,
}

fn improvement(base: Option<f64>, rev: Option<f64>, ideal: f64) -> Option<f64> {
    Some((base? - ideal).abs() - (rev? - ideal).abs())
}

/// Quartile summary of `values` (linear interpolation); `None` when empty.
pub fn summarize(values: &[f64]) -> Option<DistributionSummary> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| crate::metrics::percentile(&v, p);
    Some(DistributionSummary {
        count: v.len(),
        min: v[0],
        q1: q(0.25),
        median: q(0.5),
        q3: q(0.75),
        max: v[v.len() - 1],
    })
}

/// Revised-minus-baseline deltas per group. Both slices must cover the same
/// group ids.
pub fn compare_models(
    baseline: &[EvaluationReport],
    revised: &[EvaluationReport],
    thresholds: &[f64],
) -> Result<ComparisonReport, HarnessError> {
    let ids = |rs: &[EvaluationReport]| rs.iter().map(|r| r.group_id.clone()).collect::<BTreeSet<_>>();
    let (a, b) = (ids(baseline), ids(revised));
    if a != b || a.len() != baseline.len() || b.len() != revised.len() {
        let diff: Vec<String> = a.symmetric_difference(&b).cloned().collect();
        return Err(HarnessError::GroupMismatch(if diff.is_empty() {
            "duplicate group ids".into()
        } else {
            diff.join(", ")
        }));
    }
    let by_id: BTreeMap<&str, &EvaluationReport> = revised.iter().map(|r| (r.group_id.as_str(), r)).collect();
    let mut groups = Vec::with_capacity(baseline.len());
    for base in baseline {
        let rev = by_id[base.group_id.as_str()];
        let (rb, rr) = (base.record(), rev.record());
        let net_benefit = thresholds
            .iter()
            .map(|&p| {
                let d = rev.net_benefit_at(p)? - base.net_benefit_at(p)?;
                let counts = nb_difference_to_counts(d, 0.0, p).ok()?;
                Some(ThresholdDelta {
                    threshold: p,
                    delta_nb: d,
                    counts,
                })
            })
            .collect();
        groups.push(GroupComparison {
            group_id: base.group_id.clone(),
            delta_c: rr.c_index.zip(rb.c_index).map(|(r, b)| r - b),
            oe_improvement: improvement(rb.oe, rr.oe, 1.0),
            alpha_improvement: improvement(rb.cal_intercept, rr.cal_intercept, 0.0),
            slope_improvement: improvement(rb.cal_slope, rr.cal_slope, 1.0),
            net_benefit,
        });
    }
    let mut summaries = BTreeMap::new();
    for (key, values) in comparison_columns(&groups, thresholds) {
        let defined: Vec<f64> = values.into_iter().flatten().collect();
        if let Some(s) = summarize(&defined) {
            summaries.insert(key, s);
        }
    }
    Ok(ComparisonReport {
        schema_version: SCHEMA_VERSION,
        baseline_model: baseline.first().map(|r| r.model_id.clone()).unwrap_or_default(),
        revised_model: revised.first().map(|r| r.model_id.clone()).unwrap_or_default(),
        thresholds: thresholds.to_vec(),
        groups,
        summaries,
    })
}

fn comparison_columns(groups: &[GroupComparison], thresholds: &[f64]) -> Vec<(String, Vec<Option<f64>>)> {
    let mut cols = vec![
        ("delta_c".to_string(), groups.iter().map(|g| g.delta_c).collect()),
        ("oe_impr".to_string(), groups.iter().map(|g| g.oe_improvement).collect()),
        ("alpha_impr".to_string(), groups.iter().map(|g| g.alpha_improvement).collect()),
        ("slope_impr".to_string(), groups.iter().map(|g| g.slope_improvement).collect()),
    ];
    for (i, &p) in thresholds.iter().enumerate() {
        let key = format!("d{}", threshold_key(p));
        cols.push((key, groups.iter().map(|g| g.net_benefit[i].as_ref().map(|d| d.delta_nb)).collect()));
    }
    cols
}

fn csv_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Csv(e.to_string())
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ComparisonReport {
    /// One row per group: `group_id, delta_c, oe_impr, alpha_impr,
    /// slope_impr, dnb_<threshold>...`; undefined values are empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), HarnessError> {
        let cols = comparison_columns(&self.groups, &self.thresholds);
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<&str> = std::iter::once("group_id").chain(cols.iter().map(|c| c.0.as_str())).collect();
        w.write_record(&header).map_err(csv_err)?;
        for (i, g) in self.groups.iter().enumerate() {
            let row: Vec<String> = std::iter::once(g.group_id.clone())
                .chain(cols.iter().map(|c| cell(c.1[i])))
                .collect();
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(csv_err)
    }
}

/// Decision-curve points as CSV: `threshold, nb_model, nb_treat_all, nb_treat_none`.
pub fn write_decision_curve_csv<W: Write>(curve: &DecisionCurve<f64>, writer: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["threshold", "nb_model", "nb_treat_all", "nb_treat_none"])
        .map_err(csv_err)?;
    for i in 0..curve.thresholds.len() {
        w.write_record([
            curve.thresholds[i].to_string(),
            curve.nb_model[i].to_string(),
            curve.nb_treat_all[i].to_string(),
            curve.nb_treat_none[i].to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

/// Calibration bins as CSV for plotting.
pub fn write_calibration_csv<W: Write>(bins: &CalibrationBins<f64>, writer: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "bin",
        "n",
        "events",
        "mean_predicted",
        "observed_risk",
        "ci_low",
        "ci_high",
    ])
    .map_err(csv_err)?;
    for (i, b) in bins.bins.iter().enumerate() {
        w.write_record([
            i.to_string(),
            b.n.to_string(),
            b.events.to_string(),
            b.mean_predicted.to_string(),
            b.observed_risk.to_string(),
            b.ci_low.to_string(),
            b.ci_high.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

/// Plot-ready calibration bins (unmerged) for a model on a cohort.
pub fn calibration_bins_for(
    model: &FittedModel<f64>,
    cohort: &Cohort,
    settings: &EvaluationSettings,
) -> Result<CalibrationBins<f64>, HarnessError> {
    let risks = model.predict_risks(cohort, settings.horizon)?;
    let k = settings.gnd_bins.unwrap_or_else(|| default_bin_count(cohort.len()));
    calibration_plot_data(&risks, &cohort.times(), &cohort.events(), settings.horizon, k)
        .map_err(|e| HarnessError::Input(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    /// Winning candidate with the final learning rate and tree count.
    pub selected: BoostConfig,
    /// Mean validation loss per candidate, in grid order.
    pub scores: Vec<(BoostConfig, f64)>,
}

/// Learning rate and tree budget used while tuning.
pub const TUNING_SCHEDULE: (f64, usize) = (0.1, 100);
/// Learning rate and tree budget of the final model.
pub const FINAL_SCHEDULE: (f64, usize) = (0.05, 500);

fn tie_key(c: &BoostConfig) -> (usize, usize, f64, f64) {
    (c.max_depth, c.min_node, c.row_subsample, c.col_subsample)
}

/// Grid search by `folds`-fold cross-validation on the boosted model's mean
/// best validation negative log partial likelihood. Ties go to the
/// lexicographically smallest `(max_depth, min_node, row_subsample,
/// col_subsample)`.
pub fn tune_boost_hyperparameters(
    train: &Cohort,
    location_map: &LocationMap,
    grid: &[BoostConfig],
    folds: usize,
    seed: u64,
) -> Result<TuningResult, HarnessError> {
    if grid.is_empty() {
        return Err(HarnessError::Input("empty hyperparameter grid".into()));
    }
    if folds < 2 || folds > train.len() {
        return Err(HarnessError::Input(format!("cannot make {folds} folds from {} subjects", train.len())));
    }
    let covariates: Vec<String> = COVARIATE_NAMES.iter().map(|s| s.to_string()).collect();
    let x = boost_features::<f64>(train, &covariates, location_map).map_err(ModelError::from)?;
    let times = train.times();
    let events = train.events();
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of: Vec<usize> = {
        let mut f = vec![0; train.len()];
        for (pos, &i) in order.iter().enumerate() {
            f[i] = pos % folds;
        }
        f
    };
    let split: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|k| (0..train.len()).partition(|&i| fold_of[i] != k))
        .collect();

    let mut scores = Vec::with_capacity(grid.len());
    for candidate in grid {
        let cfg = BoostConfig {
            learning_rate: TUNING_SCHEDULE.0,
            max_trees: TUNING_SCHEDULE.1,
            seed,
            ..candidate.clone()
        };
        let losses = split
            .par_iter()
            .map(|(tr, va)| {
                let pick = |idx: &[usize]| {
                    (
                        x.select_rows(idx),
                        idx.iter().map(|&i| times[i]).collect::<Vec<f64>>(),
                        idx.iter().map(|&i| events[i]).collect::<Vec<bool>>(),
                    )
                };
                let (xt, tt, et) = pick(tr);
                let (xv, tv, ev) = pick(va);
                let model = train_boosted(
                    BoostData {
                        features: &xt,
                        times: &tt,
                        events: &et,
                    },
                    BoostData {
                        features: &xv,
                        times: &tv,
                        events: &ev,
                    },
                    &cfg,
                )?;
                Ok(model.valid_loss[model.n_stages_used])
            })
            .collect::<Result<Vec<f64>, BoostError>>()?;
        scores.push((candidate.clone(), losses.iter().sum::<f64>() / folds as f64));
    }
    let best = scores
        .iter()
        .min_by(|a, b| {
            a.1.total_cmp(&b.1).then_with(|| {
                tie_key(&a.0)
                    .partial_cmp(&tie_key(&b.0))
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        })
        .expect("non-empty grid");
    Ok(TuningResult {
        selected: BoostConfig {
            learning_rate: FINAL_SCHEDULE.0,
            max_trees: FINAL_SCHEDULE.1,
            ..best.0.clone()
        },
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::location::merge_locations;
    use crate::model::{fit_model, FitSettings, ModelKind};
    use crate::simulate::{simulate_cohort, SimulationConfig};

    fn cohort(n: usize, seed: u64) -> Cohort {
        let mut cfg = SimulationConfig {
            n_subjects: n,
            n_locations: 5,
            seed,
            weibull_scale: 60_000.0,
            ..SimulationConfig::default()
        };
        cfg.beta.insert("diabetes".into(), 0.7);
        cfg.beta.insert("age".into(), 0.04);
        cfg.beta.insert("ckd".into(), 0.5);
        simulate_cohort(&cfg).unwrap()
    }

    fn quick() -> EvaluationSettings {
        EvaluationSettings {
            concordance: ConcordanceOptionsConfig {
                bootstrap: 20,
                seed: 1,
                ties_half: false,
            },
            ..EvaluationSettings::default()
        }
    }

    #[test]
    fn cox_on_training_data_has_unit_oe() {
        let c = cohort(2000, 1);
        let map = LocationMap::identity(&c);
        let m = fit_model::<f64>(ModelKind::Baseline, &c, None, &map, &FitSettings::default()).unwrap();
        let r = evaluate_model("baseline", &m, &c, &quick()).unwrap();
        assert!((r.observed_expected.as_ref().unwrap().ratio.unwrap() - 1.0).abs() < 1e-8);
        assert!(r.undefined.is_empty(), "{:?}", r.undefined);
        assert_eq!(r.net_benefit.len(), 3);
        let again = evaluate_model("baseline", &m, &c, &quick()).unwrap();
        assert_eq!(serde_json::to_string(&r).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn record_keys() {
        let c = cohort(800, 2);
        let map = LocationMap::identity(&c);
        let m = fit_model::<f64>(ModelKind::Baseline, &c, None, &map, &FitSettings::default()).unwrap();
        let rec = evaluate_model("b", &m, &c, &quick()).unwrap().record();
        let v = serde_json::to_value(&rec).unwrap();
        for key in [
            "c_index", "c_low", "c_high", "oe", "gnd_stat", "gnd_df", "gnd_p", "cal_intercept", "cal_slope",
            "nb_0025", "nb_00375", "nb_01",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn subgroups_partition_and_flag_small() {
        let c = cohort(1500, 3);
        let map = merge_locations(&c, 100).unwrap();
        let m = fit_model::<f64>(ModelKind::FixedEffects, &c, None, &map, &FitSettings::default()).unwrap();
        let ckd = evaluate_subgroups("fe", &m, &c, &SubgroupSpec::Ckd, &quick()).unwrap();
        assert_eq!(ckd.len(), 2);
        assert_eq!(ckd.iter().map(|r| r.n).sum::<usize>(), c.len());
        let locs = evaluate_subgroups("fe", &m, &c, &SubgroupSpec::Location(map.clone()), &quick()).unwrap();
        assert_eq!(locs.len(), map.n_groups());
        assert_eq!(locs.iter().map(|r| r.n).sum::<usize>(), c.len());

        let tiny = c.select(&(0..10).collect::<Vec<_>>(), "tiny").unwrap();
        let r = evaluate_model("fe", &m, &tiny, &quick()).unwrap();
        assert!(r.small_sample);
        assert!(r.harrell_c.is_none() && r.undefined.contains_key("all"));
    }

    fn fake(group: &str, c: f64, oe: f64, alpha: f64, slope: f64, nb: f64) -> EvaluationReport {
        EvaluationReport {
            schema_version: SCHEMA_VERSION,
            model_id: "m".into(),
            group_id: group.into(),
            n: 100,
            events_by_horizon: 10,
            small_sample: false,
            harrell_c: Some(ConcordanceResult {
                estimate: c,
                ci_low: c,
                ci_high: c,
                n_usable_pairs: 1,
                n_dropped_pairs: 0,
                method: crate::metrics::ConcordanceMethod::HarrellTruncated,
            }),
            ipcw_c: None,
            observed_expected: Some(ObservedExpected {
                n: 100,
                observed: 10.0,
                expected: 10.0 / oe,
                ratio: Some(oe),
                ci_low: None,
                ci_high: None,
                undefined_reason: None,
            }),
            gnd: None,
            calibration_line: Some(CalibrationLine {
                intercept: alpha,
                intercept_ci: (alpha, alpha),
                slope,
                slope_ci: (slope, slope),
                n_used: 100,
                n_excluded: 0,
            }),
            net_benefit: vec![ThresholdBenefit {
                threshold: 0.0375,
                net_benefit: nb,
                treat_all: 0.0,
                n_treated: 5,
            }],
            decision_curve: None,
            undefined: BTreeMap::new(),
        }
    }

    #[test]
    fn comparison_arithmetic() {
        let base = [fake("overall", 0.70, 1.3, 0.2, 0.8, 0.010)];
        let rev = [fake("overall", 0.72, 1.1, -0.1, 1.1, 0.014)];
        let cmp = compare_models(&base, &rev, &[0.0375]).unwrap();
        let g = &cmp.groups[0];
        assert!((g.delta_c.unwrap() - 0.02).abs() < 1e-12);
        assert!((g.oe_improvement.unwrap() - 0.2).abs() < 1e-12);
        assert!((g.alpha_improvement.unwrap() - 0.1).abs() < 1e-12);
        assert!((g.slope_improvement.unwrap() - 0.1).abs() < 1e-12);
        let d = g.net_benefit[0].as_ref().unwrap();
        assert!((d.counts.extra_tp_per_1000 - 4.0).abs() < 1e-9);
        assert!((d.counts.avoided_fp_per_1000 - 102.6667).abs() < 1e-3);

        let swapped = compare_models(&rev, &base, &[0.0375]).unwrap();
        assert_eq!(swapped.groups[0].delta_c.unwrap(), -g.delta_c.unwrap());
        assert_eq!(swapped.groups[0].net_benefit[0].as_ref().unwrap().delta_nb, -d.delta_nb);

        let same = compare_models(&base, &base, &[0.0375]).unwrap();
        let s = &same.groups[0];
        assert_eq!(
            (s.delta_c, s.oe_improvement, s.alpha_improvement, s.slope_improvement),
            (Some(0.0), Some(0.0), Some(0.0), Some(0.0))
        );

        let other = [fake("loc_100", 0.7, 1.0, 0.0, 1.0, 0.0)];
        assert!(matches!(compare_models(&base, &other, &[0.0375]), Err(HarnessError::GroupMismatch(_))));

        let mut buf = Vec::new();
        cmp.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("group_id,delta_c,oe_impr,alpha_impr,slope_impr,dnb_00375\n"));
    }

    #[test]
    fn summary_quartiles() {
        let s = summarize(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (1.0, 2.0, 3.0, 4.0, 5.0));
        assert!(summarize(&[]).is_none());
    }

    #[test]
    fn tuning_is_deterministic_and_tie_aware() {
        let c = cohort(400, 4);
        let map = merge_locations(&c, 50).unwrap();
        let a = BoostConfig {
            max_depth: 1,
            min_node: 30,
            patience: 5,
            ..BoostConfig::default()
        };
        // on 320 training rows both node floors above 160 forbid every split
        let big = BoostConfig {
            min_node: 200,
            ..a.clone()
        };
        let bigger = BoostConfig {
            min_node: 250,
            ..a.clone()
        };
        let single = tune_boost_hyperparameters(&c, &map, std::slice::from_ref(&a), 5, 1).unwrap();
        assert_eq!(single.selected.min_node, 30);
        assert_eq!(single.selected.learning_rate, 0.05);
        assert_eq!(single.selected.max_trees, 500);

        let r = tune_boost_hyperparameters(&c, &map, &[bigger.clone(), big.clone()], 5, 1).unwrap();
        assert_eq!(r.scores[0].1, r.scores[1].1);
        assert_eq!(r.selected.min_node, 200);
        let again = tune_boost_hyperparameters(&c, &map, &[bigger, big], 5, 1).unwrap();
        assert_eq!(r, again);
    }
}
