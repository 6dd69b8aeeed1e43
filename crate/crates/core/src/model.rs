//! The four model families behind one serializable type.
//!
//! Every family predicts through a baseline cumulative hazard `H0` and a
//! per-subject log relative hazard, so that `H_i(t) = H0(t) exp(eta_i)` and
//! the risk at a horizon is `1 - exp(-H_i(horizon))`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boost::{train_boosted, BoostConfig, BoostData, BoostError, BoostedModel};
use crate::cohort::{Cohort, COVARIATE_NAMES};
use crate::cox::{fit_cox, risk_from_cumhaz, CoxError, CoxFit, CoxOptions, DesignEncoding, DesignError, DesignMatrix, LocationEncoding};
use crate::frailty::{fit_gamma_frailty, FrailtyError, FrailtyFit, FrailtyOptions};
use crate::location::LocationMap;
use crate::scalar::Real;
use crate::step::StepFunction;

pub const SCHEMA_VERSION: u32 = 1;

/// Covariates of the pooled-cohort style baseline equation.
pub const BASELINE_COVARIATES: [&str; 8] = [
    "age",
    "sex",
    "hdl",
    "total_cholesterol",
    "hypertension",
    "diabetes",
    "smoker",
    "antihypertensive",
];

/// Comorbidities added by the revised models.
pub const COMORBIDITY_COVARIATES: [&str; 2] = ["ckd", "ra"];

/// Integer-coded merged location group fed to the boosted model.
pub const LOCATION_FEATURE: &str = "location_group";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Cox(#[from] CoxError),
    #[error(transparent)]
    Frailty(#[from] FrailtyError),
    #[error(transparent)]
    Boost(#[from] BoostError),
    #[error("the boosted model needs a validation cohort for early stopping")]
    MissingValidation,
    #[error("unknown model kind `{0}`")]
    UnknownKind(String),
    #[error("unsupported schema version {found} (expected {SCHEMA_VERSION})")]
    Schema { found: u32 },
    #[error("model JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Baseline,
    FixedEffects,
    Frailty,
    Boosted,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [Self::Baseline, Self::FixedEffects, Self::Frailty, Self::Boosted];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::FixedEffects => "fixed_effects",
            Self::Frailty => "frailty",
            Self::Boosted => "boosted",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ModelError::UnknownKind(s.to_string()))
    }
}

/// Whether frailty-model predictions use the posterior group frailty or the
/// population mean of 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrailtyPrediction {
    #[default]
    Posterior,
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelBody<T> {
    Baseline {
        encoding: DesignEncoding,
        fit: CoxFit<T>,
    },
    FixedEffects {
        encoding: DesignEncoding,
        fit: CoxFit<T>,
    },
    Frailty {
        encoding: DesignEncoding,
        location_map: LocationMap,
        prediction: FrailtyPrediction,
        fit: FrailtyFit<T>,
    },
    Boosted {
        covariates: Vec<String>,
        location_map: LocationMap,
        model: BoostedModel<T>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel<T> {
    pub schema_version: u32,
    pub model: ModelBody<T>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitSettings {
    pub cox: CoxOptions,
    pub frailty: FrailtyOptions,
    pub frailty_prediction: FrailtyPrediction,
    pub boost: BoostConfig,
}

fn revised_covariates() -> Vec<String> {
    BASELINE_COVARIATES
        .iter()
        .chain(&COMORBIDITY_COVARIATES)
        .map(|s| s.to_string())
        .collect()
}

/// Features of the boosted model: every covariate plus the index of the
/// subject's merged location group.
pub fn boost_features<T: Real>(cohort: &Cohort, covariates: &[String], map: &LocationMap) -> Result<DesignMatrix<T>, DesignError> {
    let mut names = covariates.to_vec();
    names.push(LOCATION_FEATURE.to_string());
    let mut rows = Vec::with_capacity(cohort.len());
    for s in cohort.subjects() {
        let mut row = Vec::with_capacity(names.len());
        for c in covariates {
            row.push(T::lit(s.covariate(c).ok_or_else(|| DesignError::UnknownCovariate(c.clone()))?));
        }
        let uncovered = || DesignError::UncoveredZip3 {
            id: s.id.clone(),
            zip3: s.zip3(),
        };
        let group = map.group_of(s.zip3()).ok_or_else(uncovered)?;
        let index = map.group_index(group).ok_or_else(uncovered)?;
        row.push(T::from_usize_lossy(index));
        rows.push(row);
    }
    DesignMatrix::from_rows(&rows, names)
}

fn to_t<T: Real>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&v| T::lit(v)).collect()
}

/// Fit one model family on `train`. `location_map` defines location groups
/// for the fixed-effects, frailty and boosted models; `valid` is required by
/// the boosted model for early stopping.
pub fn fit_model<T: Real>(
    kind: ModelKind,
    train: &Cohort,
    valid: Option<&Cohort>,
    location_map: &LocationMap,
    settings: &FitSettings,
) -> Result<FittedModel<T>, ModelError> {
    let times: Vec<T> = to_t(&train.times());
    let events = train.events();
    let model = match kind {
        ModelKind::Baseline | ModelKind::FixedEffects => {
            let encoding = if kind == ModelKind::Baseline {
                DesignEncoding {
                    covariates: BASELINE_COVARIATES.iter().map(|s| s.to_string()).collect(),
                    location: None,
                }
            } else {
                DesignEncoding {
                    covariates: revised_covariates(),
                    location: Some(LocationEncoding::new(location_map.clone())),
                }
            };
            let design = encoding.encode::<T>(train)?;
            let fit = fit_cox(&design, &times, &events, &settings.cox)?;
            if kind == ModelKind::Baseline {
                ModelBody::Baseline { encoding, fit }
            } else {
                ModelBody::FixedEffects { encoding, fit }
            }
        }
        ModelKind::Frailty => {
            let encoding = DesignEncoding {
                covariates: revised_covariates(),
                location: None,
            };
            let design = encoding.encode::<T>(train)?;
            let groups = train
                .subjects()
                .iter()
                .map(|s| {
                    location_map.group_of(s.zip3()).ok_or_else(|| DesignError::UncoveredZip3 {
                        id: s.id.clone(),
                        zip3: s.zip3(),
                    })
                })
                .collect::<Result<Vec<u16>, _>>()?;
            let fit = fit_gamma_frailty(&design, &times, &events, &groups, &settings.frailty)?;
            ModelBody::Frailty {
                encoding,
                location_map: location_map.clone(),
                prediction: settings.frailty_prediction,
                fit,
            }
        }
        ModelKind::Boosted => {
            let valid = valid.ok_or(ModelError::MissingValidation)?;
            let covariates: Vec<String> = COVARIATE_NAMES.iter().map(|s| s.to_string()).collect();
            let xt = boost_features::<T>(train, &covariates, location_map)?;
            let xv = boost_features::<T>(valid, &covariates, location_map)?;
            let tv: Vec<T> = to_t(&valid.times());
            let ev = valid.events();
            let model = train_boosted(
                BoostData {
                    features: &xt,
                    times: &times,
                    events: &events,
                },
                BoostData {
                    features: &xv,
                    times: &tv,
                    events: &ev,
                },
                &settings.boost,
            )?;
            ModelBody::Boosted {
                covariates,
                location_map: location_map.clone(),
                model,
            }
        }
    };
    Ok(FittedModel {
        schema_version: SCHEMA_VERSION,
        model,
    })
}

impl<T: Real> FittedModel<T> {
    pub fn kind(&self) -> ModelKind {
        match &self.model {
            ModelBody::Baseline { .. } => ModelKind::Baseline,
            ModelBody::FixedEffects { .. } => ModelKind::FixedEffects,
            ModelBody::Frailty { .. } => ModelKind::Frailty,
            ModelBody::Boosted { .. } => ModelKind::Boosted,
        }
    }

    pub fn baseline_cumhaz(&self) -> &StepFunction<T> {
        match &self.model {
            ModelBody::Baseline { fit, .. } | ModelBody::FixedEffects { fit, .. } => &fit.baseline_cumhaz,
            ModelBody::Frailty { fit, .. } => &fit.baseline_cumhaz,
            ModelBody::Boosted { model, .. } => &model.baseline_cumhaz,
        }
    }

    /// Log relative hazard per subject, including the log posterior frailty
    /// when frailty predictions use it.
    pub fn log_relative_hazards(&self, cohort: &Cohort) -> Result<Vec<T>, ModelError> {
        Ok(match &self.model {
            ModelBody::Baseline { encoding, fit } | ModelBody::FixedEffects { encoding, fit } => {
                encoding.encode::<T>(cohort)?.linear_predictor(&fit.beta)
            }
            ModelBody::Frailty {
                encoding,
                location_map,
                prediction,
                fit,
            } => {
                let lp = encoding.encode::<T>(cohort)?.linear_predictor(&fit.beta);
                lp.into_iter()
                    .zip(cohort.subjects())
                    .map(|(eta, s)| match prediction {
                        FrailtyPrediction::Posterior => eta + fit.frailty_for(location_map.group_of(s.zip3())).ln(),
                        FrailtyPrediction::Marginal => eta,
                    })
                    .collect()
            }
            ModelBody::Boosted {
                covariates,
                location_map,
                model,
            } => model.scores(&boost_features(cohort, covariates, location_map)?)?,
        })
    }

    /// `H_i(T_i)`: each subject's cumulative hazard at their own follow-up
    /// time, the expected event count used for calibration.
    pub fn expected_cumhaz(&self, cohort: &Cohort) -> Result<Vec<T>, ModelError> {
        let h0 = self.baseline_cumhaz();
        Ok(self
            .log_relative_hazards(cohort)?
            .into_iter()
            .zip(cohort.subjects())
            .map(|(eta, s)| h0.eval(T::lit(s.follow_up_days)) * eta.exp())
            .collect())
    }

    /// Absolute risk by `horizon` for every subject.
    pub fn predict_risks(&self, cohort: &Cohort, horizon: T) -> Result<Vec<T>, ModelError> {
        let h = self.baseline_cumhaz().eval(horizon);
        Ok(self
            .log_relative_hazards(cohort)?
            .into_iter()
            .map(|eta| risk_from_cumhaz(h * eta.exp()))
            .collect())
    }
}

impl<T: Real + Serialize + for<'de> Deserialize<'de>> FittedModel<T> {
    pub fn to_json(&self) -> Result<String, ModelError> {
        serde_json::to_string_pretty(self).map_err(|e| ModelError::Json(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        #[derive(Deserialize)]
        struct Header {
            schema_version: u32,
        }
        let header: Header = serde_json::from_str(text).map_err(|e| ModelError::Json(e.to_string()))?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(ModelError::Schema {
                found: header.schema_version,
            });
        }
        serde_json::from_str(text).map_err(|e| ModelError::Json(e.to_string()))
    }
}
