//! Survival risk-equation fitting and evaluation.
//!
//! Fits Cox proportional-hazards risk equations (plain, with location fixed
//! effects, with shared gamma frailty) and gradient-boosted Cox models on
//! cohort data, then scores them with discrimination, calibration and
//! net-benefit metrics, overall and by subgroup.
//!
//! The numerical core is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix it to `f64`.

// `!(a > b)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod boost;
pub mod cohort;
pub mod cox;
pub mod frailty;
pub mod harness;
pub mod linalg;
pub mod location;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod simulate;
pub mod step;
pub mod survival;

pub use cohort::{Cohort, Subject};
pub use location::LocationMap;
pub use model::{ModelKind, SCHEMA_VERSION};
pub use scalar::Real;

pub type CoxFitF64 = cox::CoxFit<f64>;
pub type FrailtyFitF64 = frailty::FrailtyFit<f64>;
pub type BoostedModelF64 = boost::BoostedModel<f64>;
pub type FittedModelF64 = model::FittedModel<f64>;
pub type DesignMatrixF64 = cox::DesignMatrix<f64>;
pub type KaplanMeierF64 = survival::KaplanMeierCurve<f64>;
pub type StepFunctionF64 = step::StepFunction<f64>;

pub type CoxFitF32 = cox::CoxFit<f32>;
pub type DesignMatrixF32 = cox::DesignMatrix<f32>;
pub type KaplanMeierF32 = survival::KaplanMeierCurve<f32>;
