//! Synthetic cohorts from a shared-frailty Weibull proportional-hazards model.
//!
//! Each location `i` draws a frailty `Z_i ~ Gamma(1/theta, theta)` (mean 1,
//! variance theta; `Z_i = 1` when theta is 0). A subject's latent event time
//! has hazard `Z_i h0(t) exp(beta' x)` with Weibull `h0`, so
//! `T = scale * (E / (Z_i exp(beta' x)))^(1/shape)` for `E ~ Exp(1)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1, Gamma, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Cohort, Sex, Subject, COVARIATE_NAMES};

#[derive(Debug, Error, PartialEq)]
pub enum SimulationError {
    #[error("invalid simulation config: {0}")]
    Invalid(String),
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Marginal covariate distributions. Continuous labs are normal and clipped
/// to the given range; binary covariates are Bernoulli.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateDistributions {
    pub age_min: u32,
    pub age_max: u32,
    pub p_male: f64,
    pub hdl_mean: f64,
    pub hdl_sd: f64,
    pub hdl_range: (f64, f64),
    pub tc_mean: f64,
    pub tc_sd: f64,
    pub tc_range: (f64, f64),
    pub p_hypertension: f64,
    pub p_diabetes: f64,
    pub p_smoker: f64,
    pub p_antihypertensive: f64,
    pub p_ckd: f64,
    pub p_ra: f64,
}

impl Default for CovariateDistributions {
    fn default() -> Self {
        Self {
            age_min: 40,
            age_max: 75,
            p_male: 0.45,
            hdl_mean: 52.0,
            hdl_sd: 14.0,
            hdl_range: (20.0, 100.0),
            tc_mean: 200.0,
            tc_sd: 35.0,
            tc_range: (130.0, 320.0),
            p_hypertension: 0.35,
            p_diabetes: 0.15,
            p_smoker: 0.15,
            p_antihypertensive: 0.3,
            p_ckd: 0.08,
            p_ra: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_subjects: usize,
    pub n_locations: usize,
    /// Log-hazard effect per covariate name, on the raw covariate scale.
    pub beta: BTreeMap<String, f64>,
    pub frailty_variance: f64,
    pub weibull_shape: f64,
    pub weibull_scale: f64,
    /// Exponential censoring rate per day; 0 disables random censoring.
    pub censoring_rate: f64,
    pub admin_censor_days: f64,
    pub covariates: CovariateDistributions,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_subjects: 10_000,
            n_locations: 20,
            beta: BTreeMap::new(),
            frailty_variance: 0.0,
            weibull_shape: 1.2,
            weibull_scale: 20_000.0,
            censoring_rate: 1.0e-4,
            admin_censor_days: 3652.0,
            covariates: CovariateDistributions::default(),
            seed: 0,
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), SimulationError> {
    if cond {
        Ok(())
    } else {
        Err(SimulationError::Invalid(msg()))
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        check(self.n_locations >= 1, || "n_locations must be at least 1".into())?;
        check(self.n_subjects >= self.n_locations, || {
            format!(
                "n_subjects ({}) must be at least n_locations ({})",
                self.n_subjects, self.n_locations
            )
        })?;
        check(self.n_locations <= 1000, || "at most 1000 zip3 locations".into())?;
        for name in self.beta.keys() {
            check(COVARIATE_NAMES.contains(&name.as_str()), || {
                format!("unknown covariate `{name}` in beta")
            })?;
        }
        check(self.beta.values().all(|b| b.is_finite()), || "beta must be finite".into())?;
        check(self.frailty_variance >= 0.0 && self.frailty_variance.is_finite(), || {
            "frailty_variance must be >= 0".into()
        })?;
        check(self.weibull_shape > 0.0 && self.weibull_shape.is_finite(), || {
            "weibull_shape must be > 0".into()
        })?;
        check(self.weibull_scale > 0.0 && self.weibull_scale.is_finite(), || {
            "weibull_scale must be > 0".into()
        })?;
        check(self.censoring_rate >= 0.0 && self.censoring_rate.is_finite(), || {
            "censoring_rate must be >= 0".into()
        })?;
        check(self.admin_censor_days > 0.0, || "admin_censor_days must be > 0".into())?;
        let c = &self.covariates;
        check(c.age_min <= c.age_max, || "age_min must not exceed age_max".into())?;
        for (name, p) in [
            ("p_male", c.p_male),
            ("p_hypertension", c.p_hypertension),
            ("p_diabetes", c.p_diabetes),
            ("p_smoker", c.p_smoker),
            ("p_antihypertensive", c.p_antihypertensive),
            ("p_ckd", c.p_ckd),
            ("p_ra", c.p_ra),
        ] {
            check((0.0..=1.0).contains(&p), || format!("{name} must be a probability"))?;
        }
        check(c.hdl_sd >= 0.0 && c.tc_sd >= 0.0, || "standard deviations must be >= 0".into())?;
        check(c.hdl_range.0 <= c.hdl_range.1 && c.tc_range.0 <= c.tc_range.1, || {
            "clip ranges must be ordered".into()
        })?;
        Ok(())
    }

    /// Parses a flat `key = value` document. Blank lines and `#` comments are
    /// ignored; covariate effects use `beta.<name>`; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self, SimulationError> {
        let mut cfg = Self::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| SimulationError::Parse {
                line: ln + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("invalid value `{v}` for `{key}`"))
        }
        let c = &mut self.covariates;
        match key {
            "n_subjects" => self.n_subjects = num(key, value)?,
            "n_locations" => self.n_locations = num(key, value)?,
            "frailty_variance" | "theta" => self.frailty_variance = num(key, value)?,
            "weibull_shape" => self.weibull_shape = num(key, value)?,
            "weibull_scale" => self.weibull_scale = num(key, value)?,
            "censoring_rate" => self.censoring_rate = num(key, value)?,
            "admin_censor_days" => self.admin_censor_days = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "age_min" => c.age_min = num(key, value)?,
            "age_max" => c.age_max = num(key, value)?,
            "p_male" => c.p_male = num(key, value)?,
            "hdl_mean" => c.hdl_mean = num(key, value)?,
            "hdl_sd" => c.hdl_sd = num(key, value)?,
            "hdl_min" => c.hdl_range.0 = num(key, value)?,
            "hdl_max" => c.hdl_range.1 = num(key, value)?,
            "tc_mean" => c.tc_mean = num(key, value)?,
            "tc_sd" => c.tc_sd = num(key, value)?,
            "tc_min" => c.tc_range.0 = num(key, value)?,
            "tc_max" => c.tc_range.1 = num(key, value)?,
            "p_hypertension" => c.p_hypertension = num(key, value)?,
            "p_diabetes" => c.p_diabetes = num(key, value)?,
            "p_smoker" => c.p_smoker = num(key, value)?,
            "p_antihypertensive" => c.p_antihypertensive = num(key, value)?,
            "p_ckd" => c.p_ckd = num(key, value)?,
            "p_ra" => c.p_ra = num(key, value)?,
            _ => {
                if let Some(name) = key.strip_prefix("beta.") {
                    if !COVARIATE_NAMES.contains(&name) {
                        return Err(format!("unknown covariate `{name}`"));
                    }
                    self.beta.insert(name.to_string(), num(key, value)?);
                } else {
                    return Err(format!("unknown key `{key}`"));
                }
            }
        }
        Ok(())
    }

    /// Renders the config in the format accepted by [`Self::parse`].
    pub fn to_key_value(&self) -> String {
        let c = &self.covariates;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("n_subjects", self.n_subjects.to_string());
        kv("n_locations", self.n_locations.to_string());
        kv("frailty_variance", self.frailty_variance.to_string());
        kv("weibull_shape", self.weibull_shape.to_string());
        kv("weibull_scale", self.weibull_scale.to_string());
        kv("censoring_rate", self.censoring_rate.to_string());
        kv("admin_censor_days", self.admin_censor_days.to_string());
        kv("seed", self.seed.to_string());
        kv("age_min", c.age_min.to_string());
        kv("age_max", c.age_max.to_string());
        kv("p_male", c.p_male.to_string());
        kv("hdl_mean", c.hdl_mean.to_string());
        kv("hdl_sd", c.hdl_sd.to_string());
        kv("hdl_min", c.hdl_range.0.to_string());
        kv("hdl_max", c.hdl_range.1.to_string());
        kv("tc_mean", c.tc_mean.to_string());
        kv("tc_sd", c.tc_sd.to_string());
        kv("tc_min", c.tc_range.0.to_string());
        kv("tc_max", c.tc_range.1.to_string());
        kv("p_hypertension", c.p_hypertension.to_string());
        kv("p_diabetes", c.p_diabetes.to_string());
        kv("p_smoker", c.p_smoker.to_string());
        kv("p_antihypertensive", c.p_antihypertensive.to_string());
        kv("p_ckd", c.p_ckd.to_string());
        kv("p_ra", c.p_ra.to_string());
        for (name, b) in &self.beta {
            kv(&format!("beta.{name}"), b.to_string());
        }
        out
    }
}

/// zip3 prefix used for location `index` out of `n_locations`.
pub fn location_zip3(index: usize, n_locations: usize) -> u16 {
    (index * 1000 / n_locations) as u16
}

/// Draws one frailty per location; all ones when `theta` is 0.
fn draw_frailties(rng: &mut ChaCha8Rng, n: usize, theta: f64) -> Result<Vec<f64>, SimulationError> {
    if theta == 0.0 {
        return Ok(vec![1.0; n]);
    }
    let gamma = Gamma::new(1.0 / theta, theta).map_err(|e| SimulationError::Invalid(e.to_string()))?;
    Ok((0..n).map(|_| gamma.sample(rng)).collect())
}

pub fn simulate_cohort(config: &SimulationConfig) -> Result<Cohort, SimulationError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let frailties = draw_frailties(&mut rng, config.n_locations, config.frailty_variance)?;
    let c = &config.covariates;
    let normal = |mean: f64, sd: f64| Normal::new(mean, sd).map_err(|e| SimulationError::Invalid(e.to_string()));
    let hdl = normal(c.hdl_mean, c.hdl_sd)?;
    let tc = normal(c.tc_mean, c.tc_sd)?;
    let censor = (config.censoring_rate > 0.0)
        .then(|| Exp::new(config.censoring_rate))
        .transpose()
        .map_err(|e| SimulationError::Invalid(e.to_string()))?;
    let width = config.n_subjects.to_string().len();

    let mut subjects = Vec::with_capacity(config.n_subjects);
    for i in 0..config.n_subjects {
        let loc = i % config.n_locations;
        let zip3 = location_zip3(loc, config.n_locations);
        let round1 = |x: f64| (x * 10.0).round() / 10.0;
        let mut s = Subject {
            id: format!("S{i:0width$}"),
            age: rng.random_range(c.age_min..=c.age_max),
            sex: if rng.random_bool(c.p_male) { Sex::Male } else { Sex::Female },
            hdl: round1(hdl.sample(&mut rng).clamp(c.hdl_range.0, c.hdl_range.1)),
            total_cholesterol: round1(tc.sample(&mut rng).clamp(c.tc_range.0, c.tc_range.1)),
            hypertension: rng.random_bool(c.p_hypertension),
            diabetes: rng.random_bool(c.p_diabetes),
            smoker: rng.random_bool(c.p_smoker),
            antihypertensive: rng.random_bool(c.p_antihypertensive),
            ckd: rng.random_bool(c.p_ckd),
            ra: rng.random_bool(c.p_ra),
            zip5: format!("{zip3:03}{:02}", i % 100),
            follow_up_days: 0.0,
            event: false,
        };
        let eta: f64 = config
            .beta
            .iter()
            .map(|(name, b)| b * s.covariate(name).expect("validated covariate"))
            .sum();
        let e: f64 = Exp1.sample(&mut rng);
        let rate = frailties[loc] * eta.exp();
        let event_time = if rate > 0.0 {
            config.weibull_scale * (e / rate).powf(1.0 / config.weibull_shape)
        } else {
            f64::INFINITY
        };
        let random_censor = censor.map(|d| d.sample(&mut rng)).unwrap_or(f64::INFINITY);
        let censor_time = random_censor.min(config.admin_censor_days);
        // keep follow-up strictly positive after rounding to 1e-6 day resolution
        let t = event_time.min(censor_time);
        s.follow_up_days = ((t * 1e6).round() / 1e6).max(1e-6);
        s.event = event_time <= censor_time;
        subjects.push(s);
    }
    Cohort::new(subjects, format!("simulated(seed={})", config.seed))
        .map_err(|e| SimulationError::Invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip_and_unknown_key() {
        let mut cfg = SimulationConfig::default();
        cfg.beta.insert("diabetes".into(), 0.5);
        cfg.seed = 17;
        let back = SimulationConfig::parse(&cfg.to_key_value()).unwrap();
        assert_eq!(back, cfg);
        let err = SimulationConfig::parse("n_subjects = 10\nbogus = 1\n").unwrap_err();
        assert_eq!(
            err,
            SimulationError::Parse {
                line: 2,
                message: "unknown key `bogus`".into()
            }
        );
        assert!(SimulationConfig::parse("beta.bmi = 1").is_err());
    }

    #[test]
    fn rejects_invalid_parameters() {
        let cfg = SimulationConfig {
            n_subjects: 0,
            ..Default::default()
        };
        assert!(simulate_cohort(&cfg).is_err());
        let cfg = SimulationConfig {
            weibull_shape: 0.0,
            ..Default::default()
        };
        assert!(simulate_cohort(&cfg).is_err());
        let cfg = SimulationConfig {
            frailty_variance: -0.1,
            ..Default::default()
        };
        assert!(simulate_cohort(&cfg).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SimulationConfig {
            n_subjects: 500,
            frailty_variance: 0.3,
            seed: 5,
            ..Default::default()
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        simulate_cohort(&cfg).unwrap().write_csv(&mut a).unwrap();
        simulate_cohort(&cfg).unwrap().write_csv(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_subject_single_location() {
        let cfg = SimulationConfig {
            n_subjects: 1,
            n_locations: 1,
            ..Default::default()
        };
        let c = simulate_cohort(&cfg).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.subjects()[0].zip3(), 0);
    }

    #[test]
    fn five_year_event_fraction_matches_weibull_cdf() {
        let cfg = SimulationConfig {
            n_subjects: 50_000,
            n_locations: 10,
            weibull_shape: 1.3,
            weibull_scale: 9000.0,
            censoring_rate: 0.0,
            admin_censor_days: 1.0e12,
            seed: 11,
            ..Default::default()
        };
        let cohort = simulate_cohort(&cfg).unwrap();
        let horizon = 1826.0;
        let hits = cohort
            .subjects()
            .iter()
            .filter(|s| s.event && s.follow_up_days <= horizon)
            .count();
        let frac = hits as f64 / cohort.len() as f64;
        let p = 1.0 - (-(horizon / cfg.weibull_scale).powf(cfg.weibull_shape)).exp();
        let se = (p * (1.0 - p) / cohort.len() as f64).sqrt();
        assert!((frac - p).abs() <= 3.0 * se, "frac {frac} vs {p} (se {se})");
    }
}
