//! Gradient-boosted Cox model.
//!
//! Scores start at `F = 0`. Each stage fits a least-squares tree to the
//! negative gradient of the Breslow partial likelihood, chooses a scalar stage
//! weight by golden-section line search, and adds `nu * w * h(x)` to the
//! scores. Training stops once the validation loss has not improved for
//! `patience` stages; the best prefix is kept and a Breslow baseline hazard is
//! computed with the final scores as the linear predictor.

mod tree;

pub use tree::{fit_tree, RegressionTree, TreeNode, TreeParams};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cox::{risk_from_cumhaz, DesignMatrix, RiskSets};
use crate::scalar::Real;
use crate::step::StepFunction;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoostError {
    #[error("invalid boosting configuration: {0}")]
    Config(String),
    #[error("{0} set has no events")]
    NoEvents(&'static str),
    #[error("input lengths differ: {0}")]
    Length(String),
    #[error("feature vector has {got} entries, model expects {expected}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub max_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_node: usize,
    pub row_subsample: f64,
    pub col_subsample: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            max_trees: 500,
            learning_rate: 0.05,
            max_depth: 3,
            min_node: 1000,
            row_subsample: 0.9,
            col_subsample: 1.0,
            patience: 20,
            seed: 0,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<(), BoostError> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(BoostError::Config(format!(
                "learning_rate must be in (0, 1], got {}",
                self.learning_rate
            )));
        }
        self.validate_rest()
    }

    fn validate_rest(&self) -> Result<(), BoostError> {
        for (name, v) in [("row_subsample", self.row_subsample), ("col_subsample", self.col_subsample)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(BoostError::Config(format!("{name} must be in (0, 1], got {v}")));
            }
        }
        if self.min_node == 0 {
            return Err(BoostError::Config("min_node must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(BoostError::Config("patience must be at least 1".into()));
        }
        Ok(())
    }
}

/// Features, follow-up times and event flags for one partition.
#[derive(Debug, Clone, Copy)]
pub struct BoostData<'a, T> {
    pub features: &'a DesignMatrix<T>,
    pub times: &'a [T],
    pub events: &'a [bool],
}

impl<T: Real> BoostData<'_, T> {
    fn check(&self, label: &'static str) -> Result<(), BoostError> {
        if self.features.n_rows() != self.times.len() || self.times.len() != self.events.len() {
            return Err(BoostError::Length(format!(
                "{label}: {} feature rows, {} times, {} events",
                self.features.n_rows(),
                self.times.len(),
                self.events.len()
            )));
        }
        if !self.events.iter().any(|&e| e) {
            return Err(BoostError::NoEvents(label));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostStage<T> {
    pub tree: RegressionTree<T>,
    /// Line-searched weight before shrinkage.
    pub weight: T,
    /// The tree was constant on the training set, so the stage changes nothing.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel<T> {
    pub feature_names: Vec<String>,
    pub learning_rate: T,
    pub stages: Vec<BoostStage<T>>,
    pub n_stages_used: usize,
    /// Stages fitted before early stopping triggered.
    pub n_stages_trained: usize,
    pub baseline_cumhaz: StepFunction<T>,
    /// Negative log partial likelihood after each stage; entry 0 is `F = 0`.
    pub train_loss: Vec<T>,
    pub valid_loss: Vec<T>,
    pub config: BoostConfig,
}

impl<T: Real> BoostedModel<T> {
    /// `F(x) = sum nu * w_m * h_m(x)` over the retained stages.
    pub fn score(&self, x: &[T]) -> Result<T, BoostError> {
        if x.len() != self.feature_names.len() {
            return Err(BoostError::Dimension {
                expected: self.feature_names.len(),
                got: x.len(),
            });
        }
        Ok(self
            .stages
            .iter()
            .map(|s| self.learning_rate * s.weight * s.tree.predict(x))
            .sum())
    }

    pub fn scores(&self, features: &DesignMatrix<T>) -> Result<Vec<T>, BoostError> {
        (0..features.n_rows()).map(|i| self.score(features.row(i))).collect()
    }

    pub fn cumulative_hazard(&self, x: &[T], t: T) -> Result<T, BoostError> {
        Ok(self.baseline_cumhaz.eval(t) * self.score(x)?.exp())
    }
}

/// Negative gradient of the Breslow log partial likelihood with respect to
/// the scores: `z_i = d_i - exp(F_i) * sum_{t_j <= t_i} d_j / S0(t_j)` where
/// `S0(t) = sum_{t_k >= t} exp(F_k)`.
pub fn working_response<T: Real>(f: &[T], times: &[T], events: &[bool]) -> Vec<T> {
    assert!(f.len() == times.len() && times.len() == events.len(), "lengths differ");
    let n = f.len();
    let shift = f.iter().copied().fold(T::neg_infinity(), T::max);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).expect("finite times"));

    // block boundaries of tied times, ascending
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && times[order[j]] == times[order[i]] {
            j += 1;
        }
        blocks.push((i, j));
        i = j;
    }
    // S0 per block, accumulated from the latest time down
    let mut s0 = vec![T::zero(); blocks.len()];
    let mut acc = T::zero();
    for (b, &(start, end)) in blocks.iter().enumerate().rev() {
        for &k in &order[start..end] {
            acc += (f[k] - shift).exp();
        }
        s0[b] = acc;
    }
    let mut z = vec![T::zero(); n];
    let mut cum = T::zero();
    for (b, &(start, end)) in blocks.iter().enumerate() {
        let d = order[start..end].iter().filter(|&&k| events[k]).count();
        if d > 0 {
            cum += T::from_usize_lossy(d) / s0[b];
        }
        for &k in &order[start..end] {
            let delta = if events[k] { T::one() } else { T::zero() };
            z[k] = delta - (f[k] - shift).exp() * cum;
        }
    }
    z
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearch<T> {
    pub weight: T,
    pub loss: T,
    pub degenerate: bool,
}

/// Minimise `-logPL(F + w h)` over `w` in `[lower, upper]` by golden-section
/// search. Falls back to `w = lower` when that endpoint is at least as good.
pub fn line_search_weight<T: Real>(
    f_prev: &[T],
    h: &[T],
    risk_sets: &RiskSets<T>,
    lower: T,
    upper: T,
    tol: T,
) -> LineSearch<T> {
    let loss = |w: T| -> T {
        let eta: Vec<T> = f_prev.iter().zip(h).map(|(&f, &hv)| f + w * hv).collect();
        -risk_sets.log_likelihood(&eta)
    };
    if h.iter().all(|&v| v == T::zero()) {
        return LineSearch {
            weight: T::zero(),
            loss: loss(T::zero()),
            degenerate: true,
        };
    }
    let (w, lw) = golden_section(&loss, lower, upper, tol);
    let l0 = loss(lower);
    let (weight, loss) = if l0 <= lw { (lower, l0) } else { (w, lw) };
    LineSearch {
        weight,
        loss,
        degenerate: false,
    }
}

fn golden_section<T: Real>(f: &impl Fn(T) -> T, mut a: T, mut b: T, tol: T) -> (T, T) {
    let r = T::lit((5f64.sqrt() - 1.0) / 2.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let m = (a + b) / T::lit(2.0);
    (m, f(m))
}

const WEIGHT_BRACKET: (f64, f64) = (0.0, 10.0);
const WEIGHT_TOL: f64 = 1e-6;

/// Fit the boosted model. Rejects configurations outside the documented
/// parameter ranges.
pub fn train_boosted<T: Real>(
    train: BoostData<'_, T>,
    valid: BoostData<'_, T>,
    config: &BoostConfig,
) -> Result<BoostedModel<T>, BoostError> {
    config.validate()?;
    train_unchecked(train, valid, config)
}

/// Training without the learning-rate range check, so a zero learning rate
/// can be exercised in tests.
pub(crate) fn train_unchecked<T: Real>(
    train: BoostData<'_, T>,
    valid: BoostData<'_, T>,
    config: &BoostConfig,
) -> Result<BoostedModel<T>, BoostError> {
    config.validate_rest()?;
    train.check("training")?;
    valid.check("validation")?;
    if train.features.n_cols() != valid.features.n_cols() {
        return Err(BoostError::Dimension {
            expected: train.features.n_cols(),
            got: valid.features.n_cols(),
        });
    }
    let n = train.times.len();
    let p = train.features.n_cols();
    let nu = T::lit(config.learning_rate);
    let rs_train = RiskSets::new(train.times, train.events);
    let rs_valid = RiskSets::new(valid.times, valid.events);
    let params = TreeParams {
        max_depth: config.max_depth,
        min_node: config.min_node,
    };
    let n_rows = ((config.row_subsample * n as f64).round() as usize).clamp(1, n);
    let n_cols = ((config.col_subsample * p as f64).round() as usize).clamp(usize::from(p > 0), p);

    let mut f_train = vec![T::zero(); n];
    let mut f_valid = vec![T::zero(); valid.times.len()];
    let mut train_loss = vec![-rs_train.log_likelihood(&f_train)];
    let mut valid_loss = vec![-rs_valid.log_likelihood(&f_valid)];
    let mut stages = Vec::new();
    let mut best = (valid_loss[0], 0usize);

    for m in 1..=config.max_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(m as u64);
        let mut rows = sample(&mut rng, n, n_rows).into_vec();
        rows.sort_unstable();
        let cols = sample(&mut rng, p, n_cols).into_vec();

        let z = working_response(&f_train, train.times, train.events);
        let tree = fit_tree(train.features, &z, &rows, &cols, params);
        let h: Vec<T> = (0..n).map(|i| tree.predict(train.features.row(i))).collect();
        let first = h[0];
        let constant = h.iter().all(|&v| v == first);
        let search = line_search_weight(
            &f_train,
            &h,
            &rs_train,
            T::lit(WEIGHT_BRACKET.0),
            T::lit(WEIGHT_BRACKET.1),
            T::lit(WEIGHT_TOL),
        );
        let step = nu * search.weight;
        for (fi, &hi) in f_train.iter_mut().zip(&h) {
            *fi += step * hi;
        }
        for (i, fi) in f_valid.iter_mut().enumerate() {
            *fi += step * tree.predict(valid.features.row(i));
        }
        train_loss.push(-rs_train.log_likelihood(&f_train));
        let vl = -rs_valid.log_likelihood(&f_valid);
        valid_loss.push(vl);
        stages.push(BoostStage {
            tree,
            weight: search.weight,
            degenerate: search.degenerate || constant,
        });
        if vl < best.0 {
            best = (vl, m);
        } else if m - best.1 >= config.patience {
            break;
        }
    }

    let n_stages_trained = stages.len();
    stages.truncate(best.1);
    let mut model = BoostedModel {
        feature_names: train.features.column_names.clone(),
        learning_rate: nu,
        stages,
        n_stages_used: best.1,
        n_stages_trained,
        baseline_cumhaz: StepFunction::constant(T::zero()),
        train_loss,
        valid_loss,
        config: config.clone(),
    };
    let scores = model.scores(train.features)?;
    model.baseline_cumhaz = rs_train.breslow(&scores);
    Ok(model)
}

/// `1 - exp(-H0(t) exp(F(x)))`.
pub fn predict_risk_boosted<T: Real>(model: &BoostedModel<T>, x: &[T], horizon: T) -> Result<T, BoostError> {
    Ok(risk_from_cumhaz(model.cumulative_hazard(x, horizon)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cox::partial_loglik_and_gradient;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn working_response_hand_case() {
        let z = working_response(&[0.0; 3], &[1.0, 2.0, 3.0], &[true; 3]);
        assert_relative_eq!(z[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(z[1], 1.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(z[2], -5.0 / 6.0, epsilon = 1e-15);
        assert!(working_response(&[0.3, -1.0], &[1.0, 2.0], &[false, false])
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn working_response_is_cox_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let n = rng.random_range(2..25);
            let times: Vec<f64> = (0..n).map(|_| rng.random_range(1..8) as f64).collect();
            let events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
            let f: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let identity: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
            let names = (0..n).map(|i| format!("e{i}")).collect();
            let design = DesignMatrix::from_rows(&identity, names).unwrap();
            let (_, grad) = partial_loglik_and_gradient(&design, &times, &events, &f);
            let z = working_response(&f, &times, &events);
            for (a, b) in z.iter().zip(&grad) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
            assert!(z.iter().sum::<f64>().abs() < 1e-10);
        }
    }

    fn small_instance(seed: u64) -> (Vec<f64>, Vec<bool>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 30;
        let times: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..5.0)).collect();
        let events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        let f: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
        let z = working_response(&f, &times, &events);
        // a noisy version of the gradient keeps the optimum inside the bracket
        let h: Vec<f64> = z.iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
        (times, events, f, h)
    }

    #[test]
    fn line_search_matches_grid() {
        for seed in 0..5 {
            let (times, events, f, h) = small_instance(seed);
            let rs = RiskSets::new(&times, &events);
            let got = line_search_weight(&f, &h, &rs, 0.0, 10.0, 1e-6);
            let mut best = (f64::INFINITY, 0.0);
            for k in 0..=100_000 {
                let w = k as f64 * 1e-4;
                let eta: Vec<f64> = f.iter().zip(&h).map(|(a, b)| a + w * b).collect();
                let l = -rs.log_likelihood(&eta);
                if l < best.0 {
                    best = (l, w);
                }
            }
            assert!((got.weight - best.1).abs() < 1e-3, "seed {seed}: {} vs {}", got.weight, best.1);
        }
    }

    #[test]
    fn line_search_degenerate_and_stationary() {
        let (times, events, f, _) = small_instance(3);
        let rs = RiskSets::new(&times, &events);
        let zero = line_search_weight(&f, &vec![0.0; f.len()], &rs, 0.0, 10.0, 1e-6);
        assert_eq!(zero.weight, 0.0);
        assert!(zero.degenerate);

        // a constant direction leaves the partial likelihood unchanged, so
        // its derivative at w = 0 is zero
        let flat = line_search_weight(&f, &vec![1.0; f.len()], &rs, 0.0, 10.0, 1e-6);
        assert!(flat.weight.abs() < 1e-3);

        // moving against the gradient only increases the loss
        let z = working_response(&f, &times, &events);
        let h: Vec<f64> = z.iter().map(|v| -v).collect();
        let away = line_search_weight(&f, &h, &rs, 0.0, 10.0, 1e-6);
        assert!(away.weight.abs() < 1e-3);
    }

    fn synthetic(n: usize, seed: u64) -> (DesignMatrix<f64>, Vec<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(n);
        let mut times = Vec::with_capacity(n);
        let mut events = Vec::with_capacity(n);
        for _ in 0..n {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), f64::from(u8::from(rng.random_bool(0.5)))];
            let eta = 0.8 * x[0] - 0.5 * x[2];
            let u: f64 = rng.random_range(1e-12..1.0);
            let t = -u.ln() / eta.exp();
            let c = rng.random_range(0.0..2.0);
            times.push(t.min(c));
            events.push(t <= c);
            rows.push(x.to_vec());
        }
        let d = DesignMatrix::from_rows(&rows, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        (d, times, events)
    }

    fn small_config() -> BoostConfig {
        BoostConfig {
            max_trees: 40,
            learning_rate: 0.1,
            min_node: 20,
            row_subsample: 1.0,
            patience: 5,
            ..BoostConfig::default()
        }
    }

    #[test]
    fn training_loss_non_increasing_with_full_sampling() {
        let (d, t, e) = synthetic(400, 1);
        let (dv, tv, ev) = synthetic(200, 2);
        let cfg = BoostConfig {
            patience: 1000,
            ..small_config()
        };
        let train = BoostData { features: &d, times: &t, events: &e };
        let valid = BoostData { features: &dv, times: &tv, events: &ev };
        let model = train_boosted(train, valid, &cfg).unwrap();
        assert_eq!(model.n_stages_trained, 40);
        for w in model.train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} > {}", w[1], w[0]);
        }
        assert!(model.train_loss.last().unwrap() < &model.train_loss[0]);
    }

    #[test]
    fn early_stopping_keeps_best_prefix() {
        let (d, t, e) = synthetic(300, 3);
        let (dv, tv, ev) = synthetic(150, 4);
        let cfg = BoostConfig {
            max_trees: 200,
            learning_rate: 0.5,
            min_node: 5,
            max_depth: 4,
            patience: 5,
            ..small_config()
        };
        let train = BoostData { features: &d, times: &t, events: &e };
        let valid = BoostData { features: &dv, times: &tv, events: &ev };
        let model = train_boosted(train, valid, &cfg).unwrap();
        assert!(model.n_stages_used <= cfg.max_trees);
        assert_eq!(model.stages.len(), model.n_stages_used);
        let argmin = model
            .valid_loss
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmin, model.n_stages_used);
        assert!(model.n_stages_trained <= model.n_stages_used + cfg.patience);

        let longer = train_boosted(train, valid, &BoostConfig { patience: 15, ..cfg.clone() }).unwrap();
        assert!(longer.valid_loss[longer.n_stages_used] <= model.valid_loss[model.n_stages_used]);
        // the shorter run is a prefix of the longer one
        assert_eq!(&longer.valid_loss[..model.valid_loss.len()], &model.valid_loss[..]);
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        let (d, t, e) = synthetic(300, 5);
        let (dv, tv, ev) = synthetic(100, 6);
        let cfg = BoostConfig {
            row_subsample: 0.7,
            col_subsample: 0.67,
            seed: 9,
            ..small_config()
        };
        let train = BoostData { features: &d, times: &t, events: &e };
        let valid = BoostData { features: &dv, times: &tv, events: &ev };
        let a = train_boosted(train, valid, &cfg).unwrap();
        let b = train_boosted(train, valid, &cfg).unwrap();
        assert_eq!(a, b);
        let c = train_boosted(train, valid, &BoostConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.train_loss, c.train_loss);
    }

    #[test]
    fn zero_learning_rate_gives_null_model() {
        let (d, t, e) = synthetic(200, 7);
        let (dv, tv, ev) = synthetic(100, 8);
        let cfg = BoostConfig {
            learning_rate: 0.0,
            ..small_config()
        };
        let train = BoostData { features: &d, times: &t, events: &e };
        let valid = BoostData { features: &dv, times: &tv, events: &ev };
        assert!(train_boosted(train, valid, &cfg).is_err());
        let model = train_unchecked(train, valid, &cfg).unwrap();
        assert_eq!(model.n_stages_used, 0);
        let null = RiskSets::new(&t, &e).breslow(&vec![0.0; t.len()]);
        let expect = 1.0 - (-null.eval(1.0)).exp();
        for i in 0..10 {
            assert_relative_eq!(predict_risk_boosted(&model, d.row(i), 1.0).unwrap(), expect, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_stage_prediction() {
        let model = BoostedModel::<f64> {
            feature_names: vec!["x".into()],
            learning_rate: 0.05,
            stages: vec![],
            n_stages_used: 0,
            n_stages_trained: 0,
            baseline_cumhaz: StepFunction::new(0.0, vec![1.0], vec![0.1]),
            train_loss: vec![],
            valid_loss: vec![],
            config: BoostConfig::default(),
        };
        for x in [-3.0, 0.0, 7.0] {
            assert_relative_eq!(predict_risk_boosted(&model, &[x], 2.0).unwrap(), 0.095163, epsilon = 1e-6);
        }
        assert_eq!(predict_risk_boosted(&model, &[1.0], 0.0).unwrap(), 0.0);
        assert!(predict_risk_boosted(&model, &[1.0, 2.0], 2.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(BoostConfig::default().validate().is_ok());
        for bad in [
            BoostConfig { learning_rate: 1.5, ..Default::default() },
            BoostConfig { row_subsample: 0.0, ..Default::default() },
            BoostConfig { col_subsample: 1.2, ..Default::default() },
            BoostConfig { min_node: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn json_round_trip() {
        let (d, t, e) = synthetic(200, 9);
        let train = BoostData { features: &d, times: &t, events: &e };
        let model = train_boosted(train, train, &small_config()).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: BoostedModel<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
    }
}
