//! Batch front end: simulate or ingest cohorts, fit and evaluate risk
//! models, and compare them.
//!
//! Every command resolves its settings from flags, then an optional
//! `--config` key=value file, then defaults, and embeds the resolved settings
//! in each artifact it writes (CSV files get a `.manifest.json` sidecar).

pub mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use thiserror::Error;

use survrisk::boost::{BoostConfig, BoostError};
use survrisk::cohort::{apply_eligibility, load_cohort, split_train_test, Cohort, CohortError, CsvSchema};
use survrisk::cox::{CoxError, DesignError};
use survrisk::frailty::{FrailtyError, FrailtyOptions, ThetaMode};
use survrisk::harness::{
    calibration_bins_for, compare_models, evaluate_model, evaluate_subgroups, tune_boost_hyperparameters,
    write_calibration_csv, write_decision_curve_csv, ConcordanceOptionsConfig, EvaluationReport, EvaluationSettings,
    HarnessError, SubgroupSpec,
};
use survrisk::location::{merge_locations, LocationMap, DEFAULT_MIN_GROUP_SIZE};
use survrisk::metrics::{decision_curve, NetBenefitMode};
use survrisk::model::{fit_model, FitSettings, FittedModel, FrailtyPrediction, ModelError, ModelKind, SCHEMA_VERSION};
use survrisk::simulate::{simulate_cohort, SimulationConfig, SimulationError};

use config::{parse_list, parse_thresholds, read_config_file, Resolver};

pub const DEFAULT_THRESHOLDS: &str = "0.025,0.0375,0.1";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<CohortError> for CliError {
    fn from(e: CohortError) -> Self {
        match e {
            CohortError::Parameter(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Design(_) | ModelError::Json(_) | ModelError::Schema { .. } => CliError::Data(e.to_string()),
            ModelError::MissingValidation | ModelError::UnknownKind(_) => CliError::Config(e.to_string()),
            ModelError::Boost(BoostError::Config(_)) => CliError::Config(e.to_string()),
            ModelError::Boost(BoostError::Length(_) | BoostError::Dimension { .. }) => CliError::Data(e.to_string()),
            ModelError::Frailty(FrailtyError::Option(_)) => CliError::Config(e.to_string()),
            ModelError::Cox(CoxError::NoEvents) | ModelError::Boost(BoostError::NoEvents(_)) => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Model(m) => m.into(),
            HarnessError::Boost(BoostError::Config(_)) | HarnessError::Input(_) => CliError::Config(e.to_string()),
            HarnessError::Boost(_) => CliError::Numerical(e.to_string()),
            HarnessError::GroupMismatch(_) | HarnessError::Csv(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<DesignError> for CliError {
    fn from(e: DesignError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "survrisk", version, about = "Fit and evaluate survival risk equations")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// key=value file with command settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Prediction horizon in days [default: 1826].
    #[arg(long, global = true)]
    pub horizon_days: Option<f64>,
    /// Comma-separated net-benefit thresholds [default: 0.025,0.0375,0.1].
    #[arg(long, global = true)]
    pub thresholds: Option<String>,
    /// Output directory [default: .].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a synthetic cohort.
    Simulate(SimulateArgs),
    /// Read a cohort CSV, rename columns and apply eligibility filters.
    Ingest(IngestArgs),
    /// Merge zip3 locations into groups of a minimum size.
    MergeLocations(MergeArgs),
    /// Seeded train/test (and optional validation) split.
    Split(SplitArgs),
    /// Fit a model and write it as JSON.
    Fit(FitArgs),
    /// Evaluate a model on a cohort, overall and by subgroup.
    Evaluate(EvaluateArgs),
    /// Decision curve over a threshold grid.
    Dca(DcaArgs),
    /// Compare two evaluation reports.
    Compare(CompareArgs),
    /// Cross-validated boosting hyperparameter search.
    Tune(TuneArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub n_subjects: Option<usize>,
    #[arg(long)]
    pub n_locations: Option<usize>,
    /// Frailty variance.
    #[arg(long)]
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Column rename `canonical=header`; repeatable.
    #[arg(long = "column")]
    pub columns: Vec<String>,
    /// Keep subjects outside the eligibility ranges.
    #[arg(long)]
    pub no_eligibility: bool,
}

#[derive(Debug, Clone, Args)]
pub struct MergeArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub min_size: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub train_frac: Option<f64>,
    /// Share of the training part held out for validation; 0 disables.
    #[arg(long)]
    pub valid_frac: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct BoostArgs {
    #[arg(long)]
    pub max_trees: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_node: Option<usize>,
    #[arg(long)]
    pub row_subsample: Option<f64>,
    #[arg(long)]
    pub col_subsample: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// baseline, fixed_effects, frailty or boosted.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub train: PathBuf,
    /// Validation cohort for boosting early stopping.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Location map JSON; merged from the training cohort when absent.
    #[arg(long)]
    pub locations: Option<PathBuf>,
    #[arg(long)]
    pub min_group_size: Option<usize>,
    /// Fix the frailty variance instead of estimating it.
    #[arg(long)]
    pub frailty_theta: Option<f64>,
    /// posterior or marginal.
    #[arg(long)]
    pub frailty_prediction: Option<String>,
    #[command(flatten)]
    pub boost: BoostArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalCommon {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub cohort: PathBuf,
    /// Label used in reports and file names [default: model kind].
    #[arg(long)]
    pub model_id: Option<String>,
    /// km or binary.
    #[arg(long)]
    pub nb_mode: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: EvalCommon,
    /// ckd, ra, location or flag:<name>.
    #[arg(long)]
    pub subgroup: Option<String>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub min_subgroup: Option<usize>,
    #[arg(long)]
    pub gnd_bins: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct DcaArgs {
    #[command(flatten)]
    pub common: EvalCommon,
    #[arg(long)]
    pub grid_start: Option<f64>,
    #[arg(long)]
    pub grid_stop: Option<f64>,
    #[arg(long)]
    pub grid_step: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub baseline: PathBuf,
    #[arg(long)]
    pub revised: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub locations: Option<PathBuf>,
    #[arg(long)]
    pub min_group_size: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub grid_max_depth: Option<String>,
    #[arg(long)]
    pub grid_min_node: Option<String>,
    #[arg(long)]
    pub grid_row_subsample: Option<String>,
    #[arg(long)]
    pub grid_col_subsample: Option<String>,
    #[arg(long)]
    pub patience: Option<usize>,
}

/// Parse arguments and run; returns the files written.
pub fn run_from_args<I, S>(args: I) -> Result<Vec<PathBuf>, CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Config(e.to_string()))?;
    run(&cli)
}

pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let c = &cli.common;
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(c, a),
        Command::Ingest(a) => cmd_ingest(c, a),
        Command::MergeLocations(a) => cmd_merge_locations(c, a),
        Command::Split(a) => cmd_split(c, a),
        Command::Fit(a) => cmd_fit(c, a),
        Command::Evaluate(a) => cmd_evaluate(c, a),
        Command::Dca(a) => cmd_dca(c, a),
        Command::Compare(a) => cmd_compare(c, a),
        Command::Tune(a) => cmd_tune(c, a),
    }
}

fn resolver(common: &CommonArgs) -> Result<Resolver, CliError> {
    Ok(Resolver::new(match &common.config {
        Some(p) => read_config_file(p)?,
        None => BTreeMap::new(),
    }))
}

fn out_dir(common: &CommonArgs) -> Result<PathBuf, CliError> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<PathBuf, CliError> {
    fs::write(path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(path.to_path_buf())
}

fn write_json(path: &Path, value: &Value) -> Result<PathBuf, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

fn document(command: &str, config: &Value, body: Value) -> Value {
    let mut doc = json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": config,
    });
    if let (Some(d), Value::Object(b)) = (doc.as_object_mut(), body) {
        d.extend(b);
    }
    doc
}

/// Writes `<csv>.manifest.json` next to a CSV output.
fn write_manifest(csv: &Path, command: &str, config: &Value) -> Result<PathBuf, CliError> {
    let mut name = csv.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    let file = csv.file_name().unwrap_or_default().to_string_lossy().to_string();
    write_json(&csv.with_file_name(name), &document(command, config, json!({ "file": file })))
}

fn save_cohort(cohort: &Cohort, path: &Path, command: &str, config: &Value) -> Result<Vec<PathBuf>, CliError> {
    cohort.save_csv(path)?;
    Ok(vec![path.to_path_buf(), write_manifest(path, command, config)?])
}

fn read_cohort_file(path: &Path) -> Result<Cohort, CliError> {
    Ok(load_cohort(path, &CsvSchema::canonical())?)
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_location_map(path: &Path) -> Result<LocationMap, CliError> {
    let doc = read_json(path)?;
    serde_json::from_value(doc.get("location_map").cloned().unwrap_or(Value::Null))
        .map_err(|e| CliError::Data(format!("{}: bad location map: {e}", path.display())))
}

fn common_settings(r: &mut Resolver, c: &CommonArgs) -> Result<(u64, f64, Vec<f64>), CliError> {
    let seed = r.get("seed", c.seed, 0u64)?;
    let horizon = r.get("horizon_days", c.horizon_days, survrisk::cohort::FIVE_YEARS_DAYS)?;
    if horizon.is_nan() || horizon <= 0.0 {
        return Err(CliError::Config("horizon_days must be positive".into()));
    }
    let thresholds = r.get("thresholds", c.thresholds.clone(), DEFAULT_THRESHOLDS.to_string())?;
    Ok((seed, horizon, parse_thresholds(&thresholds)?))
}

pub fn cmd_simulate(common: &CommonArgs, args: &SimulateArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = SimulationConfig::default();
    if let Some(p) = &common.config {
        let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
        cfg = SimulationConfig::parse(&text)?;
    }
    let mut set = |k: &str, v: Option<String>| -> Result<(), CliError> {
        match v {
            Some(v) => cfg.set(k, &v).map_err(CliError::Config),
            None => Ok(()),
        }
    };
    set("seed", common.seed.map(|v| v.to_string()))?;
    set("n_subjects", args.n_subjects.map(|v| v.to_string()))?;
    set("n_locations", args.n_locations.map(|v| v.to_string()))?;
    set("frailty_variance", args.theta.map(|v| v.to_string()))?;
    cfg.validate()?;
    let cohort = simulate_cohort(&cfg)?;
    let config = serde_json::to_value(&cfg).map_err(|e| CliError::Data(e.to_string()))?;
    save_cohort(&cohort, &out_dir(common)?.join("cohort.csv"), "simulate", &config)
}

pub fn cmd_ingest(common: &CommonArgs, args: &IngestArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut r = resolver(common)?;
    let mut schema = CsvSchema::canonical();
    for spec in &args.columns {
        let (canon, header) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--column expects canonical=header, got `{spec}`")))?;
        schema = schema.with_column(canon.trim(), header.trim());
    }
    r.record("input", json!(args.input.display().to_string()));
    r.record("columns", json!(args.columns));
    let eligibility = r.get("eligibility", args.no_eligibility.then_some(false), true)?;
    let config = r.finish()?;
    let mut cohort = load_cohort(&args.input, &schema)?;
    if eligibility {
        cohort = apply_eligibility(&cohort)?;
    }
    save_cohort(&cohort, &out_dir(common)?.join("cohort.csv"), "ingest", &config)
}

pub fn cmd_merge_locations(common: &CommonArgs, args: &MergeArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut r = resolver(common)?;
    r.record("cohort", json!(args.cohort.display().to_string()));
    let min = r.get("min_size", args.min_size, DEFAULT_MIN_GROUP_SIZE)?;
    let config = r.finish()?;
    let cohort = read_cohort_file(&args.cohort)?;
    let map = merge_locations(&cohort, min)?;
    let body = json!({ "location_map": map });
    Ok(vec![write_json(
        &out_dir(common)?.join("locations.json"),
        &document("merge-locations", &config, body),
    )?])
}

pub fn cmd_split(common: &CommonArgs, args: &SplitArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut r = resolver(common)?;
    r.record("cohort", json!(args.cohort.display().to_string()));
    let seed = r.get("seed", common.seed, 0u64)?;
    let train_frac = r.get("train_frac", args.train_frac, 0.7)?;
    let valid_frac = r.get("valid_frac", args.valid_frac, 0.0)?;
    let config = r.finish()?;
    if !(0.0..1.0).contains(&valid_frac) {
        return Err(CliError::Config(format!("valid_frac must lie in [0, 1), got {valid_frac}")));
    }
    let cohort = read_cohort_file(&args.cohort)?;
    let (train, test) = split_train_test(&cohort, train_frac, seed)?;
    let dir = out_dir(common)?;
    let mut files = Vec::new();
    if valid_frac > 0.0 {
        let (fit, valid) = split_train_test(&train, 1.0 - valid_frac, seed.wrapping_add(1))?;
        files.extend(save_cohort(&fit, &dir.join("train.csv"), "split", &config)?);
        files.extend(save_cohort(&valid, &dir.join("valid.csv"), "split", &config)?);
    } else {
        files.extend(save_cohort(&train, &dir.join("train.csv"), "split", &config)?);
    }
    files.extend(save_cohort(&test, &dir.join("test.csv"), "split", &config)?);
    Ok(files)
}

fn resolve_boost(r: &mut Resolver, a: &BoostArgs, seed: u64) -> Result<BoostConfig, CliError> {
    let d = BoostConfig::default();
    Ok(BoostConfig {
        max_trees: r.get("max_trees", a.max_trees, d.max_trees)?,
        learning_rate: r.get("learning_rate", a.learning_rate, d.learning_rate)?,
        max_depth: r.get("max_depth", a.max_depth, d.max_depth)?,
        min_node: r.get("min_node", a.min_node, d.min_node)?,
        row_subsample: r.get("row_subsample", a.row_subsample, d.row_subsample)?,
        col_subsample: r.get("col_subsample", a.col_subsample, d.col_subsample)?,
        patience: r.get("patience", a.patience, d.patience)?,
        seed,
    })
}

fn location_map_for(
    r: &mut Resolver,
    path: &Option<PathBuf>,
    min_group_size: Option<usize>,
    train: &Cohort,
) -> Result<LocationMap, CliError> {
    let locations = r.get_opt("locations", path.as_ref().map(|p| p.display().to_string()))?;
    let min = r.get("min_group_size", min_group_size, DEFAULT_MIN_GROUP_SIZE)?;
    match locations {
        Some(p) => read_location_map(Path::new(&p)),
        None => Ok(merge_locations(train, min)?),
    }
}

pub fn cmd_fit(common: &CommonArgs, args: &FitArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut r = resolver(common)?;
    let seed = r.get("seed", common.seed, 0u64)?;
    let kind: ModelKind = r.get("model", args.model.clone(), "baseline".to_string())?.parse()?;
    r.record("train", json!(args.train.display().to_string()));
    let valid_path = r.get_opt("valid", args.valid.as_ref().map(|p| p.display().to_string()))?;
    let fixed_theta = r.get_opt("frailty_theta", args.frailty_theta)?;
    let prediction = match r
        .get("frailty_prediction", args.frailty_prediction.clone(), "posterior".to_string())?
        .as_str()
    {
        "posterior" => FrailtyPrediction::Posterior,
        "marginal" => FrailtyPrediction::Marginal,
        other => return Err(CliError::Config(format!("unknown frailty_prediction `{other}`"))),
    };
    let boost = resolve_boost(&mut r, &args.boost, seed)?;
    if kind == ModelKind::Boosted && valid_path.is_none() {
        return Err(ModelError::MissingValidation.into());
    }
    let train = read_cohort_file(&args.train)?;
    let map = location_map_for(&mut r, &args.locations, args.min_group_size, &train)?;
    let config = r.finish()?;
    let valid = valid_path.map(|p| read_cohort_file(Path::new(&p))).transpose()?;
    let settings = FitSettings {
        frailty: FrailtyOptions {
            theta: fixed_theta.map_or(ThetaMode::default(), ThetaMode::Fixed),
            ..FrailtyOptions::default()
        },
        frailty_prediction: prediction,
        boost,
        ..FitSettings::default()
    };
    let model: FittedModel<f64> = fit_model(kind, &train, valid.as_ref(), &map, &settings)?;
    let mut doc = serde_json::to_value(&model).map_err(|e| CliError::Data(e.to_string()))?;
    if let Some(obj) = doc.as_object_mut() {
        obj.insert("config".into(), config);
    }
    let path = out_dir(common)?.join(format!("model_{kind}.json"));
    Ok(vec![write_json(&path, &doc)?])
}

fn load_model(path: &Path) -> Result<FittedModel<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read model {}: {e}", path.display())))?;
    Ok(FittedModel::from_json(&text)?)
}

fn parse_nb_mode(s: &str) -> Result<NetBenefitMode, CliError> {
    match s {
        "km" => Ok(NetBenefitMode::Km),
        "binary" => Ok(NetBenefitMode::Binary),
        other => Err(CliError::Config(format!("unknown nb_mode `{other}`"))),
    }
}

struct Loaded {
    model: FittedModel<f64>,
    cohort: Cohort,
    model_id: String,
    nb_mode: NetBenefitMode,
}

fn load_eval_inputs(r: &mut Resolver, a: &EvalCommon) -> Result<Loaded, CliError> {
    r.record("model", json!(a.model.display().to_string()));
    r.record("cohort", json!(a.cohort.display().to_string()));
    let model = load_model(&a.model)?;
    let model_id = r.get("model_id", a.model_id.clone(), model.kind().to_string())?;
    let nb_mode = parse_nb_mode(&r.get("nb_mode", a.nb_mode.clone(), "km".to_string())?)?;
    let cohort = read_cohort_file(&a.cohort)?;
    Ok(Loaded {
        model,
        cohort,
        model_id,
        nb_mode,
    })
}

fn parse_subgroup(spec: &str, model: &FittedModel<f64>, cohort: &Cohort) -> Result<SubgroupSpec, CliError> {
    Ok(match spec {
        "ckd" => SubgroupSpec::Ckd,
        "ra" => SubgroupSpec::Ra,
        "location" => {
            let map = match &model.model {
                survrisk::model::ModelBody::FixedEffects { encoding, .. } => {
                    encoding.location.as_ref().map(|l| l.map.clone())
                }
                survrisk::model::ModelBody::Frailty { location_map, .. }
                | survrisk::model::ModelBody::Boosted { location_map, .. } => Some(location_map.clone()),
                survrisk::model::ModelBody::Baseline { .. } => None,
            };
            SubgroupSpec::Location(map.unwrap_or_else(|| LocationMap::identity(cohort)))
        }
        other => match other.strip_prefix("flag:") {
            Some(name) => SubgroupSpec::Flag(name.to_string()),
            None => return Err(CliError::Config(format!("unknown subgroup `{other}`"))),
        },
    })
}

pub fn cmd_evaluate(common: &CommonArgs, args: &EvaluateArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut r = resolver(common)?;
    let (seed, horizon, thresholds) = common_settings(&mut r, common)?;
    let loaded = load_eval_inputs(&mut r, &args.common)?;
    let subgroup = r.get_opt("subgroup", args.subgroup.clone())?;
    let settings = EvaluationSettings {
        horizon,
        thresholds,
        concordance: ConcordanceOptionsConfig {
            bootstrap: r.get("bootstrap", args.bootstrap, 200usize)?,
            seed,
            ties_half: false,
        },
        net_benefit_mode: loaded.nb_mode,
        min_subgroup: r.get("min_subgroup", args.min_subgroup, survrisk::harness::DEFAULT_MIN_SUBGROUP)?,
        gnd_bins: r.get_opt("gnd_bins", args.gnd_bins)?,
    };
    let config = r.finish()?;
    let (model, cohort, id) = (&loaded.model, &loaded.cohort, &loaded.model_id);

    let mut reports = vec![evaluate_model(id, model, cohort, &settings)?];
    if let Some(spec) = &subgroup {
        let spec = parse_subgroup(spec, model, cohort)?;
        reports.extend(evaluate_subgroups(id, model, cohort, &spec, &settings)?);
    }
    let records: Vec<_> = reports.iter().map(EvaluationReport::record).collect();
    let dir = out_dir(common)?;
    let mut files = vec![write_json(
        &dir.join(format!("report_{id}.json")),
        &document("evaluate", &config, json!({ "reports": reports, "records": records })),
    )?];

    if let Some(dc) = &reports[0].decision_curve {
        let path = dir.join(format!("decision_curve_{id}.csv"));
        let mut buf = Vec::new();
        write_decision_curve_csv(dc, &mut buf)?;
        files.push(write_text(&path, &String::from_utf8_lossy(&buf))?);
        files.push(write_manifest(&path, "evaluate", &config)?);
    }
    if let Ok(bins) = calibration_bins_for(model, cohort, &settings) {
        let path = dir.join(format!("calibration_{id}.csv"));
        let mut buf = Vec::new();
        write_calibration_csv(&bins, &mut buf)?;
        files.push(write_text(&path, &String::from_utf8_lossy(&buf))?);
        files.push(write_manifest(&path, "evaluate", &config)?);
    }
    Ok(files)
}

pub fn cmd_dca(common: &CommonArgs, args: &DcaArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut r = resolver(common)?;
    let horizon = r.get("horizon_days", common.horizon_days, survrisk::cohort::FIVE_YEARS_DAYS)?;
    let loaded = load_eval_inputs(&mut r, &args.common)?;
    let start = r.get("grid_start", args.grid_start, 0.005)?;
    let stop = r.get("grid_stop", args.grid_stop, 0.3)?;
    let step = r.get("grid_step", args.grid_step, 0.005)?;
    let config = r.finish()?;
    if !(start > 0.0 && stop < 1.0 && start <= stop && step > 0.0) {
        return Err(CliError::Config("threshold grid must satisfy 0 < start <= stop < 1, step > 0".into()));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    let grid: Vec<f64> = (0..n).map(|i| start + step * i as f64).collect();
    let risks = loaded.model.predict_risks(&loaded.cohort, horizon)?;
    let curve = decision_curve(
        &risks,
        &loaded.cohort.times(),
        &loaded.cohort.events(),
        horizon,
        &grid,
        loaded.nb_mode,
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    let id = &loaded.model_id;
    let dir = out_dir(common)?;
    let path = dir.join(format!("dca_{id}.csv"));
    let mut buf = Vec::new();
    write_decision_curve_csv(&curve, &mut buf)?;
    Ok(vec![
        write_text(&path, &String::from_utf8_lossy(&buf))?,
        write_manifest(&path, "dca", &config)?,
        write_json(
            &dir.join(format!("dca_{id}.json")),
            &document("dca", &config, json!({ "model_id": id, "decision_curve": curve })),
        )?,
    ])
}

fn read_reports(path: &Path) -> Result<Vec<EvaluationReport>, CliError> {
    let doc = read_json(path)?;
    serde_json::from_value(doc.get("reports").cloned().unwrap_or(Value::Null))
        .map_err(|e| CliError::Data(format!("{}: not an evaluation report: {e}", path.display())))
}

pub fn cmd_compare(common: &CommonArgs, args: &CompareArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut r = resolver(common)?;
    let thresholds = parse_thresholds(&r.get("thresholds", common.thresholds.clone(), DEFAULT_THRESHOLDS.to_string())?)?;
    r.record("baseline", json!(args.baseline.display().to_string()));
    r.record("revised", json!(args.revised.display().to_string()));
    let config = r.finish()?;
    let base = read_reports(&args.baseline)?;
    let rev = read_reports(&args.revised)?;
    let cmp = compare_models(&base, &rev, &thresholds)?;
    let dir = out_dir(common)?;
    let csv_path = dir.join("comparison.csv");
    let mut buf = Vec::new();
    cmp.write_csv(&mut buf)?;
    Ok(vec![
        write_json(&dir.join("comparison.json"), &document("compare", &config, json!({ "comparison": cmp })))?,
        write_text(&csv_path, &String::from_utf8_lossy(&buf))?,
        write_manifest(&csv_path, "compare", &config)?,
    ])
}

pub fn cmd_tune(common: &CommonArgs, args: &TuneArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut r = resolver(common)?;
    let seed = r.get("seed", common.seed, 0u64)?;
    r.record("train", json!(args.train.display().to_string()));
    let folds = r.get("folds", args.folds, 5usize)?;
    let patience = r.get("patience", args.patience, BoostConfig::default().patience)?;
    let depths: Vec<usize> = parse_list("grid_max_depth", &r.get("grid_max_depth", args.grid_max_depth.clone(), "2,3,4".into())?)?;
    let nodes: Vec<usize> = parse_list("grid_min_node", &r.get("grid_min_node", args.grid_min_node.clone(), "500,1000".into())?)?;
    let rows: Vec<f64> = parse_list(
        "grid_row_subsample",
        &r.get("grid_row_subsample", args.grid_row_subsample.clone(), "0.9".into())?,
    )?;
    let cols: Vec<f64> = parse_list(
        "grid_col_subsample",
        &r.get("grid_col_subsample", args.grid_col_subsample.clone(), "1.0".into())?,
    )?;
    let train = read_cohort_file(&args.train)?;
    let map = location_map_for(&mut r, &args.locations, args.min_group_size, &train)?;
    let config = r.finish()?;
    let mut grid = Vec::new();
    for &max_depth in &depths {
        for &min_node in &nodes {
            for &row_subsample in &rows {
                for &col_subsample in &cols {
                    let c = BoostConfig {
                        max_depth,
                        min_node,
                        row_subsample,
                        col_subsample,
                        patience,
                        seed,
                        ..BoostConfig::default()
                    };
                    c.validate().map_err(|e| CliError::Config(e.to_string()))?;
                    grid.push(c);
                }
            }
        }
    }
    let result = tune_boost_hyperparameters(&train, &map, &grid, folds, seed)?;
    Ok(vec![write_json(
        &out_dir(common)?.join("tuning.json"),
        &document("tune", &config, json!({ "tuning": result })),
    )?])
}
