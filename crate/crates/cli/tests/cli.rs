use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;
use survrisk_cli::{run_from_args, CliError};

fn exe() -> Command {
    Command::new(env!("CARGO_BIN_EXE_survrisk"))
}

fn run(dir: &Path, args: &[&str]) -> Result<Vec<std::path::PathBuf>, CliError> {
    let out = dir.display().to_string();
    let mut full = vec!["survrisk", "--out", out.as_str()];
    full.extend_from_slice(args);
    run_from_args(full)
}

fn simulated(dir: &Path) -> String {
    let conf = dir.join("sim.conf");
    fs::write(&conf, "n_subjects = 1500\nn_locations = 4\nbeta.age = 0.05\nbeta.diabetes = 0.5\nweibull_scale = 9000\n").unwrap();
    run(dir, &["--config", &conf.display().to_string(), "--seed", "3", "simulate"]).unwrap();
    dir.join("cohort.csv").display().to_string()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn csv_outputs_get_manifests_with_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = simulated(tmp.path());
    let files = run(tmp.path(), &["split", "--cohort", &cohort, "--train-frac", "0.6", "--seed", "9"]).unwrap();
    assert_eq!(files.len(), 4);
    let manifest = read_json(&tmp.path().join("train.csv.manifest.json"));
    assert_eq!(manifest["schema_version"], 1);
    assert_eq!(manifest["command"], "split");
    assert_eq!(manifest["config"]["train_frac"], 0.6);
    assert_eq!(manifest["config"]["seed"], 9);
    let sim = read_json(&tmp.path().join("cohort.csv.manifest.json"));
    assert_eq!(sim["config"]["n_subjects"], 1500);
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = simulated(tmp.path());
    let conf = tmp.path().join("split.conf");
    fs::write(&conf, "train-frac = 0.5\nseed = 4\n").unwrap();
    let c = conf.display().to_string();
    run(tmp.path(), &["--config", &c, "split", "--cohort", &cohort, "--train-frac", "0.8"]).unwrap();
    let manifest = read_json(&tmp.path().join("test.csv.manifest.json"));
    assert_eq!(manifest["config"]["train_frac"], 0.8);
    assert_eq!(manifest["config"]["seed"], 4);
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = simulated(tmp.path());
    let conf = tmp.path().join("bad.conf");
    fs::write(&conf, "bogus_key = 1\n").unwrap();
    let err = run(
        tmp.path(),
        &["--config", &conf.display().to_string(), "split", "--cohort", &cohort],
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");

    // settings are validated before any input is read
    let err = run(
        tmp.path(),
        &["--thresholds", "0.1,0.05", "evaluate", "--model", "absent.json", "--cohort", &cohort],
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
    let out = exe()
        .args(["fit", "--model", "boosted", "--train", &cohort, "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = exe().args(["fit", "--model", "nonsense", "--train", &cohort]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = exe().arg("no-such-command").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("absent.csv").display().to_string();
    let err = run(tmp.path(), &["split", "--cohort", &missing]).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let out = exe()
        .args(["merge-locations", "--cohort", &missing, "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn fit_evaluate_compare_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cohort = simulated(dir);
    let d = |f: &str| dir.join(f).display().to_string();
    run(dir, &["split", "--cohort", &cohort, "--valid-frac", "0.2"]).unwrap();
    run(dir, &["merge-locations", "--cohort", &d("train.csv"), "--min-size", "200"]).unwrap();
    for model in ["baseline", "frailty"] {
        run(dir, &["fit", "--model", model, "--train", &d("train.csv"), "--locations", &d("locations.json")]).unwrap();
    }
    let model = read_json(&dir.join("model_frailty.json"));
    assert_eq!(model["schema_version"], 1);
    assert!(model["model"]["frailty"]["fit"]["theta"].is_number());
    assert_eq!(model["config"]["model"], "frailty");

    for model in ["baseline", "frailty"] {
        run(
            dir,
            &[
                "evaluate",
                "--model",
                &d(&format!("model_{model}.json")),
                "--cohort",
                &d("test.csv"),
                "--subgroup",
                "ckd",
                "--bootstrap",
                "10",
                "--min-subgroup",
                "10",
            ],
        )
        .unwrap();
    }
    let report = read_json(&dir.join("report_frailty.json"));
    let records = report["records"].as_array().unwrap();
    assert_eq!(records[0]["group_id"], "overall");
    assert!(records.iter().any(|r| r["group_id"] == "ckd=1"));
    for key in ["c_index", "oe", "gnd_p", "cal_slope", "nb_0025", "nb_00375", "nb_01"] {
        assert!(records[0].get(key).is_some(), "missing {key}");
    }
    assert!(dir.join("decision_curve_frailty.csv.manifest.json").exists());

    run(dir, &["compare", "--baseline", &d("report_baseline.json"), "--revised", &d("report_frailty.json")]).unwrap();
    let csv = fs::read_to_string(dir.join("comparison.csv")).unwrap();
    assert!(csv.starts_with("group_id,delta_c,"));
    assert_eq!(csv.lines().count(), 1 + records.len());

    run(dir, &["dca", "--model", &d("model_baseline.json"), "--cohort", &d("test.csv"), "--grid-step", "0.05"]).unwrap();
    let dca = read_json(&dir.join("dca_baseline.json"));
    assert_eq!(dca["decision_curve"]["thresholds"].as_array().unwrap().len(), 6);
}

#[test]
fn boosted_fit_and_tune() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cohort = simulated(dir);
    let d = |f: &str| dir.join(f).display().to_string();
    run(dir, &["split", "--cohort", &cohort, "--valid-frac", "0.25"]).unwrap();
    run(
        dir,
        &[
            "fit",
            "--model",
            "boosted",
            "--train",
            &d("train.csv"),
            "--valid",
            &d("valid.csv"),
            "--min-group-size",
            "100",
            "--max-trees",
            "20",
            "--min-node",
            "50",
        ],
    )
    .unwrap();
    let model = read_json(&dir.join("model_boosted.json"));
    assert!(model["model"]["boosted"]["model"]["n_stages_used"].as_u64().unwrap() <= 20);

    run(
        dir,
        &[
            "tune",
            "--train",
            &d("train.csv"),
            "--folds",
            "2",
            "--grid-max-depth",
            "1,2",
            "--grid-min-node",
            "50",
            "--min-group-size",
            "100",
        ],
    )
    .unwrap();
    let tuning = read_json(&dir.join("tuning.json"));
    assert_eq!(tuning["tuning"]["scores"].as_array().unwrap().len(), 2);
}
