use std::fs;
use std::path::{Path, PathBuf};

use assert_cmd::Command;
use prd_core::dataset::{load_portable, save_portable};
use prd_core::problem::RpmProblem;
use serde_json::Value;

fn prd() -> Command {
    let mut cmd = Command::cargo_bin("prd").unwrap();
    cmd.env("RUST_LOG", "warn");
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("PRD_")) {
        cmd.env_remove(k);
    }
    cmd
}

fn gen(out: &Path, count: usize, seed: u64) -> String {
    let output = prd()
        .args(["gen", "--config", "center", "--resolution", "32", "--count"])
        .arg(count.to_string())
        .args(["--seed", &seed.to_string(), "--out"])
        .arg(out)
        .assert()
        .success()
        .get_output()
        .stdout
        .clone();
    String::from_utf8(output).unwrap()
}

const TINY: [&str; 12] = [
    "--steps",
    "6",
    "--batch-size",
    "4",
    "--checkpoint-every",
    "3",
    "--relation-dim",
    "8",
    "--input-resolution",
    "32",
    "--plateau-window",
    "2",
];

fn train(data: &Path, out: &Path, seed: u64) {
    prd()
        .arg("train")
        .arg("--data")
        .arg(data)
        .arg("--out")
        .arg(out)
        .args(["--seed", &seed.to_string()])
        .args(TINY)
        .assert()
        .success();
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<_> = walkdir::WalkDir::new(dir)
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file() && e.file_name() != "run_manifest.json")
        .map(|e| {
            (
                e.path().strip_prefix(dir).unwrap().to_path_buf(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_is_deterministic_and_reports_uniqueness() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let out = gen(&a, 12, 7);
    gen(&b, 12, 7);
    assert!(out.contains("oracle-verified unique answers: 12/12"), "{out}");
    assert_eq!(files(&a), files(&b));
    assert_eq!(load_portable(&a).unwrap().len(), 12);
    let manifest = json(&a.join("run_manifest.json"));
    assert_eq!(manifest["subcommand"], "gen");
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["config"]["generator"]["seed"], 7);
}

#[test]
fn gen_with_zero_count_is_an_empty_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gen(tmp.path(), 0, 1);
    assert!(out.contains("0/0"));
    assert!(load_portable(tmp.path()).unwrap().is_empty());
}

#[test]
fn training_twice_gives_identical_loss_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, 10, 2);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    train(&data, &a, 7);
    train(&data, &b, 7);
    let log = fs::read(a.join("loss.csv")).unwrap();
    assert_eq!(log, fs::read(b.join("loss.csv")).unwrap());
    assert_eq!(String::from_utf8(log).unwrap().lines().count(), 7);
    assert!(a.join("checkpoints/step-000006.safetensors").exists());
}

#[test]
fn resume_continues_the_same_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, 10, 2);
    let full = tmp.path().join("full");
    train(&data, &full, 3);
    let part = tmp.path().join("part");
    train(&data, &part, 3);
    prd()
        .arg("train")
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&part)
        .arg("--resume")
        .arg(part.join("checkpoints/step-000003.safetensors"))
        .args(["--steps", "6"])
        .assert()
        .success();
    assert_eq!(
        fs::read(full.join("loss.csv")).unwrap(),
        fs::read(part.join("loss.csv")).unwrap()
    );
}

#[test]
fn solve_stdout_matches_its_json() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, 8, 4);
    let run = tmp.path().join("run");
    train(&data, &run, 1);
    let out = tmp.path().join("solve");
    let stdout = prd()
        .arg("solve")
        .arg("--model")
        .arg(&run)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .assert()
        .success()
        .get_output()
        .stdout
        .clone();
    let stdout = String::from_utf8(stdout).unwrap();
    let doc = json(&out.join("predictions.json"));
    let predictions = doc["predictions"].as_array().unwrap();
    assert_eq!(predictions.len(), 8);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 8);
    for (line, p) in lines.iter().zip(predictions) {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields[0], p["id"].as_str().unwrap());
        assert_eq!(fields[1].parse::<u64>().unwrap(), p["predicted"].as_u64().unwrap());
        assert_eq!(fields[2], format!("(answer {})", p["answer"].as_u64().unwrap()));
        let scores = p["scores"].as_array().unwrap();
        let best = scores
            .iter()
            .map(|s| s["mean"].as_f64().unwrap())
            .fold(f64::MIN, f64::max);
        let first_best = scores.iter().position(|s| s["mean"].as_f64().unwrap() == best).unwrap();
        assert_eq!(first_best as u64, p["predicted"].as_u64().unwrap());
    }
    assert_eq!(json(&out.join("run_manifest.json"))["subcommand"], "solve");
}

#[test]
fn eval_table_and_json_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, 8, 5);
    let run = tmp.path().join("run");
    train(&data, &run, 1);
    let out = tmp.path().join("eval");
    let stdout = prd()
        .arg("eval")
        .arg("--model")
        .arg(&run)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .args(["--selection", "label-free", "--seed", "3", "--plots"])
        .assert()
        .success()
        .get_output()
        .stdout
        .clone();
    let stdout = String::from_utf8(stdout).unwrap();
    let doc = json(&out.join("eval.json"));
    let mean = doc["report"]["mean_accuracy"].as_f64().unwrap();
    assert!(stdout.contains(&format!("{mean:.2}")), "{stdout}");
    assert_eq!(doc["selection"], "label_free");
    assert!(fs::read_to_string(out.join("accuracy.svg")).unwrap().contains("<svg"));
    assert_eq!(
        fs::read_to_string(out.join("eval.txt")).unwrap(),
        stdout.split("checkpoint ").next().unwrap()
    );
}

#[test]
fn eval_on_unlabelled_data_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, 4, 6);
    let stripped = tmp.path().join("stripped");
    let problems: Vec<RpmProblem> = load_portable(&data)
        .unwrap()
        .iter()
        .map(RpmProblem::unlabeled)
        .collect();
    save_portable(&problems, &stripped).unwrap();
    let run = tmp.path().join("run");
    train(&data, &run, 1);
    prd()
        .arg("eval")
        .arg("--model")
        .arg(&run)
        .arg("--data")
        .arg(&stripped)
        .arg("--out")
        .arg(tmp.path().join("eval"))
        .assert()
        .code(2);
}

#[test]
fn usage_errors_exit_2() {
    prd().args(["gen", "--bogus"]).assert().code(2);
    prd()
        .args(["train", "--data", "/nonexistent/prd-data", "--out"])
        .arg(tempfile::tempdir().unwrap().path())
        .assert()
        .code(2);
    let tmp = tempfile::tempdir().unwrap();
    prd()
        .args(["gen", "--config", "hexagon", "--count", "1", "--out"])
        .arg(tmp.path())
        .assert()
        .code(2);
    prd()
        .args([
            "gen",
            "--config",
            "center",
            "--count",
            "1",
            "--resolution",
            "8",
            "--out",
        ])
        .arg(tmp.path())
        .assert()
        .code(2);
}

#[test]
fn config_file_and_environment_layer_under_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, 6, 9);
    let file = tmp.path().join("config.json");
    fs::write(
        &file,
        r#"{"train": {"batch_size": 3, "max_steps": 50, "checkpoint_every": 2, "plateau_window": 2,
            "model": {"backbone": {"relation_dim": 8}}}}"#,
    )
    .unwrap();
    let out = tmp.path().join("run");
    prd()
        .env("PRD_STEPS", "4")
        .arg("--config-file")
        .arg(&file)
        .arg("train")
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .args(["--checkpoint-every", "4"])
        .assert()
        .success();
    let train = &json(&out.join("run_manifest.json"))["config"]["train"];
    assert_eq!(train["batch_size"], 3);
    assert_eq!(train["max_steps"], 4);
    assert_eq!(train["checkpoint_every"], 4);
    assert_eq!(train["model"]["backbone"]["relation_dim"], 8);

    fs::write(&file, r#"{"train": {"batch": 3}}"#).unwrap();
    prd()
        .arg("--config-file")
        .arg(&file)
        .arg("train")
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(tmp.path().join("bad"))
        .assert()
        .code(2);
}

#[test]
fn distance_study_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let (train_data, test_data) = (tmp.path().join("train"), tmp.path().join("test"));
    gen(&train_data, 6, 1);
    gen(&test_data, 4, 2);
    let out = tmp.path().join("study");
    let stdout = prd()
        .arg("study-distance")
        .arg("--train")
        .arg(&train_data)
        .arg("--test")
        .arg(&test_data)
        .arg("--out")
        .arg(&out)
        .args(["--measures", "l1,concat", "--seeds", "1"])
        .args(TINY)
        .assert()
        .success()
        .get_output()
        .stdout
        .clone();
    let stdout = String::from_utf8(stdout).unwrap();
    let report = json(&out.join("study.json"));
    assert_eq!(report["kind"], "distance");
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
    assert!(stdout.contains("concat") && stdout.contains("l1"));
    assert_eq!(fs::read_to_string(out.join("study.txt")).unwrap(), stdout);
}

#[test]
fn subset_study_runs_on_folds() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, 10, 3);
    let out = tmp.path().join("study");
    prd()
        .arg("study-subsets")
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .args(["--subsets", "train-20,full", "--seeds", "1"])
        .args(TINY)
        .assert()
        .success();
    let report = json(&out.join("study.json"));
    let labels: Vec<&str> = report["summary"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["label"].as_str().unwrap())
        .collect();
    assert_eq!(labels, ["train-20%", "full"]);
}

#[test]
fn train_plots_the_loss_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, 6, 8);
    let out = tmp.path().join("run");
    prd()
        .arg("train")
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .arg("--plots")
        .args(TINY)
        .assert()
        .success();
    assert!(fs::read_to_string(out.join("loss.svg")).unwrap().contains("<svg"));
    assert!(json(&out.join("train_outcome.json"))["final_step"] == 6);
}
