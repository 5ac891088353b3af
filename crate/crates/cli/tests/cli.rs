use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn whiten(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_whiten"))
        .args(args)
        .env_remove("WHITEN_OUT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = whiten(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small, fast training flags.
const QUICK: [&str; 8] = ["--scale", "0.02", "--max-epochs", "3", "--batch", "16", "--width", "4"];

fn train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--system", "backlash-motor", "--out", s(out)];
    args.extend_from_slice(&QUICK);
    args.extend_from_slice(extra);
    whiten(&args)
}

fn run_dirs(out: &Path) -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(out.join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    dirs.sort();
    dirs
}

#[test]
fn simulate_writes_one_csv_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let flags = |out: &Path| {
        ok(&[
            "simulate", "--system", "pendulum", "--amplitude", "0.5", "--steps", "2000", "--seed", "1", "--out", s(out),
        ])
    };
    flags(&dir.path().join("a"));
    flags(&dir.path().join("b"));
    let csvs: Vec<_> = std::fs::read_dir(dir.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    assert_eq!(csvs, ["pendulum-s1.csv"]);
    let a = std::fs::read(dir.path().join("a/pendulum-s1.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/pendulum-s1.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 2001);
    assert!(dir.path().join("a/simulate.json").exists());
}

#[test]
fn unknown_system_is_a_usage_error() {
    let out = whiten(&["simulate", "--system", "cartpole"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cartpole"));
    let out = whiten(&["simulate", "--system", "pendulum", "--steps", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_whiten"))
        .args(["simulate", "--system", "double-pendulum", "--steps", "50"])
        .env("WHITEN_OUT", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("simulate/double-pendulum-s0.csv").exists());
}

#[test]
fn train_lstm_with_whitening_loss() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(dir.path(), &["--model", "lstm", "--loss", "mse+ljb", "--lambda", "1.0", "--lags", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let runs = run_dirs(dir.path());
    assert_eq!(runs.len(), 1);
    for f in ["checkpoint.json", "run.json", "eval-interpolation.json", "eval-extrapolation.md"] {
        assert!(runs[0].join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(runs[0].join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["loss"], "mse+ljb");
    assert_eq!(manifest["record"]["train_loss"].as_array().unwrap().len(), 3);
    assert!(dir.path().join("command.json").exists());
    assert!(dir.path().join("experiment.json").exists());
}

#[test]
fn zero_lambda_reproduces_mse() {
    let dir = tempfile::tempdir().unwrap();
    ok_train(&dir.path().join("mse"), &["--loss", "mse", "--seed", "4"]);
    ok_train(&dir.path().join("ljb"), &["--loss", "mse+ljb", "--lambda", "0", "--seed", "4"]);
    let a = std::fs::read(run_dirs(&dir.path().join("mse"))[0].join("checkpoint.json")).unwrap();
    let b = std::fs::read(run_dirs(&dir.path().join("ljb"))[0].join("checkpoint.json")).unwrap();
    assert_eq!(a, b);
}

fn ok_train(out: &Path, extra: &[&str]) {
    let o = train(out, extra);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn seeds_make_one_directory_each_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    ok_train(&out, &["--seeds", "1,2,3", "--jobs", "2"]);
    let runs = run_dirs(&out);
    assert_eq!(runs.len(), 3);

    let agg = dir.path().join("agg");
    let mut args = vec!["eval", "--aggregate", "--acf-csv", "--out", s(&agg)];
    for r in &runs {
        args.push("--run-dir");
        args.push(s(r));
    }
    ok(&args);
    let table = std::fs::read_to_string(agg.join("table-extrapolation.md")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.contains(" ± "));
    let acf = std::fs::read_to_string(agg.join("acf-interpolation.csv")).unwrap();
    assert!(acf.starts_with("channel,lag,value,band"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(agg.join("aggregate-interpolation.json")).unwrap()).unwrap();
    assert_eq!(report["run_ids"].as_array().unwrap().len(), 3);
}

#[test]
fn eval_recreates_both_test_sets() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    ok_train(&out, &["--model", "dense"]);
    let run = &run_dirs(&out)[0];
    let before = std::fs::read(run.join("eval-extrapolation.json")).unwrap();
    let evals = dir.path().join("e");
    ok(&["eval", "--run-dir", s(run), "--out", s(&evals)]);
    for set in ["interpolation", "extrapolation"] {
        for ext in ["json", "csv", "md"] {
            assert!(evals.join(format!("eval-{set}.{ext}")).exists());
        }
    }
    assert_eq!(std::fs::read(evals.join("eval-extrapolation.json")).unwrap(), before);
}

#[test]
fn eval_on_ingested_csv() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--system", "backlash-motor", "--steps", "300", "--seed", "9", "--out", s(&sim)]);
    let out = dir.path().join("t");
    ok_train(&out, &[]);
    let run = &run_dirs(&out)[0];
    let csv = sim.join("backlash-motor-s9.csv");
    let evals = dir.path().join("e");
    ok(&["eval", "--run-dir", s(run), "--data", s(&csv), "--name", "bench", "--acf-csv", "--out", s(&evals)]);
    assert!(evals.join("eval-bench.json").exists());
    assert!(evals.join("acf-bench.csv").exists());
}

#[test]
fn train_on_ingested_csv() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--system", "pendulum", "--steps", "400", "--seed", "2", "--out", s(&sim)]);
    let csv = sim.join("pendulum-s2.csv");
    let out = dir.path().join("t");
    let o = whiten(&[
        "train", "--system", "pendulum", "--train-data", s(&csv), "--max-epochs", "2", "--scale", "0.02", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("datasets/train.json")).unwrap()).unwrap();
    assert_eq!(m["sources"][0], s(&csv));
}

#[test]
fn missing_checkpoint_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    ok_train(&out, &[]);
    let run = &run_dirs(&out)[0];
    std::fs::remove_file(run.join("checkpoint.json")).unwrap();
    let o = whiten(&["eval", "--run-dir", s(run)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));
}

#[test]
fn divergence_exits_one_with_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let o = train(&out, &["--lr", "1e200", "--grad-clip", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dirs(&out)[0].join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["record"]["status"]["status"], "diverged");
}

#[test]
fn gradcheck_selects_and_detects_faults() {
    let o = ok(&["gradcheck", "--component", "ljb", "--instances", "10"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    let rows: Vec<&str> = stdout.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("ljb ") && rows[0].ends_with("pass"));

    let o = whiten(&["gradcheck", "--component", "dense", "--instances", "5", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));

    let o = whiten(&["gradcheck", "--component", "conv"]);
    assert_eq!(o.status.code(), Some(2));
}
