//! End-to-end tests of the `fast-stg` binary: exit codes, file outputs,
//! and cross-checks between the predict and eval paths.

use fast_stg::data::{chronological_split, load_series, NormMode, Normalizer, TimeAnchor};
use fast_stg::train::{evaluate_model, Checkpoint};
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fast-stg"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Settings that keep binary-level training runs fast.
const TINY: &[&str] = &[
    "--set",
    "model.input_steps=8",
    "--set",
    "model.horizon=4",
    "--set",
    "model.dim=8",
    "--set",
    "model.experts=2",
    "--set",
    "model.agents=3",
    "--set",
    "model.layers=1",
    "--set",
    "train.max_epochs=2",
    "--set",
    "train.batch=16",
];

fn synth(dir: &Path) -> String {
    let data = dir.join("synth.fstg");
    let out = run(&[
        "synth",
        "--nodes",
        "6",
        "--days",
        "6",
        "--granularity",
        "60",
        "--output",
        data.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    data.display().to_string()
}

#[test]
fn missing_dataset_exits_2_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--out", dir.path().to_str().unwrap(), "train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("data.path"), "{}", stderr_of(&out));
}

#[test]
fn unknown_config_key_exits_2() {
    let out = run(&["--set", "model.depth=4", "train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("model.depth"));
}

#[test]
fn full_pipeline_train_eval_predict_fidelity() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let outdir = dir.path().join("run");
    let outdir_s = outdir.display().to_string();

    let mut args = vec!["--data", &data, "--out", &outdir_s];
    args.extend_from_slice(TINY);
    args.push("train");
    let out = run(&args);
    assert!(out.status.success(), "{}", stderr_of(&out));
    for file in ["checkpoint.fstc", "history.csv", "config.effective"] {
        assert!(outdir.join(file).exists(), "missing {file}");
    }
    let history = std::fs::read_to_string(outdir.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_mae,lr,seconds"));
    assert_eq!(history.lines().count(), 3); // header + 2 epochs
    // no stray temp files from the atomic writes
    let stray: Vec<_> = std::fs::read_dir(&outdir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().contains(".tmp-"))
        .collect();
    assert!(stray.is_empty(), "{stray:?}");

    let ckpt = outdir.join("checkpoint.fstc");
    let ckpt_s = ckpt.display().to_string();

    let mut args = vec!["--data", &data, "--out", &outdir_s];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["eval", "--checkpoint", &ckpt_s, "--split", "test"]);
    let out = run(&args);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let metrics = std::fs::read_to_string(outdir.join("metrics_test.csv")).unwrap();
    assert!(metrics.starts_with("scope,mae,rmse,mape,r2"));
    assert!(metrics.lines().any(|l| l.starts_with("overall,")));
    assert!(metrics.lines().any(|l| l.starts_with("step_4,")));

    let ds = load_series(Path::new(&data)).unwrap();
    let anchor = (ds.len() - 5).to_string();
    let mut args = vec!["--data", &data, "--out", &outdir_s];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["predict", "--checkpoint", &ckpt_s, "--anchor", &anchor]);
    let out = run(&args);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let forecast = std::fs::read_to_string(outdir.join("forecast.csv")).unwrap();
    assert_eq!(forecast.lines().count(), 1 + 6); // header + one row per node
    assert!(forecast.lines().next().unwrap().starts_with("node,h1,h2,h3,h4"));

    // an anchor that cannot hold a full input window
    let mut args = vec!["--data", &data, "--out", &outdir_s];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["predict", "--checkpoint", &ckpt_s, "--anchor", "2"]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));

    let mut args = vec!["--data", &data, "--out", &outdir_s];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["fidelity", "--checkpoints", &ckpt_s]);
    let out = run(&args);
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(outdir.join("fidelity.csv").exists());
    assert!(outdir.join("fidelity_bounds.csv").exists());
}

#[test]
fn predictions_agree_with_single_window_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let outdir = dir.path().join("run");
    let outdir_s = outdir.display().to_string();

    let mut args = vec!["--data", &data, "--out", &outdir_s];
    args.extend_from_slice(TINY);
    args.push("train");
    assert!(run(&args).status.success());

    let ds = load_series(Path::new(&data)).unwrap();
    let (t, p) = (8usize, 4usize);
    let anchor = ds.len() - p - 1;
    let anchor_s = anchor.to_string();
    let ckpt = outdir.join("checkpoint.fstc");
    let ckpt_s = ckpt.display().to_string();
    let mut args = vec!["--data", &data, "--out", &outdir_s];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["predict", "--checkpoint", &ckpt_s, "--anchor", &anchor_s]);
    assert!(run(&args).status.success());

    // window-level MAE from the forecast file
    let forecast = std::fs::read_to_string(outdir.join("forecast.csv")).unwrap();
    let mut abs_sum = 0.0;
    let mut count = 0.0;
    for (node, line) in forecast.lines().skip(1).enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        for (step, cell) in cells[1..].iter().enumerate() {
            let yhat: f64 = cell.parse().unwrap();
            let y = ds.value(node, anchor + 1 + step);
            abs_sum += (y - yhat).abs();
            count += 1.0;
        }
    }
    let csv_mae = abs_sum / count;

    // the evaluation path over a range holding exactly this window
    let model = Checkpoint::load(&ckpt).unwrap().into_model().unwrap();
    let splits = chronological_split(ds.len(), (0.6, 0.2, 0.2)).unwrap();
    let norm = Normalizer::fit(&ds, splits.train, NormMode::PerNode).unwrap();
    let ds_norm = norm.apply_dataset(&ds);
    let report = evaluate_model(
        &model,
        &ds,
        &ds_norm,
        &norm,
        anchor + 1 - t..anchor + 1 + p,
        TimeAnchor::LastInput,
        8,
    )
    .unwrap();
    assert!(
        (report.overall.mae - csv_mae).abs() < 1e-9,
        "evaluate {} vs forecast-file {}",
        report.overall.mae,
        csv_mae
    );
}

#[test]
fn seed_flag_changes_training_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let run_with = |out: &str, seed: &str| {
        let outdir = dir.path().join(out);
        let outdir_s = outdir.display().to_string();
        let mut args = vec!["--data", &data, "--out", &outdir_s, "--seed", seed];
        args.extend_from_slice(TINY);
        args.push("train");
        assert!(run(&args).status.success());
        let text = std::fs::read_to_string(outdir.join("history.csv")).unwrap();
        // drop the wall-time column
        text.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect::<Vec<_>>()
    };
    let a = run_with("a", "1");
    let b = run_with("b", "1");
    let c = run_with("c", "2");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn bench_writes_table_with_counters() {
    let dir = tempfile::tempdir().unwrap();
    let outdir_s = dir.path().display().to_string();
    let out = run(&[
        "--out",
        &outdir_s,
        "bench",
        "--nodes",
        "16,32",
        "--horizons",
        "4",
        "--agents",
        "2",
        "--reps",
        "1",
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let table = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "nodes,input_steps,horizon,agents,forward_ms,train_step_ms,attn_mix_ms,peak_intermediate_elements"
    );
    assert_eq!(lines.count(), 2);
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(stdout.contains("exponent"), "{stdout}");
}

#[test]
fn log_env_var_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = bin()
        .env("FAST_STG_LOG", "debug")
        .args(["--data", &data, "--out", dir.path().join("x").to_str().unwrap()])
        .args(TINY)
        .args(["--set", "train.max_epochs=1", "train"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));
}
