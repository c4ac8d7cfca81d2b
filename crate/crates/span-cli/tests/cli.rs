//! End-to-end exercises of the `span` binary: pipeline wiring, exit-code
//! contract, deterministic reruns. Kept at miniature scale so the whole
//! file runs in seconds.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn span() -> Command {
    Command::new(env!("CARGO_BIN_EXE_span"))
}

fn tmpdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("span_cli_{name}_{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn mini_args() -> Vec<String> {
    [
        "--set",
        "image_size=16",
        "--set",
        "episode_len=8",
        "--set",
        "demos_per_position=1",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn gen(dir: &Path, seed: u64) -> Output {
    span()
        .args(["gen-data", "--out"])
        .arg(dir)
        .args(["--seed", &seed.to_string()])
        .args(mini_args())
        .output()
        .unwrap()
}

#[test]
fn missing_required_arg_is_usage_error() {
    let out = span().arg("gen-data").output().unwrap();
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn untaught_position_rejected_for_training_data() {
    let dir = tmpdir("untaught");
    let out = span()
        .args(["gen-data", "--positions", "A,B", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("untaught"), "{err}");
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn unknown_situation_rejected() {
    let dir = tmpdir("badsit");
    let data = dir.join("data");
    assert_eq!(code(&gen(&data, 3)), 0);
    let train_out = dir.join("run");
    let out = span()
        .args(["train", "--model", "span", "--epochs", "1", "--seed", "1"])
        .args(["--data"])
        .arg(&data)
        .args(["--out"])
        .arg(&train_out)
        .args(mini_args())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = span()
        .args(["eval", "--situation", "v", "--checkpoint"])
        .arg(train_out.join("model.ckpt"))
        .args(["--out"])
        .arg(dir.join("eval"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn negative_alpha_is_parameter_error() {
    let dir = tmpdir("negalpha");
    let data = dir.join("data");
    assert_eq!(code(&gen(&data, 3)), 0);
    let out = span()
        .args(["train", "--alpha", "-1", "--data"])
        .arg(&data)
        .args(["--out"])
        .arg(dir.join("run"))
        .args(mini_args())
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn corrupt_dataset_is_data_error() {
    let dir = tmpdir("corrupt");
    let data = dir.join("data");
    assert_eq!(code(&gen(&data, 3)), 0);
    // corrupt the first episode's magic
    let ep = data.join("ep000.bin");
    let mut bytes = fs::read(&ep).unwrap();
    bytes[0] = b'Z';
    fs::write(&ep, bytes).unwrap();
    let out = span()
        .args(["train", "--epochs", "1", "--data"])
        .arg(&data)
        .args(["--out"])
        .arg(dir.join("run"))
        .args(mini_args())
        .output()
        .unwrap();
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn full_pipeline_runs_and_is_deterministic() {
    let dir = tmpdir("pipeline");
    let data_a = dir.join("data_a");
    let data_b = dir.join("data_b");
    assert_eq!(code(&gen(&data_a, 7)), 0);
    assert_eq!(code(&gen(&data_b, 7)), 0);
    // byte-identical datasets
    for entry in fs::read_dir(&data_a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(data_a.join(&name)).unwrap(),
            fs::read(data_b.join(&name)).unwrap(),
            "dataset file {name:?} differs"
        );
    }

    let train_dir = |tag: &str| {
        let out_dir = dir.join(format!("run_{tag}"));
        let out = span()
            .args(["train", "--model", "span", "--epochs", "2", "--seed", "5"])
            .args(["--data"])
            .arg(&data_a)
            .args(["--out"])
            .arg(&out_dir)
            .args(mini_args())
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let run_a = train_dir("a");
    let run_b = train_dir("b");
    assert_eq!(
        fs::read(run_a.join("loss_log.csv")).unwrap(),
        fs::read(run_b.join("loss_log.csv")).unwrap()
    );
    assert_eq!(
        fs::read(run_a.join("model.ckpt")).unwrap(),
        fs::read(run_b.join("model.ckpt")).unwrap()
    );

    let eval_dir = |tag: &str| {
        let out_dir = dir.join(format!("eval_{tag}"));
        let out = span()
            .args(["eval", "--trials", "2", "--seed", "9", "--workers", "2"])
            .args(["--checkpoint"])
            .arg(run_a.join("model.ckpt"))
            .args(["--out"])
            .arg(&out_dir)
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let ev_a = eval_dir("a");
    let ev_b = eval_dir("b");
    assert_eq!(
        fs::read(ev_a.join("report.csv")).unwrap(),
        fs::read(ev_b.join("report.csv")).unwrap()
    );
    assert_eq!(
        fs::read(ev_a.join("summary.json")).unwrap(),
        fs::read(ev_b.join("summary.json")).unwrap()
    );

    // report shape: 5 positions × 2 trials
    let report = fs::read_to_string(ev_a.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 10);

    // traces present for the span model
    let traces: Vec<_> = fs::read_dir(ev_a.join("traces"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().to_string())
        .collect();
    assert!(traces.iter().any(|n| n.starts_with("hidden_A")));
    assert!(traces.iter().any(|n| n.starts_with("attention_C")));

    // analyze over the traces
    let an_dir = dir.join("analysis");
    let out = span()
        .args(["analyze", "--traces"])
        .arg(ev_a.join("traces"))
        .args(["--out"])
        .arg(&an_dir)
        .args(["--report"])
        .arg(ev_a.join("summary.json"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let proj = fs::read_to_string(an_dir.join("pca_projection.csv")).unwrap();
    assert!(proj.starts_with("episode,step,pc1,pc2"));
    // 5 positions × 2 trials × 7 control steps
    assert_eq!(proj.lines().count(), 1 + 70);
    let labels: std::collections::HashSet<&str> = proj
        .lines()
        .skip(1)
        .map(|l| &l.split(',').next().unwrap()[..1])
        .collect();
    assert_eq!(labels.len(), 5);
    let table = fs::read_to_string(an_dir.join("success_table.csv")).unwrap();
    assert!(table.starts_with("model,situation,A,B,C,D,E"));

    fs::remove_dir_all(&dir).ok();
}

#[test]
fn eval_overlays_write_one_ppm_per_logged_frame() {
    let dir = tmpdir("overlays");
    let data = dir.join("data");
    assert_eq!(code(&gen(&data, 3)), 0);
    let run_dir = dir.join("run");
    let out = span()
        .args(["train", "--epochs", "1", "--seed", "2", "--data"])
        .arg(&data)
        .args(["--out"])
        .arg(&run_dir)
        .args(mini_args())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let overlays = dir.join("ppm");
    let out = span()
        .args(["eval", "--trials", "1", "--positions", "A,C", "--seed", "4"])
        .args(["--checkpoint"])
        .arg(run_dir.join("model.ckpt"))
        .args(["--out"])
        .arg(dir.join("eval"))
        .args(["--overlays"])
        .arg(&overlays)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let count = fs::read_dir(&overlays).unwrap().count();
    // 2 positions × 7 control steps of trial 0
    assert_eq!(count, 14);
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn analyze_empty_traces_is_data_error() {
    let dir = tmpdir("emptytraces");
    let traces = dir.join("traces");
    fs::create_dir_all(&traces).unwrap();
    let out = span()
        .args(["analyze", "--traces"])
        .arg(&traces)
        .args(["--out"])
        .arg(dir.join("an"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 3);
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn span_seed_env_is_fallback() {
    let dir = tmpdir("envseed");
    let a = dir.join("a");
    let b = dir.join("b");
    let run = |out_dir: &Path| {
        let out = span()
            .env("SPAN_SEED", "42")
            .args(["gen-data", "--out"])
            .arg(out_dir)
            .args(mini_args())
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    };
    run(&a);
    run(&b);
    assert_eq!(
        fs::read(a.join("manifest.json")).unwrap(),
        fs::read(b.join("manifest.json")).unwrap()
    );
    let manifest = fs::read_to_string(a.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"master_seed\": 42"));
    // explicit flag wins over the environment
    let c = dir.join("c");
    let out = span()
        .env("SPAN_SEED", "42")
        .args(["gen-data", "--seed", "7", "--out"])
        .arg(&c)
        .args(mini_args())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let manifest = fs::read_to_string(c.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"master_seed\": 7"));
    fs::remove_dir_all(&dir).ok();
}
