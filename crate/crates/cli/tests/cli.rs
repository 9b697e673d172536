use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use candle_core::DType;
use formula_distill_model::{checkpoint, ModelConfig, SeqModel};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_formula-distill"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn tiny_checkpoint(dir: &Path) -> PathBuf {
    let model = SeqModel::new(ModelConfig { max_seq_len: 96, ..ModelConfig::tiny() }, 5, DType::F32).unwrap();
    let path = dir.join("tiny.ckpt");
    checkpoint::save(&model, &path).unwrap();
    path
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr has a line");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

/// Compare against `tests/golden/<name>`; `UPDATE_GOLDEN=1` rewrites the file.
fn golden(name: &str, got: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, got).unwrap();
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden file {}", path.display()));
    assert_eq!(got, want, "{name} differs from its golden file");
}

fn report(args: &[&str]) -> String {
    report_in(Path::new("."), args)
}

fn report_in(dir: &Path, args: &[&str]) -> String {
    let out = bin().current_dir(dir).args(args).output().expect("binary runs");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn exit_codes_and_json_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["bench-r2", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["code"], 2);

    let out = run(&["vocab", "--set", "no_such_key=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["message"].as_str().unwrap().contains("no_such_key"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(run(&["vocab", "--config", bad.to_str().unwrap()]).status.code(), Some(2));

    let out = run(&["bench-r2", "--checkpoint", "/nonexistent/model.ckpt"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"], "io");

    assert_eq!(run(&["train", "--corpus", "/nonexistent.jsonl", "--out", "x"]).status.code(), Some(3));
    assert_eq!(run(&["bench-r2"]).status.code(), Some(2), "missing checkpoint is a config error");
    assert_eq!(run(&["gen-data", "--benchmark", "Nope-1"]).status.code(), Some(2));
    assert_eq!(run(&["vocab"]).status.code(), Some(0));
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"seed": 3, "benchmark": "Nguyen-8"}"#).unwrap();
    let a = report(&["gen-data", "--config", cfg.to_str().unwrap()]);
    let b = report(&["gen-data", "--benchmark", "Nguyen-8", "--seed", "3"]);
    let c = report(&["gen-data", "--config", cfg.to_str().unwrap(), "--seed", "4"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.lines().count(), 21);
}

#[test]
fn report_headers_carry_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let ck = tiny_checkpoint(dir.path());
    let text = report(&["bench-r2", "--checkpoint", ck.to_str().unwrap(), "--group", "Nguyen-1", "--repeats", "2", "--seed", "8"]);
    let header = text.lines().next().unwrap();
    let json: Value = serde_json::from_str(header.strip_prefix("# config: ").unwrap()).unwrap();
    assert_eq!(json["seed"], 8);
    assert_eq!(json["repeats"], 2);
    assert!(json.get("workers").is_none());
    assert_eq!(text.lines().nth(1), Some("name,mean_r2,ci95,repeats"));
}

#[test]
fn golden_reports() {
    // A relative checkpoint path keeps the config header free of temp names;
    // near-uniform sampling makes the untrained model finish expressions.
    let dir = tempfile::tempdir().unwrap();
    tiny_checkpoint(dir.path());
    let base = [
        "--checkpoint", "tiny.ckpt", "--seed", "21", "--set", "fit_restarts=1", "--set", "fit_max_iters=20",
        "--set", "sampling=top_k", "--set", "top_k=200", "--set", "max_expr_len=12",
    ];
    let with = |cmd: &str, extra: &[&str]| {
        let mut args = vec![cmd];
        args.extend_from_slice(&base);
        args.extend_from_slice(extra);
        report_in(dir.path(), &args)
    };
    golden("bench_r2.csv", &with("bench-r2", &["--group", "Nguyen-1,Nguyen-8", "--repeats", "3"]));
    golden("bench_noise.csv", &with("bench-noise", &["--group", "Nguyen-1", "--repeats", "1", "--levels", "0:0.10:0.01"]));
    golden("bench_versatility.csv", &with("bench-versatility", &["--group", "Nguyen-1", "--repeats", "1"]));
    golden("bench_timing.csv", &with("bench-timing", &["--group", "Nguyen-1", "--repeats", "2", "--no-wallclock"]));
}

#[test]
fn pipeline_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    let small = ["--set", "search_epochs=20", "--set", "search_batch=16", "--n-targets", "4", "--seed", "2"];
    let mut args = vec!["collect", "--out"];
    let corpus = p("c.jsonl");
    args.push(&corpus);
    args.extend_from_slice(&small);
    let stats: Value = serde_json::from_str(&report(&args)).unwrap();
    assert_eq!(stats["result"]["targets"], 4);

    let mixed = p("m.jsonl");
    report(&["shortcut", "--corpus", &corpus, "--out", &mixed]);
    let split = p("split");
    report(&["split", "--corpus", &mixed, "--out", &split, "--set", "val_fraction=0.5"]);
    assert!(Path::new(&split).join("train.jsonl").exists());

    let ck = p("m.ckpt");
    let tiny = [
        "--set", "d_model=8", "--set", "n_heads=1", "--set", "n_enc_blocks=1", "--set", "n_dec_layers=1",
        "--set", "n_inducing=2", "--set", "n_seed_vectors=2", "--set", "d_ff=16", "--set", "train_steps=3",
    ];
    let mut args = vec!["train", "--corpus", &mixed, "--out", &ck];
    args.extend_from_slice(&tiny);
    let rep: Value = serde_json::from_str(&report(&args)).unwrap();
    assert_eq!(rep["result"]["steps"], 3);

    let pts = p("pts.csv");
    report(&["gen-data", "--benchmark", "Nguyen-2", "--out", &pts, "--set", "noise_level=0.05"]);
    let res: Value = serde_json::from_str(&report(&["infer", "--checkpoint", &ck, "--points", &pts, "--set", "max_seq_len=40"])).unwrap();
    assert!(res["sequence"].as_array().unwrap().len() <= 40);
}
