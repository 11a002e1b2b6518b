//! End-to-end binary tests: exit codes, the hand-built golden report
//! fixture, and run-to-run determinism of training.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inpcc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

#[test]
fn unknown_flag_exits_one() {
    let out = run(&["train", "--config", "x.toml", "--bogus"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr_of(&out));
}

#[test]
fn missing_subcommand_exits_one() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn eval_without_checkpoint_or_predictions_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "eval",
        "--config",
        "tests/fixtures/eval/config.toml",
        "--set",
        &format!("paths.out_dir={}", out_dir.display()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr_of(&out).contains("--checkpoint or --predictions"),
        "{}",
        stderr_of(&out)
    );
}

/// The hand-walked PR-envelope fixture: category 1 ranks TP, FP, TP over
/// two ground truths (AP 5/6), category 2 is a single exact hit (AP 1).
#[test]
fn eval_fixture_reproduces_golden_report_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "eval",
        "--config",
        "tests/fixtures/eval/config.toml",
        "--predictions",
        "tests/fixtures/eval/predictions.tsv",
        "--set",
        &format!("paths.out_dir={}", out_dir.display()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    let got = std::fs::read(out_dir.join("report.txt")).unwrap();
    let want = std::fs::read("tests/fixtures/eval/golden_report.txt").unwrap();
    assert_eq!(got, want, "report diverges from the golden fixture");
}

fn write_pipeline_fixture(dir: &Path) -> (String, String) {
    let spec_path = dir.join("spec.toml");
    std::fs::write(
        &spec_path,
        "images_per_category = 6\ntest_images_per_category = 3\nseed = 7\n",
    )
    .unwrap();
    let fix = dir.join("fix");
    let out = run(&[
        "synth",
        "--spec",
        spec_path.to_str().unwrap(),
        "--out",
        fix.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));

    let config_path = dir.join("config.toml");
    std::fs::write(
        &config_path,
        format!(
            "[prompt]\nl = 2\nd = 16\nm = 4\nk = 2\n\n\
             [net]\nc = 16\nblocks = 1\nheads = 2\nn_queries = 4\n\n\
             [concepts]\nj = 2\nnegatives_per_step = 4\n\n\
             [train]\nepochs = 2\nbatch_size = 8\nseed = 7\n\n\
             [paths]\nvocab = \"{}\"\ndataset = \"{}\"\nout_dir = \"{}\"\n",
            fix.join("vocab.jsonl").display(),
            fix.join("dataset.jsonl").display(),
            dir.join("run_a").display()
        ),
    )
    .unwrap();
    (
        config_path.to_str().unwrap().to_string(),
        dir.to_str().unwrap().to_string(),
    )
}

#[test]
fn train_twice_is_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (config, root) = write_pipeline_fixture(dir.path());

    let out = run(&["train", "--config", &config]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    let out = run(&[
        "train",
        "--config",
        &config,
        "--set",
        &format!("paths.out_dir={root}/run_b"),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));

    for name in ["metrics.tsv", "checkpoint.bin"] {
        let a = std::fs::read(format!("{root}/run_a/{name}")).unwrap();
        let b = std::fs::read(format!("{root}/run_b/{name}")).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn checkpoint_with_wrong_bank_size_names_prompt_u() {
    let dir = tempfile::tempdir().unwrap();
    let (config, root) = write_pipeline_fixture(dir.path());
    let out = run(&["train", "--config", &config]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));

    // Same checkpoint, but the config now asks for a larger prompt bank.
    let out = run(&[
        "eval",
        "--config",
        &config,
        "--checkpoint",
        &format!("{root}/run_a/checkpoint.bin"),
        "--set",
        "prompt.m=8",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr_of(&out).contains("prompt.u"),
        "{}",
        stderr_of(&out)
    );
}

#[test]
fn truncated_checkpoint_exits_one_with_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let (config, root) = write_pipeline_fixture(dir.path());
    let out = run(&["train", "--config", &config]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));

    let ckpt = format!("{root}/run_a/checkpoint.bin");
    let bytes = std::fs::read(&ckpt).unwrap();
    let cut = dir.path().join("truncated.bin");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();

    let out = run(&[
        "eval",
        "--config",
        &config,
        "--checkpoint",
        cut.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr_of(&out).contains("truncated"),
        "{}",
        stderr_of(&out)
    );
}
