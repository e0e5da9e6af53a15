//! End-to-end tests of the `curio` binary: exit codes, artifact layout, and
//! byte-level determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn curio(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curio"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "expected exit {code}\nstdout:\n{}\nstderr:\n{}",
        stdout(out),
        stderr(out)
    );
}

fn write_toy_spec(dir: &Path) -> PathBuf {
    let path = dir.join("spec.toml");
    std::fs::write(
        &path,
        "n_stories = 5\ndimensions = [\"OriginalityInThought\", \"OriginalityInForm\"]\nseed = 7\n",
    )
    .unwrap();
    path
}

fn write_toy_config(dir: &Path, corpus: &Path, out_dir: &Path) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(
        &path,
        format!(
            r#"corpus = [{corpus:?}]
output_dir = {out:?}
seeds = [11]

[split]
kind = "kfold"
k = 5
seed = 3

[encoder]
feature_dim = 128
hidden_width = 8
repr_dim = 4
hidden_layers = 1
max_chars = 2048
expert_ids = [1, 2, 3]

[optimizer]
base_lr = 5e-3
batch_size = 8
grad_accum_steps = 1
epochs = 2
"#,
            corpus = corpus.display().to_string(),
            out = out_dir.display().to_string(),
        ),
    )
    .unwrap();
    path
}

/// Generate the toy corpus and return (config path, run output dir).
fn toy_setup(dir: &Path) -> (PathBuf, PathBuf) {
    let spec = write_toy_spec(dir);
    let data = dir.join("data");
    let out = curio(&["synth", "--spec", spec.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    assert_exit(&out, 0);
    let run_dir = dir.join("run");
    let config = write_toy_config(dir, &data.join("corpus.jsonl"), &run_dir);
    (config, run_dir)
}

#[test]
fn help_documents_every_subcommand_and_flag() {
    let top = curio(&["--help"]);
    assert_exit(&top, 0);
    let text = stdout(&top);
    for cmd in ["synth", "validate", "crossval", "ood", "ablate", "report", "infer"] {
        assert!(text.contains(cmd), "top-level help missing {cmd}");
    }
    let sub_flags: &[(&str, &[&str])] = &[
        ("synth", &["--spec", "--out", "--inline-stories"]),
        ("crossval", &["--config", "--set", "--output-dir"]),
        ("ablate", &["--no-inverse", "--with-noise-annotator"]),
        ("infer", &["--checkpoints", "--corpus", "--out", "--scores-out", "--force"]),
        ("report", &["<RUN_DIR>"]),
    ];
    for (cmd, flags) in sub_flags {
        let out = curio(&[cmd, "--help"]);
        assert_exit(&out, 0);
        let text = stdout(&out);
        for flag in *flags {
            assert!(text.contains(flag), "{cmd} --help missing {flag}");
        }
    }
}

#[test]
fn synth_default_emits_720_examples_with_identical_rerun_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let out = curio(&["synth", "--out", dir.to_str().unwrap()]);
        assert_exit(&out, 0);
        assert!(stdout(&out).contains("wrote 720 examples"));
    }
    for name in ["corpus.jsonl", "stories.jsonl", "ground_truth.jsonl", "spec.toml"] {
        let bytes_a = std::fs::read(a.join(name)).unwrap();
        let bytes_b = std::fs::read(b.join(name)).unwrap();
        assert!(!bytes_a.is_empty(), "{name} is empty");
        assert_eq!(bytes_a, bytes_b, "{name} differs between identical synth runs");
    }
    let corpus = std::fs::read_to_string(a.join("corpus.jsonl")).unwrap();
    assert_eq!(corpus.lines().count(), 720);
}

#[test]
fn bad_synth_spec_exits_2_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.toml");
    std::fs::write(&spec, "n_stories = 0\n").unwrap();
    let out = curio(&[
        "synth",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("n_stories"), "stderr: {}", stderr(&out));
}

#[test]
fn bad_run_config_exits_2_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let (config, _) = toy_setup(tmp.path());
    let out = curio(&["crossval", "--config", config.to_str().unwrap(), "--set", "split.k=1"]);
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("split.k"), "stderr: {}", stderr(&out));

    let out = curio(&["validate", "--config", config.to_str().unwrap(), "--set", "typo=1"]);
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("typo"), "stderr: {}", stderr(&out));
}

#[test]
fn toy_crossval_is_deterministic_across_output_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    let (config, run_dir) = toy_setup(tmp.path());
    let out = curio(&["crossval", "--config", config.to_str().unwrap()]);
    assert_exit(&out, 0);

    let rerun_dir = tmp.path().join("rerun");
    let out = curio(&[
        "crossval",
        "--config",
        config.to_str().unwrap(),
        "--output-dir",
        rerun_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);

    for name in ["metrics.csv", "significance.csv", "curiosity_hist.csv", "run_manifest.json"] {
        let bytes_a = std::fs::read(run_dir.join(name)).unwrap();
        let bytes_b = std::fs::read(rerun_dir.join(name)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{name} differs between reruns");
    }
    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    let fold_rows = metrics.lines().filter(|l| l.starts_with("11,")).count();
    assert_eq!(fold_rows, 10, "5 folds x 2 methods");
}

#[test]
fn report_renders_markdown_and_figures_from_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (config, run_dir) = toy_setup(tmp.path());
    assert_exit(&curio(&["crossval", "--config", config.to_str().unwrap()]), 0);

    let out = curio(&["report", run_dir.to_str().unwrap()]);
    assert_exit(&out, 0);
    for name in ["report.md", "curiosity_hist.svg", "comparison_bars.svg"] {
        assert!(run_dir.join(name).is_file(), "missing {name}");
    }

    let empty = tmp.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let out = curio(&["report", empty.to_str().unwrap()]);
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("missing artifacts"), "stderr: {}", stderr(&out));
}

#[test]
fn infer_loads_fold_checkpoints_and_guards_the_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let (config, run_dir) = toy_setup(tmp.path());
    assert_exit(&curio(&["crossval", "--config", config.to_str().unwrap()]), 0);

    let ckpt_dir = run_dir.join("seed-11").join("fold-0");
    let preds = tmp.path().join("preds.jsonl");
    let scores = tmp.path().join("scores.jsonl");
    let out = curio(&[
        "infer",
        "--config",
        config.to_str().unwrap(),
        "--checkpoints",
        ckpt_dir.to_str().unwrap(),
        "--out",
        preds.to_str().unwrap(),
        "--scores-out",
        scores.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    assert_eq!(std::fs::read_to_string(&preds).unwrap().lines().count(), 30);
    assert_eq!(std::fs::read_to_string(&scores).unwrap().lines().count(), 30);

    let mismatched = &[
        "infer",
        "--config",
        config.to_str().unwrap(),
        "--set",
        "icm.lambda=0.5",
        "--checkpoints",
        ckpt_dir.to_str().unwrap(),
        "--out",
        preds.to_str().unwrap(),
    ];
    let out = curio(mismatched);
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("config hash"), "stderr: {}", stderr(&out));

    let mut forced = mismatched.to_vec();
    forced.push("--force");
    assert_exit(&curio(&forced), 0);
}

#[test]
fn ood_without_the_heldout_dimension_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.toml");
    std::fs::write(
        &spec,
        "n_stories = 5\ndimensions = [\"OriginalityInForm\", \"StructuralFlexibility\"]\nseed = 7\n",
    )
    .unwrap();
    let data = tmp.path().join("data");
    assert_exit(
        &curio(&["synth", "--spec", spec.to_str().unwrap(), "--out", data.to_str().unwrap()]),
        0,
    );
    let config =
        write_toy_config(tmp.path(), &data.join("corpus.jsonl"), &tmp.path().join("run"));
    let out = curio(&["ood", "--config", config.to_str().unwrap()]);
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("OriginalityInThought"), "stderr: {}", stderr(&out));
}

#[test]
fn ablate_filters_restrict_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let (config, run_dir) = toy_setup(tmp.path());
    let out = curio(&[
        "ablate",
        "--config",
        config.to_str().unwrap(),
        "--no-inverse",
        "--with-noise-annotator",
    ]);
    assert_exit(&out, 0);
    assert!(stdout(&out).contains("1 ablation arms"), "stdout: {}", stdout(&out));
    let csv = std::fs::read_to_string(run_dir.join("ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| l.contains("-inverse,")).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("without-inverse,with-noise,"));
}
