use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use clstx_core::evaluation::{AsoMatrix, EvalReport};
use serde_json::Value;

fn clstx(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clstx"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// The last stderr line must be the single machine-readable error line.
fn error_line(o: &Output) -> String {
    let err = stderr(o);
    let last = err.lines().last().unwrap_or_default().to_string();
    assert!(last.starts_with("error kind="), "stderr: {err}");
    assert_eq!(
        err.lines().filter(|l| l.starts_with("error ")).count(),
        1,
        "stderr: {err}"
    );
    last
}

fn synth(dir: &Path, name: &str, extra: &[&str]) {
    let mut args = vec!["synth", "--out", name];
    args.extend_from_slice(extra);
    let o = clstx(&args, dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

const FAST: &str = r#"{"train": {"total_steps": 12, "warmup_steps": 3, "epochs": 1}}"#;

/// Small heads for 16-wide stacks.
const TOY: &str = r#"{
  "model": {"d_model": 6, "outdim": 4, "heads": 2, "d_k": 3, "filter_length": 3, "kim_windows": [3, 4, 5]},
  "train": {"total_steps": 12, "warmup_steps": 3, "epochs": 1}
}"#;

#[test]
fn synth_writes_valid_file_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    synth(
        dir.path(),
        "d.clsb",
        &[
            "--classes",
            "5",
            "--samples",
            "1000",
            "--separation",
            "6",
            "--seed",
            "7",
        ],
    );
    let ds = clstx::clsb::read_dataset(&dir.path().join("d.clsb")).unwrap();
    assert_eq!(ds.n_samples(), 1000);
    assert_eq!((ds.n_layers(), ds.hidden(), ds.n_classes()), (12, 768, 5));
    assert_eq!(ds.class_counts(), vec![200; 5]);
    let m = clstx::manifest::Manifest::read(&dir.path().join("d.clsb")).unwrap();
    m.verify(&dir.path().join("d.clsb")).unwrap();
}

#[test]
fn synth_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let flags = [
        "--classes",
        "3",
        "--samples",
        "40",
        "--separation",
        "2",
        "--seed",
        "5",
        "--hidden",
        "32",
    ];
    synth(dir.path(), "a.clsb", &flags);
    synth(dir.path(), "b.clsb", &flags);
    let a = fs::read(dir.path().join("a.clsb")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.clsb")).unwrap());
    synth(dir.path(), "a.clsb", &flags);
    assert_eq!(a, fs::read(dir.path().join("a.clsb")).unwrap());
}

#[test]
fn synth_single_class_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = clstx(
        &[
            "synth",
            "--classes",
            "1",
            "--samples",
            "10",
            "--separation",
            "1",
            "--out",
            "d.clsb",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
    assert!(error_line(&o).contains("kind=usage"));
    assert!(!dir.path().join("d.clsb").exists());
}

#[test]
fn synth_unwritable_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = clstx(
        &[
            "synth",
            "--classes",
            "2",
            "--samples",
            "4",
            "--separation",
            "1",
            "--out",
            "missing/d.clsb",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    assert!(error_line(&o).contains("kind=data"));
}

#[test]
fn missing_flag_and_unknown_subcommand_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["synth", "--classes", "2"][..], &["frobnicate"][..], &[][..]] {
        let o = clstx(args, dir.path());
        assert_eq!(code(&o), 1, "{args:?}");
        error_line(&o);
    }
}

#[test]
fn help_and_version_succeed() {
    let dir = tempfile::tempdir().unwrap();
    for flag in ["--help", "--version"] {
        let o = clstx(&[flag], dir.path());
        assert_eq!(code(&o), 0);
        assert!(!o.stdout.is_empty());
    }
}

#[test]
fn inspect_reports_header_counts_and_checksum() {
    let dir = tempfile::tempdir().unwrap();
    synth(
        dir.path(),
        "d.clsb",
        &[
            "--classes",
            "3",
            "--samples",
            "31",
            "--separation",
            "1",
            "--hidden",
            "8",
            "--layers",
            "4",
        ],
    );
    let o = clstx(&["inspect", "--data", "d.clsb"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let sha = clstx::clsb::file_sha256(&dir.path().join("d.clsb")).unwrap();
    for line in [
        "n_layers 4",
        "hidden 8",
        "n_classes 3",
        "n_samples 31",
        "class_counts 11 10 10",
        &format!("sha256 {sha}"),
        "manifest ok",
    ] {
        assert!(text.lines().any(|l| l == line), "missing {line:?} in\n{text}");
    }
}

#[test]
fn inspect_corrupt_missing_and_empty_paths() {
    let dir = tempfile::tempdir().unwrap();
    synth(
        dir.path(),
        "d.clsb",
        &["--classes", "2", "--samples", "8", "--separation", "1", "--hidden", "8"],
    );
    let bytes = fs::read(dir.path().join("d.clsb")).unwrap();
    fs::write(dir.path().join("cut.clsb"), &bytes[..bytes.len() / 2]).unwrap();

    let o = clstx(&["inspect", "--data", "cut.clsb"], dir.path());
    assert_eq!(code(&o), 2);
    let line = error_line(&o);
    assert!(line.contains("kind=data") && line.contains("corrupt"), "{line}");

    let o = clstx(&["inspect", "--data", "absent.clsb"], dir.path());
    assert_eq!(code(&o), 2);

    let o = clstx(&["inspect", "--data", ""], dir.path());
    assert_eq!(code(&o), 1);
    assert!(error_line(&o).contains("kind=usage"));
}

#[test]
fn train_bad_variant_lists_valid_ones() {
    let dir = tempfile::tempdir().unwrap();
    synth(
        dir.path(),
        "d.clsb",
        &[
            "--classes",
            "2",
            "--samples",
            "20",
            "--separation",
            "1",
            "--hidden",
            "8",
        ],
    );
    let o = clstx(&["train", "--data", "d.clsb", "--variant", "lstm"], dir.path());
    assert_eq!(code(&o), 1);
    let line = error_line(&o);
    for v in ["cnn-trans-enc", "trans-enc", "cnn-cls", "kim-cnn", "softmax"] {
        assert!(line.contains(v), "{line}");
    }
}

#[test]
fn train_missing_data_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = clstx(&["train", "--data", "nope.clsb", "--variant", "softmax"], dir.path());
    assert_eq!(code(&o), 2);
    error_line(&o);
}

#[test]
fn train_bad_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    synth(
        dir.path(),
        "d.clsb",
        &[
            "--classes",
            "2",
            "--samples",
            "20",
            "--separation",
            "1",
            "--hidden",
            "8",
        ],
    );
    fs::write(dir.path().join("c.json"), r#"{"train": {"learning_rate": 1}}"#).unwrap();
    let o = clstx(
        &[
            "train",
            "--data",
            "d.clsb",
            "--variant",
            "softmax",
            "--config",
            "c.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
    error_line(&o);
}

#[test]
fn train_writes_checkpoint_and_report() {
    let dir = tempfile::tempdir().unwrap();
    synth(
        dir.path(),
        "d.clsb",
        &[
            "--classes",
            "2",
            "--samples",
            "60",
            "--separation",
            "10",
            "--hidden",
            "16",
        ],
    );
    fs::write(
        dir.path().join("c.json"),
        r#"{"model": {"kim_windows": [3, 4, 5]}, "train": {"total_steps": 60, "warmup_steps": 10}}"#,
    )
    .unwrap();
    let o = clstx(
        &[
            "train",
            "--data",
            "d.clsb",
            "--variant",
            "kim-cnn",
            "--config",
            "c.json",
            "--seed",
            "4",
            "--out-params",
            "p.clsp",
            "--out-report",
            "r.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report["variant"], "kim-cnn");
    assert_eq!(report["train_samples"], 54);
    assert_eq!(report["val_samples"], 6);
    assert_eq!(report["steps"], 60);
    let (cfg, store) = clstx::checkpoint::load(&dir.path().join("p.clsp")).unwrap();
    assert_eq!((cfg.n_layers, cfg.hidden, cfg.n_classes), (12, 16, 2));
    let ds = clstx::clsb::read_dataset(&dir.path().join("d.clsb")).unwrap();
    let acc = clstx_core::training::evaluate_accuracy(&store, &cfg, &ds).unwrap();
    assert!(acc > 0.9, "checkpoint accuracy {acc}");
}

#[test]
fn train_divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    synth(
        dir.path(),
        "d.clsb",
        &[
            "--classes",
            "2",
            "--samples",
            "40",
            "--separation",
            "1",
            "--hidden",
            "8",
        ],
    );
    fs::write(
        dir.path().join("c.json"),
        r#"{"train": {"total_steps": 20, "warmup_steps": 1, "lr_max": 1e308}}"#,
    )
    .unwrap();
    let o = clstx(
        &[
            "train",
            "--data",
            "d.clsb",
            "--variant",
            "softmax",
            "--config",
            "c.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(error_line(&o).contains("kind=training"));
}

#[test]
fn train_folds_rejects_out_params() {
    let dir = tempfile::tempdir().unwrap();
    synth(
        dir.path(),
        "d.clsb",
        &[
            "--classes",
            "2",
            "--samples",
            "20",
            "--separation",
            "1",
            "--hidden",
            "8",
        ],
    );
    let o = clstx(
        &[
            "train",
            "--data",
            "d.clsb",
            "--variant",
            "softmax",
            "--folds",
            "3",
            "--out-params",
            "p.clsp",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
}

#[test]
fn train_with_folds_writes_cv_report() {
    let dir = tempfile::tempdir().unwrap();
    synth(
        dir.path(),
        "d.clsb",
        &[
            "--classes",
            "2",
            "--samples",
            "30",
            "--separation",
            "3",
            "--hidden",
            "16",
        ],
    );
    fs::write(dir.path().join("c.json"), TOY).unwrap();
    let o = clstx(
        &[
            "train",
            "--data",
            "d.clsb",
            "--variant",
            "cnn-cls",
            "--folds",
            "3",
            "--config",
            "c.json",
            "--seed",
            "9",
            "--out-report",
            "r.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: EvalReport = serde_json::from_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(r.seeds, vec![9]);
    assert_eq!(r.accuracies[0].len(), 3);
}

#[test]
fn evaluate_five_by_five_and_seed_parsing() {
    let dir = tempfile::tempdir().unwrap();
    synth(
        dir.path(),
        "d.clsb",
        &[
            "--classes",
            "2",
            "--samples",
            "25",
            "--separation",
            "3",
            "--hidden",
            "8",
        ],
    );
    fs::write(dir.path().join("c.json"), FAST).unwrap();
    let o = clstx(
        &[
            "evaluate",
            "--data",
            "d.clsb",
            "--variant",
            "softmax",
            "--config",
            "c.json",
            "--out",
            "all.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("all.json")).unwrap()).unwrap();
    assert_eq!(v["seeds"], serde_json::json!([1, 2, 3, 4, 5]));
    let n: usize = v["accuracies"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r.as_array().unwrap().len())
        .sum();
    assert_eq!(n, 25);

    let o = clstx(
        &[
            "evaluate",
            "--data",
            "d.clsb",
            "--variant",
            "softmax",
            "--config",
            "c.json",
            "--seeds",
            "1,2",
            "--out",
            "two.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let r: EvalReport = serde_json::from_str(&fs::read_to_string(dir.path().join("two.json")).unwrap()).unwrap();
    assert_eq!(r.seeds, vec![1, 2]);
}

#[test]
fn evaluate_is_reproducible_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    synth(
        dir.path(),
        "d.clsb",
        &[
            "--classes",
            "3",
            "--samples",
            "30",
            "--separation",
            "2",
            "--hidden",
            "16",
        ],
    );
    fs::write(dir.path().join("c.json"), TOY).unwrap();
    let mut outputs = Vec::new();
    for (out, workers) in [("a.json", "1"), ("b.json", "1"), ("c4.json", "4")] {
        let o = clstx(
            &[
                "evaluate",
                "--data",
                "d.clsb",
                "--variant",
                "cnn-trans-enc",
                "--config",
                "c.json",
                "--folds",
                "3",
                "--seeds",
                "1,2",
                "--parallel-folds",
                workers,
                "--out",
                out,
            ],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        outputs.push(fs::read(dir.path().join(out)).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn evaluate_all_folds_diverging_exits_3_after_writing_report() {
    let dir = tempfile::tempdir().unwrap();
    synth(
        dir.path(),
        "d.clsb",
        &[
            "--classes",
            "2",
            "--samples",
            "20",
            "--separation",
            "1",
            "--hidden",
            "8",
        ],
    );
    fs::write(
        dir.path().join("c.json"),
        r#"{"train": {"total_steps": 10, "warmup_steps": 1, "lr_max": 1e308}}"#,
    )
    .unwrap();
    let o = clstx(
        &[
            "evaluate",
            "--data",
            "d.clsb",
            "--variant",
            "softmax",
            "--config",
            "c.json",
            "--folds",
            "2",
            "--seeds",
            "1",
            "--out",
            "r.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 3);
    let r: EvalReport = serde_json::from_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(r.failures.len(), 2);
    assert_eq!(r.grand_mean, None);
}

fn report_json(model: &str, means: &[f64]) -> String {
    let seeds: Vec<u64> = (1..=means.len() as u64).collect();
    serde_json::json!({
        "model": model,
        "variant": "softmax",
        "dataset": "toy",
        "seeds": seeds,
        "folds": 1,
        "accuracies": means.iter().map(|m| vec![Some(*m)]).collect::<Vec<_>>(),
        "seed_means": means,
        "grand_mean": means.iter().sum::<f64>() / means.len() as f64,
        "failures": [],
    })
    .to_string()
}

#[test]
fn compare_ordered_reports() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("hi.json"),
        report_json("hi", &[0.91, 0.92, 0.93, 0.94, 0.95]),
    )
    .unwrap();
    fs::write(
        dir.path().join("lo.json"),
        report_json("lo", &[0.81, 0.82, 0.83, 0.84, 0.85]),
    )
    .unwrap();
    let o = clstx(
        &[
            "compare",
            "--results",
            "hi.json",
            "lo.json",
            "--bootstrap",
            "200",
            "--out",
            "m.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: AsoMatrix = serde_json::from_str(&fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(m.epsilon_min, vec![vec![None, Some(0.0)], vec![Some(1.0), None]]);
    assert_eq!(m.adjusted_alpha, 0.05 / 2.0);
    assert!(String::from_utf8(o.stdout).unwrap().contains("hi"));
}

#[test]
fn compare_five_reports_records_adjusted_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "compare".to_string(),
        "--bootstrap".into(),
        "100".into(),
        "--out".into(),
        "m.json".into(),
    ];
    args.push("--results".into());
    for i in 0..5 {
        let base = 0.5 + 0.1 * i as f64;
        let means: Vec<f64> = (0..5).map(|s| base + 0.01 * s as f64).collect();
        let name = format!("m{i}.json");
        fs::write(dir.path().join(&name), report_json(&format!("model{i}"), &means)).unwrap();
        args.push(name);
    }
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = clstx(&refs, dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(v["adjusted_alpha"].as_f64().unwrap(), 0.05 / 20.0);
    assert_eq!(v["comparisons"], 20);
}

#[test]
fn compare_refuses_one_report_and_bad_json() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.json"), report_json("a", &[0.5, 0.6])).unwrap();
    let o = clstx(&["compare", "--results", "a.json"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(error_line(&o).contains("kind=usage"));

    fs::write(dir.path().join("b.json"), "{").unwrap();
    let o = clstx(&["compare", "--results", "a.json", "b.json"], dir.path());
    assert_eq!(code(&o), 2);
    error_line(&o);
}
