//! End-to-end checks of the command-line surface: exit codes, usage output,
//! and a miniature staged run driven entirely through the binary.

use std::path::Path;
use std::process::{Command, Output};

fn eegtrack(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eegtrack"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn mini_config_json() -> &'static str {
    r#"{
        "seed": 11,
        "synth": { "n_subjects": 1, "duration_s": 130.0, "fs": 64.0, "scheme": "vc",
                    "n_channels": 4, "snr_db": 10.0, "noise_model": "white",
                    "subject_mixing_jitter": 0.1 },
        "schemes": ["vc"],
        "mm": {
            "segmentation": { "window_s": 2.0, "overlap_fraction": 0.8, "mismatch_gap_s": 1.0 },
            "net": { "time_kernel": 9, "time_stride": 3, "eeg_filters": 4, "lstm_units": 4, "head_hidden": 4 },
            "train": { "max_epochs": 1, "patience": 0, "learning_rate": 0.001, "batch_size": 16,
                        "seed": 0, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8 },
            "finetune_learning_rate": 0.0002
        },
        "stats_pairs": []
    }"#
}

#[test]
fn shipped_demo_config_matches_library_demo() {
    // configs/demo.json must stay in sync with the library's demo defaults
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.json");
    let cfg = eegtrack_core::config::validate_config(&path).expect("demo config valid");
    assert_eq!(cfg.config_hash(), eegtrack_core::config::demo_config(42).config_hash());
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = eegtrack(&["--help"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["synth", "preprocess", "encode", "trf", "mm", "stats", "pipeline"] {
        assert!(text.contains(sub), "usage lacks {sub}");
    }
}

#[test]
fn unknown_subcommand_exits_one_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = eegtrack(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.to_lowercase().contains("usage"), "no usage text: {err}");
}

#[test]
fn unknown_flag_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = eegtrack(&["synth", "--no-such-flag"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = eegtrack(&["preprocess"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
}

#[test]
fn invalid_config_reports_all_errors_and_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{}").unwrap();
    let out = eegtrack(&["--config", "bad.json", "preprocess"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("seed"), "{err}");
    assert!(err.contains("dataset"), "{err}");
}

#[test]
fn staged_run_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.json"), mini_config_json()).unwrap();
    let base = ["--config", "run.json", "--out", "out"];

    for stage in [
        vec!["synth"],
        vec!["preprocess"],
        vec!["encode"],
        vec!["trf", "fit"],
        vec!["trf", "eval"],
        vec!["trf", "export"],
        vec!["mm", "build"],
        vec!["mm", "train"],
        vec!["mm", "eval"],
    ] {
        let mut args: Vec<&str> = base.to_vec();
        args.extend(stage.iter());
        let out = eegtrack(&args, dir.path());
        assert!(
            out.status.success(),
            "stage {stage:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for f in [
        "out/corpus/manifest.json",
        "out/preprocessed/sub00/split.json",
        "out/features/sub00/vc.bin",
        "out/trf/vc/report.csv",
        "out/trf/vc/weights_mean.csv",
        "out/mm/vc/examples.jsonl",
        "out/mm/accuracy.csv",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }

    // stages out of order fail with a runtime hint, not a panic
    let fresh = tempfile::tempdir().unwrap();
    std::fs::write(fresh.path().join("run.json"), mini_config_json()).unwrap();
    let out = eegtrack(&["--config", "run.json", "trf", "eval"], fresh.path());
    assert!(!out.status.success());
}
