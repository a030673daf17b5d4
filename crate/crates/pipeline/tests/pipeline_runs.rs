//! End-to-end pipeline runs on synthetic data: artifacts, determinism,
//! config precedence, MAT ingestion, evaluation and the CLI binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::tempdir;

use ssrepl_core::models::NoClock;
use ssrepl_pipeline::cli::{self, TrainArgs};
use ssrepl_pipeline::formats;
use ssrepl_pipeline::pipeline::{
    evaluate_run, run_pipeline, ModelKind, PipelineConfig, PretrainMode,
};

fn synth_cfg(model: ModelKind, out: PathBuf) -> PipelineConfig {
    PipelineConfig {
        model,
        synth: true,
        synth_per_class: 60,
        synth_features: 6,
        out: Some(out),
        epochs: Some(2),
        batch_size: Some(16),
        pretrain_epochs: 2,
        n_estimators: 20,
        ..PipelineConfig::default()
    }
}

#[test]
fn rf_run_writes_artifacts_and_separates_classes() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("run");
    let mut cfg = synth_cfg(ModelKind::Rf, out.clone());
    cfg.synth_per_class = 500;
    cfg.synth_features = 19;
    cfg.n_estimators = 100;
    let outcome = run_pipeline(&cfg, &NoClock).unwrap();
    assert!(outcome.metrics.accuracy >= 95.0, "{}", outcome.metrics.accuracy);
    for artifact in [
        "run_manifest.json",
        "scaler.json",
        "metrics.json",
        "confusion.csv",
        "forest.json",
    ] {
        assert!(out.join(artifact).exists(), "missing {artifact}");
    }
    assert!(!out.join("history.csv").exists());
}

#[test]
fn neural_run_writes_history_and_checkpoint() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = synth_cfg(ModelKind::LssreplDnn, out.clone());
    let outcome = run_pipeline(&cfg, &NoClock).unwrap();
    assert_eq!(outcome.history.unwrap().epochs.len(), 2);
    for artifact in [
        "run_manifest.json",
        "scaler.json",
        "metrics.json",
        "confusion.csv",
        "history.csv",
        "pretrain_history.csv",
        "checkpoint.json",
        "checkpoint.params",
    ] {
        assert!(out.join(artifact).exists(), "missing {artifact}");
    }
    // the pretrained trunk must be stored frozen
    let (model, meta) = formats::load_checkpoint(&out).unwrap();
    assert_eq!(meta.model, "lssrepl_dnn");
    let trunk = model.spec.node_by_name("repr_lstm").unwrap();
    assert!(!model.spec.nodes[trunk].trainable);
}

#[test]
fn identical_manifests_give_byte_identical_artifacts() {
    let dir = tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let mut cfg = synth_cfg(ModelKind::SsreplAdhd, out_a.clone());
    cfg.synth_per_class = 30;
    cfg.synth_features = 5;
    run_pipeline(&cfg, &NoClock).unwrap();

    // second run reproduced from the first run's manifest
    let manifest = cli::load_config_file(&out_a.join("run_manifest.json")).unwrap();
    let mut cfg_b = manifest;
    cfg_b.out = Some(out_b.clone());
    run_pipeline(&cfg_b, &NoClock).unwrap();

    let bytes = |p: &Path| fs::read(p).unwrap();
    assert_eq!(
        bytes(&out_a.join("metrics.json")),
        bytes(&out_b.join("metrics.json"))
    );
    assert_eq!(
        bytes(&out_a.join("checkpoint.params")),
        bytes(&out_b.join("checkpoint.params"))
    );
    assert_eq!(
        bytes(&out_a.join("checkpoint.json")),
        bytes(&out_b.join("checkpoint.json"))
    );
    assert_eq!(
        bytes(&out_a.join("scaler.json")),
        bytes(&out_b.join("scaler.json"))
    );
}

#[test]
fn evaluate_run_reproduces_the_stored_metrics() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = synth_cfg(ModelKind::Rf, out.clone());
    let outcome = run_pipeline(&cfg, &NoClock).unwrap();
    let again = evaluate_run(&out, None).unwrap();
    assert_eq!(again, outcome.metrics);
}

#[test]
fn mat_ingestion_end_to_end() {
    let dir = tempdir().unwrap();
    // write synthetic recordings as four .mat files through the CLI helper
    let mat_dir = dir.path().join("mats");
    let synth_args = cli::SynthArgs {
        out: dir.path().join("table.csv"),
        n_per_class: 80,
        n_features: 7,
        separation: 3.0,
        noise: 1.0,
        seed: 11,
        cache: false,
        mat_dir: Some(mat_dir.clone()),
        compress: true,
    };
    cli::cmd_synth(&synth_args).unwrap();
    for f in ["f1.mat", "f2.mat", "f3.mat", "f4.mat"] {
        assert!(mat_dir.join(f).exists());
    }
    let out = dir.path().join("run");
    let cfg = PipelineConfig {
        model: ModelKind::Rf,
        data_dir: Some(mat_dir),
        mat_labels: Some("f1=ADHD,f2=ADHD,f3=Control,f4=Control".into()),
        out: Some(out),
        n_estimators: 30,
        ..PipelineConfig::default()
    };
    let outcome = run_pipeline(&cfg, &NoClock).unwrap();
    // 160 rows, 0.7 split: 112 train / 48 test before balancing
    let total: u64 = outcome.metrics.confusion.counts.iter().flatten().sum();
    assert_eq!(total, 48);
    assert!(outcome.metrics.accuracy >= 80.0, "{}", outcome.metrics.accuracy);
}

#[test]
fn csv_source_and_filterless_table() {
    let dir = tempdir().unwrap();
    let table_path = dir.path().join("table.csv");
    let synth_args = cli::SynthArgs {
        out: table_path.clone(),
        n_per_class: 50,
        n_features: 4,
        separation: 3.0,
        noise: 1.0,
        seed: 3,
        cache: true,
        mat_dir: None,
        compress: false,
    };
    cli::cmd_synth(&synth_args).unwrap();
    // csv and cache hold the same table
    let from_csv = formats::read_table_csv(&table_path).unwrap();
    let from_cache = formats::read_table_cache(&table_path.with_extension("bin")).unwrap();
    assert_eq!(from_csv, from_cache);

    let cfg = PipelineConfig {
        model: ModelKind::Rf,
        csv: Some(table_path),
        out: Some(dir.path().join("run")),
        n_estimators: 10,
        ..PipelineConfig::default()
    };
    assert!(run_pipeline(&cfg, &NoClock).is_ok());
}

#[test]
fn filtered_synth_recordings_run() {
    let dir = tempdir().unwrap();
    let mut cfg = synth_cfg(ModelKind::Rf, dir.path().join("run"));
    cfg.filter = Some("0.5:50".into());
    cfg.filter_taps = 65;
    cfg.synth_per_class = 300;
    assert!(run_pipeline(&cfg, &NoClock).is_ok());
}

#[test]
fn exit_codes_by_failure_class() {
    // config: no source
    let cfg = PipelineConfig {
        out: Some(PathBuf::from("/tmp/never")),
        ..PipelineConfig::default()
    };
    assert_eq!(run_pipeline(&cfg, &NoClock).unwrap_err().exit_code(), 2);
    // config: fraction
    let cfg2 = PipelineConfig {
        synth: true,
        train_fraction: 1.0,
        out: Some(PathBuf::from("/tmp/never")),
        ..PipelineConfig::default()
    };
    assert_eq!(run_pipeline(&cfg2, &NoClock).unwrap_err().exit_code(), 2);
    // data: missing directory
    let dir = tempdir().unwrap();
    let cfg3 = PipelineConfig {
        data_dir: Some(dir.path().join("nope")),
        mat_labels: Some("f1=ADHD".into()),
        out: Some(dir.path().join("run")),
        ..PipelineConfig::default()
    };
    assert_eq!(run_pipeline(&cfg3, &NoClock).unwrap_err().exit_code(), 3);
}

#[test]
fn cli_precedence_and_env_fallback() {
    let dir = tempdir().unwrap();
    let config_path = dir.path().join("cfg.toml");
    fs::write(
        &config_path,
        "model = \"lssrepl_dnn\"\nseed = 7\nsynth = true\nsmote_k = 3\n",
    )
    .unwrap();
    let args = TrainArgs {
        config: Some(config_path.clone()),
        seed: Some(99),
        out: Some(dir.path().join("out")),
        ..TrainArgs::default()
    };
    let cfg = cli::merge_train_args(&args).unwrap();
    assert_eq!(cfg.model, ModelKind::LssreplDnn); // from file
    assert_eq!(cfg.seed, 99); // CLI wins
    assert_eq!(cfg.smote_k, 3); // from file
    assert_eq!(cfg.synth_per_class, 200); // default

    // env fallback fills data_dir only when no source was chosen
    let data_dir = dir.path().join("envdata");
    std::env::set_var(cli::DATA_DIR_ENV, &data_dir);
    let args = TrainArgs {
        out: Some(dir.path().join("out2")),
        ..TrainArgs::default()
    };
    let cfg = cli::merge_train_args(&args).unwrap();
    assert_eq!(cfg.data_dir, Some(data_dir));
    let args_synth = TrainArgs {
        synth: true,
        out: Some(dir.path().join("out3")),
        ..TrainArgs::default()
    };
    let cfg = cli::merge_train_args(&args_synth).unwrap();
    assert_eq!(cfg.data_dir, None);
    std::env::remove_var(cli::DATA_DIR_ENV);
}

#[test]
fn diverging_training_exits_with_the_numeric_code() {
    let dir = tempdir().unwrap();
    let mut cfg = synth_cfg(ModelKind::LssreplDnn, dir.path().join("run"));
    cfg.pretrain = PretrainMode::None;
    cfg.learning_rate = 1e300;
    let err = run_pipeline(&cfg, &NoClock).unwrap_err();
    assert_eq!(err.exit_code(), 4, "{err}");
}

#[test]
fn pretrain_none_skips_the_pretext_phase() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("run");
    let mut cfg = synth_cfg(ModelKind::LssreplDnn, out.clone());
    cfg.pretrain = PretrainMode::None;
    run_pipeline(&cfg, &NoClock).unwrap();
    assert!(!out.join("pretrain_history.csv").exists());
    let (model, _) = formats::load_checkpoint(&out).unwrap();
    let trunk = model.spec.node_by_name("repr_lstm").unwrap();
    assert!(model.spec.nodes[trunk].trainable);
}

/// Smoke test of the installed binary: synth, train, report, inspect,
/// evaluate and gradcheck wired end to end.
#[test]
fn binary_end_to_end() {
    let bin = env!("CARGO_BIN_EXE_ssrepl");
    let dir = tempdir().unwrap();
    let table = dir.path().join("table.csv");
    let run = |args: &[&str]| {
        let output = Command::new(bin).args(args).output().unwrap();
        assert!(
            output.status.success(),
            "ssrepl {args:?} failed:\n{}",
            String::from_utf8_lossy(&output.stderr)
        );
        String::from_utf8_lossy(&output.stdout).into_owned()
    };

    run(&[
        "synth",
        "--out",
        table.to_str().unwrap(),
        "--n-per-class",
        "60",
        "--n-features",
        "5",
        "--seed",
        "5",
    ]);
    run(&["inspect", table.to_str().unwrap()]);

    let out = dir.path().join("rf-run");
    let stdout = run(&[
        "train",
        "--csv",
        table.to_str().unwrap(),
        "--model",
        "rf",
        "--n-estimators",
        "15",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(stdout.contains("accuracy"));

    let stdout = run(&["evaluate", "--run", out.to_str().unwrap()]);
    assert!(stdout.contains("accuracy"));

    let report = dir.path().join("report.csv");
    let stdout = run(&[
        "report",
        out.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(stdout.contains("model,accuracy,precision,recall,f1"));
    assert!(report.exists());

    let stdout = run(&[
        "gradcheck",
        "--model",
        "lssrepl_dnn",
        "--n-features",
        "4",
        "--samples",
        "8",
    ]);
    assert!(stdout.contains("pass"));

    // config error surfaces as exit code 2
    let status = Command::new(bin)
        .args(["train", "--synth", "--train-fraction", "1.0", "--out"])
        .arg(dir.path().join("bad"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}
