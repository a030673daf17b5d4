//! Command-line surface: `synth`, `inspect`, `train`, `evaluate`,
//! `gradcheck` and `report`. Option precedence is CLI flag over config
//! file over built-in default; `EEG_PIPELINE_DATA` is the data-dir
//! fallback.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ssrepl_core::dataset::{synth_recordings, Group, InstanceTable, Recording, SynthConfig};
use ssrepl_core::metrics::{pct2, MetricsReport};
use ssrepl_core::models::{build_lssrepl_dnn, build_ssrepl_adhd, TrainingHistory};
use ssrepl_core::nn::gradcheck::LossTarget;
use ssrepl_core::nn::{grad_check, GradCheckConfig, Model};
use ssrepl_core::rng::{next_normal, purpose, stream};
use ssrepl_core::Tensor;

use crate::formats;
use crate::matio::{self, MatMatrix, NumericClass};
use crate::pipeline::{
    evaluate_run, resolve, run_pipeline, InstantClock, ModelKind, PipelineConfig, PipelineError,
    PretrainMode, RunManifest,
};

pub const DATA_DIR_ENV: &str = "EEG_PIPELINE_DATA";

#[derive(Parser)]
#[command(
    name = "ssrepl",
    version,
    about = "EEG instance-table classification: ingest, preprocess, balance, train, evaluate"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic EEG-like instance table
    Synth(SynthArgs),
    /// Summarize a .mat, .csv or table-cache file
    Inspect { path: PathBuf },
    /// Run the pipeline: load, preprocess, split, balance, train, evaluate
    Train(TrainArgs),
    /// Re-evaluate a finished run directory
    Evaluate {
        /// Run directory holding run_manifest.json and the stored model
        #[arg(long)]
        run: PathBuf,
        /// Evaluate on this CSV table (scaled with the run's scaler)
        /// instead of the manifest's test split
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Finite-difference check of the model gradients
    Gradcheck(GradcheckArgs),
    /// Merge run metrics into one comparison table
    Report {
        /// Run directories to merge
        runs: Vec<PathBuf>,
        /// Where to write the comparison CSV
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output CSV path
    #[arg(long, default_value = "table.csv")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 19)]
    pub n_features: usize,
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Also write a binary table cache next to the CSV
    #[arg(long)]
    pub cache: bool,
    /// Also write the recordings as four .mat files into this directory
    #[arg(long)]
    pub mat_dir: Option<PathBuf>,
    /// Compress the .mat files
    #[arg(long)]
    pub compress: bool,
}

#[derive(Args, Default)]
pub struct TrainArgs {
    /// Config file (TOML, or a run_manifest.json to reproduce a run)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// rf, lssrepl_dnn or ssrepl_adhd
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory of .mat files (fallback: EEG_PIPELINE_DATA)
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Matrix-or-file-stem to group map, e.g. f1=ADHD,f2=Control
    #[arg(long)]
    pub mat_labels: Option<String>,
    /// Use the synthetic generator as the data source
    #[arg(long)]
    pub synth: bool,
    /// Use a CSV instance table as the data source
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Output directory for run artifacts
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Skip SMOTE balancing of the training split
    #[arg(long)]
    pub no_smote: bool,
    /// Band-pass the recordings, LOW:HIGH in Hz
    #[arg(long)]
    pub filter: Option<String>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// autoencode or none (lightweight model's representation trunk)
    #[arg(long)]
    pub pretrain: Option<PretrainMode>,
    #[arg(long)]
    pub n_per_class: Option<usize>,
    #[arg(long)]
    pub n_features: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub n_estimators: Option<usize>,
    #[arg(long)]
    pub rf_threads: Option<usize>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// lssrepl_dnn or ssrepl_adhd
    #[arg(long, default_value = "ssrepl_adhd")]
    pub model: ModelKind,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long, default_value_t = 19)]
    pub n_features: usize,
    /// Coordinates sampled per parameter tensor (0 checks all)
    #[arg(long, default_value_t = 32)]
    pub samples: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

impl std::str::FromStr for PretrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "autoencode" => Ok(PretrainMode::Autoencode),
            "none" => Ok(PretrainMode::None),
            other => Err(format!("unknown pretrain mode {other:?}")),
        }
    }
}

/// Load a config file: TOML, or the JSON manifest a run writes.
pub fn load_config_file(path: &Path) -> Result<PipelineConfig, PipelineError> {
    let text = fs::read_to_string(path)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|ext| ext == "json") {
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Ok(manifest.config)
    } else {
        toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }
}

/// defaults <- config file <- environment <- CLI flags.
pub fn merge_train_args(args: &TrainArgs) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &args.config {
        Some(path) => load_config_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(model) = args.model {
        cfg.model = model;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.synth {
        cfg.synth = true;
    }
    if let Some(csv) = &args.csv {
        cfg.csv = Some(csv.clone());
    }
    if let Some(dir) = &args.data_dir {
        cfg.data_dir = Some(dir.clone());
    }
    if let Some(labels) = &args.mat_labels {
        cfg.mat_labels = Some(labels.clone());
    }
    if let Some(out) = &args.out {
        cfg.out = Some(out.clone());
    }
    if let Some(epochs) = args.epochs {
        cfg.epochs = Some(epochs);
    }
    if let Some(batch) = args.batch_size {
        cfg.batch_size = Some(batch);
    }
    if args.no_smote {
        cfg.smote = false;
    }
    if let Some(filter) = &args.filter {
        cfg.filter = Some(filter.clone());
    }
    if let Some(fraction) = args.train_fraction {
        cfg.train_fraction = fraction;
    }
    if let Some(lr) = args.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(mode) = args.pretrain {
        cfg.pretrain = mode;
    }
    if let Some(n) = args.n_per_class {
        cfg.synth_per_class = n;
    }
    if let Some(n) = args.n_features {
        cfg.synth_features = n;
    }
    if let Some(s) = args.separation {
        cfg.synth_separation = s;
    }
    if let Some(s) = args.noise {
        cfg.synth_noise = s;
    }
    if let Some(n) = args.n_estimators {
        cfg.n_estimators = n;
    }
    if let Some(t) = args.rf_threads {
        cfg.rf_threads = t;
    }
    // environment fallback for the data directory
    if !cfg.synth && cfg.csv.is_none() && cfg.data_dir.is_none() {
        if let Ok(dir) = std::env::var(DATA_DIR_ENV) {
            if !dir.is_empty() {
                cfg.data_dir = Some(PathBuf::from(dir));
            }
        }
    }
    Ok(cfg)
}

fn print_metrics(report: &MetricsReport) {
    println!(
        "accuracy {}  precision {}  recall {}  f1 {}  (weighted, %)",
        pct2(report.accuracy),
        pct2(report.precision_weighted),
        pct2(report.recall_weighted),
        pct2(report.f1_weighted),
    );
    println!("confusion (row %, [pred ADHD, pred Control]):");
    for (r, label) in [(0, "ADHD"), (1, "Control")] {
        println!(
            "  true {label:<8} {:>8} {:>8}   counts {:?}",
            pct2(report.confusion.row_pct[r][0]),
            pct2(report.confusion.row_pct[r][1]),
            report.confusion.counts[r],
        );
    }
}

fn print_history_tail(history: &TrainingHistory) {
    if let Some(last) = history.epochs.last() {
        println!(
            "epoch {:>3}: train loss {:.4} acc {:.2}%  val loss {:.4} acc {:.2}%",
            last.epoch,
            last.train_loss,
            100.0 * last.train_acc,
            last.val_loss,
            100.0 * last.val_acc,
        );
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), PipelineError> {
    let cfg = merge_train_args(args)?;
    let clock = InstantClock::new();
    let outcome = run_pipeline(&cfg, &clock)?;
    if let Some(history) = &outcome.history {
        print_history_tail(history);
    }
    print_metrics(&outcome.metrics);
    println!("artifacts in {}", outcome.out_dir.display());
    Ok(())
}

pub fn cmd_evaluate(run: &Path, data: Option<&Path>) -> Result<(), PipelineError> {
    let report = evaluate_run(run, data)?;
    print_metrics(&report);
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig::new(
        args.n_per_class,
        args.n_features,
        args.separation,
        args.noise,
        args.seed,
    );
    let recordings = synth_recordings(&cfg);
    let table = ssrepl_core::assemble(&recordings)?;
    formats::write_table_csv(&args.out, &table)?;
    println!(
        "wrote {} rows x {} features to {}",
        table.n_rows(),
        table.n_features(),
        args.out.display()
    );
    if args.cache {
        let cache = args.out.with_extension("bin");
        formats::write_table_cache(&cache, &table)?;
        println!("cache at {}", cache.display());
    }
    if let Some(dir) = &args.mat_dir {
        write_recordings_as_mat(dir, &recordings, args.compress)?;
        println!(
            "mat files in {} (use --mat-labels f1=ADHD,f2=ADHD,f3=Control,f4=Control)",
            dir.display()
        );
    }
    Ok(())
}

/// Split each class's recording in half and store the four blocks as
/// f1/f2 (ADHD) and f3/f4 (Control), one matrix per file named after it.
fn write_recordings_as_mat(dir: &Path, recordings: &[Recording], compress: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut index = 0usize;
    for rec in recordings {
        let rows = rec.n_samples();
        let cols = rec.n_channels();
        let halves = [(0, rows / 2), (rows / 2, rows)];
        for (start, end) in halves {
            index += 1;
            let name = format!("f{index}");
            let block = &rec.samples()[start * cols..end * cols];
            let matrix =
                MatMatrix::from_row_major(&name, NumericClass::F64, end - start, cols, block);
            let bytes = matio::write_mat(&[matrix], compress)?;
            fs::write(dir.join(format!("{name}.mat")), bytes)?;
        }
    }
    Ok(())
}

pub fn cmd_inspect(path: &Path) -> Result<()> {
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "mat" => {
            let bytes = fs::read(path)?;
            let file = matio::parse_mat_with(
                &bytes,
                matio::ParseOptions {
                    skip_unsupported: true,
                },
            )?;
            println!("{}: {:?} endian, version 0x{:04x}", path.display(), file.endian, file.version);
            if !file.description.is_empty() {
                println!("  {}", file.description);
            }
            for m in &file.matrices {
                println!("  {} {} {:?} ({} values)", m.name, m.class, m.dims, m.values.len());
            }
        }
        "csv" | "bin" => {
            let table = if ext == "csv" {
                formats::read_table_csv(path)?
            } else {
                formats::read_table_cache(path)?
            };
            summarize_table(path, &table);
        }
        other => bail!("cannot inspect {other:?} files (expected .mat, .csv or .bin)"),
    }
    Ok(())
}

fn summarize_table(path: &Path, table: &InstanceTable) {
    let counts = table.class_counts();
    println!(
        "{}: {} rows x {} features, {} {} / {} {}",
        path.display(),
        table.n_rows(),
        table.n_features(),
        counts[1],
        Group::Adhd.name(),
        counts[0],
        Group::Control.name(),
    );
    let nan_rows = (0..table.n_rows())
        .filter(|&i| table.row(i).iter().any(|v| v.is_nan()))
        .count();
    if nan_rows > 0 {
        println!("  {nan_rows} rows contain missing values");
    }
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let spec = match args.model {
        ModelKind::SsreplAdhd => build_ssrepl_adhd(args.n_features),
        ModelKind::LssreplDnn => build_lssrepl_dnn(args.n_features, 32),
        ModelKind::Rf => bail!("gradient checking applies to the neural models"),
    };
    let mut model = Model::init(spec, args.seed)?;
    let mut rng = stream(args.seed, purpose::GRADCHECK, 1);
    let x = Tensor::from_vec(
        &[args.batch, args.n_features, 1],
        (0..args.batch * args.n_features)
            .map(|_| next_normal(&mut rng))
            .collect(),
    );
    let labels: Vec<u8> = (0..args.batch)
        .map(|_| u8::from(next_normal(&mut rng) > 0.0))
        .collect();
    let cfg = GradCheckConfig {
        tolerance: args.tolerance,
        samples_per_tensor: (args.samples > 0).then_some(args.samples),
        seed: args.seed,
        ..GradCheckConfig::default()
    };
    let report = grad_check(&mut model, &x, &LossTarget::Bce(&labels), &cfg);
    println!(
        "{}: {} coordinates checked, max relative error {:.3e} at {} -> {}",
        args.model.name(),
        report.coords_checked,
        report.max_rel_error,
        report.worst,
        if report.pass { "pass" } else { "FAIL" },
    );
    Ok(report.pass)
}

pub fn cmd_report(runs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    if runs.is_empty() {
        bail!("no run directories given");
    }
    let mut rows = Vec::new();
    for dir in runs {
        let manifest: RunManifest = formats::read_json(&dir.join("run_manifest.json"))
            .with_context(|| format!("reading manifest in {}", dir.display()))?;
        let metrics: MetricsReport = formats::read_json(&dir.join("metrics.json"))
            .with_context(|| format!("reading metrics in {}", dir.display()))?;
        rows.push((manifest.config.model.name().to_string(), metrics));
    }
    println!("model,accuracy,precision,recall,f1");
    for (model, r) in &rows {
        println!(
            "{},{},{},{},{}",
            model,
            pct2(r.accuracy),
            pct2(r.precision_weighted),
            pct2(r.recall_weighted),
            pct2(r.f1_weighted),
        );
    }
    if let Some(path) = out {
        formats::write_report_csv(path, &rows)?;
        println!("written to {}", path.display());
    }
    Ok(())
}

/// Resolve but do not run; used by tests to probe config validation.
pub fn check_config(args: &TrainArgs) -> Result<PipelineConfig, PipelineError> {
    resolve(&merge_train_args(args)?)
}
