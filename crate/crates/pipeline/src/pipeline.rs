//! End-to-end run orchestration: load (or synthesize) data, preprocess,
//! split, balance, train one of the three models, evaluate, and write the
//! run artifacts. Every run is fully described by its `run_manifest.json`;
//! running the same manifest twice produces byte-identical metrics and
//! checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use ssrepl_core::balance::{smote, SmoteConfig};
use ssrepl_core::dataset::{
    assemble, split_stratified, synth_recordings, Group, InstanceTable, Recording, SynthConfig,
    CHANNELS_10_20,
};
use ssrepl_core::forest::{ForestConfig, MaxFeatures};
use ssrepl_core::metrics::{weighted_report, MetricsReport};
use ssrepl_core::models::{
    build_lssrepl_dnn, build_ssrepl_adhd, predict_labels, pretrain_representation,
    train_supervised, Clock, TrainConfig, TrainingHistory, Validation,
};
use ssrepl_core::nn::graph::Model;
use ssrepl_core::preprocess::{
    apply_scaler, default_label_mapping, encode_labels, fir_bandpass, fit_scaler, impute_missing,
    ImputeStrategy, ScalerParams,
};

use crate::formats;
use crate::matio;
use crate::parallel::fit_forest_parallel;

/// Wall clock for per-epoch timings.
pub struct InstantClock(std::time::Instant);

impl InstantClock {
    pub fn new() -> Self {
        InstantClock(std::time::Instant::now())
    }
}

impl Default for InstantClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for InstantClock {
    fn now_secs(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Rf,
    LssreplDnn,
    SsreplAdhd,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Rf => "rf",
            ModelKind::LssreplDnn => "lssrepl_dnn",
            ModelKind::SsreplAdhd => "ssrepl_adhd",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rf" => Ok(ModelKind::Rf),
            "lssrepl_dnn" => Ok(ModelKind::LssreplDnn),
            "ssrepl_adhd" => Ok(ModelKind::SsreplAdhd),
            other => Err(format!(
                "unknown model {other:?} (expected rf, lssrepl_dnn or ssrepl_adhd)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainMode {
    /// Self-supervised sequence autoencoding before supervised training
    /// (lightweight model only).
    Autoencode,
    None,
}

/// Flat run configuration. Defaults follow the documented model settings;
/// a TOML config file and CLI flags both override (CLI wins).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: ModelKind,
    pub seed: u64,
    pub out: Option<PathBuf>,

    // data source: exactly one of synth / csv / data_dir
    pub synth: bool,
    pub csv: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    /// Matrix-or-file-stem to group mapping for MAT ingestion, e.g.
    /// `f1=ADHD,f2=ADHD,f3=Control,f4=Control`.
    pub mat_labels: Option<String>,
    pub synth_per_class: usize,
    pub synth_features: usize,
    pub synth_separation: f64,
    pub synth_noise: f64,

    pub impute: ImputeStrategy,
    /// Band-pass `low:high` in Hz; filtering is off unless set.
    pub filter: Option<String>,
    pub filter_taps: usize,

    pub train_fraction: f64,

    pub smote: bool,
    pub smote_k: usize,

    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    /// Validate on a held-out fraction of the training split instead of
    /// the test set.
    pub validation_holdout: Option<f64>,
    pub repr_width: usize,
    pub pretrain: PretrainMode,
    pub pretrain_epochs: usize,

    pub n_estimators: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    /// Worker threads for tree growing; 0 uses the default pool. Results
    /// are identical at any thread count.
    pub rf_threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            model: ModelKind::Rf,
            seed: 42,
            out: None,
            synth: false,
            csv: None,
            data_dir: None,
            mat_labels: None,
            synth_per_class: 200,
            synth_features: 19,
            synth_separation: 4.0,
            synth_noise: 1.0,
            impute: ImputeStrategy::Mean,
            filter: None,
            filter_taps: 129,
            train_fraction: 0.7,
            smote: true,
            smote_k: 5,
            epochs: None,
            batch_size: None,
            learning_rate: 1e-3,
            validation_holdout: None,
            repr_width: 32,
            pretrain: PretrainMode::Autoencode,
            pretrain_epochs: 10,
            n_estimators: 100,
            max_depth: None,
            min_samples_split: 2,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            rf_threads: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: PipelineConfig,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("data ({stage}): {detail}")]
    Data { stage: &'static str, detail: String },
    #[error("numeric ({stage}): {detail}")]
    Numeric { stage: &'static str, detail: String },
}

impl PipelineError {
    /// Process exit code: 2 config, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data { .. } => 3,
            PipelineError::Numeric { .. } => 4,
        }
    }

    fn data(stage: &'static str, detail: impl ToString) -> Self {
        PipelineError::Data {
            stage,
            detail: detail.to_string(),
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub metrics: MetricsReport,
    pub history: Option<TrainingHistory>,
}

/// Parsed `low:high` band.
pub fn parse_band(spec: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = spec
        .split_once(':')
        .ok_or_else(|| format!("filter {spec:?} is not of the form low:high"))?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad low edge {lo:?}"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad high edge {hi:?}"))?;
    if !(lo > 0.0 && lo < hi) {
        return Err(format!("need 0 < low < high, got {lo}:{hi}"));
    }
    Ok((lo, hi))
}

/// Parsed `name=Group,...` mapping.
pub fn parse_mat_labels(spec: &str) -> Result<BTreeMap<String, Group>, String> {
    let mapping = default_label_mapping();
    let mut out = BTreeMap::new();
    for pair in spec.split(',') {
        let pair = pair.trim();
        if pair.is_empty() {
            continue;
        }
        let (name, group) = pair
            .split_once('=')
            .ok_or_else(|| format!("mapping entry {pair:?} is not name=group"))?;
        let encoded = encode_labels(&[group.trim().to_string()], &mapping)
            .map_err(|e| e.to_string())?;
        let group = if encoded[0] == 1 { Group::Adhd } else { Group::Control };
        out.insert(name.trim().to_string(), group);
    }
    if out.is_empty() {
        return Err("empty label mapping".into());
    }
    Ok(out)
}

/// Validate and materialize every default into a concrete config.
pub fn resolve(cfg: &PipelineConfig) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = cfg.clone();
    let sources = [cfg.synth, cfg.csv.is_some(), cfg.data_dir.is_some()]
        .iter()
        .filter(|&&s| s)
        .count();
    if sources != 1 {
        return Err(PipelineError::Config(format!(
            "exactly one data source required (synth, csv or data_dir), got {sources}"
        )));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(PipelineError::Config(format!(
            "train_fraction must be inside (0, 1), got {}",
            cfg.train_fraction
        )));
    }
    if cfg.data_dir.is_some() && cfg.mat_labels.is_none() {
        return Err(PipelineError::Config(
            "MAT ingestion needs mat_labels (matrix-or-file-stem=ADHD|Control,...)".into(),
        ));
    }
    if let Some(labels) = &cfg.mat_labels {
        parse_mat_labels(labels).map_err(PipelineError::Config)?;
    }
    if let Some(band) = &cfg.filter {
        parse_band(band).map_err(PipelineError::Config)?;
        if cfg.filter_taps % 2 == 0 || cfg.filter_taps < 3 {
            return Err(PipelineError::Config(format!(
                "filter_taps must be odd and >= 3, got {}",
                cfg.filter_taps
            )));
        }
        if cfg.csv.is_some() {
            return Err(PipelineError::Config(
                "filtering applies to recordings; a csv table has no time axis".into(),
            ));
        }
    }
    if let Some(holdout) = cfg.validation_holdout {
        if !(holdout > 0.0 && holdout < 1.0) {
            return Err(PipelineError::Config(format!(
                "validation_holdout must be inside (0, 1), got {holdout}"
            )));
        }
    }
    if cfg.epochs == Some(0) || cfg.batch_size == Some(0) {
        return Err(PipelineError::Config("epochs and batch_size must be >= 1".into()));
    }
    if cfg.n_estimators == 0 {
        return Err(PipelineError::Config("n_estimators must be >= 1".into()));
    }
    if cfg.smote_k == 0 {
        return Err(PipelineError::Config("smote_k must be >= 1".into()));
    }
    if cfg.out.is_none() {
        return Err(PipelineError::Config("an output directory is required".into()));
    }
    // materialize the per-model training defaults
    let (default_epochs, default_batch) = match cfg.model {
        ModelKind::SsreplAdhd => (40, 32),
        ModelKind::LssreplDnn => (10, 64),
        ModelKind::Rf => (0, 0),
    };
    if cfg.model != ModelKind::Rf {
        cfg.epochs = Some(cfg.epochs.unwrap_or(default_epochs));
        cfg.batch_size = Some(cfg.batch_size.unwrap_or(default_batch));
    }
    Ok(cfg)
}

fn load_mat_recordings(
    dir: &Path,
    labels: &BTreeMap<String, Group>,
) -> Result<Vec<Recording>, PipelineError> {
    let stage = "load";
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| PipelineError::data(stage, format!("{}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "mat"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(PipelineError::data(
            stage,
            format!("no .mat files in {}", dir.display()),
        ));
    }
    let mut recordings = Vec::new();
    for path in &paths {
        let bytes =
            fs::read(path).map_err(|e| PipelineError::data(stage, format!("{}: {e}", path.display())))?;
        let file = matio::parse_mat_with(
            &bytes,
            matio::ParseOptions {
                skip_unsupported: true,
            },
        )
        .map_err(|e| PipelineError::data(stage, format!("{}: {e}", path.display())))?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        for m in &file.matrices {
            if m.dims.len() != 2 {
                continue;
            }
            let group = labels
                .get(&m.name)
                .or_else(|| labels.get(&stem))
                .copied()
                .ok_or_else(|| {
                    PipelineError::data(
                        stage,
                        format!("no group mapping for matrix {:?} (file {stem})", m.name),
                    )
                })?;
            let (rows, cols) = (m.dims[0], m.dims[1]);
            let channels: Vec<String> = if cols == CHANNELS_10_20.len() {
                CHANNELS_10_20.iter().map(|s| s.to_string()).collect()
            } else {
                (0..cols).map(|i| format!("ch{:02}", i + 1)).collect()
            };
            let rec = Recording::new(
                format!("{stem}/{}", m.name),
                group,
                128.0,
                channels,
                m.to_row_major(),
            )
            .map_err(|e| PipelineError::data(stage, e))?;
            let _ = rows;
            recordings.push(rec);
        }
    }
    if recordings.is_empty() {
        return Err(PipelineError::data(stage, "no usable 2-D matrices found"));
    }
    Ok(recordings)
}

/// Load (or synthesize) the instance table. Recording sources honor the
/// optional band-pass filter.
pub fn load_table(cfg: &PipelineConfig) -> Result<InstanceTable, PipelineError> {
    let stage = "load";
    let recordings: Vec<Recording> = if cfg.synth {
        synth_recordings(&SynthConfig::new(
            cfg.synth_per_class,
            cfg.synth_features,
            cfg.synth_separation,
            cfg.synth_noise,
            cfg.seed,
        ))
    } else if let Some(dir) = &cfg.data_dir {
        let labels = parse_mat_labels(cfg.mat_labels.as_deref().unwrap_or(""))
            .map_err(PipelineError::Config)?;
        load_mat_recordings(dir, &labels)?
    } else if let Some(path) = &cfg.csv {
        let table = formats::read_table_csv(path)
            .map_err(|e| PipelineError::data(stage, e))?;
        return Ok(table);
    } else {
        return Err(PipelineError::Config("no data source".into()));
    };

    let recordings = match &cfg.filter {
        None => recordings,
        Some(band) => {
            let (lo, hi) = parse_band(band).map_err(PipelineError::Config)?;
            recordings
                .iter()
                .map(|r| fir_bandpass(r, lo, hi, cfg.filter_taps))
                .collect::<Result<_, _>>()
                .map_err(|e| PipelineError::data("filter", e))?
        }
    };
    assemble(&recordings).map_err(|e| PipelineError::data(stage, e))
}

/// Deterministically rebuild the preprocessed train/test tables: load,
/// impute, split, fit the scaler on the training split and apply it to
/// both sides. Returns `(train, test, scaler)`.
pub fn prepare_tables(
    cfg: &PipelineConfig,
) -> Result<(InstanceTable, InstanceTable, ScalerParams), PipelineError> {
    let table = load_table(cfg)?;
    let table = impute_missing(&table, cfg.impute).map_err(|e| PipelineError::data("impute", e))?;
    let split = split_stratified(&table, cfg.train_fraction, cfg.seed)
        .map_err(|e| PipelineError::data("split", e))?;
    let scaler = fit_scaler(&split.train).map_err(|e| PipelineError::data("scale", e))?;
    let train =
        apply_scaler(&split.train, &scaler).map_err(|e| PipelineError::data("scale", e))?;
    let test = apply_scaler(&split.test, &scaler).map_err(|e| PipelineError::data("scale", e))?;
    Ok((train, test, scaler))
}

fn train_config(cfg: &PipelineConfig) -> TrainConfig {
    let mut tc = match cfg.model {
        ModelKind::SsreplAdhd => TrainConfig::ssrepl_adhd(cfg.seed),
        _ => TrainConfig::lssrepl_dnn(cfg.seed),
    };
    if let Some(epochs) = cfg.epochs {
        tc.epochs = epochs;
    }
    if let Some(batch) = cfg.batch_size {
        tc.batch_size = batch;
    }
    tc.adam.learning_rate = cfg.learning_rate;
    tc.validation = match cfg.validation_holdout {
        Some(fraction) => Validation::Holdout(fraction),
        None => Validation::TestSet,
    };
    tc
}

/// Run the whole pipeline and write all artifacts into `cfg.out`.
pub fn run_pipeline(cfg: &PipelineConfig, clock: &dyn Clock) -> Result<RunOutcome, PipelineError> {
    let cfg = resolve(cfg)?;
    let out_dir = cfg.out.clone().expect("checked by resolve");
    fs::create_dir_all(&out_dir)
        .map_err(|e| PipelineError::data("artifacts", format!("{}: {e}", out_dir.display())))?;
    let artifact = |e: formats::FormatError| PipelineError::data("artifacts", e);

    let manifest = RunManifest {
        tool: "ssrepl".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
    };
    formats::write_json(&out_dir.join("run_manifest.json"), &manifest).map_err(artifact)?;

    let (mut train, test, scaler) = prepare_tables(&cfg)?;
    formats::write_scaler(&out_dir.join("scaler.json"), &scaler).map_err(artifact)?;

    if cfg.smote {
        train = smote(
            &train,
            &SmoteConfig {
                k_neighbors: cfg.smote_k,
                seed: cfg.seed,
            },
        )
        .map_err(|e| PipelineError::data("balance", e))?;
    }

    let (predictions, history) = match cfg.model {
        ModelKind::Rf => {
            let forest_cfg = ForestConfig {
                n_estimators: cfg.n_estimators,
                seed: cfg.seed,
                max_features: cfg.max_features,
                max_depth: cfg.max_depth,
                min_samples_split: cfg.min_samples_split,
                bootstrap: cfg.bootstrap,
            };
            let forest = fit_forest_parallel(&train, &forest_cfg, cfg.rf_threads)
                .map_err(|e| PipelineError::data("train", e))?;
            formats::write_forest(&out_dir.join("forest.json"), &forest).map_err(artifact)?;
            let pred = forest
                .predict_table(&test)
                .map_err(|e| PipelineError::data("evaluate", e))?;
            (pred, None)
        }
        ModelKind::LssreplDnn | ModelKind::SsreplAdhd => {
            let spec = match cfg.model {
                ModelKind::SsreplAdhd => build_ssrepl_adhd(train.n_features()),
                _ => build_lssrepl_dnn(train.n_features(), cfg.repr_width),
            };
            let mut model = Model::init(spec, cfg.seed)
                .map_err(|e| PipelineError::data("train", e))?;
            let tc = train_config(&cfg);
            if cfg.model == ModelKind::LssreplDnn && cfg.pretrain == PretrainMode::Autoencode {
                let mut pre_cfg = tc;
                pre_cfg.epochs = cfg.pretrain_epochs;
                let pre_history = pretrain_representation(&mut model, &train, &pre_cfg, clock)
                    .map_err(|e| numeric_or_data("pretrain", e))?;
                formats::write_history_csv(&out_dir.join("pretrain_history.csv"), &pre_history)
                    .map_err(artifact)?;
            }
            let history = train_supervised(&mut model, &train, &test, &tc, clock)
                .map_err(|e| numeric_or_data("train", e))?;
            formats::write_history_csv(&out_dir.join("history.csv"), &history).map_err(artifact)?;
            formats::save_checkpoint(&out_dir, &model, cfg.model.name(), cfg.seed, tc.epochs)
                .map_err(artifact)?;
            let (pred, _) = predict_labels(&model, &test)
                .map_err(|e| PipelineError::data("evaluate", e))?;
            (pred, Some(history))
        }
    };

    let metrics = weighted_report(test.labels(), &predictions)
        .map_err(|e| PipelineError::data("evaluate", e))?;
    formats::write_metrics(&out_dir.join("metrics.json"), &metrics).map_err(artifact)?;
    formats::write_confusion_csv(&out_dir.join("confusion.csv"), &metrics.confusion)
        .map_err(artifact)?;

    Ok(RunOutcome {
        out_dir,
        metrics,
        history,
    })
}

fn numeric_or_data(stage: &'static str, e: ssrepl_core::nn::NnError) -> PipelineError {
    match e {
        ssrepl_core::nn::NnError::NonFiniteLoss { .. }
        | ssrepl_core::nn::NnError::NonFiniteActivation { .. } => PipelineError::Numeric {
            stage,
            detail: e.to_string(),
        },
        other => PipelineError::data(stage, other),
    }
}

/// Re-evaluate a finished run: rebuild the test table from the manifest
/// (or an explicit CSV), load the stored model, and report metrics.
pub fn evaluate_run(
    run_dir: &Path,
    data_override: Option<&Path>,
) -> Result<MetricsReport, PipelineError> {
    let manifest: RunManifest = formats::read_json(&run_dir.join("run_manifest.json"))
        .map_err(|e| PipelineError::data("load", e))?;
    let cfg = resolve(&manifest.config)?;

    let test = match data_override {
        Some(path) => {
            let table = formats::read_table_csv(path)
                .map_err(|e| PipelineError::data("load", e))?;
            let scaler = formats::read_scaler(&run_dir.join("scaler.json"))
                .map_err(|e| PipelineError::data("load", e))?;
            apply_scaler(&table, &scaler).map_err(|e| PipelineError::data("scale", e))?
        }
        None => {
            let (_, test, _) = prepare_tables(&cfg)?;
            test
        }
    };

    let predictions = match cfg.model {
        ModelKind::Rf => {
            let forest = formats::read_forest(&run_dir.join("forest.json"))
                .map_err(|e| PipelineError::data("load", e))?;
            forest
                .predict_table(&test)
                .map_err(|e| PipelineError::data("evaluate", e))?
        }
        _ => {
            let (model, _) = formats::load_checkpoint(run_dir)
                .map_err(|e| PipelineError::data("load", e))?;
            let (pred, _) = predict_labels(&model, &test)
                .map_err(|e| PipelineError::data("evaluate", e))?;
            pred
        }
    };
    weighted_report(test.labels(), &predictions).map_err(|e| PipelineError::data("evaluate", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolve_rejects_degenerate_fractions_and_sources() {
        let mut cfg = PipelineConfig {
            synth: true,
            out: Some(PathBuf::from("/tmp/x")),
            ..PipelineConfig::default()
        };
        cfg.train_fraction = 1.0;
        assert_eq!(resolve(&cfg).unwrap_err().exit_code(), 2);
        cfg.train_fraction = 0.7;
        cfg.synth = false;
        assert_eq!(resolve(&cfg).unwrap_err().exit_code(), 2);
        cfg.synth = true;
        cfg.csv = Some(PathBuf::from("both.csv"));
        assert_eq!(resolve(&cfg).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn resolve_materializes_model_defaults() {
        let cfg = PipelineConfig {
            synth: true,
            model: ModelKind::SsreplAdhd,
            out: Some(PathBuf::from("/tmp/x")),
            ..PipelineConfig::default()
        };
        let resolved = resolve(&cfg).unwrap();
        assert_eq!(resolved.epochs, Some(40));
        assert_eq!(resolved.batch_size, Some(32));
        let cfg = PipelineConfig {
            model: ModelKind::LssreplDnn,
            ..cfg
        };
        let resolved = resolve(&cfg).unwrap();
        assert_eq!(resolved.epochs, Some(10));
        assert_eq!(resolved.batch_size, Some(64));
    }

    #[test]
    fn band_and_label_parsers() {
        assert_eq!(parse_band("0.5:50").unwrap(), (0.5, 50.0));
        assert!(parse_band("50:0.5").is_err());
        assert!(parse_band("x").is_err());
        let map = parse_mat_labels("f1=ADHD, f2=Control").unwrap();
        assert_eq!(map["f1"], Group::Adhd);
        assert_eq!(map["f2"], Group::Control);
        assert!(parse_mat_labels("f1=adhd").is_err());
        assert!(parse_mat_labels("").is_err());
    }
}
