//! On-disk formats: instance-table CSV and binary cache, scaler/metrics
//! JSON, training-history CSV, confusion CSV, forest JSON and neural
//! checkpoints (JSON manifest plus a raw little-endian f64 blob).
//!
//! Floats in text formats are written in shortest-round-trip form, so
//! every format here round-trips bit-exactly.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use ssrepl_core::dataset::InstanceTable;
use ssrepl_core::forest::Forest;
use ssrepl_core::metrics::{pct2, ConfusionMatrix, MetricsReport};
use ssrepl_core::models::TrainingHistory;
use ssrepl_core::nn::graph::{Model, ModelSpec};
use ssrepl_core::nn::Parameter;
use ssrepl_core::preprocess::ScalerParams;
use ssrepl_core::Tensor;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {detail}")]
    Invalid { path: PathBuf, detail: String },
}

impl FormatError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn invalid(path: &Path, detail: impl Into<String>) -> Self {
        FormatError::Invalid {
            path: path.to_path_buf(),
            detail: detail.into(),
        }
    }
}

// ---------------------------------------------------------------------------
// instance tables
// ---------------------------------------------------------------------------

/// CSV with header `feature names..., label`. Floats use shortest
/// round-trip formatting.
pub fn write_table_csv(path: &Path, table: &InstanceTable) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| FormatError::Csv {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut header: Vec<String> = table.feature_names().to_vec();
    header.push("label".into());
    let write = |w: &mut csv::Writer<fs::File>, rec: &[String]| {
        w.write_record(rec).map_err(|e| FormatError::Csv {
            path: path.to_path_buf(),
            source: e,
        })
    };
    write(&mut w, &header)?;
    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..table.n_rows() {
        record.clear();
        record.extend(table.row(i).iter().map(|v| format!("{v}")));
        record.push(format!("{}", table.labels()[i]));
        write(&mut w, &record)?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))?;
    Ok(())
}

pub fn read_table_csv(path: &Path) -> Result<InstanceTable, FormatError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| FormatError::Csv {
        path: path.to_path_buf(),
        source: e,
    })?;
    let header = r
        .headers()
        .map_err(|e| FormatError::Csv {
            path: path.to_path_buf(),
            source: e,
        })?
        .clone();
    if header.len() < 2 || &header[header.len() - 1] != "label" {
        return Err(FormatError::invalid(path, "last column must be `label`"));
    }
    let names: Vec<String> = header.iter().take(header.len() - 1).map(String::from).collect();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(|e| FormatError::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        if record.len() != header.len() {
            return Err(FormatError::invalid(
                path,
                format!("row {line} has {} fields, expected {}", record.len(), header.len()),
            ));
        }
        for field in record.iter().take(names.len()) {
            features.push(field.parse::<f64>().map_err(|_| {
                FormatError::invalid(path, format!("row {line}: bad float {field:?}"))
            })?);
        }
        let label_field = &record[names.len()];
        labels.push(label_field.parse::<u8>().map_err(|_| {
            FormatError::invalid(path, format!("row {line}: bad label {label_field:?}"))
        })?);
    }
    InstanceTable::new(names, features, labels)
        .map_err(|e| FormatError::invalid(path, e.to_string()))
}

const TABLE_CACHE_MAGIC: &[u8; 8] = b"EEGTBL\x01\0";

/// Length-prefixed little-endian binary cache of a table.
pub fn write_table_cache(path: &Path, table: &InstanceTable) -> Result<(), FormatError> {
    let file = fs::File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| FormatError::io(path, e);
    w.write_all(TABLE_CACHE_MAGIC).map_err(io)?;
    w.write_all(&(table.n_features() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(table.n_rows() as u64).to_le_bytes()).map_err(io)?;
    for name in table.feature_names() {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(bytes).map_err(io)?;
    }
    for v in table.features() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.write_all(table.labels()).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_table_cache(path: &Path) -> Result<InstanceTable, FormatError> {
    let file = fs::File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| FormatError::io(path, e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != TABLE_CACHE_MAGIC {
        return Err(FormatError::invalid(path, "not a table cache"));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4).map_err(io)?;
    let n_features = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b8).map_err(io)?;
    let n_rows = u64::from_le_bytes(b8) as usize;
    let mut names = Vec::with_capacity(n_features);
    for _ in 0..n_features {
        r.read_exact(&mut b4).map_err(io)?;
        let mut name = vec![0u8; u32::from_le_bytes(b4) as usize];
        r.read_exact(&mut name).map_err(io)?;
        names.push(String::from_utf8(name).map_err(|_| {
            FormatError::invalid(path, "feature name is not UTF-8")
        })?);
    }
    let mut features = Vec::with_capacity(n_rows * n_features);
    for _ in 0..n_rows * n_features {
        r.read_exact(&mut b8).map_err(io)?;
        features.push(f64::from_le_bytes(b8));
    }
    let mut labels = vec![0u8; n_rows];
    r.read_exact(&mut labels).map_err(io)?;
    InstanceTable::new(names, features, labels)
        .map_err(|e| FormatError::invalid(path, e.to_string()))
}

// ---------------------------------------------------------------------------
// json artifacts
// ---------------------------------------------------------------------------

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut buf = serde_json::to_vec_pretty(value).map_err(|e| FormatError::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    buf.push(b'\n');
    fs::write(path, buf).map_err(|e| FormatError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, FormatError> {
    let buf = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    serde_json::from_slice(&buf).map_err(|e| FormatError::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn write_scaler(path: &Path, scaler: &ScalerParams) -> Result<(), FormatError> {
    write_json(path, scaler)
}

pub fn read_scaler(path: &Path) -> Result<ScalerParams, FormatError> {
    read_json(path)
}

pub fn write_metrics(path: &Path, report: &MetricsReport) -> Result<(), FormatError> {
    write_json(path, report)
}

pub fn write_forest(path: &Path, forest: &Forest) -> Result<(), FormatError> {
    write_json(path, forest)
}

pub fn read_forest(path: &Path) -> Result<Forest, FormatError> {
    read_json(path)
}

// ---------------------------------------------------------------------------
// csv artifacts
// ---------------------------------------------------------------------------

/// `epoch,train_loss,train_acc,val_loss,val_acc,seconds`, one row per epoch.
pub fn write_history_csv(path: &Path, history: &TrainingHistory) -> Result<(), FormatError> {
    let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc,seconds\n");
    for e in &history.epochs {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc, e.seconds
        ));
    }
    fs::write(path, out).map_err(|e| FormatError::io(path, e))
}

/// Row-labeled 2x2 confusion matrix, positive class first, counts and
/// row percentages.
pub fn write_confusion_csv(path: &Path, m: &ConfusionMatrix) -> Result<(), FormatError> {
    let mut out = String::from("true_class,pred_adhd,pred_control,pct_adhd,pct_control\n");
    for (r, label) in [(0, "ADHD"), (1, "Control")] {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            label,
            m.counts[r][0],
            m.counts[r][1],
            pct2(m.row_pct[r][0]),
            pct2(m.row_pct[r][1]),
        ));
    }
    fs::write(path, out).map_err(|e| FormatError::io(path, e))
}

/// One comparison row per run: `model,accuracy,precision,recall,f1`,
/// all two-decimal percentages.
pub fn write_report_csv(path: &Path, rows: &[(String, MetricsReport)]) -> Result<(), FormatError> {
    let mut out = String::from("model,accuracy,precision,recall,f1\n");
    for (model, r) in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            model,
            pct2(r.accuracy),
            pct2(r.precision_weighted),
            pct2(r.recall_weighted),
            pct2(r.f1_weighted),
        ));
    }
    fs::write(path, out).map_err(|e| FormatError::io(path, e))
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

pub const CHECKPOINT_MANIFEST: &str = "checkpoint.json";
pub const CHECKPOINT_BLOB: &str = "checkpoint.params";
const CHECKPOINT_FORMAT: &str = "ssrepl-checkpoint-v1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamEntry {
    pub node: usize,
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    /// Offset and length in f64 elements within the blob.
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub model: String,
    pub seed: u64,
    pub epochs: usize,
    pub spec: ModelSpec,
    pub params: Vec<ParamEntry>,
    pub blob_file: String,
    pub blob_f64_len: usize,
}

/// Write `checkpoint.json` and the parameter blob into `dir`. Parameters
/// are stored in model order as raw little-endian f64, so a reloaded model
/// reproduces forward outputs bit-for-bit.
pub fn save_checkpoint(
    dir: &Path,
    model: &Model,
    model_name: &str,
    seed: u64,
    epochs: usize,
) -> Result<(), FormatError> {
    let mut entries = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for (node, params) in model.params.iter().enumerate() {
        for p in params {
            entries.push(ParamEntry {
                node,
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                trainable: p.trainable,
                offset,
                len: p.value.len(),
            });
            for v in p.value.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            offset += p.value.len();
        }
    }
    let meta = CheckpointMeta {
        format: CHECKPOINT_FORMAT.into(),
        model: model_name.into(),
        seed,
        epochs,
        spec: model.spec.clone(),
        params: entries,
        blob_file: CHECKPOINT_BLOB.into(),
        blob_f64_len: offset,
    };
    let blob_path = dir.join(CHECKPOINT_BLOB);
    fs::write(&blob_path, blob).map_err(|e| FormatError::io(&blob_path, e))?;
    write_json(&dir.join(CHECKPOINT_MANIFEST), &meta)
}

/// Restore a model (and its metadata) from `dir`.
pub fn load_checkpoint(dir: &Path) -> Result<(Model, CheckpointMeta), FormatError> {
    let manifest_path = dir.join(CHECKPOINT_MANIFEST);
    let meta: CheckpointMeta = read_json(&manifest_path)?;
    if meta.format != CHECKPOINT_FORMAT {
        return Err(FormatError::invalid(
            &manifest_path,
            format!("unknown checkpoint format {:?}", meta.format),
        ));
    }
    let blob_path = dir.join(&meta.blob_file);
    let blob = fs::read(&blob_path).map_err(|e| FormatError::io(&blob_path, e))?;
    if blob.len() != meta.blob_f64_len * 8 {
        return Err(FormatError::invalid(
            &blob_path,
            format!("blob holds {} bytes, manifest says {}", blob.len(), meta.blob_f64_len * 8),
        ));
    }
    let n_nodes = meta.spec.nodes.len();
    let mut params: Vec<Vec<Parameter>> = vec![Vec::new(); n_nodes];
    for entry in &meta.params {
        if entry.node >= n_nodes {
            return Err(FormatError::invalid(
                &manifest_path,
                format!("parameter {} references node {}", entry.name, entry.node),
            ));
        }
        let end = entry
            .offset
            .checked_add(entry.len)
            .filter(|&e| e <= meta.blob_f64_len)
            .ok_or_else(|| {
                FormatError::invalid(&manifest_path, format!("parameter {} out of blob range", entry.name))
            })?;
        let mut data = Vec::with_capacity(entry.len);
        for i in entry.offset..end {
            let mut b = [0u8; 8];
            b.copy_from_slice(&blob[i * 8..i * 8 + 8]);
            data.push(f64::from_le_bytes(b));
        }
        if entry.shape.iter().product::<usize>() != entry.len {
            return Err(FormatError::invalid(
                &manifest_path,
                format!("parameter {} shape/length mismatch", entry.name),
            ));
        }
        let mut p = Parameter::new(entry.name.clone(), Tensor::from_vec(&entry.shape, data));
        p.trainable = entry.trainable;
        params[entry.node].push(p);
    }
    let model = Model {
        spec: meta.spec.clone(),
        params,
    };
    model
        .spec
        .validate()
        .map_err(|e| FormatError::invalid(&manifest_path, e.to_string()))?;
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ssrepl_core::dataset::{synth_generate, SynthConfig};
    use ssrepl_core::models::build_lssrepl_dnn;
    use tempfile::tempdir;

    #[test]
    fn table_csv_roundtrips_bit_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut table = synth_generate(&SynthConfig::new(20, 5, 1.0, 1.0, 1));
        // exercise awkward values
        table.features_mut()[0] = f64::MIN_POSITIVE;
        table.features_mut()[1] = -0.1 + 0.2; // not exactly 0.1
        write_table_csv(&path, &table).unwrap();
        let back = read_table_csv(&path).unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn table_cache_roundtrips_bit_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.bin");
        let table = synth_generate(&SynthConfig::new(33, 7, 2.0, 0.5, 9));
        write_table_cache(&path, &table).unwrap();
        assert_eq!(read_table_cache(&path).unwrap(), table);
    }

    #[test]
    fn scaler_json_roundtrips_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("scaler.json");
        let scaler = ScalerParams {
            mean: vec![0.1, -2.5e-17, 3.0],
            std: vec![1.0, 0.0, f64::MIN_POSITIVE],
        };
        write_scaler(&path, &scaler).unwrap();
        let back = read_scaler(&path).unwrap();
        assert_eq!(back, scaler);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"mean\""));
        assert!(text.contains("\"std\""));
    }

    #[test]
    fn checkpoint_restores_bitwise_forward_outputs() {
        let dir = tempdir().unwrap();
        let model = Model::init(build_lssrepl_dnn(5, 6), 77).unwrap();
        save_checkpoint(dir.path(), &model, "lssrepl_dnn", 77, 3).unwrap();
        let (loaded, meta) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(meta.model, "lssrepl_dnn");
        assert_eq!(meta.seed, 77);
        let x = Tensor::from_vec(&[4, 5, 1], (0..20).map(|i| i as f64 * 0.3 - 2.0).collect());
        let a = model.forward(&x).unwrap();
        let b = loaded.forward(&x).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn forest_json_preserves_predictions() {
        use ssrepl_core::forest::{fit_forest, ForestConfig};
        let dir = tempdir().unwrap();
        let path = dir.path().join("forest.json");
        let table = synth_generate(&SynthConfig::new(60, 4, 2.0, 1.0, 5));
        let forest = fit_forest(
            &table,
            &ForestConfig {
                n_estimators: 9,
                ..ForestConfig::default()
            },
        )
        .unwrap();
        write_forest(&path, &forest).unwrap();
        let back = read_forest(&path).unwrap();
        assert_eq!(back, forest);
        assert_eq!(
            back.predict_table(&table).unwrap(),
            forest.predict_table(&table).unwrap()
        );
    }

    #[test]
    fn history_and_confusion_render() {
        use ssrepl_core::metrics::confusion_matrix;
        use ssrepl_core::models::EpochRecord;
        let dir = tempdir().unwrap();
        let hist = TrainingHistory {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                train_acc: 0.75,
                val_loss: 0.6,
                val_acc: 0.7,
                seconds: 0.01,
            }],
        };
        let hp = dir.path().join("history.csv");
        write_history_csv(&hp, &hist).unwrap();
        let text = std::fs::read_to_string(&hp).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("epoch,train_loss"));

        let m = confusion_matrix(&[1, 1, 0, 0], &[1, 0, 0, 0]).unwrap();
        let cp = dir.path().join("confusion.csv");
        write_confusion_csv(&cp, &m).unwrap();
        let text = std::fs::read_to_string(&cp).unwrap();
        assert!(text.contains("ADHD,1,1,50.00,50.00"));
        assert!(text.contains("Control,0,2,0.00,100.00"));
    }
}
