//! Labeled per-row instance tables: assembly from recordings, stratified
//! splitting, and synthetic generation (see [`synth`]).

mod synth;

pub use synth::{synth_generate, synth_recordings, SynthConfig};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use core::fmt;

use rand::seq::SliceRandom;

use crate::math;
use crate::rng::{purpose, stream};

/// The 19 scalp electrode names of the 10-20 layout used by the dataset.
pub const CHANNELS_10_20: [&str; 19] = [
    "Fz", "Cz", "Pz", "C3", "T3", "C4", "T4", "Fp1", "Fp2", "F3", "F4", "F7", "F8", "P3", "P4",
    "T5", "T6", "O1", "O2",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Adhd,
    Control,
}

impl Group {
    /// ADHD is the positive class.
    pub fn label(self) -> u8 {
        match self {
            Group::Adhd => 1,
            Group::Control => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::Adhd => "ADHD",
            Group::Control => "Control",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetError {
    ChannelMismatch { subject: String },
    SingleClass,
    DegenerateSplit,
    BadTable(String),
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetError::ChannelMismatch { subject } => {
                write!(f, "recording {subject} has a different channel list")
            }
            DatasetError::SingleClass => write!(f, "only one class present"),
            DatasetError::DegenerateSplit => write!(f, "split leaves one side empty"),
            DatasetError::BadTable(msg) => write!(f, "malformed table: {msg}"),
        }
    }
}

impl core::error::Error for DatasetError {}

/// One subject's multichannel time series with its group label.
/// Sample rows are `[T, channels]` row-major.
#[derive(Clone, Debug)]
pub struct Recording {
    pub subject_id: String,
    pub group: Group,
    pub sample_rate_hz: f64,
    pub channels: Vec<String>,
    samples: Vec<f64>,
}

impl Recording {
    pub fn new(
        subject_id: impl Into<String>,
        group: Group,
        sample_rate_hz: f64,
        channels: Vec<String>,
        samples: Vec<f64>,
    ) -> Result<Self, DatasetError> {
        let subject_id = subject_id.into();
        if channels.is_empty() || samples.len() % channels.len() != 0 {
            return Err(DatasetError::BadTable(format!(
                "recording {subject_id}: {} samples not divisible into {} channels",
                samples.len(),
                channels.len()
            )));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(DatasetError::BadTable(format!(
                "recording {subject_id}: non-positive sample rate"
            )));
        }
        Ok(Recording {
            subject_id,
            group,
            sample_rate_hz,
            channels,
            samples,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len() / self.channels.len()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    /// One channel's full time series.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        let nc = self.n_channels();
        (0..self.n_samples()).map(|t| self.samples[t * nc + c]).collect()
    }
}

/// N rows of F features plus binary labels; the unit every model consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceTable {
    feature_names: Vec<String>,
    features: Vec<f64>,
    labels: Vec<u8>,
}

impl InstanceTable {
    pub fn new(
        feature_names: Vec<String>,
        features: Vec<f64>,
        labels: Vec<u8>,
    ) -> Result<Self, DatasetError> {
        let f = feature_names.len();
        if f == 0 {
            return Err(DatasetError::BadTable("zero features".into()));
        }
        if features.len() != f * labels.len() {
            return Err(DatasetError::BadTable(format!(
                "{} values cannot be {} rows of {} features",
                features.len(),
                labels.len(),
                f
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(DatasetError::BadTable(format!("label {bad} is not binary")));
        }
        Ok(InstanceTable {
            feature_names,
            features,
            labels,
        })
    }

    pub fn empty(feature_names: Vec<String>) -> Self {
        InstanceTable {
            feature_names,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let f = self.n_features();
        &self.features[i * f..(i + 1) * f]
    }

    pub fn push_row(&mut self, row: &[f64], label: u8) {
        debug_assert_eq!(row.len(), self.n_features());
        self.features.extend_from_slice(row);
        self.labels.push(label);
    }

    /// `[count(label 0), count(label 1)]`.
    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.labels.iter().filter(|&&l| l == 1).count();
        [self.labels.len() - ones, ones]
    }

    /// Rows gathered by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> InstanceTable {
        let f = self.n_features();
        let mut features = Vec::with_capacity(indices.len() * f);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        InstanceTable {
            feature_names: self.feature_names.clone(),
            features,
            labels,
        }
    }
}

/// Disjoint train/test tables whose union is the input.
#[derive(Clone, Debug)]
pub struct SplitPair {
    pub train: InstanceTable,
    pub test: InstanceTable,
    pub seed: u64,
    pub train_fraction: f64,
}

/// Concatenate recordings into one instance table, one row per time sample,
/// labeled by each recording's group. Rows keep input order.
pub fn assemble(recordings: &[Recording]) -> Result<InstanceTable, DatasetError> {
    let channels: Vec<String> = recordings
        .first()
        .map(|r| r.channels.clone())
        .unwrap_or_else(|| CHANNELS_10_20.iter().map(|s| String::from(*s)).collect());
    let mut table = InstanceTable::empty(channels.clone());
    for rec in recordings {
        if rec.channels != channels {
            return Err(DatasetError::ChannelMismatch {
                subject: rec.subject_id.clone(),
            });
        }
        table.features.extend_from_slice(&rec.samples);
        table
            .labels
            .extend(core::iter::repeat_n(rec.group.label(), rec.n_samples()));
    }
    Ok(table)
}

/// Seeded stratified split: per-class proportions are preserved within one
/// row and the permutation depends only on the seed.
pub fn split_stratified(
    table: &InstanceTable,
    train_fraction: f64,
    seed: u64,
) -> Result<SplitPair, DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::DegenerateSplit);
    }
    let counts = table.class_counts();
    if counts[0] == 0 || counts[1] == 0 {
        return Err(DatasetError::SingleClass);
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for class in [0u8, 1u8] {
        let mut idx: Vec<usize> = (0..table.n_rows())
            .filter(|&i| table.labels[i] == class)
            .collect();
        let mut rng = stream(seed, purpose::SPLIT, class as u64);
        idx.shuffle(&mut rng);
        let n_train = math::round(train_fraction * idx.len() as f64) as usize;
        let n_train = n_train.min(idx.len());
        train_idx.extend_from_slice(&idx[..n_train]);
        test_idx.extend_from_slice(&idx[n_train..]);
    }
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(DatasetError::DegenerateSplit);
    }
    Ok(SplitPair {
        train: table.select(&train_idx),
        test: table.select(&test_idx),
        seed,
        train_fraction,
    })
}
