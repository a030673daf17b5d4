//! Preprocessing: label encoding, missing-value handling, standardization
//! and an optional windowed-sinc band-pass filter.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use core::fmt;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::dataset::{InstanceTable, Recording};
use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub enum PreprocessError {
    UnknownLabel { value: String, index: usize },
    AllMissingFeature { feature: usize },
    EmptyTable,
    ShapeMismatch { expected: usize, got: usize },
    BadBand(String),
}

impl fmt::Display for PreprocessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PreprocessError::UnknownLabel { value, index } => {
                write!(f, "unknown label {value:?} at index {index}")
            }
            PreprocessError::AllMissingFeature { feature } => {
                write!(f, "feature {feature} has no observed values to impute from")
            }
            PreprocessError::EmptyTable => write!(f, "empty table"),
            PreprocessError::ShapeMismatch { expected, got } => {
                write!(f, "scaler fitted on {expected} features, table has {got}")
            }
            PreprocessError::BadBand(msg) => write!(f, "bad filter band: {msg}"),
        }
    }
}

impl core::error::Error for PreprocessError {}

/// Default label mapping: Control -> 0, ADHD -> 1 (case-sensitive).
pub fn default_label_mapping() -> BTreeMap<String, u8> {
    let mut m = BTreeMap::new();
    m.insert(String::from("Control"), 0);
    m.insert(String::from("ADHD"), 1);
    m
}

/// Elementwise application of a label mapping.
pub fn encode_labels(
    raw: &[String],
    mapping: &BTreeMap<String, u8>,
) -> Result<Vec<u8>, PreprocessError> {
    raw.iter()
        .enumerate()
        .map(|(index, v)| {
            mapping
                .get(v)
                .copied()
                .ok_or_else(|| PreprocessError::UnknownLabel {
                    value: v.clone(),
                    index,
                })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ImputeStrategy {
    Mean,
    DropRow,
}

/// Remove NaNs: either replace them with the per-feature mean of the
/// observed values, or drop any row containing one.
pub fn impute_missing(
    table: &InstanceTable,
    strategy: ImputeStrategy,
) -> Result<InstanceTable, PreprocessError> {
    let f = table.n_features();
    match strategy {
        ImputeStrategy::Mean => {
            let mut sums = vec![0.0; f];
            let mut counts = vec![0usize; f];
            for i in 0..table.n_rows() {
                for (j, &v) in table.row(i).iter().enumerate() {
                    if !v.is_nan() {
                        sums[j] += v;
                        counts[j] += 1;
                    }
                }
            }
            let mut has_nan = false;
            for i in 0..table.n_rows() {
                if table.row(i).iter().any(|v| v.is_nan()) {
                    has_nan = true;
                    break;
                }
            }
            if !has_nan {
                return Ok(table.clone());
            }
            let means: Vec<f64> = sums
                .iter()
                .zip(&counts)
                .enumerate()
                .map(|(feature, (&s, &c))| {
                    if c == 0 {
                        Err(PreprocessError::AllMissingFeature { feature })
                    } else {
                        Ok(s / c as f64)
                    }
                })
                .collect::<Result<_, _>>()?;
            let mut out = table.clone();
            for (idx, v) in out.features_mut().iter_mut().enumerate() {
                if v.is_nan() {
                    *v = means[idx % f];
                }
            }
            Ok(out)
        }
        ImputeStrategy::DropRow => {
            let keep: Vec<usize> = (0..table.n_rows())
                .filter(|&i| table.row(i).iter().all(|v| !v.is_nan()))
                .collect();
            if keep.len() == table.n_rows() {
                return Ok(table.clone());
            }
            Ok(table.select(&keep))
        }
    }
}

/// Per-feature standardization parameters (population statistics).
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ScalerParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ScalerParams {
    /// Features with zero spread; they map to zero under [`apply_scaler`].
    pub fn degenerate_features(&self) -> Vec<usize> {
        self.std
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Per-feature mean and population standard deviation of `train`.
pub fn fit_scaler(train: &InstanceTable) -> Result<ScalerParams, PreprocessError> {
    if train.n_rows() == 0 {
        return Err(PreprocessError::EmptyTable);
    }
    let f = train.n_features();
    let n = train.n_rows() as f64;
    let mut mean = vec![0.0; f];
    for i in 0..train.n_rows() {
        for (m, &v) in mean.iter_mut().zip(train.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; f];
    for i in 0..train.n_rows() {
        for ((s, &m), &v) in var.iter_mut().zip(&mean).zip(train.row(i)) {
            let d = v - m;
            *s += d * d;
        }
    }
    let std = var.iter().map(|&s| math::sqrt(s / n)).collect();
    Ok(ScalerParams { mean, std })
}

/// `x' = (x - mean) / std` per feature; zero-spread features map to zero.
/// Labels are untouched.
pub fn apply_scaler(
    table: &InstanceTable,
    params: &ScalerParams,
) -> Result<InstanceTable, PreprocessError> {
    if params.mean.len() != table.n_features() {
        return Err(PreprocessError::ShapeMismatch {
            expected: params.mean.len(),
            got: table.n_features(),
        });
    }
    let f = table.n_features();
    let mut out = table.clone();
    for (idx, v) in out.features_mut().iter_mut().enumerate() {
        let j = idx % f;
        *v = if params.std[j] == 0.0 {
            0.0
        } else {
            (*v - params.mean[j]) / params.std[j]
        };
    }
    Ok(out)
}

/// Linear-phase windowed-sinc (Hamming) band-pass applied per channel with
/// zero padding and group-delay compensation; output length equals input
/// length.
pub fn fir_bandpass(
    rec: &Recording,
    low_hz: f64,
    high_hz: f64,
    taps: usize,
) -> Result<Recording, PreprocessError> {
    let nyquist = rec.sample_rate_hz / 2.0;
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
        return Err(PreprocessError::BadBand(alloc::format!(
            "need 0 < low ({low_hz}) < high ({high_hz}) < nyquist ({nyquist})"
        )));
    }
    if taps % 2 == 0 || taps < 3 {
        return Err(PreprocessError::BadBand(alloc::format!(
            "taps must be odd and >= 3, got {taps}"
        )));
    }
    let kernel = bandpass_kernel(low_hz / rec.sample_rate_hz, high_hz / rec.sample_rate_hz, taps);
    let delay = (taps - 1) / 2;
    let t_len = rec.n_samples();
    let nc = rec.n_channels();
    let mut out = rec.clone();
    for c in 0..nc {
        let x = rec.channel(c);
        for t in 0..t_len {
            let mut acc = 0.0;
            for (k, &h) in kernel.iter().enumerate() {
                // y[t] = sum_k h[k] x[t + k - delay], zero outside the signal
                let src = t as isize + k as isize - delay as isize;
                if src >= 0 && (src as usize) < t_len {
                    acc += h * x[src as usize];
                }
            }
            out.samples_mut()[t * nc + c] = acc;
        }
    }
    Ok(out)
}

/// Windowed-sinc band-pass kernel for normalized frequencies (cycles/sample).
fn bandpass_kernel(f_low: f64, f_high: f64, taps: usize) -> Vec<f64> {
    let delay = (taps - 1) as f64 / 2.0;
    let mut h = vec![0.0; taps];
    for (k, v) in h.iter_mut().enumerate() {
        let t = k as f64 - delay;
        let ideal = if t == 0.0 {
            2.0 * (f_high - f_low)
        } else {
            (math::sin(2.0 * math::PI * f_high * t) - math::sin(2.0 * math::PI * f_low * t))
                / (math::PI * t)
        };
        let window = 0.54 - 0.46 * math::cos(2.0 * math::PI * k as f64 / (taps - 1) as f64);
        *v = ideal * window;
    }
    h
}
