//! Confusion matrix and support-weighted accuracy/precision/recall/F1.
//! Class order is [ADHD (1), Control (0)] everywhere: positive class first.

use core::fmt;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetricsError {
    LengthMismatch { truth: usize, predicted: usize },
    BadLabel { value: u8, index: usize },
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::LengthMismatch { truth, predicted } => {
                write!(f, "{truth} true labels vs {predicted} predictions")
            }
            MetricsError::BadLabel { value, index } => {
                write!(f, "label {value} at index {index} is not binary")
            }
        }
    }
}

impl core::error::Error for MetricsError {}

/// 2x2 confusion matrix; rows are true classes in order [ADHD, Control],
/// columns are predictions in the same order.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
    /// Row-normalized percentages; an empty row is all zeros and flagged.
    pub row_pct: [[f64; 2]; 2],
    pub empty_rows: [bool; 2],
}

/// Evaluation summary, all metrics as percentages.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision_weighted: f64,
    pub recall_weighted: f64,
    pub f1_weighted: f64,
    pub confusion: ConfusionMatrix,
    /// Classes (in [ADHD, Control] order) whose precision denominator was
    /// zero and contributed zero by convention.
    pub zero_precision_classes: [bool; 2],
}

fn validate(y_true: &[u8], y_pred: &[u8]) -> Result<(), MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch {
            truth: y_true.len(),
            predicted: y_pred.len(),
        });
    }
    for (index, &v) in y_true.iter().chain(y_pred.iter()).enumerate() {
        if v > 1 {
            return Err(MetricsError::BadLabel {
                value: v,
                index: index % y_true.len().max(1),
            });
        }
    }
    Ok(())
}

/// Class order used for reporting: positive (ADHD, label 1) first.
const CLASS_ORDER: [u8; 2] = [1, 0];

pub fn confusion_matrix(y_true: &[u8], y_pred: &[u8]) -> Result<ConfusionMatrix, MetricsError> {
    validate(y_true, y_pred)?;
    let mut counts = [[0u64; 2]; 2];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        let row = usize::from(t == 0); // label 1 -> row 0
        let col = usize::from(p == 0);
        counts[row][col] += 1;
    }
    let mut row_pct = [[0.0f64; 2]; 2];
    let mut empty_rows = [false; 2];
    for r in 0..2 {
        let total = counts[r][0] + counts[r][1];
        if total == 0 {
            empty_rows[r] = true;
        } else {
            for c in 0..2 {
                row_pct[r][c] = 100.0 * counts[r][c] as f64 / total as f64;
            }
        }
    }
    Ok(ConfusionMatrix {
        counts,
        row_pct,
        empty_rows,
    })
}

/// Support-weighted report: per-class precision/recall/F1 averaged with
/// class-support weights; zero-denominator classes contribute zero and are
/// flagged. All values are percentages.
pub fn weighted_report(y_true: &[u8], y_pred: &[u8]) -> Result<MetricsReport, MetricsError> {
    let confusion = confusion_matrix(y_true, y_pred)?;
    let n = y_true.len() as f64;
    let correct: u64 = confusion.counts[0][0] + confusion.counts[1][1];
    let accuracy = 100.0 * correct as f64 / n;

    let mut precision_weighted = 0.0;
    let mut recall_weighted = 0.0;
    let mut f1_weighted = 0.0;
    let mut zero_precision_classes = [false; 2];
    for (slot, _class) in CLASS_ORDER.iter().enumerate() {
        let tp = confusion.counts[slot][slot] as f64;
        let fn_ = confusion.counts[slot][1 - slot] as f64;
        let fp = confusion.counts[1 - slot][slot] as f64;
        let support = tp + fn_;
        if support == 0.0 {
            continue;
        }
        let precision = if tp + fp == 0.0 {
            zero_precision_classes[slot] = true;
            0.0
        } else {
            tp / (tp + fp)
        };
        let recall = tp / support;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let weight = support / n;
        precision_weighted += weight * precision;
        recall_weighted += weight * recall;
        f1_weighted += weight * f1;
    }
    Ok(MetricsReport {
        accuracy,
        precision_weighted: 100.0 * precision_weighted,
        recall_weighted: 100.0 * recall_weighted,
        f1_weighted: 100.0 * f1_weighted,
        confusion,
        zero_precision_classes,
    })
}

/// Render a percentage with two decimals, the table display convention.
pub fn pct2(value: f64) -> alloc::string::String {
    alloc::format!("{value:.2}")
}
