//! The three classifiers operating on instance tables: a random-forest
//! wrapper lives in [`crate::forest`]; this module builds and trains the two
//! recurrent models and maps tables to `[rows, features, 1]` sequences,
//! i.e. the recurrence runs across the 19 channels of a single time sample,
//! one channel per step.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::dataset::{split_stratified, InstanceTable};
use crate::nn::adam::{AdamConfig, AdamState};
use crate::nn::graph::{LayerKind, Model, ModelSpec, PortRef};
use crate::nn::layer::Activation;
use crate::nn::loss::{bce_grad, bce_loss, mse_grad, mse_loss};
use crate::nn::{ensure, NnError};
use crate::rng::{purpose, stream};
use crate::tensor::Tensor;

/// Wall-clock source injected into the training loops so the core stays
/// timer-free; see the pipeline crate for a real implementation.
pub trait Clock {
    fn now_secs(&self) -> f64;
}

/// Clock that always reads zero (per-epoch seconds come out as zero).
pub struct NoClock;

impl Clock for NoClock {
    fn now_secs(&self) -> f64 {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Validation {
    /// Evaluate each epoch on the table passed as `val`.
    TestSet,
    /// Carve a seeded stratified holdout of this fraction out of the
    /// training table and validate on it instead.
    Holdout(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub validation: Validation,
    pub adam: AdamConfig,
}

impl TrainConfig {
    /// Defaults for the LSTM-GRU hybrid: 40 epochs, batch 32.
    pub fn ssrepl_adhd(seed: u64) -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 32,
            seed,
            validation: Validation::TestSet,
            adam: AdamConfig::default(),
        }
    }

    /// Defaults for the lightweight DNN: 10 epochs, batch 64.
    pub fn lssrepl_dnn(seed: u64) -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 64,
            seed,
            validation: Validation::TestSet,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// LSTM-GRU hybrid over `[B, n_features, 1]` inputs:
/// parallel LSTM64/GRU64 sequences, concat to 128, parallel LSTM32/GRU32,
/// time-distributed dense 16 on each, flatten, concat, dense 64 ReLU,
/// sigmoid output. All layers trainable.
pub fn build_ssrepl_adhd(n_features: usize) -> ModelSpec {
    let mut spec = ModelSpec::new(n_features, 1);
    let lstm64 = spec.add(
        "lstm64",
        LayerKind::Lstm {
            units: 64,
            return_sequences: true,
        },
        vec![PortRef::Input],
    );
    let gru64 = spec.add(
        "gru64",
        LayerKind::Gru {
            units: 64,
            return_sequences: true,
        },
        vec![PortRef::Input],
    );
    let merged = spec.add(
        "concat_seq",
        LayerKind::Concat,
        vec![PortRef::Node(lstm64), PortRef::Node(gru64)],
    );
    let lstm32 = spec.add(
        "lstm32",
        LayerKind::Lstm {
            units: 32,
            return_sequences: true,
        },
        vec![PortRef::Node(merged)],
    );
    let gru32 = spec.add(
        "gru32",
        LayerKind::Gru {
            units: 32,
            return_sequences: true,
        },
        vec![PortRef::Node(merged)],
    );
    let td_lstm = spec.add(
        "td_lstm16",
        LayerKind::TimeDistributedDense {
            units: 16,
            activation: Activation::None,
        },
        vec![PortRef::Node(lstm32)],
    );
    let td_gru = spec.add(
        "td_gru16",
        LayerKind::TimeDistributedDense {
            units: 16,
            activation: Activation::None,
        },
        vec![PortRef::Node(gru32)],
    );
    let flat_lstm = spec.add("flatten_lstm", LayerKind::Flatten, vec![PortRef::Node(td_lstm)]);
    let flat_gru = spec.add("flatten_gru", LayerKind::Flatten, vec![PortRef::Node(td_gru)]);
    let combined = spec.add(
        "concat_flat",
        LayerKind::Concat,
        vec![PortRef::Node(flat_lstm), PortRef::Node(flat_gru)],
    );
    let fc = spec.add(
        "fc64",
        LayerKind::Dense {
            units: 64,
            activation: Activation::Relu,
        },
        vec![PortRef::Node(combined)],
    );
    spec.add(
        "output",
        LayerKind::Dense {
            units: 1,
            activation: Activation::Sigmoid,
        },
        vec![PortRef::Node(fc)],
    );
    spec
}

/// Lightweight model: a freezable LSTM representation trunk (last state)
/// followed by a ReLU head and sigmoid output. The head width equals the
/// representation width.
pub fn build_lssrepl_dnn(n_features: usize, repr_width: usize) -> ModelSpec {
    let mut spec = ModelSpec::new(n_features, 1);
    let trunk = spec.add(
        TRUNK_NODE,
        LayerKind::Lstm {
            units: repr_width,
            return_sequences: false,
        },
        vec![PortRef::Input],
    );
    let head = spec.add(
        "head",
        LayerKind::Dense {
            units: repr_width,
            activation: Activation::Relu,
        },
        vec![PortRef::Node(trunk)],
    );
    spec.add(
        "output",
        LayerKind::Dense {
            units: 1,
            activation: Activation::Sigmoid,
        },
        vec![PortRef::Node(head)],
    );
    spec
}

/// Name of the freezable representation trunk in [`build_lssrepl_dnn`].
pub const TRUNK_NODE: &str = "repr_lstm";

/// Rows as sequences: `[N, F, 1]`, the layout every recurrent model eats.
pub fn table_to_sequences(table: &InstanceTable) -> Tensor {
    Tensor::from_vec(
        &[table.n_rows(), table.n_features(), 1],
        table.features().to_vec(),
    )
}

fn batch_tensor(table: &InstanceTable, indices: &[usize]) -> (Tensor, Vec<u8>) {
    let f = table.n_features();
    let mut data = Vec::with_capacity(indices.len() * f);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        data.extend_from_slice(table.row(i));
        labels.push(table.labels()[i]);
    }
    (Tensor::from_vec(&[indices.len(), f, 1], data), labels)
}

fn check_model_input(model: &Model, table: &InstanceTable) -> Result<(), NnError> {
    ensure(
        model.spec.input_steps == table.n_features() && model.spec.input_channels == 1,
        || {
            format!(
                "model expects [_, {}, {}] input, table has {} features",
                model.spec.input_steps,
                model.spec.input_channels,
                table.n_features()
            )
        },
    )
}

/// Sigmoid-output probabilities and thresholded labels (p >= 0.5 is 1),
/// evaluated in bounded batches.
pub fn predict_labels(model: &Model, table: &InstanceTable) -> Result<(Vec<u8>, Vec<f64>), NnError> {
    check_model_input(model, table)?;
    let mut probs = Vec::with_capacity(table.n_rows());
    let indices: Vec<usize> = (0..table.n_rows()).collect();
    for chunk in indices.chunks(512) {
        let (x, _) = batch_tensor(table, chunk);
        let out = model.forward(&x)?;
        probs.extend_from_slice(out.data());
    }
    let labels = probs.iter().map(|&p| u8::from(p >= 0.5)).collect();
    Ok((labels, probs))
}

/// Full-pass BCE loss and accuracy.
pub fn evaluate(model: &Model, table: &InstanceTable) -> Result<(f64, f64), NnError> {
    if table.n_rows() == 0 {
        return Err(NnError::EmptyTable);
    }
    let (pred, probs) = predict_labels(model, table)?;
    let p = Tensor::from_vec(&[probs.len()], probs);
    let loss = bce_loss(&p, table.labels())?;
    let correct = pred
        .iter()
        .zip(table.labels())
        .filter(|(a, b)| a == b)
        .count();
    Ok((loss, correct as f64 / table.n_rows() as f64))
}

/// Mini-batch Adam on binary cross-entropy with per-epoch seeded
/// reshuffling. Train metrics are the batch-size-weighted mean over the
/// epoch's steps; validation is a full pass at each epoch end.
pub fn train_supervised(
    model: &mut Model,
    train: &InstanceTable,
    val: &InstanceTable,
    cfg: &TrainConfig,
    clock: &dyn Clock,
) -> Result<TrainingHistory, NnError> {
    if train.n_rows() == 0 {
        return Err(NnError::EmptyTable);
    }
    check_model_input(model, train)?;
    assert!(cfg.epochs >= 1 && cfg.batch_size >= 1, "degenerate train config");

    let holdout;
    let (fit_table, val_table): (&InstanceTable, &InstanceTable) = match cfg.validation {
        Validation::TestSet => (train, val),
        Validation::Holdout(fraction) => {
            let pair = split_stratified(train, 1.0 - fraction, cfg.seed)
                .map_err(|_| NnError::EmptyTable)?;
            holdout = pair;
            (&holdout.train, &holdout.test)
        }
    };
    if val_table.n_rows() == 0 {
        return Err(NnError::EmptyTable);
    }

    let mut adam = AdamState::for_model(model, cfg.adam);
    let mut history = TrainingHistory::default();
    let mut indices: Vec<usize> = (0..fit_table.n_rows()).collect();
    for epoch in 1..=cfg.epochs {
        let started = clock.now_secs();
        let mut rng = stream(cfg.seed, purpose::SHUFFLE, epoch as u64);
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_idx, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            let (x, labels) = batch_tensor(fit_table, chunk);
            let (out, trace) = model.forward_trace(&x)?;
            let loss = bce_loss(&out, &labels)?;
            if !loss.is_finite() {
                return Err(NnError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += out
                .data()
                .iter()
                .zip(&labels)
                .filter(|&(&p, &y)| u8::from(p >= 0.5) == y)
                .count();
            let d_out = bce_grad(&out, &labels);
            let grads = model.backward(&x, &trace, &d_out)?;
            adam.step(model, &grads);
        }
        let (val_loss, val_acc) = evaluate(model, val_table)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / fit_table.n_rows() as f64,
            train_acc: correct as f64 / fit_table.n_rows() as f64,
            val_loss,
            val_acc,
            seconds: clock.now_secs() - started,
        });
    }
    Ok(history)
}

/// Self-supervised pretraining of the representation trunk by sequence
/// autoencoding: a temporary linear decoder reconstructs the flattened
/// input from the trunk state under MSE; the decoder is discarded and the
/// trunk is frozen in `model` afterward. Labels are never read. History
/// records the pretext loss (accuracy slots are zero).
pub fn pretrain_representation(
    model: &mut Model,
    rows: &InstanceTable,
    cfg: &TrainConfig,
    clock: &dyn Clock,
) -> Result<TrainingHistory, NnError> {
    if rows.n_rows() == 0 {
        return Err(NnError::EmptyTable);
    }
    check_model_input(model, rows)?;
    let trunk_idx = model
        .spec
        .node_by_name(TRUNK_NODE)
        .ok_or_else(|| NnError::ShapeMismatch(String::from("model has no representation trunk")))?;
    let LayerKind::Lstm { units, return_sequences } = model.spec.nodes[trunk_idx].kind else {
        return Err(NnError::ShapeMismatch(String::from(
            "representation trunk is not an LSTM",
        )));
    };

    // trunk + linear decoder back to the flattened input
    let steps = model.spec.input_steps;
    let channels = model.spec.input_channels;
    let mut pretext_spec = ModelSpec::new(steps, channels);
    let trunk = pretext_spec.add(
        TRUNK_NODE,
        LayerKind::Lstm {
            units,
            return_sequences,
        },
        vec![PortRef::Input],
    );
    pretext_spec.add(
        "decoder",
        LayerKind::Dense {
            units: steps * channels,
            activation: Activation::None,
        },
        vec![PortRef::Node(trunk)],
    );
    let mut pretext = Model::init(pretext_spec, cfg.seed)?;
    pretext.params[trunk] = model.params[trunk_idx].clone();

    let mut adam = AdamState::for_model(&pretext, cfg.adam);
    let mut history = TrainingHistory::default();
    let mut indices: Vec<usize> = (0..rows.n_rows()).collect();
    for epoch in 1..=cfg.epochs {
        let started = clock.now_secs();
        let mut rng = stream(cfg.seed, purpose::SHUFFLE, epoch as u64);
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            let (x, _) = batch_tensor(rows, chunk);
            let target = Tensor::from_vec(&[chunk.len(), steps * channels], x.data().to_vec());
            let (out, trace) = pretext.forward_trace(&x)?;
            let loss = mse_loss(&out, &target)?;
            if !loss.is_finite() {
                return Err(NnError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            loss_sum += loss * chunk.len() as f64;
            let d_out = mse_grad(&out, &target);
            let grads = pretext.backward(&x, &trace, &d_out)?;
            adam.step(&mut pretext, &grads);
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / rows.n_rows() as f64,
            train_acc: 0.0,
            val_loss: 0.0,
            val_acc: 0.0,
            seconds: clock.now_secs() - started,
        });
    }

    model.params[trunk_idx] = pretext.params[trunk].clone();
    model.set_trainable(trunk_idx, false);
    Ok(history)
}
