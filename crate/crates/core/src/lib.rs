//! Core toolkit for EEG instance-table classification.
//!
//! Everything in this crate is pure computation over owned buffers: tensors
//! and recurrent layers with hand-written adjoints, Adam, a CART random
//! forest, SMOTE balancing, preprocessing, synthetic data generation and
//! weighted evaluation metrics. There is no IO here — file formats, the CLI
//! and parallel drivers live in the companion `ssrepl-pipeline` crate, which
//! keeps this crate `no_std` (with `alloc`).
//!
//! Determinism is a design requirement throughout: every stochastic
//! component draws from its own seeded substream (see [`rng`]), so identical
//! seeds give bit-identical models, splits and synthetic rows.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

mod math;

pub mod balance;
pub mod dataset;
pub mod forest;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod preprocess;
pub mod rng;
pub mod tensor;

pub use dataset::{assemble, split_stratified, Group, InstanceTable, Recording, SplitPair};
pub use metrics::{confusion_matrix, weighted_report, MetricsReport};
pub use tensor::Tensor;
