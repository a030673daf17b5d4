//! Neural toolkit: layer kernels with hand-written adjoints, a small layer
//! DAG, BCE/MSE losses, Adam, and a finite-difference gradient checker.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod layer;
pub mod loss;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use graph::{LayerKind, LayerNode, Model, ModelGrads, ModelSpec, PortRef};
pub use layer::{
    concat_features, dense_apply, flatten_seq, gru_apply, lstm_apply, time_distributed_dense,
    Activation, Parameter,
};
pub use loss::{bce_loss, mse_loss, Loss};

use alloc::string::String;
use core::fmt;

/// Errors shared by the layer ops, graph execution and training loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NnError {
    ShapeMismatch(String),
    NonFiniteActivation { layer: &'static str },
    NonFiniteLoss { epoch: usize, batch: usize },
    GraphCycle { node: usize },
    EmptyTable,
}

impl fmt::Display for NnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NnError::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            NnError::NonFiniteActivation { layer } => {
                write!(f, "non-finite activation in {layer} layer")
            }
            NnError::NonFiniteLoss { epoch, batch } => {
                write!(f, "non-finite loss at epoch {epoch}, batch {batch}")
            }
            NnError::GraphCycle { node } => {
                write!(f, "layer graph is not topologically ordered at node {node}")
            }
            NnError::EmptyTable => write!(f, "empty table"),
        }
    }
}

impl core::error::Error for NnError {}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), NnError> {
    if cond {
        Ok(())
    } else {
        Err(NnError::ShapeMismatch(msg()))
    }
}
