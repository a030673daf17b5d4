//! Central-difference gradient checking against the hand-written adjoints.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::graph::{Model, ModelGrads};
use super::loss::{bce_grad, bce_loss, mse_grad, mse_loss};
use crate::math;
use crate::rng::{purpose, stream};
use crate::tensor::Tensor;

/// Loss to differentiate during a check.
pub enum LossTarget<'a> {
    Bce(&'a [u8]),
    Mse(&'a Tensor),
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Pass threshold on the max relative error.
    pub tolerance: f64,
    /// Coordinates checked per parameter tensor; `None` checks all of them.
    pub samples_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-6,
            samples_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `name[index]` of the worst coordinate.
    pub worst: String,
    pub coords_checked: usize,
    pub pass: bool,
}

/// Relative error with a floor on the denominator so coordinates where both
/// sides are at finite-difference noise level do not dominate. A sign flip
/// of a healthy gradient scores ~2.
fn rel_error(a: f64, b: f64) -> f64 {
    let denom = math::abs(a).max(math::abs(b)).max(1e-4);
    math::abs(a - b) / denom
}

fn eval_loss(model: &Model, x: &Tensor, target: &LossTarget) -> f64 {
    let out = model.forward(x).expect("forward in gradient check");
    match target {
        LossTarget::Bce(labels) => bce_loss(&out, labels).expect("bce in gradient check"),
        LossTarget::Mse(t) => mse_loss(&out, t).expect("mse in gradient check"),
    }
}

/// Analytic gradients of the loss for every trainable parameter.
pub fn analytic_grads(model: &Model, x: &Tensor, target: &LossTarget) -> ModelGrads {
    let (out, trace) = model.forward_trace(x).expect("forward in gradient check");
    let d_out = match target {
        LossTarget::Bce(labels) => bce_grad(&out, labels),
        LossTarget::Mse(t) => mse_grad(&out, t),
    };
    model.backward(x, &trace, &d_out).expect("backward in gradient check")
}

/// Compare the hand-written adjoints against central finite differences.
/// Frozen parameters are excluded. With `samples_per_tensor` set, a seeded
/// subset of coordinates per tensor is checked instead of all of them.
pub fn grad_check(
    model: &mut Model,
    x: &Tensor,
    target: &LossTarget,
    cfg: &GradCheckConfig,
) -> GradCheckReport {
    let grads = analytic_grads(model, x, target);
    compare_to_fd(model, x, target, &grads, cfg)
}

/// Finite-difference comparison for externally supplied gradients. Split
/// out so tests can feed deliberately corrupted gradients through the same
/// reporting path.
pub fn compare_to_fd(
    model: &mut Model,
    x: &Tensor,
    target: &LossTarget,
    grads: &ModelGrads,
    cfg: &GradCheckConfig,
) -> GradCheckReport {
    let mut rng = stream(cfg.seed, purpose::GRADCHECK, 0);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        coords_checked: 0,
        pass: true,
    };
    let n_nodes = model.params.len();
    for node in 0..n_nodes {
        for p_idx in 0..model.params[node].len() {
            if !model.params[node][p_idx].trainable {
                continue;
            }
            let len = model.params[node][p_idx].value.len();
            let coords: Vec<usize> = match cfg.samples_per_tensor {
                Some(k) if k < len => (0..k).map(|_| rng.gen_range(0..len)).collect(),
                _ => (0..len).collect(),
            };
            for c in coords {
                let orig = model.params[node][p_idx].value.data()[c];
                model.params[node][p_idx].value.data_mut()[c] = orig + cfg.step;
                let up = eval_loss(model, x, target);
                model.params[node][p_idx].value.data_mut()[c] = orig - cfg.step;
                let down = eval_loss(model, x, target);
                model.params[node][p_idx].value.data_mut()[c] = orig;
                let numeric = (up - down) / (2.0 * cfg.step);
                let analytic = grads.per_node[node][p_idx]
                    .as_ref()
                    .map(|g| g.data()[c])
                    .unwrap_or(0.0);
                let err = rel_error(analytic, numeric);
                report.coords_checked += 1;
                if err > report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst = format!("{}[{c}]", model.params[node][p_idx].name);
                }
            }
        }
    }
    report.pass = report.max_rel_error <= cfg.tolerance;
    report
}
