//! Adam optimizer with bias correction. One state slot per trainable
//! parameter, addressed in the model's deterministic parameter order.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::graph::{Model, ModelGrads};
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

struct Slot {
    node: usize,
    param: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// First/second moment buffers plus the step counter.
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    slots: Vec<Slot>,
}

impl AdamState {
    /// Allocate moment buffers for every currently-trainable parameter.
    pub fn for_model(model: &Model, config: AdamConfig) -> Self {
        let slots = model
            .trainable_params()
            .map(|(node, param, p)| Slot {
                node,
                param,
                m: vec![0.0; p.value.len()],
                v: vec![0.0; p.value.len()],
            })
            .collect();
        AdamState {
            config,
            step: 0,
            slots,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update:
    /// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`, bias-corrected,
    /// `theta <- theta - lr * m^ / (sqrt(v^) + eps)`.
    /// Frozen parameters are untouched; missing gradients count as zero.
    pub fn step(&mut self, model: &mut Model, grads: &ModelGrads) {
        self.step += 1;
        let t = self.step as f64;
        let c = self.config;
        let m_corr = 1.0 - math::powf(c.beta1, t);
        let v_corr = 1.0 - math::powf(c.beta2, t);
        for slot in &mut self.slots {
            let p = &mut model.params[slot.node][slot.param];
            if !p.trainable {
                continue;
            }
            let Some(g) = grads.per_node[slot.node][slot.param].as_ref() else {
                // no gradient this step; moments still decay
                for (m, v) in slot.m.iter_mut().zip(slot.v.iter_mut()) {
                    *m *= c.beta1;
                    *v *= c.beta2;
                }
                apply_update(p.value.data_mut(), &slot.m, &slot.v, c, m_corr, v_corr);
                continue;
            };
            for ((m, v), &gi) in slot.m.iter_mut().zip(slot.v.iter_mut()).zip(g.data()) {
                *m = c.beta1 * *m + (1.0 - c.beta1) * gi;
                *v = c.beta2 * *v + (1.0 - c.beta2) * gi * gi;
            }
            apply_update(p.value.data_mut(), &slot.m, &slot.v, c, m_corr, v_corr);
        }
    }
}

fn apply_update(theta: &mut [f64], m: &[f64], v: &[f64], c: AdamConfig, m_corr: f64, v_corr: f64) {
    for ((th, &mi), &vi) in theta.iter_mut().zip(m).zip(v) {
        let m_hat = mi / m_corr;
        let v_hat = vi / v_corr;
        *th -= c.learning_rate * m_hat / (math::sqrt(v_hat) + c.epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::{LayerKind, ModelSpec, PortRef};
    use crate::nn::layer::Activation;
    use crate::tensor::Tensor;
    use alloc::vec;

    /// flatten -> dense(1): two parameter tensors, easy to steer by hand.
    fn tiny_model() -> Model {
        let mut spec = ModelSpec::new(1, 1);
        let f = spec.add("flat", LayerKind::Flatten, vec![PortRef::Input]);
        spec.add(
            "out",
            LayerKind::Dense {
                units: 1,
                activation: Activation::None,
            },
            vec![PortRef::Node(f)],
        );
        Model::zeroed(spec).unwrap()
    }

    fn grads_of(model: &Model, w: f64, b: f64) -> ModelGrads {
        let mut per_node: Vec<Vec<Option<Tensor>>> =
            model.params.iter().map(|ps| vec![None; ps.len()]).collect();
        per_node[1][0] = Some(Tensor::from_vec(&[1, 1], vec![w]));
        per_node[1][1] = Some(Tensor::from_vec(&[1], vec![b]));
        ModelGrads { per_node }
    }

    #[test]
    fn zero_gradient_leaves_weights_put_but_counts_the_step() {
        let mut model = tiny_model();
        let mut adam = AdamState::for_model(&model, AdamConfig::default());
        let g = grads_of(&model, 0.0, 0.0);
        adam.step(&mut model, &g);
        assert_eq!(adam.step_count(), 1);
        assert_eq!(model.params[1][0].value.data(), &[0.0]);
        assert_eq!(model.params[1][1].value.data(), &[0.0]);
    }

    #[test]
    fn first_step_on_unit_gradient_is_minus_lr_over_one_plus_eps() {
        let mut model = tiny_model();
        let cfg = AdamConfig::default();
        let mut adam = AdamState::for_model(&model, cfg);
        let g = grads_of(&model, 1.0, 0.0);
        adam.step(&mut model, &g);
        let expected = -cfg.learning_rate / (1.0 + cfg.epsilon);
        let got = model.params[1][0].value.data()[0];
        assert!((got - expected).abs() < 1e-18, "{got} vs {expected}");
    }

    #[test]
    fn frozen_parameters_are_bit_identical_after_steps() {
        let mut model = tiny_model();
        model.params[1][0].value.data_mut()[0] = 0.123456789;
        model.set_trainable(1, false);
        let mut adam = AdamState::for_model(&model, AdamConfig::default());
        let before = model.params[1][0].value.data()[0].to_bits();
        let g1 = grads_of(&model, 1.0, 1.0);
        adam.step(&mut model, &g1);
        let g2 = grads_of(&model, -3.0, 2.0);
        adam.step(&mut model, &g2);
        assert_eq!(model.params[1][0].value.data()[0].to_bits(), before);
        assert_eq!(model.params[1][1].value.data()[0], 0.0);
    }
}
