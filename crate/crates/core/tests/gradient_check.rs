//! Finite-difference validation of every layer adjoint and of the full
//! LSTM-GRU hybrid graph.

use ssrepl_core::models::build_ssrepl_adhd;
use ssrepl_core::nn::gradcheck::{analytic_grads, compare_to_fd, LossTarget};
use ssrepl_core::nn::{
    grad_check, Activation, GradCheckConfig, LayerKind, Model, ModelSpec, PortRef,
};
use ssrepl_core::rng::{next_normal, purpose, stream};
use ssrepl_core::tensor::Tensor;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = stream(seed, purpose::GRADCHECK, 99);
    let data = (0..shape.iter().product::<usize>())
        .map(|_| next_normal(&mut rng) * 0.8)
        .collect();
    Tensor::from_vec(shape, data)
}

fn labels(n: usize, seed: u64) -> Vec<u8> {
    let mut rng = stream(seed, purpose::GRADCHECK, 7);
    use rand::Rng;
    (0..n).map(|_| rng.gen_range(0..2) as u8).collect()
}

fn check_exhaustive(model: &mut Model, batch: usize, seed: u64) -> f64 {
    let x = random(&[batch, model.spec.input_steps, model.spec.input_channels], seed);
    let y = labels(batch, seed);
    let report = grad_check(model, &x, &LossTarget::Bce(&y), &GradCheckConfig::default());
    assert!(
        report.pass,
        "max rel error {} at {}",
        report.max_rel_error, report.worst
    );
    report.max_rel_error
}

fn sigmoid_head(spec: &mut ModelSpec, input: usize) {
    spec.add(
        "out",
        LayerKind::Dense {
            units: 1,
            activation: Activation::Sigmoid,
        },
        vec![PortRef::Node(input)],
    );
}

#[test]
fn dense_layers_match_finite_differences() {
    let mut spec = ModelSpec::new(3, 2);
    let f = spec.add("flat", LayerKind::Flatten, vec![PortRef::Input]);
    let d = spec.add(
        "hidden",
        LayerKind::Dense {
            units: 5,
            activation: Activation::Relu,
        },
        vec![PortRef::Node(f)],
    );
    let d2 = spec.add(
        "hidden2",
        LayerKind::Dense {
            units: 4,
            activation: Activation::Sigmoid,
        },
        vec![PortRef::Node(d)],
    );
    sigmoid_head(&mut spec, d2);
    let mut model = Model::init(spec, 42).unwrap();
    check_exhaustive(&mut model, 4, 1);
}

#[test]
fn lstm_matches_finite_differences() {
    for (seed, return_sequences) in [(2u64, false), (3u64, true)] {
        let mut spec = ModelSpec::new(4, 3);
        let l = spec.add(
            "lstm",
            LayerKind::Lstm {
                units: 3,
                return_sequences,
            },
            vec![PortRef::Input],
        );
        let tail = if return_sequences {
            spec.add("flat", LayerKind::Flatten, vec![PortRef::Node(l)])
        } else {
            l
        };
        sigmoid_head(&mut spec, tail);
        let mut model = Model::init(spec, seed).unwrap();
        check_exhaustive(&mut model, 3, seed);
    }
}

#[test]
fn gru_matches_finite_differences() {
    for (seed, return_sequences) in [(4u64, false), (5u64, true)] {
        let mut spec = ModelSpec::new(4, 3);
        let g = spec.add(
            "gru",
            LayerKind::Gru {
                units: 3,
                return_sequences,
            },
            vec![PortRef::Input],
        );
        let tail = if return_sequences {
            spec.add("flat", LayerKind::Flatten, vec![PortRef::Node(g)])
        } else {
            g
        };
        sigmoid_head(&mut spec, tail);
        let mut model = Model::init(spec, seed).unwrap();
        check_exhaustive(&mut model, 3, seed);
    }
}

#[test]
fn time_distributed_matches_finite_differences() {
    let mut spec = ModelSpec::new(5, 2);
    let td = spec.add(
        "td",
        LayerKind::TimeDistributedDense {
            units: 3,
            activation: Activation::Relu,
        },
        vec![PortRef::Input],
    );
    let f = spec.add("flat", LayerKind::Flatten, vec![PortRef::Node(td)]);
    sigmoid_head(&mut spec, f);
    let mut model = Model::init(spec, 6).unwrap();
    check_exhaustive(&mut model, 4, 6);
}

#[test]
fn concat_and_flatten_match_finite_differences() {
    let mut spec = ModelSpec::new(4, 2);
    let l = spec.add(
        "lstm",
        LayerKind::Lstm {
            units: 2,
            return_sequences: true,
        },
        vec![PortRef::Input],
    );
    let g = spec.add(
        "gru",
        LayerKind::Gru {
            units: 3,
            return_sequences: true,
        },
        vec![PortRef::Input],
    );
    let c = spec.add(
        "concat",
        LayerKind::Concat,
        vec![PortRef::Node(l), PortRef::Node(g)],
    );
    let f = spec.add("flat", LayerKind::Flatten, vec![PortRef::Node(c)]);
    sigmoid_head(&mut spec, f);
    let mut model = Model::init(spec, 7).unwrap();
    check_exhaustive(&mut model, 3, 7);
}

#[test]
fn mse_decoder_matches_finite_differences() {
    let mut spec = ModelSpec::new(4, 1);
    let l = spec.add(
        "trunk",
        LayerKind::Lstm {
            units: 3,
            return_sequences: false,
        },
        vec![PortRef::Input],
    );
    spec.add(
        "decoder",
        LayerKind::Dense {
            units: 4,
            activation: Activation::None,
        },
        vec![PortRef::Node(l)],
    );
    let mut model = Model::init(spec, 8).unwrap();
    let x = random(&[3, 4, 1], 8);
    let target = Tensor::from_vec(&[3, 4], x.data().to_vec());
    let report = grad_check(
        &mut model,
        &x,
        &LossTarget::Mse(&target),
        &GradCheckConfig::default(),
    );
    assert!(report.pass, "max rel error {}", report.max_rel_error);
}

/// The full hybrid graph at batch 2 against sampled finite differences.
#[test]
fn full_hybrid_graph_matches_finite_differences() {
    let mut model = Model::init(build_ssrepl_adhd(19), 42).unwrap();
    let x = random(&[2, 19, 1], 20);
    let y = labels(2, 20);
    let cfg = GradCheckConfig {
        tolerance: 1e-4,
        samples_per_tensor: Some(24),
        seed: 11,
        ..GradCheckConfig::default()
    };
    let report = grad_check(&mut model, &x, &LossTarget::Bce(&y), &cfg);
    assert!(
        report.pass,
        "max rel error {} at {} over {} coords",
        report.max_rel_error, report.worst, report.coords_checked
    );
}

#[test]
fn sign_flipped_gradients_score_around_two() {
    let mut spec = ModelSpec::new(2, 2);
    let f = spec.add("flat", LayerKind::Flatten, vec![PortRef::Input]);
    let d = spec.add(
        "hidden",
        LayerKind::Dense {
            units: 3,
            activation: Activation::Sigmoid,
        },
        vec![PortRef::Node(f)],
    );
    sigmoid_head(&mut spec, d);
    let mut model = Model::init(spec, 9).unwrap();
    let x = random(&[4, 2, 2], 9);
    let y = labels(4, 9);
    let target = LossTarget::Bce(&y);
    let mut grads = analytic_grads(&model, &x, &target);
    for node in &mut grads.per_node {
        for g in node.iter_mut().flatten() {
            for v in g.data_mut() {
                *v = -*v;
            }
        }
    }
    let report = compare_to_fd(&mut model, &x, &target, &grads, &GradCheckConfig::default());
    assert!(!report.pass);
    assert!(
        (1.5..=2.5).contains(&report.max_rel_error),
        "expected ~2, got {}",
        report.max_rel_error
    );
}

#[test]
fn frozen_parameters_are_excluded_from_the_report() {
    let mut spec = ModelSpec::new(3, 1);
    let l = spec.add(
        "trunk",
        LayerKind::Lstm {
            units: 2,
            return_sequences: false,
        },
        vec![PortRef::Input],
    );
    let d = spec.add(
        "head",
        LayerKind::Dense {
            units: 2,
            activation: Activation::Relu,
        },
        vec![PortRef::Node(l)],
    );
    sigmoid_head(&mut spec, d);
    let mut model = Model::init(spec, 10).unwrap();
    model.set_trainable(0, false);
    let head_param_count: usize = model
        .params
        .iter()
        .flatten()
        .filter(|p| p.trainable)
        .map(|p| p.value.len())
        .sum();
    let x = random(&[3, 3, 1], 10);
    let y = labels(3, 10);
    let report = grad_check(
        &mut model,
        &x,
        &LossTarget::Bce(&y),
        &GradCheckConfig::default(),
    );
    assert!(report.pass, "max rel error {}", report.max_rel_error);
    assert_eq!(report.coords_checked, head_param_count);
    assert!(!report.worst.starts_with("trunk"));
}
