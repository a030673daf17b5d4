//! Layer DAG: specification, parameter storage, forward trace and reverse
//! pass. Nodes are stored in topological order (inputs may only reference
//! earlier nodes or the model input); the last node is the output.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::init;
use super::layer::{
    concat_backward, concat_features, dense_backward, dense_forward, flatten_seq, gru_backward,
    gru_forward, lstm_backward, lstm_forward, Activation, Parameter, RecurrentCache,
};
use super::{ensure, NnError};
use crate::rng::{purpose, stream};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PortRef {
    Input,
    Node(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LayerKind {
    Dense { units: usize, activation: Activation },
    Lstm { units: usize, return_sequences: bool },
    Gru { units: usize, return_sequences: bool },
    TimeDistributedDense { units: usize, activation: Activation },
    Flatten,
    Concat,
}

#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct LayerNode {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<PortRef>,
    pub trainable: bool,
}

/// Non-batch shape of a value flowing through the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureShape {
    Seq { steps: usize, width: usize },
    Flat { width: usize },
}

#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ModelSpec {
    pub input_steps: usize,
    pub input_channels: usize,
    pub nodes: Vec<LayerNode>,
}

impl ModelSpec {
    pub fn new(input_steps: usize, input_channels: usize) -> Self {
        ModelSpec {
            input_steps,
            input_channels,
            nodes: Vec::new(),
        }
    }

    /// Append a node; returns its index.
    pub fn add(
        &mut self,
        name: impl Into<String>,
        kind: LayerKind,
        inputs: Vec<PortRef>,
    ) -> usize {
        self.nodes.push(LayerNode {
            name: name.into(),
            kind,
            inputs,
            trainable: true,
        });
        self.nodes.len() - 1
    }

    pub fn node_by_name(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Check topological ordering (a forward reference or self reference is
    /// reported as a cycle) and run shape inference.
    pub fn validate(&self) -> Result<Vec<FeatureShape>, NnError> {
        ensure(!self.nodes.is_empty(), || "model has no layers".into())?;
        ensure(self.input_steps > 0 && self.input_channels > 0, || {
            "input shape must be positive".into()
        })?;
        for (i, node) in self.nodes.iter().enumerate() {
            for port in &node.inputs {
                if let PortRef::Node(j) = port {
                    if *j >= i {
                        return Err(NnError::GraphCycle { node: i });
                    }
                }
            }
        }
        self.infer_shapes()
    }

    /// Output shape of every node, batch dimension excluded.
    pub fn infer_shapes(&self) -> Result<Vec<FeatureShape>, NnError> {
        let input = FeatureShape::Seq {
            steps: self.input_steps,
            width: self.input_channels,
        };
        let mut shapes: Vec<FeatureShape> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let ins: Vec<FeatureShape> = node
                .inputs
                .iter()
                .map(|p| match p {
                    PortRef::Input => Ok(input),
                    PortRef::Node(j) if *j < i => Ok(shapes[*j]),
                    PortRef::Node(_) => Err(NnError::GraphCycle { node: i }),
                })
                .collect::<Result<_, _>>()?;
            let arity_one = ins.len() == 1;
            let shape = match node.kind {
                LayerKind::Dense { units, .. } => {
                    ensure(arity_one, || format!("{}: dense takes one input", node.name))?;
                    match ins[0] {
                        FeatureShape::Flat { .. } => FeatureShape::Flat { width: units },
                        FeatureShape::Seq { .. } => {
                            return Err(NnError::ShapeMismatch(format!(
                                "{}: dense expects a flat input",
                                node.name
                            )))
                        }
                    }
                }
                LayerKind::Lstm {
                    units,
                    return_sequences,
                }
                | LayerKind::Gru {
                    units,
                    return_sequences,
                } => {
                    ensure(arity_one, || {
                        format!("{}: recurrent layer takes one input", node.name)
                    })?;
                    match ins[0] {
                        FeatureShape::Seq { steps, .. } => {
                            if return_sequences {
                                FeatureShape::Seq {
                                    steps,
                                    width: units,
                                }
                            } else {
                                FeatureShape::Flat { width: units }
                            }
                        }
                        FeatureShape::Flat { .. } => {
                            return Err(NnError::ShapeMismatch(format!(
                                "{}: recurrent layer expects a sequence input",
                                node.name
                            )))
                        }
                    }
                }
                LayerKind::TimeDistributedDense { units, .. } => {
                    ensure(arity_one, || {
                        format!("{}: time-distributed dense takes one input", node.name)
                    })?;
                    match ins[0] {
                        FeatureShape::Seq { steps, .. } => FeatureShape::Seq {
                            steps,
                            width: units,
                        },
                        FeatureShape::Flat { .. } => {
                            return Err(NnError::ShapeMismatch(format!(
                                "{}: time-distributed dense expects a sequence input",
                                node.name
                            )))
                        }
                    }
                }
                LayerKind::Flatten => {
                    ensure(arity_one, || format!("{}: flatten takes one input", node.name))?;
                    match ins[0] {
                        FeatureShape::Seq { steps, width } => FeatureShape::Flat {
                            width: steps * width,
                        },
                        FeatureShape::Flat { width } => FeatureShape::Flat { width },
                    }
                }
                LayerKind::Concat => {
                    ensure(ins.len() >= 2, || {
                        format!("{}: concat takes at least two inputs", node.name)
                    })?;
                    match ins[0] {
                        FeatureShape::Seq { steps, .. } => {
                            let mut total = 0;
                            for s in &ins {
                                match s {
                                    FeatureShape::Seq { steps: t, width } if *t == steps => {
                                        total += width
                                    }
                                    _ => {
                                        return Err(NnError::ShapeMismatch(format!(
                                            "{}: concat inputs disagree on steps",
                                            node.name
                                        )))
                                    }
                                }
                            }
                            FeatureShape::Seq {
                                steps,
                                width: total,
                            }
                        }
                        FeatureShape::Flat { .. } => {
                            let mut total = 0;
                            for s in &ins {
                                match s {
                                    FeatureShape::Flat { width } => total += width,
                                    _ => {
                                        return Err(NnError::ShapeMismatch(format!(
                                            "{}: concat inputs mix flat and sequence",
                                            node.name
                                        )))
                                    }
                                }
                            }
                            FeatureShape::Flat { width: total }
                        }
                    }
                }
            };
            shapes.push(shape);
        }
        Ok(shapes)
    }

    /// Parameter tensor shapes per node: `(name, shape)` lists.
    pub fn param_shapes(&self) -> Result<Vec<Vec<(String, Vec<usize>)>>, NnError> {
        let shapes = self.infer_shapes()?;
        let input = FeatureShape::Seq {
            steps: self.input_steps,
            width: self.input_channels,
        };
        let width_of = |s: &FeatureShape| match s {
            FeatureShape::Seq { width, .. } | FeatureShape::Flat { width } => *width,
        };
        let mut out = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let in_width = node
                .inputs
                .first()
                .map(|p| match p {
                    PortRef::Input => width_of(&input),
                    PortRef::Node(j) => width_of(&shapes[*j]),
                })
                .unwrap_or(0);
            let name = &node.name;
            let params = match node.kind {
                LayerKind::Dense { units, .. } | LayerKind::TimeDistributedDense { units, .. } => {
                    vec![
                        (format!("{name}.w"), vec![in_width, units]),
                        (format!("{name}.b"), vec![units]),
                    ]
                }
                LayerKind::Lstm { units, .. } => vec![
                    (format!("{name}.w"), vec![in_width, 4 * units]),
                    (format!("{name}.u"), vec![units, 4 * units]),
                    (format!("{name}.b"), vec![4 * units]),
                ],
                LayerKind::Gru { units, .. } => vec![
                    (format!("{name}.w"), vec![in_width, 3 * units]),
                    (format!("{name}.u"), vec![units, 3 * units]),
                    (format!("{name}.b"), vec![3 * units]),
                ],
                LayerKind::Flatten | LayerKind::Concat => Vec::new(),
            };
            out.push(params);
        }
        Ok(out)
    }

    /// Total trainable parameter count.
    pub fn trainable_param_count(&self) -> Result<usize, NnError> {
        let shapes = self.param_shapes()?;
        Ok(self
            .nodes
            .iter()
            .zip(&shapes)
            .filter(|(n, _)| n.trainable)
            .flat_map(|(_, ps)| ps.iter())
            .map(|(_, shape)| shape.iter().product::<usize>())
            .sum())
    }
}

/// Forward-pass record: every node's output plus the recurrent caches.
pub struct Trace {
    pub values: Vec<Tensor>,
    caches: Vec<Option<RecurrentCache>>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.values.last().expect("non-empty graph")
    }
}

/// Per-node, per-parameter gradients; `None` for frozen parameters.
pub struct ModelGrads {
    pub per_node: Vec<Vec<Option<Tensor>>>,
}

/// A spec plus its parameter tensors.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: Vec<Vec<Parameter>>,
}

impl Model {
    /// Validate the spec and initialize parameters from a per-node seeded
    /// stream: Glorot-uniform input kernels, orthogonal recurrent kernels,
    /// zero biases (LSTM forget gate at one).
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Model, NnError> {
        spec.validate()?;
        let shapes = spec.param_shapes()?;
        let mut params = Vec::with_capacity(spec.nodes.len());
        for (i, (node, node_shapes)) in spec.nodes.iter().zip(&shapes).enumerate() {
            let mut rng = stream(seed, purpose::INIT, i as u64);
            let mut ps = Vec::with_capacity(node_shapes.len());
            match node.kind {
                LayerKind::Dense { units, .. } | LayerKind::TimeDistributedDense { units, .. } => {
                    let in_width = node_shapes[0].1[0];
                    ps.push(Parameter::new(
                        node_shapes[0].0.clone(),
                        init::glorot_uniform(&mut rng, in_width, units),
                    ));
                    ps.push(Parameter::new(node_shapes[1].0.clone(), init::bias(units, None)));
                }
                LayerKind::Lstm { units, .. } => {
                    let in_width = node_shapes[0].1[0];
                    ps.push(Parameter::new(
                        node_shapes[0].0.clone(),
                        init::glorot_uniform(&mut rng, in_width, 4 * units),
                    ));
                    ps.push(Parameter::new(
                        node_shapes[1].0.clone(),
                        init::orthogonal(&mut rng, units, 4 * units),
                    ));
                    ps.push(Parameter::new(
                        node_shapes[2].0.clone(),
                        init::bias(4 * units, Some(units)),
                    ));
                }
                LayerKind::Gru { units, .. } => {
                    let in_width = node_shapes[0].1[0];
                    ps.push(Parameter::new(
                        node_shapes[0].0.clone(),
                        init::glorot_uniform(&mut rng, in_width, 3 * units),
                    ));
                    ps.push(Parameter::new(
                        node_shapes[1].0.clone(),
                        init::orthogonal(&mut rng, units, 3 * units),
                    ));
                    ps.push(Parameter::new(
                        node_shapes[2].0.clone(),
                        init::bias(3 * units, None),
                    ));
                }
                LayerKind::Flatten | LayerKind::Concat => {}
            }
            for p in &mut ps {
                p.trainable = node.trainable;
            }
            params.push(ps);
        }
        Ok(Model { spec, params })
    }

    /// All-zero parameters; useful for fixed-point tests.
    pub fn zeroed(spec: ModelSpec) -> Result<Model, NnError> {
        let mut model = Model::init(spec, 0)?;
        for node in &mut model.params {
            for p in node {
                p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok(model)
    }

    /// Mark one node (and its parameters) trainable or frozen.
    pub fn set_trainable(&mut self, node: usize, trainable: bool) {
        self.spec.nodes[node].trainable = trainable;
        for p in &mut self.params[node] {
            p.trainable = trainable;
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let (out, _) = self.forward_trace(x)?;
        Ok(out)
    }

    /// Run the graph, recording every node output and recurrent cache.
    pub fn forward_trace(&self, x: &Tensor) -> Result<(Tensor, Trace), NnError> {
        ensure(
            x.rank() == 3
                && x.shape()[1] == self.spec.input_steps
                && x.shape()[2] == self.spec.input_channels,
            || {
                format!(
                    "model input must be [batch, {}, {}], got {:?}",
                    self.spec.input_steps,
                    self.spec.input_channels,
                    x.shape()
                )
            },
        )?;
        let mut values: Vec<Tensor> = Vec::with_capacity(self.spec.nodes.len());
        let mut caches: Vec<Option<RecurrentCache>> = Vec::with_capacity(self.spec.nodes.len());
        for (i, node) in self.spec.nodes.iter().enumerate() {
            let resolve = |p: &PortRef| -> &Tensor {
                match p {
                    PortRef::Input => x,
                    PortRef::Node(j) => &values[*j],
                }
            };
            let ps = &self.params[i];
            let (value, cache) = match node.kind {
                LayerKind::Dense { activation, .. } => {
                    let xin = resolve(&node.inputs[0]);
                    let (b_, i_) = (xin.shape()[0], xin.shape()[1]);
                    let o_ = ps[0].value.shape()[1];
                    (
                        dense_forward(xin, &ps[0].value, &ps[1].value, activation, b_, i_, o_),
                        None,
                    )
                }
                LayerKind::TimeDistributedDense { activation, .. } => {
                    let xin = resolve(&node.inputs[0]);
                    let (b_, t_, i_) = (xin.shape()[0], xin.shape()[1], xin.shape()[2]);
                    let o_ = ps[0].value.shape()[1];
                    let flat = Tensor::from_vec(&[b_ * t_, i_], xin.data().to_vec());
                    let y = dense_forward(&flat, &ps[0].value, &ps[1].value, activation, b_ * t_, i_, o_);
                    (y.reshaped(&[b_, t_, o_]), None)
                }
                LayerKind::Lstm {
                    return_sequences, ..
                } => {
                    let xin = resolve(&node.inputs[0]);
                    let (y, c) =
                        lstm_forward(xin, &ps[0].value, &ps[1].value, &ps[2].value, return_sequences)?;
                    (y, Some(c))
                }
                LayerKind::Gru {
                    return_sequences, ..
                } => {
                    let xin = resolve(&node.inputs[0]);
                    let (y, c) =
                        gru_forward(xin, &ps[0].value, &ps[1].value, &ps[2].value, return_sequences)?;
                    (y, Some(c))
                }
                LayerKind::Flatten => (flatten_seq(resolve(&node.inputs[0]))?, None),
                LayerKind::Concat => {
                    let ins: Vec<&Tensor> = node.inputs.iter().map(resolve).collect();
                    (concat_features(&ins)?, None)
                }
            };
            values.push(value);
            caches.push(cache);
        }
        let out = values.last().expect("non-empty graph").clone();
        Ok((out, Trace { values, caches }))
    }

    /// Reverse pass from `d_out` (gradient of the loss in the output).
    /// Frozen parameters get `None`; gradient still flows through them to
    /// earlier layers.
    pub fn backward(&self, x: &Tensor, trace: &Trace, d_out: &Tensor) -> Result<ModelGrads, NnError> {
        ensure(d_out.shape() == trace.output().shape(), || {
            format!(
                "output gradient shape {:?} != output shape {:?}",
                d_out.shape(),
                trace.output().shape()
            )
        })?;
        let n = self.spec.nodes.len();
        let mut d_values: Vec<Option<Tensor>> = vec![None; n];
        d_values[n - 1] = Some(d_out.clone());
        let mut grads: Vec<Vec<Option<Tensor>>> = self
            .params
            .iter()
            .map(|ps| vec![None; ps.len()])
            .collect();

        for i in (0..n).rev() {
            let dy = match d_values[i].take() {
                Some(d) => d,
                None => continue, // node does not reach the output
            };
            let node = &self.spec.nodes[i];
            let ps = &self.params[i];
            let value_of = |p: &PortRef| -> &Tensor {
                match p {
                    PortRef::Input => x,
                    PortRef::Node(j) => &trace.values[*j],
                }
            };
            let mut d_inputs: Vec<Tensor> = Vec::with_capacity(node.inputs.len());
            let mut d_params: Vec<Tensor> = Vec::new();
            match node.kind {
                LayerKind::Dense { activation, .. } => {
                    let xin = value_of(&node.inputs[0]);
                    let (dx, dw, db) =
                        dense_backward(xin, &ps[0].value, activation, &trace.values[i], &dy);
                    d_inputs.push(dx);
                    d_params.push(dw);
                    d_params.push(db);
                }
                LayerKind::TimeDistributedDense { activation, .. } => {
                    let xin = value_of(&node.inputs[0]);
                    let (b_, t_, i_) = (xin.shape()[0], xin.shape()[1], xin.shape()[2]);
                    let o_ = ps[0].value.shape()[1];
                    let flat_x = Tensor::from_vec(&[b_ * t_, i_], xin.data().to_vec());
                    let flat_y = Tensor::from_vec(&[b_ * t_, o_], trace.values[i].data().to_vec());
                    let flat_dy = Tensor::from_vec(&[b_ * t_, o_], dy.data().to_vec());
                    let (dx, dw, db) =
                        dense_backward(&flat_x, &ps[0].value, activation, &flat_y, &flat_dy);
                    d_inputs.push(dx.reshaped(&[b_, t_, i_]));
                    d_params.push(dw);
                    d_params.push(db);
                }
                LayerKind::Lstm {
                    return_sequences, ..
                } => {
                    let xin = value_of(&node.inputs[0]);
                    let cache = trace.caches[i].as_ref().expect("lstm cache");
                    let (dx, dw, du, db) =
                        lstm_backward(xin, &ps[0].value, &ps[1].value, cache, return_sequences, &dy);
                    d_inputs.push(dx);
                    d_params.extend([dw, du, db]);
                }
                LayerKind::Gru {
                    return_sequences, ..
                } => {
                    let xin = value_of(&node.inputs[0]);
                    let cache = trace.caches[i].as_ref().expect("gru cache");
                    let (dx, dw, du, db) =
                        gru_backward(xin, &ps[0].value, &ps[1].value, cache, return_sequences, &dy);
                    d_inputs.push(dx);
                    d_params.extend([dw, du, db]);
                }
                LayerKind::Flatten => {
                    let xin = value_of(&node.inputs[0]);
                    d_inputs.push(dy.clone().reshaped(xin.shape()));
                }
                LayerKind::Concat => {
                    let widths: Vec<usize> = node
                        .inputs
                        .iter()
                        .map(|p| *value_of(p).shape().last().expect("non-scalar"))
                        .collect();
                    d_inputs = concat_backward(&dy, &widths);
                }
            }
            for (p_idx, dp) in d_params.into_iter().enumerate() {
                if ps[p_idx].trainable {
                    grads[i][p_idx] = Some(dp);
                }
            }
            for (port, dx) in node.inputs.iter().zip(d_inputs) {
                if let PortRef::Node(j) = port {
                    accumulate(&mut d_values[*j], dx);
                }
            }
        }
        Ok(ModelGrads { per_node: grads })
    }

    /// Deterministic iteration over trainable parameters (node order, then
    /// parameter order). The optimizer and checkpoint writer both rely on it.
    pub fn trainable_params(&self) -> impl Iterator<Item = (usize, usize, &Parameter)> {
        self.params.iter().enumerate().flat_map(|(ni, ps)| {
            ps.iter()
                .enumerate()
                .filter(|(_, p)| p.trainable)
                .map(move |(pi, p)| (ni, pi, p))
        })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        None => *slot = Some(g),
        Some(t) => {
            for (a, &b) in t.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NnError;

    #[test]
    fn forward_reference_is_reported_as_a_cycle() {
        let mut spec = ModelSpec::new(2, 1);
        spec.add(
            "late",
            LayerKind::Lstm {
                units: 2,
                return_sequences: false,
            },
            vec![PortRef::Node(1)],
        );
        spec.add(
            "early",
            LayerKind::Dense {
                units: 1,
                activation: Activation::Sigmoid,
            },
            vec![PortRef::Node(0)],
        );
        assert_eq!(spec.validate().unwrap_err(), NnError::GraphCycle { node: 0 });
        assert!(Model::init(spec, 0).is_err());
    }

    #[test]
    fn shape_inference_rejects_bad_wiring() {
        // dense directly on a sequence input
        let mut spec = ModelSpec::new(3, 1);
        spec.add(
            "dense",
            LayerKind::Dense {
                units: 1,
                activation: Activation::Sigmoid,
            },
            vec![PortRef::Input],
        );
        assert!(matches!(spec.validate(), Err(NnError::ShapeMismatch(_))));
        // recurrent layer on a flat input
        let mut spec = ModelSpec::new(3, 1);
        let f = spec.add("flat", LayerKind::Flatten, vec![PortRef::Input]);
        spec.add(
            "lstm",
            LayerKind::Lstm {
                units: 2,
                return_sequences: false,
            },
            vec![PortRef::Node(f)],
        );
        assert!(matches!(spec.validate(), Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn model_rejects_wrong_input_shape() {
        let model = Model::zeroed(crate::models::build_lssrepl_dnn(4, 3)).unwrap();
        let bad = Tensor::zeros(&[2, 5, 1]);
        assert!(matches!(model.forward(&bad), Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn nan_input_raises_non_finite_activation() {
        use crate::nn::layer::{gru_apply, lstm_apply};
        let x = Tensor::from_vec(&[1, 2, 1], alloc::vec![f64::NAN, 0.5]);
        let w = Tensor::filled(&[1, 8], 0.1);
        let u = Tensor::filled(&[2, 8], 0.1);
        let b = Tensor::zeros(&[8]);
        assert_eq!(
            lstm_apply(&x, &w, &u, &b, false).unwrap_err(),
            NnError::NonFiniteActivation { layer: "lstm" }
        );
        let wg = Tensor::filled(&[1, 6], 0.1);
        let ug = Tensor::filled(&[2, 6], 0.1);
        let bg = Tensor::zeros(&[6]);
        assert_eq!(
            gru_apply(&x, &wg, &ug, &bg, true).unwrap_err(),
            NnError::NonFiniteActivation { layer: "gru" }
        );
    }
}
