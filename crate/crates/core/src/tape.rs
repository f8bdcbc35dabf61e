//! Reverse-mode differentiation over a linear record of executed ops.
//!
//! Every op appends a node holding its inputs; node ids are assigned in
//! execution order, so walking ids backwards visits consumers before
//! producers. A [`Tape`] created with [`Tape::no_grad`] records nothing and
//! intermediate values are freed as soon as the caller drops them.

use std::cell::RefCell;
use std::sync::Arc;

use crate::error::{shape_err, Result};
use crate::ops::{activation, conv, dense, loss, norm, shape};
use crate::tensor::{Real, Tensor};

/// A value flowing through a computation, optionally tracked by a tape.
#[derive(Clone, Debug)]
pub struct Var<T: Real = f32> {
    value: Arc<Tensor<T>>,
    id: Option<usize>,
}

impl<T: Real> Var<T> {
    /// An untracked value; no gradient flows into it.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::from_arc(Arc::new(value))
    }

    pub fn from_arc(value: Arc<Tensor<T>>) -> Self {
        Self { value, id: None }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shared(&self) -> Arc<Tensor<T>> {
        Arc::clone(&self.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn is_tracked(&self) -> bool {
        self.id.is_some()
    }

    /// Same value, cut off from the graph.
    pub fn detach(&self) -> Self {
        Self::from_arc(self.shared())
    }

    pub fn item(&self) -> T {
        self.value.item()
    }
}

enum Op<T: Real> {
    Leaf,
    Conv2d { stride: usize },
    Dense,
    Add,
    PRelu,
    LeakyRelu { slope: T },
    Sigmoid,
    BatchNorm { cache: norm::BatchNormCache<T> },
    PixelShuffle { r: usize },
    MaxPool2 { argmax: Vec<usize> },
    Reshape,
    ReplicateChannels,
    Mean,
    MeanAbsDiff,
    MeanSqDiff,
    Bce { real_label: bool },
    WeightedSum { weights: Vec<f64> },
}

struct Node<T: Real> {
    op: Op<T>,
    inputs: Vec<(Option<usize>, Arc<Tensor<T>>)>,
    output: Option<Arc<Tensor<T>>>,
}

pub struct Tape<T: Real = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// A tape that never records; ops behave as plain functions.
    pub fn no_grad() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input. Untracked when the tape is not recording.
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        self.leaf_arc(Arc::new(value))
    }

    pub fn leaf_arc(&self, value: Arc<Tensor<T>>) -> Var<T> {
        if !self.recording {
            return Var::from_arc(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            output: None,
        });
        Var {
            value,
            id: Some(nodes.len() - 1),
        }
    }

    fn push(&self, op: Op<T>, inputs: &[&Var<T>], value: Tensor<T>, keep_output: bool) -> Var<T> {
        let value = Arc::new(value);
        if !self.recording || inputs.iter().all(|v| v.id.is_none()) {
            return Var::from_arc(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            inputs: inputs.iter().map(|v| (v.id, v.shared())).collect(),
            output: keep_output.then(|| Arc::clone(&value)),
        });
        Var {
            value,
            id: Some(nodes.len() - 1),
        }
    }

    pub fn conv2d(&self, x: &Var<T>, kernel: &Var<T>, bias: &Var<T>, stride: usize) -> Result<Var<T>> {
        let y = conv::conv2d_forward(x.value(), kernel.value(), bias.value(), stride)?;
        Ok(self.push(Op::Conv2d { stride }, &[x, kernel, bias], y, false))
    }

    pub fn dense(&self, x: &Var<T>, weight: &Var<T>, bias: &Var<T>) -> Result<Var<T>> {
        let y = dense::dense_forward(x.value(), weight.value(), bias.value())?;
        Ok(self.push(Op::Dense, &[x, weight, bias], y, false))
    }

    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        if a.shape() != b.shape() {
            return shape_err(format!("add: {:?} vs {:?}", a.shape(), b.shape()));
        }
        let mut y = a.value().clone();
        y.add_assign(b.value());
        Ok(self.push(Op::Add, &[a, b], y, false))
    }

    pub fn prelu(&self, x: &Var<T>, alpha: &Var<T>) -> Result<Var<T>> {
        let y = activation::prelu_forward(x.value(), alpha.value())?;
        Ok(self.push(Op::PRelu, &[x, alpha], y, false))
    }

    pub fn leaky_relu(&self, x: &Var<T>, slope: f64) -> Var<T> {
        let slope = T::from_f64(slope);
        let y = activation::leaky_relu_forward(x.value(), slope);
        self.push(Op::LeakyRelu { slope }, &[x], y, false)
    }

    pub fn sigmoid(&self, x: &Var<T>) -> Var<T> {
        let y = activation::sigmoid_forward(x.value());
        self.push(Op::Sigmoid, &[x], y, true)
    }

    /// Batch-statistics normalization; also returns the statistics for running averages.
    pub fn batchnorm_train(
        &self,
        x: &Var<T>,
        gamma: &Var<T>,
        beta: &Var<T>,
    ) -> Result<(Var<T>, norm::BatchStats)> {
        let (y, cache, stats) = norm::batchnorm_train(x.value(), gamma.value(), beta.value())?;
        Ok((self.push(Op::BatchNorm { cache }, &[x, gamma, beta], y, false), stats))
    }

    pub fn batchnorm_eval(
        &self,
        x: &Var<T>,
        gamma: &Var<T>,
        beta: &Var<T>,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
    ) -> Result<Var<T>> {
        let (y, cache) =
            norm::batchnorm_eval(x.value(), gamma.value(), beta.value(), running_mean, running_var)?;
        Ok(self.push(Op::BatchNorm { cache }, &[x, gamma, beta], y, false))
    }

    pub fn pixel_shuffle(&self, x: &Var<T>, r: usize) -> Result<Var<T>> {
        let y = shape::pixel_shuffle(x.value(), r)?;
        Ok(self.push(Op::PixelShuffle { r }, &[x], y, false))
    }

    pub fn max_pool2(&self, x: &Var<T>) -> Result<Var<T>> {
        let (y, argmax) = shape::max_pool2(x.value())?;
        Ok(self.push(Op::MaxPool2 { argmax }, &[x], y, false))
    }

    pub fn reshape(&self, x: &Var<T>, new_shape: Vec<usize>) -> Result<Var<T>> {
        let y = x.value().clone().reshape(new_shape)?;
        Ok(self.push(Op::Reshape, &[x], y, false))
    }

    pub fn replicate_channels(&self, x: &Var<T>, channels: usize) -> Result<Var<T>> {
        let y = shape::replicate_channels(x.value(), channels)?;
        Ok(self.push(Op::ReplicateChannels, &[x], y, false))
    }

    /// Mean over every element.
    pub fn mean(&self, x: &Var<T>) -> Var<T> {
        let y = Tensor::scalar(T::from_f64(x.value().mean()));
        self.push(Op::Mean, &[x], y, false)
    }

    pub fn mean_abs_diff(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let y = loss::mean_abs_diff(a.value(), b.value())?;
        Ok(self.push(Op::MeanAbsDiff, &[a, b], Tensor::scalar(T::from_f64(y)), false))
    }

    pub fn mean_sq_diff(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let y = loss::mean_sq_diff(a.value(), b.value())?;
        Ok(self.push(Op::MeanSqDiff, &[a, b], Tensor::scalar(T::from_f64(y)), false))
    }

    pub fn bce(&self, p: &Var<T>, real_label: bool) -> Var<T> {
        let y = loss::bce(p.value(), real_label);
        self.push(Op::Bce { real_label }, &[p], Tensor::scalar(T::from_f64(y)), false)
    }

    /// `sum_i w_i * x_i` over scalar terms.
    pub fn weighted_sum(&self, terms: &[(&Var<T>, f64)]) -> Result<Var<T>> {
        let mut total = 0.0f64;
        for (v, w) in terms {
            if v.value().len() != 1 {
                return shape_err(format!("weighted_sum expects scalars, got {:?}", v.shape()));
            }
            total += w * v.item().to_f64();
        }
        let inputs: Vec<&Var<T>> = terms.iter().map(|(v, _)| *v).collect();
        let weights = terms.iter().map(|(_, w)| *w).collect();
        Ok(self.push(
            Op::WeightedSum { weights },
            &inputs,
            Tensor::scalar(T::from_f64(total)),
            false,
        ))
    }

    /// Back-propagates from a scalar `root`, returning gradients of every leaf.
    pub fn backward(&self, root: &Var<T>) -> Result<Gradients<T>> {
        if root.value().len() != 1 {
            return shape_err(format!("backward needs a scalar root, got {:?}", root.shape()));
        }
        let Some(root_id) = root.id else {
            return shape_err("backward root is not tracked by this tape");
        };
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root_id] = Some(Tensor::full(root.shape().to_vec(), T::ONE));
        let mut visited = 0;
        for id in (0..=root_id).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            visited += 1;
            let input_grads = node_backward(node, &g)?;
            for ((input_id, _), ig) in node.inputs.iter().zip(input_grads) {
                if let (Some(i), Some(ig)) = (input_id, ig) {
                    match &mut grads[*i] {
                        Some(acc) => acc.add_assign(&ig),
                        slot => *slot = Some(ig),
                    }
                }
            }
        }
        Ok(Gradients {
            grads,
            visited_ops: visited,
        })
    }
}

fn node_backward<T: Real>(node: &Node<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
    let want = |i: usize| node.inputs[i].0.is_some();
    let x = |i: usize| node.inputs[i].1.as_ref();
    Ok(match &node.op {
        Op::Leaf => Vec::new(),
        Op::Conv2d { stride } => {
            let cg = conv::conv2d_backward(x(0), x(1), *stride, g, want(0))?;
            vec![cg.input, Some(cg.kernel), Some(cg.bias)]
        }
        Op::Dense => {
            let (dx, dw, db) = dense::dense_backward(x(0), x(1), g)?;
            vec![Some(dx), Some(dw), Some(db)]
        }
        Op::Add => vec![Some(g.clone()), Some(g.clone())],
        Op::PRelu => {
            let (dx, da) = activation::prelu_backward(x(0), x(1), g)?;
            vec![Some(dx), Some(da)]
        }
        Op::LeakyRelu { slope } => vec![Some(activation::leaky_relu_backward(x(0), *slope, g))],
        Op::Sigmoid => {
            let y = node.output.as_ref().expect("sigmoid keeps its output");
            vec![Some(activation::sigmoid_backward(y, g))]
        }
        Op::BatchNorm { cache } => {
            let (dx, dgamma, dbeta) = norm::batchnorm_backward(cache, x(1), g)?;
            vec![Some(dx), Some(dgamma), Some(dbeta)]
        }
        Op::PixelShuffle { r } => vec![Some(shape::pixel_unshuffle(g, *r)?)],
        Op::MaxPool2 { argmax } => {
            vec![Some(shape::max_pool2_backward(x(0).shape(), argmax, g)?)]
        }
        Op::Reshape => vec![Some(g.clone().reshape(x(0).shape().to_vec())?)],
        Op::ReplicateChannels => vec![Some(shape::replicate_channels_backward(g)?)],
        Op::Mean => {
            let v = g.item() / T::from_f64(x(0).len() as f64);
            vec![Some(Tensor::full(x(0).shape().to_vec(), v))]
        }
        Op::MeanAbsDiff => {
            let mut da = loss::mean_abs_diff_grad(x(0), x(1));
            scale(&mut da, g.item());
            let db = want(1).then(|| da.map(|v| -v));
            vec![Some(da), db]
        }
        Op::MeanSqDiff => {
            let mut da = loss::mean_sq_diff_grad(x(0), x(1));
            scale(&mut da, g.item());
            let db = want(1).then(|| da.map(|v| -v));
            vec![Some(da), db]
        }
        Op::Bce { real_label } => {
            let mut dp = loss::bce_grad(x(0), *real_label);
            scale(&mut dp, g.item());
            vec![Some(dp)]
        }
        Op::WeightedSum { weights } => weights
            .iter()
            .map(|&w| Some(Tensor::scalar(T::from_f64(w * g.item().to_f64()))))
            .collect(),
    })
}

fn scale<T: Real>(t: &mut Tensor<T>, s: T) {
    if s != T::ONE {
        t.data_mut().iter_mut().for_each(|v| *v *= s);
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T: Real = f32> {
    grads: Vec<Option<Tensor<T>>>,
    visited_ops: usize,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf, or `None` if no path reached it.
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        var.id.and_then(|i| self.grads.get(i)).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, zeros if unreachable.
    pub fn get_or_zero(&self, var: &Var<T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape().to_vec()))
    }

    /// Number of non-leaf ops the backward pass processed.
    pub fn visited_ops(&self) -> usize {
        self.visited_ops
    }
}
