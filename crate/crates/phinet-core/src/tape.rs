//! Reverse-mode autodiff over a flat operation tape.
//!
//! Nodes are appended in execution order, so every parent index is smaller
//! than its consumer's and a reverse index sweep is a reverse topological
//! order. Gradients accumulate additively across consumers.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::ops::activation::{relu_backward, relu_forward, softmax_backward, softmax_forward};
use crate::ops::conv::{conv3d_backward, conv3d_forward, ConvSpec};
use crate::ops::dense::{dense_backward, dense_forward};
use crate::ops::loss::{
    binary_cross_entropy_backward, binary_cross_entropy_value, softmax_cross_entropy_backward,
    softmax_cross_entropy_forward,
};
use crate::ops::merge::{add_forward, concat_channels_backward, concat_channels_forward};
use crate::ops::norm::{batch_norm_backward, batch_norm_forward, BnMode, BnSaved};
use crate::ops::pool::{
    avg_pool3d_backward, avg_pool3d_forward, global_avg_pool_backward, global_avg_pool_forward,
    max_pool3d_backward, max_pool3d_forward,
};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op<S> {
    Leaf,
    Conv3d { spec: ConvSpec },
    Relu,
    MaxPool { argmax: Vec<usize> },
    AvgPool { window: usize, stride: usize },
    GlobalAvgPool,
    ConcatChannels,
    Dense,
    BatchNorm { saved: BnSaved },
    Softmax,
    SoftmaxXent { labels: Vec<usize>, probs: Tensor<S> },
    Bce { labels: Vec<usize> },
    Add,
    Mul,
    Scale { factor: S },
    Sum,
}

struct Node<S> {
    value: Tensor<S>,
    parents: Vec<NodeId>,
    op: Op<S>,
    needs_grad: bool,
}

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

/// Gradient per tape node after a backward sweep. Only leaves retain theirs;
/// interior gradients are consumed during propagation.
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<S>> {
        self.grads[id.0].take()
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<S>, parents: Vec<NodeId>, op: Op<S>) -> NodeId {
        let idx = self.nodes.len();
        let needs_grad = parents.iter().any(|p| {
            assert!(p.0 < idx, "tape parents must precede their consumer");
            self.nodes[p.0].needs_grad
        });
        self.nodes.push(Node {
            value,
            parents,
            op,
            needs_grad,
        });
        NodeId(idx)
    }

    pub fn leaf(&mut self, value: Tensor<S>, needs_grad: bool) -> NodeId {
        let idx = self.nodes.len();
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            op: Op::Leaf,
            needs_grad,
        });
        NodeId(idx)
    }

    pub fn conv3d(
        &mut self,
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
        spec: &ConvSpec,
    ) -> Result<NodeId, CoreError> {
        let out = conv3d_forward(
            self.value(input),
            self.value(weights),
            self.value(bias),
            spec,
        )?;
        Ok(self.push(
            out,
            vec![input, weights, bias],
            Op::Conv3d { spec: spec.clone() },
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = relu_forward(self.value(x));
        self.push(out, vec![x], Op::Relu)
    }

    pub fn max_pool3d(
        &mut self,
        x: NodeId,
        window: usize,
        stride: usize,
    ) -> Result<NodeId, CoreError> {
        let (out, argmax) = max_pool3d_forward(self.value(x), window, stride)?;
        Ok(self.push(out, vec![x], Op::MaxPool { argmax }))
    }

    pub fn avg_pool3d(
        &mut self,
        x: NodeId,
        window: usize,
        stride: usize,
    ) -> Result<NodeId, CoreError> {
        let out = avg_pool3d_forward(self.value(x), window, stride)?;
        Ok(self.push(out, vec![x], Op::AvgPool { window, stride }))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId, CoreError> {
        let out = global_avg_pool_forward(self.value(x))?;
        Ok(self.push(out, vec![x], Op::GlobalAvgPool))
    }

    pub fn concat_channels(&mut self, inputs: &[NodeId]) -> Result<NodeId, CoreError> {
        let values: Vec<&Tensor<S>> = inputs.iter().map(|&id| self.value(id)).collect();
        let out = concat_channels_forward(&values)?;
        Ok(self.push(out, inputs.to_vec(), Op::ConcatChannels))
    }

    pub fn dense(
        &mut self,
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, CoreError> {
        let out = dense_forward(self.value(input), self.value(weights), self.value(bias))?;
        Ok(self.push(out, vec![input, weights, bias], Op::Dense))
    }

    /// Batch norm against externally owned running moments (mutated in train
    /// mode at record time, read-only in eval mode).
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &mut Tensor<S>,
        running_var: &mut Tensor<S>,
        mode: BnMode,
        momentum: f64,
        eps: f64,
    ) -> Result<NodeId, CoreError> {
        let (out, saved) = batch_norm_forward(
            self.value(input),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
            mode,
            momentum,
            eps,
        )?;
        Ok(self.push(out, vec![input, gamma, beta], Op::BatchNorm { saved }))
    }

    pub fn softmax(&mut self, logits: NodeId) -> Result<NodeId, CoreError> {
        let out = softmax_forward(self.value(logits))?;
        Ok(self.push(out, vec![logits], Op::Softmax))
    }

    /// Fused softmax + categorical cross-entropy to a scalar loss.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        labels: Vec<usize>,
    ) -> Result<NodeId, CoreError> {
        let (loss, probs) = softmax_cross_entropy_forward(self.value(logits), &labels)?;
        Ok(self.push(loss, vec![logits], Op::SoftmaxXent { labels, probs }))
    }

    pub fn binary_cross_entropy(
        &mut self,
        prob: NodeId,
        labels: Vec<usize>,
    ) -> Result<NodeId, CoreError> {
        let loss = binary_cross_entropy_value(self.value(prob), &labels)?;
        Ok(self.push(
            Tensor::scalar(S::from_f64(loss)),
            vec![prob],
            Op::Bce { labels },
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, CoreError> {
        let out = add_forward(self.value(a), self.value(b))?;
        Ok(self.push(out, vec![a, b], Op::Add))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, CoreError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(CoreError::ShapeMismatch(
                "elementwise mul operands differ in shape".into(),
            ));
        }
        let data: Vec<S> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(out, vec![a, b], Op::Mul))
    }

    pub fn scale(&mut self, x: NodeId, factor: S) -> NodeId {
        let mut out = self.value(x).clone();
        out.scale_in_place(factor);
        self.push(out, vec![x], Op::Scale { factor })
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        self.push(
            Tensor::scalar(S::from_f64(total)),
            vec![x],
            Op::Sum,
        )
    }

    /// Reverse sweep from a scalar root. Returns per-node gradients; interior
    /// node gradients are consumed, leaf gradients retained.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<S>, CoreError> {
        if self.value(root).len() != 1 {
            return Err(CoreError::ShapeMismatch(
                "backward root must be scalar".into(),
            ));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape().to_vec(), S::one()));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad && !matches!(node.op, Op::Leaf) {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            if node.parents.iter().any(|p| p.0 >= i) {
                return Err(CoreError::InvalidData("cycle detected in tape".into()));
            }
            let Some(g) = grads[i].take() else { continue };
            self.dispatch_backward(i, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn dispatch_backward(&self, i: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let node = &self.nodes[i];
        let parent_needs = |k: usize| self.nodes[node.parents[k].0].needs_grad;
        let send = |grads: &mut [Option<Tensor<S>>], k: usize, delta: Tensor<S>| {
            let pid = node.parents[k].0;
            if !self.nodes[pid].needs_grad {
                return;
            }
            match &mut grads[pid] {
                Some(acc) => acc.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv3d { spec } => {
                let out = conv3d_backward(
                    self.value(node.parents[0]),
                    self.value(node.parents[1]),
                    spec,
                    g,
                    parent_needs(0),
                );
                if let Some(gi) = out.input {
                    send(grads, 0, gi);
                }
                send(grads, 1, out.weights);
                send(grads, 2, out.bias);
            }
            Op::Relu => send(grads, 0, relu_backward(self.value(node.parents[0]), g)),
            Op::MaxPool { argmax } => send(
                grads,
                0,
                max_pool3d_backward(self.value(node.parents[0]).shape(), argmax, g),
            ),
            Op::AvgPool { window, stride } => send(
                grads,
                0,
                avg_pool3d_backward(self.value(node.parents[0]).shape(), *window, *stride, g),
            ),
            Op::GlobalAvgPool => send(
                grads,
                0,
                global_avg_pool_backward(self.value(node.parents[0]).shape(), g),
            ),
            Op::ConcatChannels => {
                let shapes: Vec<&[usize]> = node
                    .parents
                    .iter()
                    .map(|&p| self.value(p).shape())
                    .collect();
                for (k, gi) in concat_channels_backward(&shapes, g).into_iter().enumerate() {
                    send(grads, k, gi);
                }
            }
            Op::Dense => {
                let out = dense_backward(
                    self.value(node.parents[0]),
                    self.value(node.parents[1]),
                    g,
                    parent_needs(0),
                );
                if let Some(gi) = out.input {
                    send(grads, 0, gi);
                }
                send(grads, 1, out.weights);
                send(grads, 2, out.bias);
            }
            Op::BatchNorm { saved } => {
                let out = batch_norm_backward(
                    self.value(node.parents[0]),
                    self.value(node.parents[1]),
                    saved,
                    g,
                );
                send(grads, 0, out.input);
                send(grads, 1, out.gamma);
                send(grads, 2, out.beta);
            }
            Op::Softmax => send(grads, 0, softmax_backward(&node.value, g)),
            Op::SoftmaxXent { labels, probs } => send(
                grads,
                0,
                softmax_cross_entropy_backward(probs, labels, g.data()[0]),
            ),
            Op::Bce { labels } => send(
                grads,
                0,
                binary_cross_entropy_backward(self.value(node.parents[0]), labels, g.data()[0]),
            ),
            Op::Add => {
                send(grads, 0, g.clone());
                send(grads, 1, g.clone());
            }
            Op::Mul => {
                let a = self.value(node.parents[0]);
                let b = self.value(node.parents[1]);
                let ga: Vec<S> = g.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
                let gb: Vec<S> = g.data().iter().zip(a.data()).map(|(&x, &y)| x * y).collect();
                send(
                    grads,
                    0,
                    Tensor::new(a.shape().to_vec(), ga).expect("shape preserved"),
                );
                send(
                    grads,
                    1,
                    Tensor::new(b.shape().to_vec(), gb).expect("shape preserved"),
                );
            }
            Op::Scale { factor } => {
                let mut gi = g.clone();
                gi.scale_in_place(*factor);
                send(grads, 0, gi);
            }
            Op::Sum => send(
                grads,
                0,
                Tensor::full(self.value(node.parents[0]).shape().to_vec(), g.data()[0]),
            ),
        }
    }
}

/// Central-difference audit of an analytic gradient.
///
/// `f` must be a deterministic scalar function of the parameter list; the
/// analytic gradients normally come from [`Tape::backward`]. Returns the
/// worst relative error over all coordinates with denominator
/// max(|analytic|, |numeric|, 1e-8).
pub fn finite_diff_check<F>(
    mut f: F,
    params: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    h: f64,
) -> Result<f64, CoreError>
where
    F: FnMut(&[Tensor<f64>]) -> Result<f64, CoreError>,
{
    if params.len() != analytic.len() {
        return Err(CoreError::ShapeMismatch(
            "one analytic gradient required per parameter".into(),
        ));
    }
    for (p, a) in params.iter().zip(analytic) {
        if p.shape() != a.shape() {
            return Err(CoreError::ShapeMismatch(
                "analytic gradient shape differs from its parameter".into(),
            ));
        }
    }
    if h <= 0.0 {
        return Err(CoreError::InvalidConfig("step size must be positive".into()));
    }
    let probe = f(params)?;
    if f(params)? != probe {
        return Err(CoreError::InvalidData(
            "function is not deterministic; finite differences are meaningless".into(),
        ));
    }

    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut worst = 0.0f64;
    for ti in 0..params.len() {
        for j in 0..params[ti].len() {
            let orig = params[ti].data()[j];
            work[ti].data_mut()[j] = orig + h;
            let fp = f(&work)?;
            work[ti].data_mut()[j] = orig - h;
            let fm = f(&work)?;
            work[ti].data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[ti].data()[j];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let err = (a - numeric).abs() / denom;
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}
