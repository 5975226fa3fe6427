//! Tape-based reverse-mode automatic differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order of the DAG. `backward` walks it once from the loss
//! towards the leaves and accumulates gradients at fan-in nodes with `+=`.
//!
//! A graph supports a single backward pass. Calling `backward` again is
//! rejected; build a fresh graph per optimizer step.

use crate::error::{Error, Result};
use crate::ops::{self, sigmoid_scalar};
use crate::tensor::{LabelVector, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    AddN(Vec<NodeId>),
    Relu(NodeId),
    Sigmoid(NodeId),
    Reshape(NodeId),
    Conv2d {
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        input: NodeId,
        argmax: Vec<usize>,
    },
    Dense {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    BceSum {
        logits: NodeId,
        target: LabelVector,
    },
}

#[derive(Debug)]
pub struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
}

impl Node {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> Option<&Tensor> {
        self.grad.as_ref()
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        debug_assert!(!self.backward_done, "graph extended after backward");
        self.nodes.push(Node { value, grad: None, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Adds a leaf (input or parameter).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(format!("{what}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    fn map(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        self.push(t, op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.map(a, Op::Scale(a, factor), |x| x * factor)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Elementwise sum of same-shaped nodes, accumulated left to right.
    pub fn add_n(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::contract("add_n needs at least one input"))?;
        let mut acc = self.value(first).clone();
        for &id in &inputs[1..] {
            self.same_shape(first, id, "add_n")?;
            acc.add_assign(self.value(id));
        }
        Ok(self.push(acc, Op::AddN(inputs.to_vec())))
    }

    /// Mean of same-shaped nodes.
    pub fn mean(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let total = self.add_n(inputs)?;
        Ok(self.scale(total, 1.0 / inputs.len() as f64))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Sigmoid(a), sigmoid_scalar)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(a).reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    pub fn flatten(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.value(a).len();
        self.reshape(a, &[n])
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let out = ops::conv2d(
            self.value(input),
            self.value(kernels),
            self.value(bias).data(),
            stride,
            padding,
        )?;
        Ok(self.push(
            out,
            Op::Conv2d { input, kernels, bias, stride, padding },
        ))
    }

    pub fn max_pool2d(&mut self, input: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        let (out, argmax) = ops::max_pool2d(self.value(input), window, stride)?;
        Ok(self.push(out, Op::MaxPool { input, argmax }))
    }

    pub fn dense(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let out = ops::dense(self.value(input), self.value(weight), self.value(bias).data())?;
        Ok(self.push(out, Op::Dense { input, weight, bias }))
    }

    /// Summed binary cross-entropy of a logit vector against a binary target.
    pub fn bce_sum_loss(&mut self, logits: NodeId, target: &LabelVector) -> Result<NodeId> {
        let loss = ops::bce_sum_loss(self.value(logits).data(), target)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceSum { logits, target: target.clone() },
        ))
    }

    /// Populates `grad` on every node the loss depends on.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(Error::contract(
                "backward already ran on this graph; build a new graph per step",
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if !self.value(loss).is_finite() {
            return Err(Error::NonFinite("loss value".into()));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut acc = |id: NodeId, t: Tensor| match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let same = |src: &Tensor, data: Vec<f64>| Tensor::new(src.shape().to_vec(), data);
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = g.data().iter().zip(vb.data()).map(|(g, y)| g * y).collect();
                let gb = g.data().iter().zip(va.data()).map(|(g, x)| g * x).collect();
                acc(*a, same(va, ga)?);
                acc(*b, same(vb, gb)?);
            }
            Op::Scale(a, f) => {
                acc(*a, same(g, g.data().iter().map(|v| v * f).collect())?);
            }
            Op::Sum(a) => {
                acc(*a, Tensor::full(self.value(*a).shape(), g.data()[0]));
            }
            Op::AddN(inputs) => {
                for id in inputs {
                    acc(*id, g.clone());
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                acc(*a, same(x, d)?);
            }
            Op::Sigmoid(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, s)| g * s * (1.0 - s))
                    .collect();
                acc(*a, same(&node.value, d)?);
            }
            Op::Reshape(a) => {
                acc(*a, g.reshape(self.value(*a).shape())?);
            }
            Op::Conv2d { input, kernels, bias, stride, padding } => {
                let (dx, dk, db) = ops::conv2d_backward(
                    self.value(*input),
                    self.value(*kernels),
                    *stride,
                    *padding,
                    g,
                )?;
                acc(*input, dx);
                acc(*kernels, dk);
                acc(*bias, db.reshape(self.value(*bias).shape())?);
            }
            Op::MaxPool { input, argmax } => {
                let x = self.value(*input);
                let mut d = vec![0.0; x.len()];
                for (gv, &src) in g.data().iter().zip(argmax) {
                    d[src] += gv;
                }
                acc(*input, same(x, d)?);
            }
            Op::Dense { input, weight, bias } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let n = x.len();
                let gd = g.data();
                let mut dx = vec![0.0; n];
                let mut dw = vec![0.0; w.len()];
                for (r, (&gr, wrow)) in gd.iter().zip(w.data().chunks_exact(n)).enumerate() {
                    let dwrow = &mut dw[r * n..(r + 1) * n];
                    for j in 0..n {
                        dwrow[j] = gr * x.data()[j];
                        dx[j] += gr * wrow[j];
                    }
                }
                acc(*input, same(x, dx)?);
                acc(*weight, same(w, dw)?);
                acc(*bias, same(self.value(*bias), gd.to_vec())?);
            }
            Op::BceSum { logits, target } => {
                let z = self.value(*logits);
                let gl = g.data()[0];
                let d = z
                    .data()
                    .iter()
                    .zip(target.entries())
                    .map(|(&z, &y)| gl * (sigmoid_scalar(z) - f64::from(y)))
                    .collect();
                acc(*logits, same(z, d)?);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_loss_has_unit_gradient() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::scalar(3.0));
        g.backward(w).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[1.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::scalar(0.0));
        let s = g.sigmoid(w);
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[0.25]);
    }

    #[test]
    fn fan_in_accumulates() {
        // loss = w*w + w  => 2w + 1
        let mut g = Graph::new();
        let w = g.leaf(Tensor::scalar(1.5));
        let sq = g.mul(w, w).unwrap();
        let l = g.add(sq, w).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_repeats() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(w), Err(Error::Contract(_))));
        let s = g.sum(w);
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Contract(_))));
    }

    #[test]
    fn bce_gradient_is_sigmoid_minus_target() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::vector(vec![0.0, 2.0]).unwrap());
        let y = LabelVector::new(vec![1, 0]).unwrap();
        let l = g.bce_sum_loss(z, &y).unwrap();
        g.backward(l).unwrap();
        let d = g.grad(z).unwrap().data();
        assert!((d[0] + 0.5).abs() < 1e-15);
        assert!((d[1] - sigmoid_scalar(2.0)).abs() < 1e-15);
    }

    #[test]
    fn pool_gradient_routes_to_first_max() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![1, 2, 2], vec![2.0, 2.0, 1.0, 2.0]).unwrap());
        let p = g.max_pool2d(x, 2, 2).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }
}
