//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every op in execution order. Each node keeps its
//! forward value plus whatever the op needs for its vector-Jacobian
//! product. [`Graph::backward`] walks the tape once, in exact reverse
//! order, so gradients are deterministic for a given sequence of ops.

mod gradcheck;
mod ops;

pub use gradcheck::{grad_check, grad_check_coords};
pub use ops::ConvGeom;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRowBias { x: Var, bias: Var },
    AddChannelBias { x: Var, bias: Var },
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    /// Layer norm across axis 0 of a `C×…` map; `rstd` is per position.
    LayerNormChannels { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    /// `slope` holds dGELU/dx, kept only when `x` needs a gradient.
    Gelu { x: Var, slope: Vec<T> },
    Conv2d { x: Var, w: Var, cols: Vec<T>, geom: ConvGeom },
    MaxPool2d { x: Var, argmax: Vec<usize> },
    AdaptiveAvgPool { x: Var },
    MaxPoolTokens { x: Var, argmax: Vec<usize> },
    MeanRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    BceWithLogits { logits: Var, labels: Vec<T> },
    Sum(Var),
}

pub(crate) struct Node<T: Scalar> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Append-only record of executed ops.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
    naive_softmax: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), backward_done: false, naive_softmax: false }
    }

    /// Fault injection: softmax skips the max subtraction from now on.
    /// Only the self-checks use this, to prove they catch overflow.
    pub fn set_naive_softmax(&mut self, on: bool) {
        self.naive_softmax = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Leaves with `requires_grad` receive gradients in `backward`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of `v`, present after `backward` if `v` was on a gradient path.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradient as a tensor; zeros when the loss did not depend on `v`.
    pub fn grad_tensor(&self, v: Var) -> Tensor<T> {
        let value = &self.nodes[v.0].value;
        match &self.nodes[v.0].grad {
            Some(g) => Tensor::new(value.shape(), g.clone()).expect("grad shape matches value"),
            None => Tensor::zeros(value.shape()),
        }
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    /// Back-propagates from a scalar loss. A graph supports exactly one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Graph("backward already ran on this graph; record a new forward pass".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Graph(format!("loss node {} does not exist", loss.0)));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Graph(format!(
                "loss must be a scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(upstream) = self.nodes[i].grad.take() else { continue };
            let contributions = self.vjp(i, &upstream);
            self.nodes[i].grad = Some(upstream);
            for (input, g) in contributions {
                self.accumulate(input, g);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Vec<T>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        debug_assert_eq!(g.len(), node.value.len(), "gradient length");
        match &mut node.grad {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => node.grad = Some(g),
        }
    }
}
