//! Reverse-mode automatic differentiation over an explicit tape.
//!
//! Every differentiable operation evaluates eagerly, appends its result to the
//! [`Tape`], and (when any input requires a gradient) records a backward closure.
//! [`Tape::backward`] walks the tape in reverse and returns gradients for every
//! leaf that asked for one. A tape belongs to one training step; nothing is global.

mod basic;
mod conv;
pub mod gradcheck;
pub mod suite;
mod loss;
mod norm;

pub use conv::{conv_output_len, ConvGeom, PoolKind};
pub use loss::softmax_rows;
pub use norm::BatchStats;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) trait Backward<T: Scalar> {
    /// Accumulate input gradients given the op's output and its gradient.
    fn backward(&self, out: &Tensor<T>, grad: &[T], sink: &mut GradSink<'_, T>);
}

pub(crate) struct Node<T: Scalar> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Option<Box<dyn Backward<T>>>,
}

/// Gradient tape. `T` is `f64` for verification and `f32` for training.
pub struct Tape<T: Scalar = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Record an input tensor. Only leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: None,
        });
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

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push<B: Backward<T> + 'static>(
        &mut self,
        value: Tensor<T>,
        inputs: &[Var],
        op: B,
    ) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op: if requires_grad {
                Some(Box::new(op))
            } else {
                None
            },
        });
        Var(self.nodes.len() - 1)
    }

    /// Back-propagate from a single-element `loss`. Intermediate gradients are
    /// released as soon as they have been consumed; leaf gradients are kept.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must hold one element, has shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(op) = &node.op else { continue };
            let Some(g) = grads[i].take() else { continue };
            let mut sink = GradSink {
                grads: &mut grads,
                nodes: &self.nodes,
            };
            op.backward(&node.value, &g, &mut sink);
        }
        Ok(Gradients { grads })
    }
}

/// Write access to input gradients during a backward step.
pub(crate) struct GradSink<'a, T: Scalar> {
    grads: &'a mut [Option<Vec<T>>],
    nodes: &'a [Node<T>],
}

impl<'a, T: Scalar> GradSink<'a, T> {
    pub fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &'a Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Zero-initialised on first access.
    pub fn buf(&mut self, v: Var) -> &mut [T] {
        let len = self.nodes[v.0].value.len();
        self.grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
    }

    pub fn add(&mut self, v: Var, g: &[T]) {
        if self.wants(v) {
            for (a, &b) in self.buf(v).iter_mut().zip(g) {
                *a += b;
            }
        }
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
