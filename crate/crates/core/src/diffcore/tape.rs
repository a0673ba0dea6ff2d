//! Define-by-run recording tape.
//!
//! Every call that produces a value appends a node; nodes are stored in
//! execution order, so the backward sweep is a plain reverse iteration.

use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A primitive with a vector–Jacobian product.
///
/// `forward` may stash whatever context the backward pass needs in `self`.
/// `vjp` receives one buffer per input: `Some` (zero-filled) when that input
/// needs a gradient, `None` otherwise. Implementations add into the buffers.
pub trait Op<T: Real>: Send {
    fn name(&self) -> &'static str;

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;

    fn vjp(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad_out: &[T], grads: &mut [Option<Vec<T>>]);
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Option<Box<dyn Op<T>>>,
    inputs: Vec<Var>,
    tracks_grad: bool,
}

/// The recording tape. One graph per sample; rebuilt on every forward pass.
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Graph { nodes: Vec::new() }
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients are tracked iff `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let tracks_grad = tensor.requires_grad;
        self.push(tensor, None, Vec::new(), tracks_grad)
    }

    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.requires_grad = false;
        self.leaf(tensor)
    }

    pub fn param(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.requires_grad = true;
        self.leaf(tensor)
    }

    fn push(&mut self, value: Tensor<T>, op: Option<Box<dyn Op<T>>>, inputs: Vec<Var>, tracks: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            inputs,
            tracks_grad: tracks,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn tracks_grad(&self, v: Var) -> bool {
        self.nodes[v.0].tracks_grad
    }

    /// Name of the op that produced `v`, or `"leaf"`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.as_ref().map_or("leaf", |op| op.name())
    }

    /// Runs `op` on the given inputs and records it.
    pub fn apply<O: Op<T> + 'static>(&mut self, mut op: O, inputs: &[Var]) -> Result<Var> {
        let out = {
            let values: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            op.forward(&values)?
        };
        if let Some(i) = out.first_non_finite() {
            return Err(Error::numeric(
                op.name(),
                format!("output element {i} is {}", out.data()[i]),
            ));
        }
        let tracks = inputs.iter().any(|v| self.nodes[v.0].tracks_grad);
        Ok(self.push(out, Some(Box::new(op)), inputs.to_vec(), tracks))
    }

    /// Accumulated gradient of `v` after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    /// Moves the gradient of `v` out of the graph.
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.grad.take()
    }

    /// Backpropagates from a scalar root with seed 1.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward() needs a scalar root, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        self.backward_with(root, vec![T::one()])
    }

    /// Backpropagates from `root` with an explicit output cotangent.
    pub fn backward_with(&mut self, root: Var, seed: Vec<T>) -> Result<()> {
        if seed.len() != self.nodes[root.0].value.len() {
            return Err(Error::contract("seed gradient length differs from root"));
        }
        for node in &mut self.nodes {
            node.value.grad = None;
        }
        self.nodes[root.0].value.grad = Some(seed);

        for idx in (0..=root.0).rev() {
            let (head, tail) = self.nodes.split_at_mut(idx);
            let node = &mut tail[0];
            if !node.tracks_grad {
                continue;
            }
            let (Some(op), Some(grad_out)) = (node.op.as_ref(), node.value.grad.as_ref()) else {
                continue;
            };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &head[v.0].value).collect();
            let mut grads: Vec<Option<Vec<T>>> = node
                .inputs
                .iter()
                .map(|v| head[v.0].tracks_grad.then(|| vec![T::zero(); head[v.0].value.len()]))
                .collect();
            op.vjp(&inputs, &node.value, grad_out, &mut grads);
            drop(inputs);
            let input_ids = node.inputs.clone();
            for (v, g) in input_ids.into_iter().zip(grads) {
                let Some(g) = g else { continue };
                let slot = &mut head[v.0].value.grad;
                match slot {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}
