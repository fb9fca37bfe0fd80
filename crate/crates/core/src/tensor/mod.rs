//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a flat row-major buffer plus a shape. Operations live on
//! [`Graph`], which records one node per operation in construction order;
//! [`Graph::backward`] walks the nodes in reverse and accumulates gradients
//! into every tensor that participated. Reductions run in sequential
//! row-major order, so identical inputs always produce identical bits.

mod ops;

use std::sync::Arc;

use parking_lot::RwLock;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: input contains a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("{op}: index {index} out of range for dimension of size {size}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        size: usize,
    },
    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn contract(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Contract {
        op,
        msg: msg.into(),
    }
}

struct Storage<S> {
    data: Vec<S>,
    grad: Option<Vec<S>>,
}

/// Shared handle to a dense tensor.
///
/// Cloning is cheap and aliases the same buffer. Tensors with
/// `requires_grad = false` are never mutated after creation and can be
/// shared across threads for read-only inference; parameter tensors
/// (`requires_grad = true`) are mutated only by the owning training loop.
pub struct Tensor<S: Scalar> {
    shape: Arc<Vec<usize>>,
    requires_grad: bool,
    storage: Arc<RwLock<Storage<S>>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor {
            shape: Arc::clone(&self.shape),
            requires_grad: self.requires_grad,
            storage: Arc::clone(&self.storage),
        }
    }
}

impl<S: Scalar> std::fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("requires_grad", &self.requires_grad)
            .finish()
    }
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>, requires_grad: bool) -> Result<Self> {
        if shape.contains(&0) {
            return Err(contract("tensor", format!("zero dimension in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(contract(
                "tensor",
                format!("shape {:?} wants {} elements, got {}", shape, numel, data.len()),
            ));
        }
        Ok(Tensor {
            shape: Arc::new(shape),
            requires_grad,
            storage: Arc::new(RwLock::new(Storage { data, grad: None })),
        })
    }

    pub fn zeros(shape: Vec<usize>, requires_grad: bool) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![S::zero(); numel], requires_grad).expect("zeros shape is valid")
    }

    /// Rank-1 tensor from a slice of `f64` constants.
    pub fn from_f64s(values: &[f64], requires_grad: bool) -> Self {
        let data: Vec<S> = values.iter().map(|&v| S::of_f64(v)).collect();
        Tensor::new(vec![values.len()], data, requires_grad).expect("vector shape is valid")
    }

    /// Rank-2 tensor from `rows * cols` row-major `f64` constants.
    pub fn matrix_from_f64s(
        rows: usize,
        cols: usize,
        values: &[f64],
        requires_grad: bool,
    ) -> Result<Self> {
        let data: Vec<S> = values.iter().map(|&v| S::of_f64(v)).collect();
        Tensor::new(vec![rows, cols], data, requires_grad)
    }

    pub fn vector(data: Vec<S>, requires_grad: bool) -> Self {
        Tensor::new(vec![data.len()], data, requires_grad).expect("vector shape is valid")
    }

    pub fn scalar(value: S) -> Self {
        Tensor::new(vec![1], vec![value], false).expect("scalar shape is valid")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Copy of the buffer contents.
    pub fn data(&self) -> Vec<S> {
        self.storage.read().data.clone()
    }

    /// Single element of a rank-1 or one-element tensor.
    pub fn item(&self) -> S {
        let s = self.storage.read();
        debug_assert_eq!(s.data.len(), 1, "item() on tensor with {} elements", s.data.len());
        s.data[0]
    }

    /// Run `f` over the raw buffer without copying.
    pub fn with_data<R>(&self, f: impl FnOnce(&[S]) -> R) -> R {
        f(&self.storage.read().data)
    }

    /// Overwrite the buffer. Only the training loop calls this, on
    /// parameter tensors it owns.
    pub fn set_data(&self, data: Vec<S>) {
        let mut s = self.storage.write();
        assert_eq!(s.data.len(), data.len(), "set_data must preserve length");
        s.data = data;
    }

    pub fn grad(&self) -> Option<Vec<S>> {
        self.storage.read().grad.clone()
    }

    /// Add `delta` into the gradient buffer, allocating zeros on first use.
    pub fn accum_grad(&self, delta: &[S]) {
        let mut s = self.storage.write();
        debug_assert_eq!(s.data.len(), delta.len());
        let grad = s.grad.get_or_insert_with(|| vec![S::zero(); delta.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += *d;
        }
    }

    /// Drop any accumulated gradient. The training loop calls this between
    /// steps; nothing clears gradients implicitly.
    pub fn zero_grad(&self) {
        self.storage.write().grad = None;
    }

    /// Whether two handles alias the same buffer.
    pub fn same_buffer(a: &Tensor<S>, b: &Tensor<S>) -> bool {
        Arc::ptr_eq(&a.storage, &b.storage)
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [m, n] => Ok((m, n)),
            _ => Err(contract(op, format!("expected a matrix, got shape {:?}", self.shape))),
        }
    }
}

type BackwardRule<S> = Box<dyn Fn(&[Tensor<S>], &[S])>;

/// One recorded operation: its inputs, its output, and the local gradient
/// rule that maps the output gradient onto input-gradient contributions.
struct Node<S: Scalar> {
    op: &'static str,
    inputs: Vec<Tensor<S>>,
    output: Tensor<S>,
    rule: BackwardRule<S>,
}

/// Operation tape. Nodes are appended in construction order, so every
/// node's inputs precede it and a single reverse sweep is a valid
/// reverse-topological traversal.
#[derive(Default)]
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn record(
        &mut self,
        op: &'static str,
        inputs: Vec<Tensor<S>>,
        output: Tensor<S>,
        rule: BackwardRule<S>,
    ) -> Tensor<S> {
        self.nodes.push(Node {
            op,
            inputs,
            output: output.clone(),
            rule,
        });
        output
    }

    /// Reverse sweep from a scalar loss. Every tensor reachable from the
    /// loss receives `d(loss)/d(tensor)` in its gradient buffer; tensors
    /// used several times accumulate one contribution per use.
    pub fn backward(&self, loss: &Tensor<S>) -> Result<()> {
        if loss.numel() != 1 {
            return Err(TensorError::NotScalar {
                shape: loss.shape().to_vec(),
            });
        }
        loss.accum_grad(&[S::one()]);
        for node in self.nodes.iter().rev() {
            // An output with no gradient is not on any path to the loss.
            let Some(out_grad) = node.output.grad() else {
                continue;
            };
            (node.rule)(&node.inputs, &out_grad);
        }
        Ok(())
    }

    /// Operation names in tape order, for tests that inspect the graph.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op).collect()
    }
}
