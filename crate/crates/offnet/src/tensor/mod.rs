//! Dense tensor engine with reverse-mode differentiation.
//!
//! Tensors are row-major `f32` arrays with a dynamic operation graph recorded
//! per forward pass. Calling [`Tensor::backward`] on a scalar walks that graph
//! once in reverse topological order, accumulates gradients into every tensor
//! that requires them, and frees the graph. Intermediate arithmetic (matrix
//! products, reductions, normalization statistics) accumulates in `f64`
//! before rounding back to `f32`, which keeps finite-difference checks tight.
//!
//! A graph is confined to the thread that built it; tensors that carry no
//! graph are plain immutable buffers.

mod gradcheck;
pub mod ops;
mod param;

pub use gradcheck::{grad_check, grad_check_sampled, GradCheckReport};
pub use param::{Init, ParamBuilder, ParamSet, Parameter};

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {op} got {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("dimension error in {op}: {msg}")]
    Dimension { op: &'static str, msg: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("gradient oracle error: {0}")]
    Oracle(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

thread_local! {
    static NEXT_ID: RefCell<u64> = const { RefCell::new(0) };
}

fn fresh_id() -> u64 {
    NEXT_ID.with(|c| {
        let mut c = c.borrow_mut();
        *c += 1;
        *c
    })
}

/// Backward rule of one recorded operation. Receives the upstream gradient,
/// the operation's stored output values, and its input tensors, and is
/// responsible for accumulating into the inputs' gradient buffers.
type BackwardFn = Box<dyn Fn(&[f32], &[f32], &[Tensor])>;

struct Node {
    inputs: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f32>>,
    grad: RefCell<Option<Vec<f32>>>,
    requires_grad: bool,
    node: RefCell<Option<Node>>,
}

/// Dense N-dimensional `f32` array, cheaply clonable (shared storage).
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

pub(crate) fn element_count(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(data: Vec<f32>, shape: Vec<usize>, requires_grad: bool, node: Option<Node>) -> Tensor {
        debug_assert_eq!(data.len(), element_count(&shape));
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                node: RefCell::new(node),
            }),
        }
    }

    pub fn from_vec(data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        if data.len() != element_count(shape) {
            return Err(TensorError::Dimension {
                op: "from_vec",
                msg: format!("{} values cannot fill shape {:?}", data.len(), shape),
            });
        }
        if shape.iter().any(|&e| e == 0) {
            return Err(TensorError::Dimension {
                op: "from_vec",
                msg: format!("zero extent in shape {shape:?}"),
            });
        }
        Ok(Self::build(data, shape.to_vec(), false, None))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::build(vec![0.0; element_count(shape)], shape.to_vec(), false, None)
    }

    pub fn full(shape: &[usize], value: f32) -> Tensor {
        Self::build(
            vec![value; element_count(shape)],
            shape.to_vec(),
            false,
            None,
        )
    }

    pub fn scalar(value: f32) -> Tensor {
        Self::build(vec![value], vec![1], false, None)
    }

    /// Leaf tensor that participates in differentiation.
    pub fn variable(data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        Ok(Self::from_vec(data, shape)?.requiring_grad())
    }

    pub fn requiring_grad(self) -> Tensor {
        if self.inner.requires_grad {
            return self;
        }
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape: self.inner.shape.clone(),
                data: RefCell::new(self.inner.data.borrow().clone()),
                grad: RefCell::new(None),
                requires_grad: true,
                node: RefCell::new(None),
            }),
        }
    }

    pub(crate) fn from_op(
        data: Vec<f32>,
        shape: Vec<usize>,
        inputs: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        let requires_grad = inputs.iter().any(|t| t.inner.requires_grad);
        let node = if requires_grad {
            Some(Node { inputs, backward })
        } else {
            None
        };
        Self::build(data, shape, requires_grad, node)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        element_count(&self.inner.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<f32>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.inner.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f32> {
        if self.len() != 1 {
            return Err(TensorError::Contract(format!(
                "item() on tensor of shape {:?}",
                self.inner.shape
            )));
        }
        Ok(self.inner.data.borrow()[0])
    }

    /// Overwrite the stored values. Only meaningful on leaves (optimizer
    /// updates, finite-difference probes); the graph references values by
    /// snapshot so interior mutation would desynchronize it.
    pub fn set_data(&self, values: &[f32]) -> Result<()> {
        if values.len() != self.len() {
            return Err(TensorError::Dimension {
                op: "set_data",
                msg: format!("{} values for shape {:?}", values.len(), self.inner.shape),
            });
        }
        self.inner.data.borrow_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn set_value(&self, index: usize, value: f32) {
        self.inner.data.borrow_mut()[index] = value;
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f32]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    fn id(&self) -> u64 {
        self.inner.id
    }

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
    /// tensor with `requires_grad` reachable through the recorded graph; the
    /// graph is consumed (freed) as it is walked, so each forward pass
    /// supports one backward pass. Callers zero gradients between steps.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward() requires a scalar loss, got shape {:?}",
                self.inner.shape
            )));
        }
        // Topological order via iterative DFS over not-yet-consumed nodes.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = t.inner.node.borrow().as_ref() {
                for input in &node.inputs {
                    if !visited.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }

        self.accumulate_grad(&[1.0]);
        for t in order.iter().rev() {
            let node = t.inner.node.borrow_mut().take();
            let Some(node) = node else { continue };
            let grad_out = t
                .inner
                .grad
                .borrow()
                .clone()
                .unwrap_or_else(|| vec![0.0; t.len()]);
            let out_data = t.inner.data.borrow().clone();
            (node.backward)(&grad_out, &out_data, &node.inputs);
            // Interior tensors only needed their gradient transiently.
            if !t.inner.requires_grad {
                *t.inner.grad.borrow_mut() = None;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::ops;
    use super::*;

    #[test]
    fn from_vec_rejects_length_mismatch() {
        assert!(Tensor::from_vec(vec![1.0, 2.0, 3.0], &[2, 2]).is_err());
    }

    #[test]
    fn backward_requires_scalar() {
        let x = Tensor::variable(vec![1.0, 2.0], &[2]).unwrap();
        let y = ops::mul(&x, &x).unwrap();
        assert!(matches!(y.backward(), Err(TensorError::Contract(_))));
    }

    #[test]
    fn sum_of_squares_gradient_is_two_x() {
        let x = Tensor::variable(vec![1.0, -2.0, 3.0], &[3]).unwrap();
        let loss = ops::sum_all(&ops::mul(&x, &x).unwrap()).unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 6.0]);
    }

    #[test]
    fn disconnected_parameter_gets_no_gradient() {
        let x = Tensor::variable(vec![1.0, 2.0], &[2]).unwrap();
        let unused = Tensor::variable(vec![5.0], &[1]).unwrap();
        let loss = ops::sum_all(&x).unwrap();
        loss.backward().unwrap();
        assert!(unused.grad().is_none());
        // Contract: a disconnected gradient reads as all zeros.
        let g = unused.grad().unwrap_or_else(|| vec![0.0; unused.len()]);
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn gradients_accumulate_across_passes() {
        let x = Tensor::variable(vec![1.0, 2.0], &[2]).unwrap();
        for _ in 0..2 {
            let loss = ops::sum_all(&ops::mul(&x, &x).unwrap()).unwrap();
            loss.backward().unwrap();
        }
        assert_eq!(x.grad().unwrap(), vec![4.0, 8.0]);
    }

    #[test]
    fn graph_is_freed_after_backward() {
        let x = Tensor::variable(vec![2.0], &[1]).unwrap();
        let y = ops::mul(&x, &x).unwrap();
        y.backward().unwrap();
        assert!(y.inner.node.borrow().is_none());
    }

    #[test]
    fn shared_subexpression_matches_unrolled_tree() {
        // z = s + s with s = x*x, against the unrolled x*x + x*x.
        let x = Tensor::variable(vec![1.5, -0.5], &[2]).unwrap();
        let s = ops::mul(&x, &x).unwrap();
        let shared = ops::sum_all(&ops::add(&s, &s).unwrap()).unwrap();
        shared.backward().unwrap();
        let g_shared = x.grad().unwrap();

        let x2 = Tensor::variable(vec![1.5, -0.5], &[2]).unwrap();
        let a = ops::mul(&x2, &x2).unwrap();
        let b = ops::mul(&x2, &x2).unwrap();
        let unrolled = ops::sum_all(&ops::add(&a, &b).unwrap()).unwrap();
        unrolled.backward().unwrap();
        assert_eq!(g_shared, x2.grad().unwrap());
    }
}
