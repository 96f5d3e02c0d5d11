//! Minimal reverse-mode automatic differentiation.
//!
//! Dynamic tape of reference-counted nodes. Each operation records the
//! parent handles plus a closure that scatters the output gradient back
//! into the parents. Gradients accumulate additively; callers zero them
//! between steps. Single-threaded by design.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::math::Scalar;

mod adam;
pub mod gradcheck;
pub(crate) mod kernels;
mod ops;

pub use adam::{Adam, AdamConfig};

pub(crate) struct Node<S: Scalar> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
    pub grad: Option<Vec<S>>,
    pub requires_grad: bool,
    pub parents: Vec<Tensor<S>>,
    pub backward: Option<Box<dyn FnMut(&[S])>>,
}

/// N-D differentiable array. Cloning is cheap (shared node).
pub struct Tensor<S: Scalar> {
    pub(crate) inner: Rc<RefCell<Node<S>>>,
}

impl<S: Scalar> core::fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let n = self.inner.borrow();
        write!(f, "Tensor{:?}", n.shape)
    }
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeError {
    pub op: &'static str,
    pub detail: alloc::string::String,
}

impl core::fmt::Display for ShapeError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}: {}", self.op, self.detail)
    }
}

macro_rules! shape_err {
    ($op:expr, $($arg:tt)*) => {
        ShapeError { op: $op, detail: alloc::format!($($arg)*) }
    };
}
pub(crate) use shape_err;

impl<S: Scalar> Tensor<S> {
    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length does not match shape"
        );
        Tensor {
            inner: Rc::new(RefCell::new(Node {
                shape: shape.to_vec(),
                data,
                grad: None,
                requires_grad: false,
                parents: Vec::new(),
                backward: None,
            })),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::from_vec(shape, vec![S::zero(); shape.iter().product()])
    }

    pub fn scalar(v: S) -> Self {
        Tensor::from_vec(&[1], vec![v])
    }

    /// Leaf with gradient tracking (a parameter or checked input).
    pub fn param(shape: &[usize], data: Vec<S>) -> Self {
        let t = Tensor::from_vec(shape, data);
        t.inner.borrow_mut().requires_grad = true;
        t
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self) -> Vec<S> {
        self.inner.borrow().data.clone()
    }

    pub fn item(&self) -> S {
        let n = self.inner.borrow();
        assert_eq!(n.data.len(), 1, "item() on non-scalar tensor");
        n.data[0]
    }

    pub fn grad(&self) -> Option<Vec<S>> {
        self.inner.borrow().grad.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Overwrite the stored values in place (optimizer updates).
    pub fn set_data(&self, data: Vec<S>) {
        let mut n = self.inner.borrow_mut();
        assert_eq!(n.data.len(), data.len());
        n.data = data;
    }

    pub(crate) fn ptr(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    /// Build a non-leaf node. The backward closure receives the output
    /// gradient and must accumulate into the parents.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<S>,
        parents: Vec<Tensor<S>>,
        backward: impl FnMut(&[S]) + 'static,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let node = if requires_grad {
            Node {
                shape,
                data,
                grad: None,
                requires_grad: true,
                parents,
                backward: Some(Box::new(backward)),
            }
        } else {
            // inference path: keep no graph
            Node {
                shape,
                data,
                grad: None,
                requires_grad: false,
                parents: Vec::new(),
                backward: None,
            }
        };
        Tensor {
            inner: Rc::new(RefCell::new(node)),
        }
    }

    /// Accumulate `contrib` into this tensor's gradient slot.
    pub(crate) fn accumulate_grad(&self, contrib: impl FnOnce(&mut [S])) {
        let mut n = self.inner.borrow_mut();
        if !n.requires_grad {
            return;
        }
        let len = n.data.len();
        let grad = n.grad.get_or_insert_with(|| vec![S::zero(); len]);
        contrib(grad.as_mut_slice());
    }

    /// Reverse-mode sweep from a scalar loss. Gradients are accumulated
    /// (+=) into every tracked tensor in the graph; calling twice without
    /// zeroing doubles them.
    pub fn backward(&self) -> Result<(), ShapeError> {
        if self.len() != 1 {
            return Err(shape_err!(
                "backward",
                "loss must be scalar, got shape {:?}",
                self.shape()
            ));
        }
        // Topological order via iterative post-order DFS.
        let mut order: Vec<Tensor<S>> = Vec::new();
        let mut visited: BTreeSet<usize> = BTreeSet::new();
        let mut stack: Vec<(Tensor<S>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.ptr()) {
                continue;
            }
            let parents = t.inner.borrow().parents.clone();
            stack.push((t, true));
            for p in parents {
                if p.requires_grad() && !visited.contains(&p.ptr()) {
                    stack.push((p, false));
                }
            }
        }
        // Intermediate (non-leaf) grads are scratch space for this sweep;
        // only leaves accumulate across calls.
        for t in &order {
            if t.inner.borrow().backward.is_some() {
                t.inner.borrow_mut().grad = None;
            }
        }
        self.accumulate_grad(|g| g[0] = g[0] + S::one());
        for t in order.iter().rev() {
            let grad = {
                let n = t.inner.borrow();
                if n.backward.is_none() {
                    continue;
                }
                match &n.grad {
                    Some(g) => g.clone(),
                    None => continue,
                }
            };
            let mut n = t.inner.borrow_mut();
            if let Some(f) = n.backward.as_mut() {
                f(&grad);
            }
        }
        Ok(())
    }
}
