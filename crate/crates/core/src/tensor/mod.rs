//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! The graph is built implicitly: every op that consumes a gradient-requiring
//! tensor records its parents and a backward closure on the output node.
//! `backward()` on a scalar loss walks the graph once in reverse topological
//! order and accumulates (`+=`) gradients into every reachable
//! `requires_grad` tensor. Gradients persist until `zero_grad()`.
//!
//! Tensors are immutable after construction except for their grad buffer and
//! the explicit `set_data`/`with_data_mut` escape hatch used by optimizers
//! and checkpoint loading. A computation graph lives on one logical thread.

use std::cell::RefCell;
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use num_traits::Float;
use thiserror::Error;

mod ops;


/// Element type for tensor storage: f32 for training, f64 for verification
/// (finite-difference gradient checks are unreliable at f32).
pub trait Scalar: Float + fmt::Debug + fmt::Display + Default + 'static {
    /// Type tag written into binary file headers.
    const DTYPE: u8;
    const DTYPE_NAME: &'static str;
    /// Bytes per element in the on-disk little-endian encoding.
    const WIDTH: usize;

    fn cast_from(v: f64) -> Self;
    fn cast_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: u8 = 1;
    const DTYPE_NAME: &'static str = "f32";
    const WIDTH: usize = 4;

    fn cast_from(v: f64) -> Self {
        v as f32
    }
    fn cast_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Scalar for f64 {
    const DTYPE: u8 = 2;
    const DTYPE_NAME: &'static str = "f64";
    const WIDTH: usize = 8;

    fn cast_from(v: f64) -> Self {
        v
    }
    fn cast_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes([
            bytes[0], bytes[1], bytes[2], bytes[3], bytes[4], bytes[5], bytes[6], bytes[7],
        ])
    }
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("{op}: non-finite input")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

type BackwardFn<T> = Box<dyn Fn(&[T])>;

struct Inner<T: Scalar> {
    id: u64,
    data: Vec<T>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// Shared handle to a tensor node. Cloning is cheap (reference count only).
pub struct Tensor<T: Scalar>(Rc<RefCell<Inner<T>>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.0.borrow();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("requires_grad", &inner.requires_grad)
            .finish()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn from_inner(inner: Inner<T>) -> Self {
        Tensor(Rc::new(RefCell::new(inner)))
    }

    /// Constant leaf: no gradient will ever be tracked for it.
    pub fn new(data: Vec<T>, shape: Vec<usize>) -> Result<Self, TensorError> {
        if numel_of(&shape) != data.len() {
            return Err(TensorError::Invalid {
                op: "new",
                msg: format!("shape {:?} wants {} elements, got {}", shape, numel_of(&shape), data.len()),
            });
        }
        if shape.contains(&0) {
            return Err(TensorError::Invalid {
                op: "new",
                msg: format!("zero dimension in shape {:?}", shape),
            });
        }
        Ok(Self::from_inner(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            data,
            shape,
            requires_grad: false,
            grad: None,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// Trainable leaf: participates in `backward()` gradient accumulation.
    pub fn param(data: Vec<T>, shape: Vec<usize>) -> Result<Self, TensorError> {
        let t = Self::new(data, shape)?;
        t.0.borrow_mut().requires_grad = true;
        Ok(t)
    }

    pub fn scalar(v: T) -> Self {
        Self::new(vec![v], vec![1]).expect("scalar construction")
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel_of(&shape);
        Self::new(vec![T::zero(); n], shape).expect("zeros construction")
    }

    pub fn full(shape: Vec<usize>, v: T) -> Self {
        let n = numel_of(&shape);
        Self::new(vec![v; n], shape).expect("full construction")
    }

    /// Internal constructor for op outputs. Collapses to a plain constant when
    /// no parent tracks gradients, so eval-only graphs carry no closures.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        parents: Vec<Tensor<T>>,
        backward: impl Fn(&[T]) + 'static,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        if !requires_grad {
            return Self::new(data, shape).expect("op output shape");
        }
        debug_assert_eq!(numel_of(&shape), data.len());
        Self::from_inner(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            data,
            shape,
            requires_grad: true,
            grad: None,
            parents,
            backward: Some(Box::new(backward)),
        })
    }

    pub fn id(&self) -> u64 {
        self.0.borrow().id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.borrow().data.len()
    }

    /// Rows of a rank-2 tensor (rank-1 counts as a single row).
    pub fn rows(&self) -> usize {
        let inner = self.0.borrow();
        match inner.shape.len() {
            2 => inner.shape[0],
            _ => 1,
        }
    }

    /// Columns of a rank-2 tensor (rank-1 length for vectors).
    pub fn cols(&self) -> usize {
        let inner = self.0.borrow();
        match inner.shape.len() {
            2 => inner.shape[1],
            1 => inner.shape[0],
            _ => inner.data.len(),
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.0.borrow().requires_grad
    }

    /// Stop tracking gradients for this leaf (inference/bench workloads).
    pub fn freeze(&self) {
        let mut inner = self.0.borrow_mut();
        inner.requires_grad = false;
        inner.grad = None;
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.borrow().data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let inner = self.0.borrow();
        assert_eq!(inner.data.len(), 1, "item() on tensor of shape {:?}", inner.shape);
        inner.data[0]
    }

    pub fn with_data<R>(&self, f: impl FnOnce(&[T]) -> R) -> R {
        f(&self.0.borrow().data)
    }

    /// Mutate the raw buffer in place (optimizer updates, checkpoint load).
    /// Must not be called while a graph referencing this tensor is pending.
    pub fn with_data_mut<R>(&self, f: impl FnOnce(&mut [T]) -> R) -> R {
        f(&mut self.0.borrow_mut().data)
    }

    /// Replace the buffer wholesale; the length must match.
    pub fn set_data(&self, data: Vec<T>) -> Result<(), TensorError> {
        let mut inner = self.0.borrow_mut();
        if data.len() != inner.data.len() {
            return Err(TensorError::Invalid {
                op: "set_data",
                msg: format!("expected {} elements, got {}", inner.data.len(), data.len()),
            });
        }
        inner.data = data;
        Ok(())
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.0.borrow_mut().grad = None;
    }

    pub(crate) fn accum_grad(&self, delta: &[T]) {
        let mut inner = self.0.borrow_mut();
        if !inner.requires_grad {
            return;
        }
        match &mut inner.grad {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi = *gi + *di;
                }
            }
            None => inner.grad = Some(delta.to_vec()),
        }
    }

    fn parents_requiring_grad(&self) -> Vec<Tensor<T>> {
        self.0
            .borrow()
            .parents
            .iter()
            .filter(|p| p.requires_grad())
            .cloned()
            .collect()
    }

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate; call
    /// `zero_grad()` on leaves between steps.
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss { shape: self.shape() });
        }
        if !self.requires_grad() {
            // Constant loss: nothing reachable, by contract a no-op.
            return Ok(());
        }

        // Iterative post-order DFS; reverse post-order is a topological order
        // of the DAG, so each node's grad is complete before its closure runs.
        enum Visit<T: Scalar> {
            Enter(Tensor<T>),
            Exit(Tensor<T>),
        }
        let mut topo: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<Visit<T>> = vec![Visit::Enter(self.clone())];
        while let Some(v) = stack.pop() {
            match v {
                Visit::Enter(node) => {
                    if !visited.insert(node.id()) {
                        continue;
                    }
                    stack.push(Visit::Exit(node.clone()));
                    for p in node.parents_requiring_grad() {
                        if !visited.contains(&p.id()) {
                            stack.push(Visit::Enter(p));
                        }
                    }
                }
                Visit::Exit(node) => topo.push(node),
            }
        }

        self.accum_grad(&[T::one()]);
        for node in topo.iter().rev() {
            let inner = node.0.borrow();
            if let (Some(f), Some(g)) = (&inner.backward, &inner.grad) {
                f(g);
            }
        }
        // Contract: every visited requires_grad node ends with a populated grad.
        for node in &topo {
            let mut inner = node.0.borrow_mut();
            if inner.grad.is_none() {
                let n = inner.data.len();
                inner.grad = Some(vec![T::zero(); n]);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_shape() {
        assert!(Tensor::<f64>::new(vec![1.0, 2.0], vec![3]).is_err());
        assert!(Tensor::<f64>::new(vec![1.0, 2.0], vec![2]).is_ok());
        assert!(Tensor::<f64>::new(vec![], vec![0]).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::<f64>::param(vec![1.0, 2.0], vec![2]).unwrap();
        let err = x.backward().unwrap_err();
        assert!(matches!(err, TensorError::NonScalarLoss { .. }));
    }

    #[test]
    fn constant_loss_backward_is_noop() {
        let c = Tensor::<f64>::scalar(3.5);
        c.backward().unwrap();
        assert!(c.grad().is_none());
    }

    #[test]
    fn square_gradient() {
        // loss = x*x at x=3 -> grad 6
        let x = Tensor::<f64>::param(vec![3.0], vec![1]).unwrap();
        let loss = x.mul(&x).unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn grads_accumulate_until_zeroed() {
        let x = Tensor::<f64>::param(vec![3.0], vec![1]).unwrap();
        for _ in 0..2 {
            let loss = x.mul(&x).unwrap();
            loss.backward().unwrap();
        }
        assert_eq!(x.grad().unwrap(), vec![12.0]);
        x.zero_grad();
        let loss = x.mul(&x).unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn diamond_graph_sums_both_paths() {
        // loss = x*x + 2x -> dloss/dx = 2x + 2 = 8 at x=3
        let x = Tensor::<f64>::param(vec![3.0], vec![1]).unwrap();
        let a = x.mul(&x).unwrap();
        let b = x.scale(2.0);
        let loss = a.add(&b).unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![8.0]);
    }
}
