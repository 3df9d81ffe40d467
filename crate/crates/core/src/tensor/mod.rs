//! Dense row-major `f64` tensors with a dynamic reverse-mode tape.
//!
//! Every op records its parents and a backward closure when any input
//! tracks gradients and recording is enabled (see [`no_grad`]). Calling
//! [`Tensor::backward`] on a scalar walks the tape in reverse topological
//! order and accumulates gradients into the leaves.

mod check;
mod ops;
pub mod optim;
pub mod store;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;
use thiserror::Error;

pub use check::{finite_difference, grad_check, GRAD_CHECK_STEP};
pub use ops::{log_sigmoid as scalar_log_sigmoid, sigmoid as scalar_sigmoid};
pub use optim::Adam;
pub use store::{read_archive, write_archive, ArchiveEntry, CheckpointError, Init, ParamStore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} needs {expected} values, got {found}")]
    Data { shape: Vec<usize>, expected: usize, found: usize },
    #[error("backward needs a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("{op}: index {index} out of range for extent {extent}")]
    Index { op: &'static str, index: usize, extent: usize },
}

pub type TResult = Result<Tensor, TensorError>;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Run `f` without recording a tape.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// What a backward closure sees: the output gradient and value, the parent
/// values, and which parents need a gradient.
pub(crate) struct BackCtx<'a> {
    pub g: &'a [f64],
    pub out: &'a [f64],
    pub inputs: &'a [&'a [f64]],
    pub needs: &'a [bool],
}

/// Per-parent gradient contributions. Closures never capture tensors, so
/// dropping a long tape can be done iteratively.
type BackwardFn = dyn Fn(&BackCtx) -> Vec<Option<Vec<f64>>>;

struct Backward {
    parents: Vec<Tensor>,
    f: Box<BackwardFn>,
}

struct Inner {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    backward: Option<Backward>,
}

impl Drop for Inner {
    fn drop(&mut self) {
        let Some(bw) = self.backward.take() else { return };
        let mut stack = bw.parents;
        while let Some(t) = stack.pop() {
            if let Ok(mut inner) = Rc::try_unwrap(t.0) {
                if let Some(b) = inner.backward.take() {
                    stack.extend(b.parents);
                }
            }
        }
    }
}

#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("data", &*self.0.data.borrow())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, backward: Option<Backward>) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Inner {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            backward,
        }))
    }

    pub fn new(shape: &[usize], data: Vec<f64>) -> TResult {
        if numel(shape) != data.len() {
            return Err(TensorError::Data {
                shape: shape.to_vec(),
                expected: numel(shape),
                found: data.len(),
            });
        }
        Ok(Tensor::build(shape.to_vec(), data, false, None))
    }

    /// A leaf that accumulates gradients.
    pub fn param(shape: &[usize], data: Vec<f64>) -> TResult {
        let t = Tensor::new(shape, data)?;
        Ok(Tensor::build(t.shape().to_vec(), t.to_vec(), true, None))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::build(shape.to_vec(), vec![0.0; numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::build(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::build(Vec::new(), vec![value], false, None)
    }

    pub fn vector(data: Vec<f64>) -> Tensor {
        Tensor::build(vec![data.len()], data, false, None)
    }

    /// Record an op result; the tape entry is dropped when nothing upstream
    /// tracks gradients or recording is off.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        f: impl Fn(&BackCtx) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Tensor {
        let track = is_grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let backward = track.then(|| Backward { parents, f: Box::new(f) });
        Tensor::build(shape, data, track, backward)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn len(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    /// Mutable access for optimizers and finite differencing.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let d = self.0.data.borrow();
        assert_eq!(d.len(), 1, "item() on a tensor of shape {:?}", self.0.shape);
        d[0]
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        let mut flat = 0;
        for (i, (&ix, &ext)) in index.iter().zip(&self.0.shape).enumerate() {
            assert!(ix < ext, "index {index:?} out of range for {:?} at axis {i}", self.0.shape);
            flat = flat * ext + ix;
        }
        self.0.data.borrow()[flat]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// A copy of the values outside any tape.
    pub fn detach(&self) -> Tensor {
        Tensor::build(self.0.shape.clone(), self.to_vec(), false, None)
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    fn accumulate(&self, g: Vec<f64>) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g),
        }
    }

    /// Populate gradients of every tracked leaf reachable from this scalar.
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.len() != 1 {
            return Err(TensorError::NotScalar(self.0.shape.clone()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        self.accumulate(vec![1.0]);
        for t in order.iter().rev() {
            let Some(bw) = &t.0.backward else { continue };
            let Some(g) = t.0.grad.borrow_mut().take() else { continue };
            let needs: Vec<bool> = bw.parents.iter().map(Tensor::requires_grad).collect();
            let grads = {
                let out = t.0.data.borrow();
                let refs: Vec<Ref<'_, Vec<f64>>> = bw.parents.iter().map(Tensor::data).collect();
                let inputs: Vec<&[f64]> = refs.iter().map(|r| &r[..]).collect();
                (bw.f)(&BackCtx {
                    g: &g,
                    out: &out,
                    inputs: &inputs,
                    needs: &needs,
                })
            };
            for ((p, pg), need) in bw.parents.iter().zip(grads).zip(needs) {
                if let (Some(pg), true) = (pg, need) {
                    p.accumulate(pg);
                }
            }
        }
        Ok(())
    }

    /// Tracked nodes in post-order (parents before children).
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        seen.insert(self.key());
        while let Some((t, next)) = stack.pop() {
            let pending = {
                let parents = t.0.backward.as_ref().map(|b| &b.parents[..]).unwrap_or(&[]);
                (next..parents.len())
                    .find(|&k| parents[k].requires_grad() && !seen.contains(&parents[k].key()))
                    .map(|k| (k, parents[k].clone()))
            };
            match pending {
                Some((k, p)) => {
                    seen.insert(p.key());
                    stack.push((t, k + 1));
                    stack.push((p, 0));
                }
                None => order.push(t),
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor::param(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 4.0]).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn sigmoid_times_constant_closed_form() {
        let w = Tensor::param(&[1], vec![0.3]).unwrap();
        let c = 2.5;
        w.sigmoid().scale(c).sum().backward().unwrap();
        let s = 1.0 / (1.0 + (-0.3f64).exp());
        assert!((w.grad().unwrap()[0] - c * s * (1.0 - s)).abs() < 1e-15);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let x = Tensor::param(&[1], vec![3.0]).unwrap();
        let y = x.mul(&x).unwrap();
        y.add(&x).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![7.0]);
    }

    #[test]
    fn non_scalar_backward_is_error() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        assert_eq!(x.tanh().backward(), Err(TensorError::NotScalar(vec![2])));
    }

    #[test]
    fn no_grad_records_nothing() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = no_grad(|| x.tanh());
        assert!(!y.requires_grad());
        assert!(is_grad_enabled());
        assert_eq!(y.to_vec(), x.tanh().to_vec());
    }

    #[test]
    fn deep_chain_does_not_overflow_stack() {
        let x = Tensor::param(&[1], vec![0.5]).unwrap();
        let mut y = x.clone();
        for _ in 0..20_000 {
            y = y.scale(1.0);
        }
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0]);
    }

    #[test]
    fn bad_data_length() {
        assert!(matches!(Tensor::new(&[2, 2], vec![0.0; 3]), Err(TensorError::Data { .. })));
    }
}
