use std::cell::{Ref, RefCell, RefMut};
use std::fmt;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::ops::Op;
use crate::tape::is_grad_enabled;
use crate::Float;

pub(crate) struct Node<F: Float> {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: RefCell<Vec<F>>,
    pub(crate) grad: RefCell<Option<Vec<F>>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: RefCell<Option<Op<F>>>,
}

impl<F: Float> Drop for Node<F> {
    // Long recurrent chains would otherwise overflow the stack through
    // recursive `Rc` drops, so parents are unlinked iteratively.
    fn drop(&mut self) {
        let Some(op) = self.op.get_mut().take() else {
            return;
        };
        let mut pending = op.into_parents();
        while let Some(t) = pending.pop() {
            if let Ok(node) = Rc::try_unwrap(t.node) {
                let mut node = node;
                if let Some(op) = node.op.get_mut().take() {
                    pending.extend(op.into_parents());
                }
            }
        }
    }
}

/// A dense row-major tensor that may participate in gradient recording.
pub struct Tensor<F: Float> {
    pub(crate) node: Rc<Node<F>>,
}

impl<F: Float> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

impl<F: Float> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .field("data", &*self.node.data.borrow())
            .finish()
    }
}

impl<F: Float> Tensor<F> {
    fn build(data: Vec<F>, shape: Vec<usize>, requires_grad: bool, op: Option<Op<F>>) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Tensor {
            node: Rc::new(Node {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                op: RefCell::new(op),
            }),
        }
    }

    /// Creates a constant tensor. Fails when `data` does not fill `shape`.
    pub fn new(data: Vec<F>, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::arg(
                "new",
                format!("{} values cannot fill shape {:?}", data.len(), shape),
            ));
        }
        Ok(Self::build(data, shape.to_vec(), false, None))
    }

    /// Creates a trainable leaf.
    pub fn param(data: Vec<F>, shape: &[usize]) -> Result<Self> {
        let t = Self::new(data, shape)?;
        Ok(Self::build(t.to_vec(), shape.to_vec(), true, None))
    }

    pub fn vector(data: Vec<F>) -> Self {
        let n = data.len();
        Self::build(data, vec![n], false, None)
    }

    pub fn scalar(value: F) -> Self {
        Self::build(vec![value], vec![], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::build(vec![F::zero(); n], shape.to_vec(), false, None)
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let n = shape.iter().product();
        Self::build(vec![value; n], shape.to_vec(), false, None)
    }

    /// Result of an operation: records `op` only when gradients are enabled
    /// and some parent requires them.
    pub(crate) fn from_op(data: Vec<F>, shape: Vec<usize>, op: Op<F>) -> Self {
        let requires_grad = is_grad_enabled() && op.parents().iter().any(|p| p.requires_grad());
        if requires_grad {
            Self::build(data, shape, true, Some(op))
        } else {
            Self::build(data, shape, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn ndim(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// Leaves have no recorded operation.
    pub fn is_leaf(&self) -> bool {
        self.node.op.borrow().is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<F>> {
        self.node.data.borrow()
    }

    /// Mutable access to the values, for optimizer updates on leaves.
    pub fn data_mut(&self) -> RefMut<'_, Vec<F>> {
        self.node.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.node.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<F> {
        let data = self.node.data.borrow();
        if data.len() != 1 {
            return Err(TensorError::arg(
                "item",
                format!("tensor of shape {:?} is not a scalar", self.node.shape),
            ));
        }
        Ok(data[0])
    }

    pub fn grad(&self) -> Option<Vec<F>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Multiplies the accumulated gradient in place, if there is one.
    pub fn scale_grad(&self, s: F) {
        if let Some(g) = self.node.grad.borrow_mut().as_mut() {
            g.iter_mut().for_each(|x| *x = *x * s);
        }
    }

    pub(crate) fn grad_mut(&self) -> RefMut<'_, Vec<F>> {
        let mut g = self.node.grad.borrow_mut();
        if g.is_none() {
            *g = Some(vec![F::zero(); self.numel()]);
        }
        RefMut::map(g, |g| g.as_mut().expect("initialized above"))
    }

    pub(crate) fn take_grad(&self) -> Option<Vec<F>> {
        self.node.grad.borrow_mut().take()
    }

    /// A constant copy of the current values, cut off from the tape.
    pub fn detach(&self) -> Self {
        Self::build(self.to_vec(), self.node.shape.clone(), false, None)
    }

    pub(crate) fn node_id(&self) -> usize {
        Rc::as_ptr(&self.node) as *const () as usize
    }

    /// Converts values to another precision; the result is a fresh leaf that
    /// keeps the `requires_grad` flag.
    pub fn cast<G: Float>(&self) -> Tensor<G> {
        let data = self
            .data()
            .iter()
            .map(|&x| G::of(x.to_f64_lossy()))
            .collect();
        Tensor::build(data, self.node.shape.clone(), self.requires_grad() && self.is_leaf(), None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_element_count() {
        assert!(Tensor::<f32>::new(vec![1.0, 2.0], &[3]).is_err());
        let t = Tensor::<f32>::new(vec![1.0; 6], &[2, 3]).unwrap();
        assert_eq!(t.numel(), 6);
        assert!(!t.requires_grad());
    }

    #[test]
    fn item_rejects_non_scalar() {
        assert!(Tensor::<f64>::vector(vec![1.0, 2.0]).item().is_err());
        assert_eq!(Tensor::<f64>::scalar(4.0).item().unwrap(), 4.0);
    }

    #[test]
    fn dropping_a_long_chain_does_not_overflow() {
        let x = Tensor::<f32>::param(vec![1.0], &[1]).unwrap();
        let mut y = x.clone();
        for _ in 0..200_000 {
            y = y.affine(1.0, 0.0);
        }
        drop(y);
        assert_eq!(x.to_vec(), vec![1.0]);
    }
}
