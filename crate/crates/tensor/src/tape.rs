use std::cell::Cell;
use std::collections::HashSet;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;
use crate::Float;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Runs `f` without recording operations; tensors produced inside carry no
/// parents and cannot be differentiated.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

/// Topologically ordered record of every gradient-carrying node reachable
/// from a root, parents before children.
pub struct Tape<F: Float> {
    order: Vec<Tensor<F>>,
}

impl<F: Float> Tape<F> {
    pub fn record(root: &Tensor<F>) -> Self {
        let mut order = Vec::new();
        if !root.requires_grad() {
            return Tape { order };
        }
        let mut visited = HashSet::new();
        // (node, parents already expanded)
        let mut stack = vec![(root.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.node_id()) {
                continue;
            }
            let parents: Vec<Tensor<F>> = match &*t.node.op.borrow() {
                Some(op) => op
                    .parents()
                    .into_iter()
                    .filter(|p| p.requires_grad())
                    .cloned()
                    .collect(),
                None => Vec::new(),
            };
            stack.push((t, true));
            for p in parents.into_iter().rev() {
                if !visited.contains(&p.node_id()) {
                    stack.push((p, false));
                }
            }
        }
        Tape { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn nodes(&self) -> &[Tensor<F>] {
        &self.order
    }

    /// Trainable leaves reachable from the root.
    pub fn leaves(&self) -> impl Iterator<Item = &Tensor<F>> {
        self.order.iter().filter(|t| t.is_leaf())
    }

    /// Seeds the last node (the root) with `d root = 1` and replays the record
    /// in reverse. Intermediate gradients are released once propagated.
    fn replay(&self) {
        let Some(root) = self.order.last() else {
            return;
        };
        root.grad_mut().iter_mut().for_each(|g| *g = *g + F::one());
        for t in self.order.iter().rev() {
            let op = t.node.op.borrow();
            let Some(op) = op.as_ref() else {
                continue;
            };
            let Some(grad) = t.take_grad() else {
                continue;
            };
            let out = t.data();
            op.propagate(&out, t.shape(), &grad);
        }
    }

    /// Drops the record, freeing intermediate state held only by it.
    pub fn clear(&mut self) {
        self.order.clear();
    }
}

impl<F: Float> Tensor<F> {
    /// Accumulates `d self / d leaf` into every reachable trainable leaf.
    /// Repeated calls without zeroing add up.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::arg(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.shape()),
            ));
        }
        if !self.requires_grad() {
            return Err(TensorError::arg(
                "backward",
                "loss does not depend on any tensor that requires gradients",
            ));
        }
        Tape::record(self).replay();
        Ok(())
    }
}
