//! The tape: node storage, forward value access and reverse accumulation.

use ndarray::ArrayD;

use crate::Scalar;

/// Handle to a node on the tape.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ValueId(pub(crate) usize);

/// Backward rule of one operation.
///
/// `inputs` are the parent values in registration order, `output` is the
/// node's own forward value and `grad` is dL/d(output). `needs[k]` tells
/// whether the k-th parent requires a gradient at all, letting expensive
/// rules (convolutions) skip dead branches.
pub(crate) trait GradFn<T: Scalar> {
    fn backward(
        &self,
        inputs: &[&ArrayD<T>],
        output: &ArrayD<T>,
        grad: &ArrayD<T>,
        needs: &[bool],
    ) -> Vec<Option<ArrayD<T>>>;
}

pub struct Graph<T: Scalar> {
    pub(crate) values: Vec<ArrayD<T>>,
    pub(crate) parents: Vec<Vec<usize>>,
    pub(crate) grad_fns: Vec<Option<Box<dyn GradFn<T>>>>,
    pub(crate) needs_grad: Vec<bool>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            values: Vec::new(),
            parents: Vec::new(),
            grad_fns: Vec::new(),
            needs_grad: Vec::new(),
        }
    }

    /// Leaf that does not require a gradient.
    pub fn constant(&mut self, value: ArrayD<T>) -> ValueId {
        self.push(value, Vec::new(), None, false)
    }

    /// Leaf that accumulates a gradient during [`Graph::backward`].
    pub fn param(&mut self, value: ArrayD<T>) -> ValueId {
        self.push(value, Vec::new(), None, true)
    }

    /// Copy of `id`'s value through which no gradient flows.
    pub fn detach(&mut self, id: ValueId) -> ValueId {
        let v = self.values[id.0].clone();
        self.constant(v)
    }

    pub fn value(&self, id: ValueId) -> &ArrayD<T> {
        &self.values[id.0]
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        self.values[id.0].shape()
    }

    /// Value of a single-element node.
    pub fn scalar(&self, id: ValueId) -> T {
        let v = &self.values[id.0];
        assert_eq!(v.len(), 1, "scalar() called on non-scalar node");
        *v.iter().next().unwrap()
    }

    pub fn num_nodes(&self) -> usize {
        self.values.len()
    }

    pub(crate) fn push(
        &mut self,
        value: ArrayD<T>,
        parents: Vec<usize>,
        grad_fn: Option<Box<dyn GradFn<T>>>,
        leaf_grad: bool,
    ) -> ValueId {
        let needs = leaf_grad
            || (grad_fn.is_some() && parents.iter().any(|&p| self.needs_grad[p]));
        self.values.push(value);
        self.parents.push(parents);
        self.grad_fns.push(grad_fn);
        self.needs_grad.push(needs);
        ValueId(self.values.len() - 1)
    }

    /// Reverse pass from a scalar loss node. Gradients of intermediate
    /// nodes are freed as soon as they have been propagated; only leaf
    /// parameters keep theirs, retrievable from the returned [`Gradients`].
    pub fn backward(&self, loss: ValueId) -> Gradients<T> {
        let lv = &self.values[loss.0];
        assert_eq!(lv.len(), 1, "backward() requires a scalar loss");
        let mut grads: Vec<Option<ArrayD<T>>> = vec![None; self.values.len()];
        grads[loss.0] = Some(ArrayD::ones(lv.raw_dim()));

        for id in (0..=loss.0).rev() {
            if !self.needs_grad[id] {
                grads[id] = None;
                continue;
            }
            let Some(grad_fn) = &self.grad_fns[id] else {
                continue; // leaf parameter: keep its gradient
            };
            let Some(grad) = grads[id].take() else {
                continue; // not on any path to the loss
            };
            let parent_ids = &self.parents[id];
            let inputs: Vec<&ArrayD<T>> =
                parent_ids.iter().map(|&p| &self.values[p]).collect();
            let needs: Vec<bool> =
                parent_ids.iter().map(|&p| self.needs_grad[p]).collect();
            let pgrads = grad_fn.backward(&inputs, &self.values[id], &grad, &needs);
            debug_assert_eq!(pgrads.len(), parent_ids.len());
            for (k, pg) in pgrads.into_iter().enumerate() {
                let p = parent_ids[k];
                if !self.needs_grad[p] {
                    continue;
                }
                if let Some(pg) = pg {
                    debug_assert_eq!(pg.shape(), self.values[p].shape());
                    match &mut grads[p] {
                        Some(acc) => *acc += &pg,
                        slot => *slot = Some(pg),
                    }
                }
            }
        }
        Gradients { grads }
    }
}

/// Leaf gradients produced by one reverse pass.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<ArrayD<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ValueId) -> Option<&ArrayD<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: ValueId) -> Option<ArrayD<T>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}
