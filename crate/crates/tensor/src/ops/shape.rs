//! Shape-only operations.

use ndarray::{ArrayD, IxDyn};

use crate::graph::{GradFn, Graph, ValueId};
use crate::Scalar;

struct ReshapeGrad {
    in_shape: Vec<usize>,
}

impl<T: Scalar> GradFn<T> for ReshapeGrad {
    fn backward(
        &self,
        _inputs: &[&ArrayD<T>],
        _output: &ArrayD<T>,
        grad: &ArrayD<T>,
        _needs: &[bool],
    ) -> Vec<Option<ArrayD<T>>> {
        let g = grad
            .clone()
            .into_shape_with_order(IxDyn(&self.in_shape))
            .expect("reshape backward: shape mismatch");
        vec![Some(g)]
    }
}

impl<T: Scalar> Graph<T> {
    pub fn reshape(&mut self, x: ValueId, shape: &[usize]) -> ValueId {
        let xv = &self.values[x.0];
        let in_shape = xv.shape().to_vec();
        let y = xv
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: element count mismatch");
        self.push(y, vec![x.0], Some(Box::new(ReshapeGrad { in_shape })), false)
    }

    /// Collapse all axes after the first: `[N, ...] -> [N, F]`.
    pub fn flatten(&mut self, x: ValueId) -> ValueId {
        let shape = self.shape(x).to_vec();
        let n = shape[0];
        let f: usize = shape[1..].iter().product();
        self.reshape(x, &[n, f])
    }
}
