//! Max pooling.

use ndarray::{Array4, ArrayD, Ix4};

use crate::graph::{GradFn, Graph, ValueId};
use crate::Scalar;

struct MaxPoolGrad {
    in_shape: [usize; 4],
    argmax: Vec<u32>, // flat input index per output element
}

impl<T: Scalar> GradFn<T> for MaxPoolGrad {
    fn backward(
        &self,
        _inputs: &[&ArrayD<T>],
        _output: &ArrayD<T>,
        grad: &ArrayD<T>,
        _needs: &[bool],
    ) -> Vec<Option<ArrayD<T>>> {
        let g = grad.as_slice().expect("maxpool grad must be contiguous");
        let total: usize = self.in_shape.iter().product();
        let mut dx = vec![T::zero(); total];
        for (k, &src) in self.argmax.iter().enumerate() {
            dx[src as usize] = dx[src as usize] + g[k];
        }
        let dx = ArrayD::from_shape_vec(ndarray::IxDyn(&self.in_shape), dx).unwrap();
        vec![Some(dx)]
    }
}

impl<T: Scalar> Graph<T> {
    /// `k`-by-`k` max pooling with stride `k` (floor semantics on odd
    /// extents). Ties resolve to the first element in scan order.
    pub fn max_pool2d(&mut self, x: ValueId, k: usize) -> ValueId {
        let xv = self.values[x.0]
            .view()
            .into_dimensionality::<Ix4>()
            .expect("max_pool2d: input must be 4-d");
        let (n, c, h, w) = xv.dim();
        assert!(h >= k && w >= k, "max_pool2d: window {k} exceeds input {h}x{w}");
        let (ho, wo) = (h / k, w / k);
        let xs = xv.as_slice().expect("max_pool2d: input must be contiguous");
        let mut y = Array4::<T>::zeros((n, c, ho, wo));
        let mut argmax = vec![0u32; n * c * ho * wo];
        let mut flat = 0usize;
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * h * w;
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut best = T::neg_infinity();
                        let mut best_idx = 0usize;
                        for di in 0..k {
                            let row = base + (oh * k + di) * w + ow * k;
                            for dj in 0..k {
                                let v = xs[row + dj];
                                if v > best {
                                    best = v;
                                    best_idx = row + dj;
                                }
                            }
                        }
                        y[[i, ch, oh, ow]] = best;
                        argmax[flat] = best_idx as u32;
                        flat += 1;
                    }
                }
            }
        }
        self.push(
            y.into_dyn(),
            vec![x.0],
            Some(Box::new(MaxPoolGrad {
                in_shape: [n, c, h, w],
                argmax,
            })),
            false,
        )
    }
}
