//! Reductions.

use ndarray::{ArrayD, IxDyn};

use crate::graph::{GradFn, Graph, ValueId};
use crate::Scalar;

struct MeanAllGrad {
    in_shape: Vec<usize>,
}

impl<T: Scalar> GradFn<T> for MeanAllGrad {
    fn backward(
        &self,
        _inputs: &[&ArrayD<T>],
        _output: &ArrayD<T>,
        grad: &ArrayD<T>,
        _needs: &[bool],
    ) -> Vec<Option<ArrayD<T>>> {
        let n: usize = self.in_shape.iter().product();
        let g = grad.iter().next().copied().unwrap() / T::from_f64(n as f64);
        vec![Some(ArrayD::from_elem(IxDyn(&self.in_shape), g))]
    }
}

struct MeanPerSampleGrad {
    in_shape: Vec<usize>,
}

impl<T: Scalar> GradFn<T> for MeanPerSampleGrad {
    fn backward(
        &self,
        _inputs: &[&ArrayD<T>],
        _output: &ArrayD<T>,
        grad: &ArrayD<T>,
        _needs: &[bool],
    ) -> Vec<Option<ArrayD<T>>> {
        let n = self.in_shape[0];
        let m: usize = self.in_shape[1..].iter().product();
        let scale = T::one() / T::from_f64(m as f64);
        let mut dx = ArrayD::<T>::zeros(IxDyn(&self.in_shape));
        let g = grad.as_slice().unwrap();
        let dxs = dx.as_slice_mut().unwrap();
        for i in 0..n {
            let gi = g[i] * scale;
            for v in &mut dxs[i * m..(i + 1) * m] {
                *v = gi;
            }
        }
        vec![Some(dx)]
    }
}

impl<T: Scalar> Graph<T> {
    /// Mean over every element, producing a scalar node of shape `[1]`.
    pub fn mean_all(&mut self, x: ValueId) -> ValueId {
        let xv = &self.values[x.0];
        let n = xv.len();
        assert!(n > 0, "mean_all: empty input");
        let mut acc = T::zero();
        for v in xv.iter() {
            acc = acc + *v;
        }
        let mean = acc / T::from_f64(n as f64);
        let in_shape = xv.shape().to_vec();
        self.push(
            ArrayD::from_elem(IxDyn(&[1]), mean),
            vec![x.0],
            Some(Box::new(MeanAllGrad { in_shape })),
            false,
        )
    }

    /// Mean over all axes but the first: `[N, ...] -> [N]`. Used to average
    /// a discriminator's patch grid into one prediction per sample.
    pub fn mean_per_sample(&mut self, x: ValueId) -> ValueId {
        let xv = &self.values[x.0];
        let shape = xv.shape().to_vec();
        assert!(shape.len() >= 2, "mean_per_sample: input must have >= 2 axes");
        let n = shape[0];
        let m: usize = shape[1..].iter().product();
        assert!(m > 0, "mean_per_sample: empty sample");
        let xs = xv.as_slice().expect("mean_per_sample: input must be contiguous");
        let inv = T::one() / T::from_f64(m as f64);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let mut acc = T::zero();
            for v in &xs[i * m..(i + 1) * m] {
                acc = acc + *v;
            }
            y.push(acc * inv);
        }
        self.push(
            ArrayD::from_shape_vec(IxDyn(&[n]), y).unwrap(),
            vec![x.0],
            Some(Box::new(MeanPerSampleGrad { in_shape: shape })),
            false,
        )
    }
}
