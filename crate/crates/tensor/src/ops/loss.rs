//! Fused losses.

use ndarray::{Array2, ArrayD, IxDyn, Ix2};

use crate::graph::{GradFn, Graph, ValueId};
use crate::Scalar;

struct CrossEntropyGrad {
    labels: Vec<usize>,
}

impl<T: Scalar> GradFn<T> for CrossEntropyGrad {
    fn backward(
        &self,
        inputs: &[&ArrayD<T>],
        _output: &ArrayD<T>,
        grad: &ArrayD<T>,
        _needs: &[bool],
    ) -> Vec<Option<ArrayD<T>>> {
        let z = inputs[0].view().into_dimensionality::<Ix2>().unwrap();
        let (n, k) = z.dim();
        let g = grad.iter().next().copied().unwrap() / T::from_f64(n as f64);
        let mut dz = Array2::<T>::zeros((n, k));
        for i in 0..n {
            let row = z.row(i);
            let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut denom = T::zero();
            for v in row.iter() {
                denom = denom + (*v - max).exp();
            }
            for j in 0..k {
                let p = (row[j] - max).exp() / denom;
                let target = if j == self.labels[i] { T::one() } else { T::zero() };
                dz[[i, j]] = (p - target) * g;
            }
        }
        vec![Some(dz.into_dyn())]
    }
}

impl<T: Scalar> Graph<T> {
    /// Mean softmax cross-entropy over the batch. `logits: [N, K]`,
    /// one class index per row. Evaluated through a shifted log-sum-exp.
    pub fn cross_entropy_logits(&mut self, logits: ValueId, labels: &[usize]) -> ValueId {
        let z = self.values[logits.0]
            .view()
            .into_dimensionality::<Ix2>()
            .expect("cross_entropy_logits: logits must be 2-d");
        let (n, k) = z.dim();
        assert_eq!(labels.len(), n, "cross_entropy_logits: label count mismatch");
        assert!(
            labels.iter().all(|&l| l < k),
            "cross_entropy_logits: label out of range"
        );
        let mut acc = T::zero();
        for i in 0..n {
            let row = z.row(i);
            let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut denom = T::zero();
            for v in row.iter() {
                denom = denom + (*v - max).exp();
            }
            let lse = max + denom.ln();
            acc = acc + lse - row[labels[i]];
        }
        let loss = acc / T::from_f64(n as f64);
        self.push(
            ArrayD::from_elem(IxDyn(&[1]), loss),
            vec![logits.0],
            Some(Box::new(CrossEntropyGrad {
                labels: labels.to_vec(),
            })),
            false,
        )
    }

    /// Mean absolute difference, the L1 criterion used throughout.
    pub fn l1_loss(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let d = self.sub(a, b);
        let d = self.abs(d);
        self.mean_all(d)
    }
}
