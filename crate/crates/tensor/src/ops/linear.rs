//! Fully-connected layer.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayD, Axis, Ix1, Ix2};

use crate::graph::{GradFn, Graph, ValueId};
use crate::Scalar;

struct LinearGrad;

impl<T: Scalar> GradFn<T> for LinearGrad {
    fn backward(
        &self,
        inputs: &[&ArrayD<T>],
        _output: &ArrayD<T>,
        grad: &ArrayD<T>,
        needs: &[bool],
    ) -> Vec<Option<ArrayD<T>>> {
        let x = inputs[0].view().into_dimensionality::<Ix2>().unwrap();
        let w = inputs[1].view().into_dimensionality::<Ix2>().unwrap();
        let g = grad.view().into_dimensionality::<Ix2>().unwrap();
        let (n, f) = x.dim();
        let (o, _) = w.dim();

        let dx = needs[0].then(|| {
            let mut dx = Array2::<T>::zeros((n, f));
            general_mat_mul(T::one(), &g, &w, T::zero(), &mut dx);
            dx.into_dyn()
        });
        let dw = needs[1].then(|| {
            let mut dw = Array2::<T>::zeros((o, f));
            general_mat_mul(T::one(), &g.t(), &x, T::zero(), &mut dw);
            dw.into_dyn()
        });
        let db = needs[2].then(|| g.sum_axis(Axis(0)).into_dyn());
        vec![dx, dw, db]
    }
}

impl<T: Scalar> Graph<T> {
    /// `x: [N, F]`, `w: [O, F]`, `b: [O]` -> `[N, O]`.
    pub fn linear(&mut self, x: ValueId, w: ValueId, b: ValueId) -> ValueId {
        let xv = self.values[x.0]
            .view()
            .into_dimensionality::<Ix2>()
            .expect("linear: input must be 2-d");
        let wv = self.values[w.0]
            .view()
            .into_dimensionality::<Ix2>()
            .expect("linear: weight must be 2-d");
        let bv = self.values[b.0]
            .view()
            .into_dimensionality::<Ix1>()
            .expect("linear: bias must be 1-d");
        let (n, f) = xv.dim();
        let (o, fw) = wv.dim();
        assert_eq!(f, fw, "linear: feature dim mismatch");
        assert_eq!(bv.len(), o, "linear: bias length mismatch");

        let mut y = Array2::<T>::zeros((n, o));
        general_mat_mul(T::one(), &xv, &wv.t(), T::zero(), &mut y);
        let b_row = Array1::from_iter(bv.iter().cloned());
        y += &b_row;

        self.push(
            y.into_dyn(),
            vec![x.0, w.0, b.0],
            Some(Box::new(LinearGrad)),
            false,
        )
    }
}
