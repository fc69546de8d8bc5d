//! Instance normalization (per-sample, per-channel, affine).

use ndarray::{Array2, Array4, ArrayD, Axis, Ix1, Ix4};

use crate::graph::{GradFn, Graph, ValueId};
use crate::Scalar;

struct InstanceNormGrad<T> {
    mean: Array2<T>,    // [N, C]
    inv_std: Array2<T>, // [N, C]
}

impl<T: Scalar> GradFn<T> for InstanceNormGrad<T> {
    fn backward(
        &self,
        inputs: &[&ArrayD<T>],
        _output: &ArrayD<T>,
        grad: &ArrayD<T>,
        needs: &[bool],
    ) -> Vec<Option<ArrayD<T>>> {
        let x = inputs[0].view().into_dimensionality::<Ix4>().unwrap();
        let gamma = inputs[1].view().into_dimensionality::<Ix1>().unwrap();
        let g = grad.view().into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, w) = x.dim();
        let m = T::from_f64((h * w) as f64);

        let mut dx = needs[0].then(|| Array4::<T>::zeros((n, c, h, w)));
        let mut dgamma = needs[1].then(|| vec![T::zero(); c]);
        let mut dbeta = needs[2].then(|| vec![T::zero(); c]);

        for i in 0..n {
            for ch in 0..c {
                let mu = self.mean[[i, ch]];
                let istd = self.inv_std[[i, ch]];
                let gc = gamma[ch];
                let xs = x.index_axis(Axis(0), i);
                let xs = xs.index_axis(Axis(0), ch);
                let gs = g.index_axis(Axis(0), i);
                let gs = gs.index_axis(Axis(0), ch);

                // Sums needed by every requested gradient.
                let mut sum_g = T::zero();
                let mut sum_g_xhat = T::zero();
                for (gv, xv) in gs.iter().zip(xs.iter()) {
                    let xhat = (*xv - mu) * istd;
                    sum_g = sum_g + *gv;
                    sum_g_xhat = sum_g_xhat + *gv * xhat;
                }
                if let Some(dg) = dgamma.as_mut() {
                    dg[ch] = dg[ch] + sum_g_xhat;
                }
                if let Some(db) = dbeta.as_mut() {
                    db[ch] = db[ch] + sum_g;
                }
                if let Some(dx) = dx.as_mut() {
                    let mean_dxhat = gc * sum_g / m;
                    let mean_dxhat_xhat = gc * sum_g_xhat / m;
                    let mut dxs = dx.index_axis_mut(Axis(0), i);
                    let mut dxs = dxs.index_axis_mut(Axis(0), ch);
                    for ((d, gv), xv) in dxs.iter_mut().zip(gs.iter()).zip(xs.iter()) {
                        let xhat = (*xv - mu) * istd;
                        *d = istd * (gc * *gv - mean_dxhat - xhat * mean_dxhat_xhat);
                    }
                }
            }
        }

        vec![
            dx.map(|a| a.into_dyn()),
            dgamma.map(|v| ArrayD::from_shape_vec(ndarray::IxDyn(&[c]), v).unwrap()),
            dbeta.map(|v| ArrayD::from_shape_vec(ndarray::IxDyn(&[c]), v).unwrap()),
        ]
    }
}

impl<T: Scalar> Graph<T> {
    /// `x: [N, C, H, W]`, `gamma: [C]`, `beta: [C]`. Statistics are computed
    /// per sample and channel with no running averages.
    pub fn instance_norm2d(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        eps: T,
    ) -> ValueId {
        let xv = self.values[x.0]
            .view()
            .into_dimensionality::<Ix4>()
            .expect("instance_norm2d: input must be 4-d");
        let gv = self.values[gamma.0]
            .view()
            .into_dimensionality::<Ix1>()
            .expect("instance_norm2d: gamma must be 1-d");
        let bv = self.values[beta.0]
            .view()
            .into_dimensionality::<Ix1>()
            .expect("instance_norm2d: beta must be 1-d");
        let (n, c, h, w) = xv.dim();
        assert_eq!(gv.len(), c, "instance_norm2d: gamma length mismatch");
        assert_eq!(bv.len(), c, "instance_norm2d: beta length mismatch");
        let m = T::from_f64((h * w) as f64);

        let mut y = Array4::<T>::zeros((n, c, h, w));
        let mut mean = Array2::<T>::zeros((n, c));
        let mut inv_std = Array2::<T>::zeros((n, c));
        for i in 0..n {
            for ch in 0..c {
                let xs = xv.index_axis(Axis(0), i);
                let xs = xs.index_axis(Axis(0), ch);
                let mut mu = T::zero();
                for v in xs.iter() {
                    mu = mu + *v;
                }
                mu = mu / m;
                let mut var = T::zero();
                for v in xs.iter() {
                    let d = *v - mu;
                    var = var + d * d;
                }
                var = var / m;
                let istd = T::one() / (var + eps).sqrt();
                mean[[i, ch]] = mu;
                inv_std[[i, ch]] = istd;
                let (gc, bc) = (gv[ch], bv[ch]);
                let mut ys = y.index_axis_mut(Axis(0), i);
                let mut ys = ys.index_axis_mut(Axis(0), ch);
                for (yv, xv) in ys.iter_mut().zip(xs.iter()) {
                    *yv = (*xv - mu) * istd * gc + bc;
                }
            }
        }

        self.push(
            y.into_dyn(),
            vec![x.0, gamma.0, beta.0],
            Some(Box::new(InstanceNormGrad { mean, inv_std })),
            false,
        )
    }
}
