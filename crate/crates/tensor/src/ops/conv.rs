//! Strided 2-D convolution and transposed convolution (GEMM-backed).

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayD, Axis, Ix1, Ix4};

use crate::graph::{GradFn, Graph, ValueId};
use crate::im2col::{col2im_add, im2col};
use crate::Scalar;

/// Output extent of a convolution along one axis.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    assert!(
        input + 2 * pad >= kernel,
        "conv: kernel {kernel} larger than padded input {}",
        input + 2 * pad
    );
    (input + 2 * pad - kernel) / stride + 1
}

/// Output extent of a transposed convolution along one axis.
pub fn conv_transpose_out_size(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> usize {
    assert!(out_pad < stride, "conv_transpose: output padding must be < stride");
    (input - 1) * stride + kernel + out_pad - 2 * pad
}

struct Conv2dGrad {
    stride: usize,
    pad: usize,
}

impl<T: Scalar> GradFn<T> for Conv2dGrad {
    fn backward(
        &self,
        inputs: &[&ArrayD<T>],
        _output: &ArrayD<T>,
        grad: &ArrayD<T>,
        needs: &[bool],
    ) -> Vec<Option<ArrayD<T>>> {
        let x = inputs[0].view().into_dimensionality::<Ix4>().unwrap();
        let w = inputs[1].view().into_dimensionality::<Ix4>().unwrap();
        let g = grad.view().into_dimensionality::<Ix4>().unwrap();
        let (n, ci, h, wd) = x.dim();
        let (co, _, kh, kw) = w.dim();
        let (_, _, ho, wo) = g.dim();
        let k = ci * kh * kw;
        let (s, p) = (self.stride, self.pad);

        let w_mat = w.to_shape((co, k)).unwrap();
        let mut col = Array2::<T>::zeros((k, ho * wo));

        let mut dw = needs[1].then(|| Array2::<T>::zeros((co, k)));
        let mut dx = needs[0].then(|| Array4::<T>::zeros((n, ci, h, wd)));

        for i in 0..n {
            let gi = g.index_axis(Axis(0), i);
            let g_mat = gi.to_shape((co, ho * wo)).unwrap();
            if let Some(dw) = dw.as_mut() {
                im2col(&x.index_axis(Axis(0), i), kh, kw, s, p, ho, wo, &mut col);
                general_mat_mul(T::one(), &g_mat, &col.t(), T::one(), dw);
            }
            if let Some(dx) = dx.as_mut() {
                let mut col_g = Array2::<T>::zeros((k, ho * wo));
                general_mat_mul(T::one(), &w_mat.t(), &g_mat, T::zero(), &mut col_g);
                let mut dxi = dx.index_axis_mut(Axis(0), i);
                col2im_add(&col_g, ci, h, wd, kh, kw, s, p, ho, wo, &mut dxi);
            }
        }

        let db = needs[2].then(|| {
            g.sum_axis(Axis(3))
                .sum_axis(Axis(2))
                .sum_axis(Axis(0))
                .into_dyn()
        });

        vec![
            dx.map(|a| a.into_dyn()),
            dw.map(|a| {
                a.into_shape_with_order((co, ci, kh, kw))
                    .unwrap()
                    .into_dyn()
            }),
            db,
        ]
    }
}

struct ConvTranspose2dGrad {
    stride: usize,
    pad: usize,
}

impl<T: Scalar> GradFn<T> for ConvTranspose2dGrad {
    fn backward(
        &self,
        inputs: &[&ArrayD<T>],
        _output: &ArrayD<T>,
        grad: &ArrayD<T>,
        needs: &[bool],
    ) -> Vec<Option<ArrayD<T>>> {
        let x = inputs[0].view().into_dimensionality::<Ix4>().unwrap();
        let w = inputs[1].view().into_dimensionality::<Ix4>().unwrap();
        let g = grad.view().into_dimensionality::<Ix4>().unwrap();
        let (n, ci, h, wd) = x.dim();
        let (_, co, kh, kw) = w.dim();
        let k = co * kh * kw;
        let (s, p) = (self.stride, self.pad);

        let w_mat = w.to_shape((ci, k)).unwrap();
        // im2col over the *output* gradient recovers the conv geometry:
        // conv(output, kernel, s, p) has spatial extent (h, wd) again.
        let mut col = Array2::<T>::zeros((k, h * wd));

        let mut dw = needs[1].then(|| Array2::<T>::zeros((ci, k)));
        let mut dx = needs[0].then(|| Array4::<T>::zeros((n, ci, h, wd)));

        for i in 0..n {
            im2col(&g.index_axis(Axis(0), i), kh, kw, s, p, h, wd, &mut col);
            if let Some(dx) = dx.as_mut() {
                let mut dxi = dx.index_axis_mut(Axis(0), i);
                let mut dx_mat = Array2::<T>::zeros((ci, h * wd));
                general_mat_mul(T::one(), &w_mat, &col, T::zero(), &mut dx_mat);
                dxi.assign(
                    &dx_mat
                        .into_shape_with_order((ci, h, wd))
                        .unwrap(),
                );
            }
            if let Some(dw) = dw.as_mut() {
                let xi = x.index_axis(Axis(0), i);
                let x_mat = xi.to_shape((ci, h * wd)).unwrap();
                general_mat_mul(T::one(), &x_mat, &col.t(), T::one(), dw);
            }
        }

        let db = needs[2].then(|| {
            g.sum_axis(Axis(3))
                .sum_axis(Axis(2))
                .sum_axis(Axis(0))
                .into_dyn()
        });

        vec![
            dx.map(|a| a.into_dyn()),
            dw.map(|a| {
                a.into_shape_with_order((ci, co, kh, kw))
                    .unwrap()
                    .into_dyn()
            }),
            db,
        ]
    }
}

impl<T: Scalar> Graph<T> {
    /// Zero-padded convolution. `x: [N, Ci, H, W]`, `w: [Co, Ci, kh, kw]`,
    /// `b: [Co]`.
    pub fn conv2d(
        &mut self,
        x: ValueId,
        w: ValueId,
        b: ValueId,
        stride: usize,
        pad: usize,
    ) -> ValueId {
        let xv = self.values[x.0]
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv2d: input must be 4-d");
        let wv = self.values[w.0]
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv2d: weight must be 4-d");
        let bv = self.values[b.0]
            .view()
            .into_dimensionality::<Ix1>()
            .expect("conv2d: bias must be 1-d");
        let (n, ci, h, wd) = xv.dim();
        let (co, ciw, kh, kw) = wv.dim();
        assert_eq!(ci, ciw, "conv2d: channel mismatch");
        assert_eq!(bv.len(), co, "conv2d: bias length mismatch");
        let ho = conv_out_size(h, kh, stride, pad);
        let wo = conv_out_size(wd, kw, stride, pad);
        let k = ci * kh * kw;

        let w_mat = wv.to_shape((co, k)).unwrap();
        let mut y = Array4::<T>::zeros((n, co, ho, wo));
        let mut col = Array2::<T>::zeros((k, ho * wo));
        let mut y_mat = Array2::<T>::zeros((co, ho * wo));
        for i in 0..n {
            im2col(&xv.index_axis(Axis(0), i), kh, kw, stride, pad, ho, wo, &mut col);
            general_mat_mul(T::one(), &w_mat, &col, T::zero(), &mut y_mat);
            let mut yi = y.index_axis_mut(Axis(0), i);
            for c in 0..co {
                let bias = bv[c];
                let src = y_mat.index_axis(Axis(0), c);
                let src = src.to_shape((ho, wo)).unwrap();
                let mut dst = yi.index_axis_mut(Axis(0), c);
                dst.assign(&src);
                dst.mapv_inplace(|v| v + bias);
            }
        }

        self.push(
            y.into_dyn(),
            vec![x.0, w.0, b.0],
            Some(Box::new(Conv2dGrad { stride, pad })),
            false,
        )
    }

    /// Transposed convolution with output padding. `x: [N, Ci, H, W]`,
    /// `w: [Ci, Co, kh, kw]`, `b: [Co]`.
    pub fn conv_transpose2d(
        &mut self,
        x: ValueId,
        w: ValueId,
        b: ValueId,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> ValueId {
        let xv = self.values[x.0]
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv_transpose2d: input must be 4-d");
        let wv = self.values[w.0]
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv_transpose2d: weight must be 4-d");
        let bv = self.values[b.0]
            .view()
            .into_dimensionality::<Ix1>()
            .expect("conv_transpose2d: bias must be 1-d");
        let (n, ci, h, wd) = xv.dim();
        let (ciw, co, kh, kw) = wv.dim();
        assert_eq!(ci, ciw, "conv_transpose2d: channel mismatch");
        assert_eq!(bv.len(), co, "conv_transpose2d: bias length mismatch");
        let ho = conv_transpose_out_size(h, kh, stride, pad, out_pad);
        let wo = conv_transpose_out_size(wd, kw, stride, pad, out_pad);
        let k = co * kh * kw;

        let w_mat = wv.to_shape((ci, k)).unwrap();
        let mut y = Array4::<T>::zeros((n, co, ho, wo));
        let mut cols = Array2::<T>::zeros((k, h * wd));
        for i in 0..n {
            let xi = xv.index_axis(Axis(0), i);
            let x_mat = xi.to_shape((ci, h * wd)).unwrap();
            general_mat_mul(T::one(), &w_mat.t(), &x_mat, T::zero(), &mut cols);
            let mut yi = y.index_axis_mut(Axis(0), i);
            col2im_add(&cols, co, ho, wo, kh, kw, stride, pad, h, wd, &mut yi);
            for c in 0..co {
                let bias = bv[c];
                yi.index_axis_mut(Axis(0), c).mapv_inplace(|v| v + bias);
            }
        }

        self.push(
            y.into_dyn(),
            vec![x.0, w.0, b.0],
            Some(Box::new(ConvTranspose2dGrad { stride, pad })),
            false,
        )
    }
}
