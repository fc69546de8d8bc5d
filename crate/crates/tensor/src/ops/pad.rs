//! Reflection padding.

use ndarray::{Array4, ArrayD, Ix4};

use crate::graph::{GradFn, Graph, ValueId};
use crate::Scalar;

/// Mirror index without edge repetition: `-1 -> 1`, `n -> n-2`.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut s = i;
    if s < 0 {
        s = -s;
    }
    if s >= n {
        s = 2 * n - 2 - s;
    }
    s as usize
}

struct ReflectPadGrad {
    pad: usize,
}

impl<T: Scalar> GradFn<T> for ReflectPadGrad {
    fn backward(
        &self,
        inputs: &[&ArrayD<T>],
        _output: &ArrayD<T>,
        grad: &ArrayD<T>,
        _needs: &[bool],
    ) -> Vec<Option<ArrayD<T>>> {
        let x = inputs[0].view().into_dimensionality::<Ix4>().unwrap();
        let g = grad.view().into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, w) = x.dim();
        let p = self.pad as isize;
        let (ho, wo) = (h + 2 * self.pad, w + 2 * self.pad);
        let mut dx = Array4::<T>::zeros((n, c, h, w));
        for i in 0..n {
            for ch in 0..c {
                for oh in 0..ho {
                    let ih = reflect(oh as isize - p, h);
                    for ow in 0..wo {
                        let iw = reflect(ow as isize - p, w);
                        dx[[i, ch, ih, iw]] = dx[[i, ch, ih, iw]] + g[[i, ch, oh, ow]];
                    }
                }
            }
        }
        vec![Some(dx.into_dyn())]
    }
}

impl<T: Scalar> Graph<T> {
    /// Reflection-pads the two spatial axes of `x: [N, C, H, W]` by `pad`.
    pub fn reflect_pad2d(&mut self, x: ValueId, pad: usize) -> ValueId {
        let xv = self.values[x.0]
            .view()
            .into_dimensionality::<Ix4>()
            .expect("reflect_pad2d: input must be 4-d");
        let (n, c, h, w) = xv.dim();
        assert!(
            pad < h && pad < w,
            "reflect_pad2d: pad {pad} too large for {h}x{w} input"
        );
        let p = pad as isize;
        let mut y = Array4::<T>::zeros((n, c, h + 2 * pad, w + 2 * pad));
        for i in 0..n {
            for ch in 0..c {
                for oh in 0..h + 2 * pad {
                    let ih = reflect(oh as isize - p, h);
                    for ow in 0..w + 2 * pad {
                        let iw = reflect(ow as isize - p, w);
                        y[[i, ch, oh, ow]] = xv[[i, ch, ih, iw]];
                    }
                }
            }
        }
        self.push(
            y.into_dyn(),
            vec![x.0],
            Some(Box::new(ReflectPadGrad { pad })),
            false,
        )
    }
}
