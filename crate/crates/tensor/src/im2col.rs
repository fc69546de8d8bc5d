//! Patch-matrix lowering for convolutions.
//!
//! `im2col` writes a `[C*kh*kw, Ho*Wo]` column matrix for one image so the
//! convolution becomes a single GEMM; `col2im_add` is its scatter-add
//! adjoint. Both assume (and assert) standard row-major layout.

use ndarray::{Array2, ArrayView3, ArrayViewMut3};

use crate::Scalar;

/// Fills `col` (shape `[c*kh*kw, ho*wo]`) from `x` (shape `[c, h, w]`)
/// with zero padding `p` and stride `s`. `col` is fully overwritten.
pub(crate) fn im2col<T: Scalar>(
    x: &ArrayView3<'_, T>,
    kh: usize,
    kw: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
    col: &mut Array2<T>,
) {
    let (c, h, w) = x.dim();
    debug_assert_eq!(col.dim(), (c * kh * kw, ho * wo));
    let xs = x.as_slice().expect("im2col: input must be contiguous");
    let cs = col.as_slice_mut().expect("im2col: col must be contiguous");
    cs.fill(T::zero());

    for ci in 0..c {
        let x_base = ci * h * w;
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let row_base = row * ho * wo;
                for oh in 0..ho {
                    let ih = (oh * s + ki) as isize - p as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    // Valid ow range: 0 <= ow*s + kj - p < w
                    let lo = if kj >= p {
                        0
                    } else {
                        (p - kj).div_ceil(s)
                    };
                    let hi_excl = {
                        let max_iw = w as isize - 1 - kj as isize + p as isize;
                        if max_iw < 0 {
                            0
                        } else {
                            (max_iw as usize / s + 1).min(wo)
                        }
                    };
                    if lo >= hi_excl {
                        continue;
                    }
                    let x_row = x_base + ih as usize * w;
                    let c_row = row_base + oh * wo;
                    let mut iw = lo * s + kj - p;
                    for ow in lo..hi_excl {
                        cs[c_row + ow] = xs[x_row + iw];
                        iw += s;
                    }
                }
            }
        }
    }
}

/// Scatter-add of a column matrix back onto an image: the adjoint of
/// [`im2col`], also used directly as the forward pass of the transposed
/// convolution.
pub(crate) fn col2im_add<T: Scalar>(
    col: &Array2<T>,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
    out: &mut ArrayViewMut3<'_, T>,
) {
    debug_assert_eq!(out.dim(), (c, h, w));
    debug_assert_eq!(col.dim(), (c * kh * kw, ho * wo));
    let cs = col.as_slice().expect("col2im: col must be contiguous");
    let os = out
        .as_slice_mut()
        .expect("col2im: output must be contiguous");

    for ci in 0..c {
        let o_base = ci * h * w;
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let row_base = row * ho * wo;
                for oh in 0..ho {
                    let ih = (oh * s + ki) as isize - p as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let lo = if kj >= p { 0 } else { (p - kj).div_ceil(s) };
                    let hi_excl = {
                        let max_iw = w as isize - 1 - kj as isize + p as isize;
                        if max_iw < 0 {
                            0
                        } else {
                            (max_iw as usize / s + 1).min(wo)
                        }
                    };
                    if lo >= hi_excl {
                        continue;
                    }
                    let o_row = o_base + ih as usize * w;
                    let c_row = row_base + oh * wo;
                    let mut iw = lo * s + kj - p;
                    for ow in lo..hi_excl {
                        os[o_row + iw] = os[o_row + iw] + cs[c_row + ow];
                        iw += s;
                    }
                }
            }
        }
    }
}
