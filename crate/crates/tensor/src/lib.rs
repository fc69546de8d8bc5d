//! Reverse-mode automatic differentiation over [`ndarray`] arrays.
//!
//! The engine is a flat tape: every operation appends a node holding its
//! output value and a backward closure, so a fresh [`Graph`] is built per
//! training step and dropped afterwards. All kernels are single-threaded
//! and accumulate in a fixed order, which makes results bit-reproducible
//! for a given input — a property the training loop relies on.
//!
//! Everything is generic over [`Scalar`] so the same code path can be
//! trained in `f32` and gradient-checked against central finite
//! differences in `f64`.

mod graph;
mod im2col;
mod ops;

pub mod gradcheck;

pub use graph::{Gradients, Graph, ValueId};
pub use ops::conv::{conv_out_size, conv_transpose_out_size};

/// Element type the engine operates on. Implemented for `f32` and `f64`.
pub trait Scalar: ndarray::NdFloat + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
