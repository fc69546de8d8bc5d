//! Layer primitives shared by the encoder, heads and discriminators.

use liss_tensor::{Scalar, ValueId};
use ndarray::ArrayD;

use super::params::{Fwd, Init};

pub(crate) const INSTANCE_NORM_EPS: f64 = 1e-5;
pub(crate) const LEAKY_SLOPE: f64 = 0.2;

fn join(prefix: &str, local: &str) -> String {
    format!("{prefix}.{local}")
}

/// Visitor over `(relative_name, array)` pairs in structural order.
pub(crate) type Visit<'v, T> = dyn FnMut(&str, &ArrayD<T>) + 'v;
pub(crate) type VisitMut<'v, T> = dyn FnMut(&str, &mut ArrayD<T>) + 'v;

pub(crate) struct Conv2d<T: Scalar> {
    local: String,
    pub w: ArrayD<T>,
    pub b: ArrayD<T>,
    stride: usize,
    pad: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        init: &mut Init,
        local: &str,
        ci: usize,
        co: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        Conv2d {
            local: local.to_string(),
            w: init.weight(&[co, ci, k, k]),
            b: Init::zeros(&[co]),
            stride,
            pad,
        }
    }

    pub fn forward(&self, f: &mut Fwd<T>, prefix: &str, trainable: bool, x: ValueId) -> ValueId {
        let name = join(prefix, &self.local);
        let w = f.intern(&join(&name, "w"), &self.w, trainable);
        let b = f.intern(&join(&name, "b"), &self.b, trainable);
        f.graph.conv2d(x, w, b, self.stride, self.pad)
    }

    pub fn visit(&self, f: &mut Visit<'_, T>) {
        f(&join(&self.local, "w"), &self.w);
        f(&join(&self.local, "b"), &self.b);
    }

    pub fn visit_mut(&mut self, f: &mut VisitMut<'_, T>) {
        f(&join(&self.local, "w"), &mut self.w);
        f(&join(&self.local, "b"), &mut self.b);
    }
}

pub(crate) struct ConvTranspose2d<T: Scalar> {
    local: String,
    pub w: ArrayD<T>,
    pub b: ArrayD<T>,
    stride: usize,
    pad: usize,
    out_pad: usize,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new(init: &mut Init, local: &str, ci: usize, co: usize, k: usize) -> Self {
        // 3x3, stride 2, pad 1, output padding 1: exact spatial doubling.
        ConvTranspose2d {
            local: local.to_string(),
            w: init.weight(&[ci, co, k, k]),
            b: Init::zeros(&[co]),
            stride: 2,
            pad: 1,
            out_pad: 1,
        }
    }

    pub fn forward(&self, f: &mut Fwd<T>, prefix: &str, trainable: bool, x: ValueId) -> ValueId {
        let name = join(prefix, &self.local);
        let w = f.intern(&join(&name, "w"), &self.w, trainable);
        let b = f.intern(&join(&name, "b"), &self.b, trainable);
        f.graph
            .conv_transpose2d(x, w, b, self.stride, self.pad, self.out_pad)
    }

    pub fn visit(&self, f: &mut Visit<'_, T>) {
        f(&join(&self.local, "w"), &self.w);
        f(&join(&self.local, "b"), &self.b);
    }

    pub fn visit_mut(&mut self, f: &mut VisitMut<'_, T>) {
        f(&join(&self.local, "w"), &mut self.w);
        f(&join(&self.local, "b"), &mut self.b);
    }
}

/// Per-sample, per-channel normalization with affine parameters and no
/// tracked running statistics.
pub(crate) struct InstanceNorm<T: Scalar> {
    local: String,
    pub gamma: ArrayD<T>,
    pub beta: ArrayD<T>,
}

impl<T: Scalar> InstanceNorm<T> {
    pub fn new(local: &str, channels: usize) -> Self {
        InstanceNorm {
            local: local.to_string(),
            gamma: Init::ones(&[channels]),
            beta: Init::zeros(&[channels]),
        }
    }

    pub fn forward(&self, f: &mut Fwd<T>, prefix: &str, trainable: bool, x: ValueId) -> ValueId {
        let name = join(prefix, &self.local);
        let g = f.intern(&join(&name, "g"), &self.gamma, trainable);
        let b = f.intern(&join(&name, "b"), &self.beta, trainable);
        f.graph
            .instance_norm2d(x, g, b, T::from_f64(INSTANCE_NORM_EPS))
    }

    pub fn visit(&self, f: &mut Visit<'_, T>) {
        f(&join(&self.local, "g"), &self.gamma);
        f(&join(&self.local, "b"), &self.beta);
    }

    pub fn visit_mut(&mut self, f: &mut VisitMut<'_, T>) {
        f(&join(&self.local, "g"), &mut self.gamma);
        f(&join(&self.local, "b"), &mut self.beta);
    }
}

pub(crate) struct Linear<T: Scalar> {
    local: String,
    pub w: ArrayD<T>,
    pub b: ArrayD<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(init: &mut Init, local: &str, in_features: usize, out_features: usize) -> Self {
        Linear {
            local: local.to_string(),
            w: init.weight(&[out_features, in_features]),
            b: Init::zeros(&[out_features]),
        }
    }

    pub fn forward(&self, f: &mut Fwd<T>, prefix: &str, trainable: bool, x: ValueId) -> ValueId {
        let name = join(prefix, &self.local);
        let w = f.intern(&join(&name, "w"), &self.w, trainable);
        let b = f.intern(&join(&name, "b"), &self.b, trainable);
        f.graph.linear(x, w, b)
    }

    pub fn visit(&self, f: &mut Visit<'_, T>) {
        f(&join(&self.local, "w"), &self.w);
        f(&join(&self.local, "b"), &self.b);
    }

    pub fn visit_mut(&mut self, f: &mut VisitMut<'_, T>) {
        f(&join(&self.local, "w"), &mut self.w);
        f(&join(&self.local, "b"), &mut self.b);
    }
}

/// Two reflection-padded 3x3 convolutions with instance norm and an
/// identity skip; the first convolution is followed by a rectifier.
pub(crate) struct ResBlock<T: Scalar> {
    local: String,
    conv1: Conv2d<T>,
    norm1: InstanceNorm<T>,
    conv2: Conv2d<T>,
    norm2: InstanceNorm<T>,
}

impl<T: Scalar> ResBlock<T> {
    pub fn new(init: &mut Init, local: &str, channels: usize) -> Self {
        ResBlock {
            local: local.to_string(),
            conv1: Conv2d::new(init, "c1", channels, channels, 3, 1, 0),
            norm1: InstanceNorm::new("n1", channels),
            conv2: Conv2d::new(init, "c2", channels, channels, 3, 1, 0),
            norm2: InstanceNorm::new("n2", channels),
        }
    }

    pub fn forward(&self, f: &mut Fwd<T>, prefix: &str, trainable: bool, x: ValueId) -> ValueId {
        let name = join(prefix, &self.local);
        let h = f.graph.reflect_pad2d(x, 1);
        let h = self.conv1.forward(f, &name, trainable, h);
        let h = self.norm1.forward(f, &name, trainable, h);
        let h = f.graph.relu(h);
        let h = f.graph.reflect_pad2d(h, 1);
        let h = self.conv2.forward(f, &name, trainable, h);
        let h = self.norm2.forward(f, &name, trainable, h);
        f.graph.add(x, h)
    }

    pub fn visit(&self, f: &mut Visit<'_, T>) {
        let local = self.local.clone();
        let mut fwd = |n: &str, a: &ArrayD<T>| f(&format!("{local}.{n}"), a);
        self.conv1.visit(&mut fwd);
        self.norm1.visit(&mut fwd);
        self.conv2.visit(&mut fwd);
        self.norm2.visit(&mut fwd);
    }

    pub fn visit_mut(&mut self, f: &mut VisitMut<'_, T>) {
        let local = self.local.clone();
        let mut fwd = |n: &str, a: &mut ArrayD<T>| f(&format!("{local}.{n}"), a);
        self.conv1.visit_mut(&mut fwd);
        self.norm1.visit_mut(&mut fwd);
        self.conv2.visit_mut(&mut fwd);
        self.norm2.visit_mut(&mut fwd);
    }
}
