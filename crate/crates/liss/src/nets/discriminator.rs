//! PatchGAN discriminator.
//!
//! Five 4x4 convolutions; the first three downsample by 2, the last two
//! run at stride 1 so a 256-pixel image yields the 31x31 then 30x30 patch
//! grids. The first layer carries no normalization.

use liss_tensor::{Graph, Scalar, ValueId};
use ndarray::ArrayD;
use rand_chacha::ChaCha8Rng;

use super::layers::{Conv2d, InstanceNorm, LEAKY_SLOPE};
use super::params::{Fwd, Init, ParamVector, Registry, TraceRow};
use super::{ArchConfig, Domain};
use crate::error::{Error, Result};
use crate::tasks::TaskId;

pub struct Discriminator<T: Scalar> {
    pub domain: Domain,
    /// Which generative task this discriminator judges.
    pub purpose: TaskId,
    input_size: usize,
    conv1: Conv2d<T>,
    conv2: Conv2d<T>,
    norm2: InstanceNorm<T>,
    conv3: Conv2d<T>,
    norm3: InstanceNorm<T>,
    conv4: Conv2d<T>,
    norm4: InstanceNorm<T>,
    conv5: Conv2d<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(
        cfg: &ArchConfig,
        domain: Domain,
        purpose: TaskId,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        if !purpose.needs_discriminator() {
            return Err(Error::Config(format!(
                "task '{purpose}' does not use a discriminator"
            )));
        }
        let b = cfg.base_channels;
        let mut init = Init::new(rng);
        Ok(Discriminator {
            domain,
            purpose,
            input_size: cfg.input_size,
            conv1: Conv2d::new(&mut init, "c1", cfg.input_channels, b, 4, 2, 1),
            conv2: Conv2d::new(&mut init, "c2", b, 2 * b, 4, 2, 1),
            norm2: InstanceNorm::new("n2", 2 * b),
            conv3: Conv2d::new(&mut init, "c3", 2 * b, 4 * b, 4, 2, 1),
            norm3: InstanceNorm::new("n3", 4 * b),
            conv4: Conv2d::new(&mut init, "c4", 4 * b, 8 * b, 4, 1, 1),
            norm4: InstanceNorm::new("n4", 8 * b),
            conv5: Conv2d::new(&mut init, "c5", 8 * b, 1, 4, 1, 1),
        })
    }

    pub fn prefix(&self) -> String {
        format!("disc_{}.{}", self.domain.tag(), self.purpose.name())
    }

    /// Patch logit grid for a `[N, 3, s, s]` batch.
    pub fn forward(&self, f: &mut Fwd<T>, trainable: bool, x: ValueId) -> Result<ValueId> {
        let shape = f.graph.shape(x).to_vec();
        let s = self.input_size;
        if shape.len() != 4 || shape[1] != 3 || shape[2] != s || shape[3] != s {
            return Err(Error::Input(format!(
                "discriminate: expected [N, 3, {s}, {s}] input, got {shape:?}"
            )));
        }
        let prefix = self.prefix();
        let slope = T::from_f64(LEAKY_SLOPE);
        f.record("input", x);
        let h = self.conv1.forward(f, &prefix, trainable, x);
        let h = f.graph.leaky_relu(h, slope);
        f.record("conv_1", h);
        let h = self.conv2.forward(f, &prefix, trainable, h);
        let h = self.norm2.forward(f, &prefix, trainable, h);
        let h = f.graph.leaky_relu(h, slope);
        f.record("nconv_2", h);
        let h = self.conv3.forward(f, &prefix, trainable, h);
        let h = self.norm3.forward(f, &prefix, trainable, h);
        let h = f.graph.leaky_relu(h, slope);
        f.record("nconv_3", h);
        let h = self.conv4.forward(f, &prefix, trainable, h);
        let h = self.norm4.forward(f, &prefix, trainable, h);
        let h = f.graph.leaky_relu(h, slope);
        f.record("nconv_4", h);
        let h = self.conv5.forward(f, &prefix, trainable, h);
        f.record("conv_out", h);
        Ok(h)
    }

    /// Array-level forward for validation and shape tests.
    pub fn forward_array(&self, batch: &ArrayD<T>) -> Result<ArrayD<T>> {
        let mut graph = Graph::new();
        let mut reg = Registry::new();
        let mut f = Fwd::new(&mut graph, &mut reg);
        let x = f.graph.constant(batch.clone());
        let y = self.forward(&mut f, false, x)?;
        Ok(graph.value(y).clone())
    }

    pub fn trace(&self, batch: &ArrayD<T>) -> Result<Vec<TraceRow>> {
        let mut graph = Graph::new();
        let mut reg = Registry::new();
        let mut trace = Vec::new();
        let mut f = Fwd::with_trace(&mut graph, &mut reg, &mut trace);
        let x = f.graph.constant(batch.clone());
        self.forward(&mut f, false, x)?;
        Ok(trace)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<T>)) {
        self.conv1.visit(f);
        self.conv2.visit(f);
        self.norm2.visit(f);
        self.conv3.visit(f);
        self.norm3.visit(f);
        self.conv4.visit(f);
        self.norm4.visit(f);
        self.conv5.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<T>)) {
        self.conv1.visit_mut(f);
        self.conv2.visit_mut(f);
        self.norm2.visit_mut(f);
        self.conv3.visit_mut(f);
        self.norm3.visit_mut(f);
        self.conv4.visit_mut(f);
        self.norm4.visit_mut(f);
        self.conv5.visit_mut(f);
    }

    pub fn snapshot(&self) -> ParamVector<T> {
        let mut entries = Vec::new();
        self.visit(&mut |name, arr| entries.push((name.to_string(), arr.clone())));
        ParamVector::new(entries)
    }

    pub fn load(&mut self, pv: &ParamVector<T>) -> Result<()> {
        self.snapshot().compatible_with(pv)?;
        let entries: Vec<_> = pv.entries().to_vec();
        let mut i = 0usize;
        self.visit_mut(&mut |_, arr| {
            arr.assign(&entries[i].1);
            i += 1;
        });
        Ok(())
    }
}
