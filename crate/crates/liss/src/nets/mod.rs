//! Network construction: shared encoder, task heads and discriminators.
//!
//! The reference layout (256-pixel inputs, 64 base channels, 3 residual
//! blocks) reproduces the published layer tables exactly; both the input
//! resolution and the channel width scale down for desk-size runs.

mod discriminator;
mod layers;
mod params;

pub use discriminator::Discriminator;
pub use params::{Fwd, Init, ParamVector, Registry, TraceRow};

use liss_tensor::{conv_out_size, Graph, Scalar, ValueId};
use ndarray::ArrayD;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::{TaskId, JIGSAW_CLASSES, ROTATION_CLASSES};
use layers::{Conv2d, ConvTranspose2d, InstanceNorm, Linear, ResBlock, LEAKY_SLOPE};

/// Which side of the unpaired pair a network belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    A,
    B,
}

impl Domain {
    pub const BOTH: [Domain; 2] = [Domain::A, Domain::B];

    pub fn tag(self) -> &'static str {
        match self {
            Domain::A => "a",
            Domain::B => "b",
        }
    }

    pub fn other(self) -> Domain {
        match self {
            Domain::A => Domain::B,
            Domain::B => Domain::A,
        }
    }
}

/// Resolution- and width-parametric architecture description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub input_channels: usize,
    pub input_size: usize,
    pub base_channels: usize,
    pub n_residual_blocks: usize,
    /// Ordered task list; pretext tasks first, translation last.
    pub tasks: Vec<TaskId>,
}

impl ArchConfig {
    /// The published reference point: 3x256x256 inputs, 64 base channels,
    /// 3 residual blocks, all five tasks.
    pub fn reference() -> ArchConfig {
        ArchConfig {
            input_channels: 3,
            input_size: 256,
            base_channels: 64,
            n_residual_blocks: 3,
            tasks: TaskId::ALL.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels != 3 {
            return Err(Error::Config(format!(
                "input_channels must be 3, got {}",
                self.input_channels
            )));
        }
        if self.input_size % 4 != 0 {
            return Err(Error::Config(format!(
                "input_size must be divisible by 4, got {}",
                self.input_size
            )));
        }
        if self.input_size < 32 {
            return Err(Error::Config(format!(
                "input_size must be at least 32, got {}",
                self.input_size
            )));
        }
        if self.base_channels < 2 || self.base_channels % 2 != 0 {
            return Err(Error::Config(format!(
                "base_channels must be even and >= 2, got {}",
                self.base_channels
            )));
        }
        if self.n_residual_blocks == 0 {
            return Err(Error::Config(
                "n_residual_blocks must be >= 1".to_string(),
            ));
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("task list is empty".to_string()));
        }
        if *self.tasks.last().unwrap() != TaskId::Translation {
            return Err(Error::Config(
                "task list must end with the translation task".to_string(),
            ));
        }
        let pretext = &self.tasks[..self.tasks.len() - 1];
        if pretext.iter().any(|t| !t.is_pretext()) {
            return Err(Error::Config(
                "translation may only appear as the final task".to_string(),
            ));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if self.tasks[..i].contains(t) {
                return Err(Error::Config(format!("duplicate task '{t}' in task list")));
            }
        }
        Ok(())
    }

    /// Channels of the encoder output: 256 at the reference width.
    pub fn latent_channels(&self) -> usize {
        4 * self.base_channels
    }

    /// Spatial extent of the encoder output: two stride-2 stages give /4.
    pub fn latent_size(&self) -> usize {
        self.input_size / 4
    }
}

/// Shared feature extractor: 7x7 stem, two stride-2 stages, residual tail.
pub struct Encoder<T: Scalar> {
    conv1: Conv2d<T>,
    norm1: InstanceNorm<T>,
    conv2: Conv2d<T>,
    norm2: InstanceNorm<T>,
    conv3: Conv2d<T>,
    norm3: InstanceNorm<T>,
    blocks: Vec<ResBlock<T>>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new(init: &mut Init, cfg: &ArchConfig) -> Self {
        let b = cfg.base_channels;
        Encoder {
            conv1: Conv2d::new(init, "c1", cfg.input_channels, b, 7, 1, 0),
            norm1: InstanceNorm::new("n1", b),
            conv2: Conv2d::new(init, "c2", b, 2 * b, 3, 2, 1),
            norm2: InstanceNorm::new("n2", 2 * b),
            conv3: Conv2d::new(init, "c3", 2 * b, 4 * b, 3, 2, 1),
            norm3: InstanceNorm::new("n3", 4 * b),
            blocks: (0..cfg.n_residual_blocks)
                .map(|i| ResBlock::new(init, &format!("r{i}"), 4 * b))
                .collect(),
        }
    }

    pub fn forward(&self, f: &mut Fwd<T>, prefix: &str, trainable: bool, x: ValueId) -> ValueId {
        f.record("input", x);
        let h = f.graph.reflect_pad2d(x, 3);
        f.record("reflection_pad_3", h);
        let h = self.conv1.forward(f, prefix, trainable, h);
        let h = self.norm1.forward(f, prefix, trainable, h);
        let h = f.graph.relu(h);
        f.record("nconv_stem_7x7", h);
        let h = self.conv2.forward(f, prefix, trainable, h);
        let h = self.norm2.forward(f, prefix, trainable, h);
        let h = f.graph.relu(h);
        f.record("nconv_down_1", h);
        let h = self.conv3.forward(f, prefix, trainable, h);
        let h = self.norm3.forward(f, prefix, trainable, h);
        let mut h = f.graph.relu(h);
        f.record("nconv_down_2", h);
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(f, prefix, trainable, h);
            f.record(&format!("resnet_block_{i}"), h);
        }
        h
    }

    pub fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<T>)) {
        self.conv1.visit(f);
        self.norm1.visit(f);
        self.conv2.visit(f);
        self.norm2.visit(f);
        self.conv3.visit(f);
        self.norm3.visit(f);
        for b in &self.blocks {
            b.visit(f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<T>)) {
        self.conv1.visit_mut(f);
        self.norm1.visit_mut(f);
        self.conv2.visit_mut(f);
        self.norm2.visit_mut(f);
        self.conv3.visit_mut(f);
        self.norm3.visit_mut(f);
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
    }

    /// Deep copy of all parameters, keyed by structural names.
    pub fn snapshot(&self) -> ParamVector<T> {
        let mut entries = Vec::new();
        self.visit(&mut |name, arr| entries.push((name.to_string(), arr.clone())));
        ParamVector::new(entries)
    }

    /// Overwrites all parameters from a snapshot of the same architecture.
    pub fn load(&mut self, pv: &ParamVector<T>) -> Result<()> {
        self.snapshot().compatible_with(pv)?;
        let mut i = 0usize;
        let entries = pv.entries();
        self.visit_mut(&mut |_, arr| {
            arr.assign(&entries[i].1);
            i += 1;
        });
        Ok(())
    }
}

/// Classification head: three stride-2 stages around a max-pool, then a
/// linear readout (4 classes for rotation, 64 for the jigsaw puzzle).
pub struct ConvClassifier<T: Scalar> {
    conv1: Conv2d<T>,
    norm1: InstanceNorm<T>,
    conv2: Conv2d<T>,
    norm2: InstanceNorm<T>,
    conv3: Conv2d<T>,
    norm3: InstanceNorm<T>,
    fc: Linear<T>,
}

impl<T: Scalar> ConvClassifier<T> {
    fn new(init: &mut Init, cfg: &ArchConfig, classes: usize) -> Self {
        let c = cfg.latent_channels();
        let l = cfg.latent_size();
        let l1 = conv_out_size(l, 3, 2, 1);
        let l2 = conv_out_size(l1, 3, 2, 1);
        let lp = l2 / 2;
        let l3 = conv_out_size(lp, 3, 2, 1);
        let features = (c / 2) * l3 * l3;
        ConvClassifier {
            conv1: Conv2d::new(init, "c1", c, c, 3, 2, 1),
            norm1: InstanceNorm::new("n1", c),
            conv2: Conv2d::new(init, "c2", c, c, 3, 2, 1),
            norm2: InstanceNorm::new("n2", c),
            conv3: Conv2d::new(init, "c3", c, c / 2, 3, 2, 1),
            norm3: InstanceNorm::new("n3", c / 2),
            fc: Linear::new(init, "fc", features, classes),
        }
    }

    fn forward(&self, f: &mut Fwd<T>, prefix: &str, trainable: bool, z: ValueId) -> ValueId {
        let slope = T::from_f64(LEAKY_SLOPE);
        let h = self.conv1.forward(f, prefix, trainable, z);
        let h = self.norm1.forward(f, prefix, trainable, h);
        let h = f.graph.leaky_relu(h, slope);
        f.record("nconv_1", h);
        let h = self.conv2.forward(f, prefix, trainable, h);
        let h = self.norm2.forward(f, prefix, trainable, h);
        let h = f.graph.leaky_relu(h, slope);
        f.record("nconv_2", h);
        let h = f.graph.max_pool2d(h, 2);
        f.record("max_pool_2x2", h);
        let h = self.conv3.forward(f, prefix, trainable, h);
        let h = self.norm3.forward(f, prefix, trainable, h);
        let h = f.graph.leaky_relu(h, slope);
        f.record("nconv_3", h);
        let h = f.graph.flatten(h);
        f.record("flatten", h);
        let h = self.fc.forward(f, prefix, trainable, h);
        f.record("linear", h);
        h
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<T>)) {
        self.conv1.visit(f);
        self.norm1.visit(f);
        self.conv2.visit(f);
        self.norm2.visit(f);
        self.conv3.visit(f);
        self.norm3.visit(f);
        self.fc.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<T>)) {
        self.conv1.visit_mut(f);
        self.norm1.visit_mut(f);
        self.conv2.visit_mut(f);
        self.norm2.visit_mut(f);
        self.conv3.visit_mut(f);
        self.norm3.visit_mut(f);
        self.fc.visit_mut(f);
    }
}

/// Dense head: residual tail, two upsampling transposed convolutions and
/// a 7x7 projection. Translation/colorization squash through tanh; the
/// depth head emits one raw channel.
pub struct DecoderHead<T: Scalar> {
    blocks: Vec<ResBlock<T>>,
    up1: ConvTranspose2d<T>,
    norm1: InstanceNorm<T>,
    up2: ConvTranspose2d<T>,
    norm2: InstanceNorm<T>,
    out: Conv2d<T>,
    tanh: bool,
}

impl<T: Scalar> DecoderHead<T> {
    fn new(init: &mut Init, cfg: &ArchConfig, out_channels: usize, tanh: bool) -> Self {
        let c = cfg.latent_channels();
        DecoderHead {
            blocks: (0..cfg.n_residual_blocks)
                .map(|i| ResBlock::new(init, &format!("r{i}"), c))
                .collect(),
            up1: ConvTranspose2d::new(init, "t1", c, c / 2, 3),
            norm1: InstanceNorm::new("n1", c / 2),
            up2: ConvTranspose2d::new(init, "t2", c / 2, c / 4, 3),
            norm2: InstanceNorm::new("n2", c / 4),
            out: Conv2d::new(init, "out", c / 4, out_channels, 7, 1, 0),
            tanh,
        }
    }

    fn forward(&self, f: &mut Fwd<T>, prefix: &str, trainable: bool, z: ValueId) -> ValueId {
        let mut h = z;
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(f, prefix, trainable, h);
            f.record(&format!("resnet_block_{i}"), h);
        }
        let h = self.up1.forward(f, prefix, trainable, h);
        let h = self.norm1.forward(f, prefix, trainable, h);
        let h = f.graph.relu(h);
        f.record("tconv_1", h);
        let h = self.up2.forward(f, prefix, trainable, h);
        let h = self.norm2.forward(f, prefix, trainable, h);
        let h = f.graph.relu(h);
        f.record("tconv_2", h);
        let h = f.graph.reflect_pad2d(h, 3);
        f.record("reflection_pad_3", h);
        let mut h = self.out.forward(f, prefix, trainable, h);
        f.record("conv_out_7x7", h);
        if self.tanh {
            h = f.graph.tanh(h);
            f.record("tanh", h);
        }
        h
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<T>)) {
        for b in &self.blocks {
            b.visit(f);
        }
        self.up1.visit(f);
        self.norm1.visit(f);
        self.up2.visit(f);
        self.norm2.visit(f);
        self.out.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<T>)) {
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        self.up1.visit_mut(f);
        self.norm1.visit_mut(f);
        self.up2.visit_mut(f);
        self.norm2.visit_mut(f);
        self.out.visit_mut(f);
    }
}

pub enum Head<T: Scalar> {
    Classifier(ConvClassifier<T>),
    Decoder(DecoderHead<T>),
}

impl<T: Scalar> Head<T> {
    fn forward(&self, f: &mut Fwd<T>, prefix: &str, trainable: bool, z: ValueId) -> ValueId {
        match self {
            Head::Classifier(c) => c.forward(f, prefix, trainable, z),
            Head::Decoder(d) => d.forward(f, prefix, trainable, z),
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<T>)) {
        match self {
            Head::Classifier(c) => c.visit(f),
            Head::Decoder(d) => d.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<T>)) {
        match self {
            Head::Classifier(c) => c.visit_mut(f),
            Head::Decoder(d) => d.visit_mut(f),
        }
    }
}

/// A domain's multi-headed generator: one shared encoder plus one head
/// per configured task. The translation head of the domain-`i` generator
/// produces images that should look like domain `i`.
pub struct Generator<T: Scalar> {
    pub domain: Domain,
    pub cfg: ArchConfig,
    pub encoder: Encoder<T>,
    heads: Vec<(TaskId, Head<T>)>,
}

/// Builds a generator with seeded Gaussian(0, 0.02) weight initialization.
pub fn build_generator<T: Scalar>(
    cfg: &ArchConfig,
    domain: Domain,
    rng: ChaCha8Rng,
) -> Result<Generator<T>> {
    cfg.validate()?;
    let mut init = Init::new(rng);
    let encoder = Encoder::new(&mut init, cfg);
    let mut heads = Vec::new();
    for &task in &cfg.tasks {
        let head = match task {
            TaskId::Rotation => {
                Head::Classifier(ConvClassifier::new(&mut init, cfg, ROTATION_CLASSES))
            }
            TaskId::Jigsaw => {
                Head::Classifier(ConvClassifier::new(&mut init, cfg, JIGSAW_CLASSES))
            }
            TaskId::Depth => Head::Decoder(DecoderHead::new(&mut init, cfg, 1, false)),
            TaskId::Colorization | TaskId::Translation => {
                Head::Decoder(DecoderHead::new(&mut init, cfg, 3, true))
            }
        };
        heads.push((task, head));
    }
    Ok(Generator {
        domain,
        cfg: cfg.clone(),
        encoder,
        heads,
    })
}

impl<T: Scalar> Generator<T> {
    pub fn prefix(&self) -> String {
        format!("gen_{}", self.domain.tag())
    }

    fn encoder_prefix(&self) -> String {
        format!("{}.enc", self.prefix())
    }

    fn head_prefix(&self, task: TaskId) -> String {
        format!("{}.head.{}", self.prefix(), task.name())
    }

    pub fn tasks(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.heads.iter().map(|(t, _)| *t)
    }

    pub fn has_head(&self, task: TaskId) -> bool {
        self.heads.iter().any(|(t, _)| *t == task)
    }

    /// Encoder forward. Input batches must be `[N, 3, s, s]` at the
    /// configured size.
    pub fn encode(&self, f: &mut Fwd<T>, trainable: bool, x: ValueId) -> Result<ValueId> {
        let shape = f.graph.shape(x).to_vec();
        let s = self.cfg.input_size;
        if shape.len() != 4 || shape[1] != self.cfg.input_channels || shape[2] != s || shape[3] != s
        {
            return Err(Error::Input(format!(
                "encode: expected [N, {}, {s}, {s}] input, got {shape:?}",
                self.cfg.input_channels
            )));
        }
        Ok(self
            .encoder
            .forward(f, &self.encoder_prefix(), trainable, x))
    }

    /// Runs one task head on an encoded latent.
    pub fn head_forward(
        &self,
        f: &mut Fwd<T>,
        task: TaskId,
        trainable: bool,
        z: ValueId,
    ) -> Result<ValueId> {
        let head = self
            .heads
            .iter()
            .find(|(t, _)| *t == task)
            .map(|(_, h)| h)
            .ok_or_else(|| Error::UnknownTask(format!("{task} (no such head)")))?;
        let shape = f.graph.shape(z).to_vec();
        let (c, l) = (self.cfg.latent_channels(), self.cfg.latent_size());
        if shape.len() != 4 || shape[1] != c || shape[2] != l || shape[3] != l {
            return Err(Error::Input(format!(
                "head_forward: expected [N, {c}, {l}, {l}] latent, got {shape:?}"
            )));
        }
        Ok(head.forward(f, &self.head_prefix(task), trainable, z))
    }

    /// Encoder + one head in a throwaway graph; used by validation and
    /// shape tests.
    pub fn run_task_array(&self, task: TaskId, batch: &ArrayD<T>) -> Result<ArrayD<T>> {
        let mut graph = Graph::new();
        let mut reg = Registry::new();
        let mut f = Fwd::new(&mut graph, &mut reg);
        let x = f.graph.constant(batch.clone());
        let z = self.encode(&mut f, false, x)?;
        let y = self.head_forward(&mut f, task, false, z)?;
        Ok(graph.value(y).clone())
    }

    /// Encoder only, array in / array out.
    pub fn encode_array(&self, batch: &ArrayD<T>) -> Result<ArrayD<T>> {
        let mut graph = Graph::new();
        let mut reg = Registry::new();
        let mut f = Fwd::new(&mut graph, &mut reg);
        let x = f.graph.constant(batch.clone());
        let z = self.encode(&mut f, false, x)?;
        Ok(graph.value(z).clone())
    }

    /// Layer-by-layer output shapes of the encoder and one head.
    pub fn trace_task(&self, task: TaskId, batch: &ArrayD<T>) -> Result<Vec<TraceRow>> {
        let mut graph = Graph::new();
        let mut reg = Registry::new();
        let mut trace = Vec::new();
        let mut f = Fwd::with_trace(&mut graph, &mut reg, &mut trace);
        let x = f.graph.constant(batch.clone());
        let z = self.encode(&mut f, false, x)?;
        self.head_forward(&mut f, task, false, z)?;
        Ok(trace)
    }

    /// Visits every parameter (encoder first, then heads in task order)
    /// with names relative to the generator root.
    pub fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<T>)) {
        self.encoder
            .visit(&mut |name, arr| f(&format!("enc.{name}"), arr));
        for (task, head) in &self.heads {
            head.visit(&mut |name, arr| f(&format!("head.{}.{name}", task.name()), arr));
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<T>)) {
        self.encoder
            .visit_mut(&mut |name, arr| f(&format!("enc.{name}"), arr));
        for (task, head) in &mut self.heads {
            head.visit_mut(&mut |name, arr| f(&format!("head.{}.{name}", task.name()), arr));
        }
    }

    pub fn snapshot_all(&self) -> ParamVector<T> {
        let mut entries = Vec::new();
        self.visit(&mut |name, arr| entries.push((name.to_string(), arr.clone())));
        ParamVector::new(entries)
    }

    pub fn head_snapshot(&self, task: TaskId) -> Result<ParamVector<T>> {
        let head = self
            .heads
            .iter()
            .find(|(t, _)| *t == task)
            .map(|(_, h)| h)
            .ok_or_else(|| Error::UnknownTask(format!("{task} (no such head)")))?;
        let mut entries = Vec::new();
        head.visit(&mut |name, arr| entries.push((name.to_string(), arr.clone())));
        Ok(ParamVector::new(entries))
    }

    pub fn load_all(&mut self, pv: &ParamVector<T>) -> Result<()> {
        self.snapshot_all().compatible_with(pv)?;
        let entries: Vec<_> = pv.entries().to_vec();
        let mut i = 0usize;
        self.visit_mut(&mut |_, arr| {
            arr.assign(&entries[i].1);
            i += 1;
        });
        Ok(())
    }
}

/// Spec-level free functions mirroring the snapshot/load operations.
pub fn snapshot_params<T: Scalar>(encoder: &Encoder<T>) -> ParamVector<T> {
    encoder.snapshot()
}

pub fn load_params<T: Scalar>(encoder: &mut Encoder<T>, pv: &ParamVector<T>) -> Result<()> {
    encoder.load(pv)
}
