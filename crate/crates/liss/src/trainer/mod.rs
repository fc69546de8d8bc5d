//! The optimization loop: per-step loss assembly for the selected
//! schedule, alternating generator/discriminator updates, validation,
//! curriculum transitions, checkpointing and the training log.

mod metrics;

pub use metrics::{
    metric_key, DomainRetention, ForgettingReport, MetricsRecord, TrainingLog,
};

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Instant;

use liss_tensor::{Graph, Scalar, ValueId};
use ndarray::{Array2, Array3, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ckpt;
use crate::data::{BatchIterator, UnpairedDataset};
use crate::error::{Error, Result};
use crate::nets::{
    build_generator, ArchConfig, Discriminator, Domain, Fwd, Generator, Registry,
};
use crate::optim::{OptimConfig, OptimKind, Optimizer};
use crate::schedule::{distillation_loss, CurriculumState, ReferenceEncoder, ScheduleKind};
use crate::tasks::{
    classification_loss, colorization_loss, cycle_loss, depth_loss, gan_discriminator_loss,
    gan_generator_loss, grayify, identity_loss, make_jigsaw_sample, make_rotation_sample,
    translation_objective, GanMode, PermutationTable, TaskId, TaskSpec, Threshold,
    JIGSAW_CLASSES, ROTATION_CLASSES,
};

/// Everything one training run needs to know.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub schedule: ScheduleKind,
    pub arch: ArchConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Translation-task optimizer steps to run. Pretext steps do not
    /// count under the sequential/continual curricula; every step counts
    /// for the baseline and parallel schedules.
    pub max_translation_steps: u64,
    /// EMA coefficient of the reference encoder.
    pub alpha: f64,
    /// Distillation weight of the continual objective.
    pub beta: f64,
    /// Per-task loss weights (default 1).
    pub lambda: BTreeMap<TaskId, f64>,
    pub lambda_idt: f64,
    pub lambda_cyc: f64,
    /// Per-task curriculum thresholds (defaults: 85% accuracy, 0.15 L1).
    pub thresholds: BTreeMap<TaskId, Threshold>,
    pub validation_cadence: u64,
    /// Abort when a task fails to transition within this many steps.
    pub stall_budget: u64,
    /// Optional hard cap forcing a transition (bounded desk experiments).
    pub max_steps_per_task: Option<u64>,
    /// Cap on validation images per domain (full set when absent).
    pub val_max: Option<usize>,
    pub gan_mode: GanMode,
    pub optimizer: OptimKind,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl TrainConfig {
    /// Desk-scale defaults: 64-pixel images, 16 base channels, the paper's
    /// optimizer settings (RAdam, lr 5e-4, alpha 0.5, unit task weights).
    pub fn desk(schedule: ScheduleKind, tasks: Vec<TaskId>, output_dir: PathBuf) -> TrainConfig {
        TrainConfig {
            schedule,
            arch: ArchConfig {
                input_channels: 3,
                input_size: 64,
                base_channels: 16,
                n_residual_blocks: 2,
                tasks,
            },
            learning_rate: 5e-4,
            batch_size: 5,
            max_translation_steps: 2000,
            alpha: 0.5,
            beta: 1.0,
            lambda: BTreeMap::new(),
            lambda_idt: 5.0,
            lambda_cyc: 10.0,
            thresholds: BTreeMap::new(),
            validation_cadence: 100,
            stall_budget: 5000,
            max_steps_per_task: None,
            val_max: None,
            gan_mode: GanMode::Logistic,
            optimizer: OptimKind::RAdam,
            seed: 0,
            output_dir,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be > 0".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".to_string()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.beta < 0.0 {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.lambda_idt < 0.0 || self.lambda_cyc < 0.0 {
            return Err(Error::Config("identity/cycle weights must be >= 0".to_string()));
        }
        if self.validation_cadence == 0 {
            return Err(Error::Config("validation_cadence must be >= 1".to_string()));
        }
        for spec in self.task_specs()?.values() {
            spec.validate()?;
        }
        Ok(())
    }

    /// Resolved per-task specs (weights and thresholds with defaults).
    pub fn task_specs(&self) -> Result<BTreeMap<TaskId, TaskSpec>> {
        let mut specs = BTreeMap::new();
        for &t in &self.arch.tasks {
            let mut spec = TaskSpec::defaults(t);
            if let Some(&w) = self.lambda.get(&t) {
                spec = spec.with_weight(w)?;
            }
            if let Some(&th) = self.thresholds.get(&t) {
                spec.threshold = th;
            }
            spec.validate()?;
            specs.insert(t, spec);
        }
        Ok(specs)
    }

    fn weight_of(&self, task: TaskId) -> f64 {
        self.lambda.get(&task).copied().unwrap_or(1.0)
    }
}

/// The four networks-per-domain bundle a run trains.
pub struct Models<T: Scalar> {
    pub gen_a: Generator<T>,
    pub gen_b: Generator<T>,
    pub discs: BTreeMap<(Domain, TaskId), Discriminator<T>>,
    pub ref_a: ReferenceEncoder<T>,
    pub ref_b: ReferenceEncoder<T>,
}

impl<T: Scalar> Models<T> {
    pub fn build(cfg: &TrainConfig) -> Result<Models<T>> {
        let arch = &cfg.arch;
        let gen_a = build_generator(arch, Domain::A, ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x11))?;
        let gen_b = build_generator(arch, Domain::B, ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x22))?;
        let mut discs = BTreeMap::new();
        for (di, d) in Domain::BOTH.into_iter().enumerate() {
            for &t in arch.tasks.iter().filter(|t| t.needs_discriminator()) {
                let mix = cfg.seed ^ (0x33 + 0x100 * di as u64 + t as u64);
                discs.insert((d, t), Discriminator::new(arch, d, t, ChaCha8Rng::seed_from_u64(mix))?);
            }
        }
        Ok(Models {
            gen_a,
            gen_b,
            discs,
            ref_a: ReferenceEncoder::new(arch, Domain::A, cfg.alpha)?,
            ref_b: ReferenceEncoder::new(arch, Domain::B, cfg.alpha)?,
        })
    }

    pub fn gen(&self, d: Domain) -> &Generator<T> {
        match d {
            Domain::A => &self.gen_a,
            Domain::B => &self.gen_b,
        }
    }

    pub fn reference(&self, d: Domain) -> &ReferenceEncoder<T> {
        match d {
            Domain::A => &self.ref_a,
            Domain::B => &self.ref_b,
        }
    }

    pub fn disc(&self, d: Domain, t: TaskId) -> Result<&Discriminator<T>> {
        self.discs
            .get(&(d, t))
            .ok_or_else(|| Error::State(format!("no {t} discriminator for domain {}", d.tag())))
    }

    /// All parameters with run-global prefixes, checkpoint-ready.
    pub fn collect_params(&self) -> Vec<(String, ArrayD<T>)> {
        let mut entries = Vec::new();
        for (gen, prefix) in [(&self.gen_a, "gen_a"), (&self.gen_b, "gen_b")] {
            gen.visit(&mut |name, arr| entries.push((format!("{prefix}.{name}"), arr.clone())));
        }
        for ((d, t), disc) in &self.discs {
            let prefix = format!("disc_{}.{}", d.tag(), t.name());
            disc.visit(&mut |name, arr| entries.push((format!("{prefix}.{name}"), arr.clone())));
        }
        for (r, prefix) in [(&self.ref_a, "ref_a"), (&self.ref_b, "ref_b")] {
            if let Some(pv) = r.params() {
                for (name, arr) in pv.entries() {
                    entries.push((format!("{prefix}.enc.{name}"), arr.clone()));
                }
            }
        }
        entries
    }

    /// Restores every network from a checkpoint's parameter list.
    pub fn load_params(
        &mut self,
        entries: &[(String, ArrayD<T>)],
        reference_tasks: &BTreeMap<String, usize>,
    ) -> Result<()> {
        let sub = |prefix: &str| -> crate::nets::ParamVector<T> {
            let stripped: Vec<(String, ArrayD<T>)> = entries
                .iter()
                .filter(|(n, _)| n.starts_with(prefix))
                .map(|(n, a)| (n[prefix.len()..].to_string(), a.clone()))
                .collect();
            crate::nets::ParamVector::new(stripped)
        };
        self.gen_a.load_all(&sub("gen_a."))?;
        self.gen_b.load_all(&sub("gen_b."))?;
        for ((d, t), disc) in self.discs.iter_mut() {
            let pv = sub(&format!("disc_{}.{}.", d.tag(), t.name()));
            disc.load(&pv)?;
        }
        for (r, tag) in [(&mut self.ref_a, "a"), (&mut self.ref_b, "b")] {
            let pv = sub(&format!("ref_{tag}.enc."));
            if !pv.is_empty() {
                let k = *reference_tasks.get(tag).ok_or_else(|| {
                    Error::Checkpoint(format!("reference params present but no task index for '{tag}'"))
                })?;
                r.restore(pv, k)?;
            }
        }
        Ok(())
    }
}

fn stack_images<T: Scalar>(imgs: &[&Array3<f32>]) -> ArrayD<T> {
    let (c, h, w) = imgs[0].dim();
    let mut out = ArrayD::<T>::zeros(IxDyn(&[imgs.len(), c, h, w]));
    for (i, img) in imgs.iter().enumerate() {
        for ch in 0..c {
            for r in 0..h {
                for col in 0..w {
                    out[[i, ch, r, col]] = T::from_f64(img[[ch, r, col]] as f64);
                }
            }
        }
    }
    out
}

fn stack_depths<T: Scalar>(maps: &[&Array2<f32>]) -> ArrayD<T> {
    let (h, w) = maps[0].dim();
    let mut out = ArrayD::<T>::zeros(IxDyn(&[maps.len(), 1, h, w]));
    for (i, m) in maps.iter().enumerate() {
        for r in 0..h {
            for col in 0..w {
                out[[i, 0, r, col]] = T::from_f64(m[[r, col]] as f64);
            }
        }
    }
    out
}

/// Images (and depth labels where available) selected for one step.
struct StepBatch<'a> {
    a: Vec<&'a Array3<f32>>,
    b: Vec<&'a Array3<f32>>,
    a_depth: Vec<Option<&'a Array2<f32>>>,
    b_depth: Vec<Option<&'a Array2<f32>>>,
}

impl<'a> StepBatch<'a> {
    fn images(&self, d: Domain) -> &[&'a Array3<f32>] {
        match d {
            Domain::A => &self.a,
            Domain::B => &self.b,
        }
    }

    fn depths(&self, d: Domain) -> &[Option<&'a Array2<f32>>] {
        match d {
            Domain::A => &self.a_depth,
            Domain::B => &self.b_depth,
        }
    }
}

/// A fake batch produced during the generator pass, queued for the
/// discriminator update.
struct PendingDiscUpdate<T: Scalar> {
    domain: Domain,
    task: TaskId,
    real: ArrayD<T>,
    fake: ArrayD<T>,
}

pub struct Trainer<'d, T: Scalar> {
    cfg: TrainConfig,
    ds: &'d UnpairedDataset,
    pub models: Models<T>,
    g_opt: Optimizer<T>,
    d_opt: Optimizer<T>,
    pub curriculum: Option<CurriculumState>,
    pub perm_table: PermutationTable,
    label_rng: ChaCha8Rng,
    batches: BatchIterator,
    step: u64,
    translation_steps: u64,
    frozen: BTreeSet<TaskId>,
}

impl<'d, T: Scalar> Trainer<'d, T> {
    pub fn new(cfg: TrainConfig, ds: &'d UnpairedDataset) -> Result<Trainer<'d, T>> {
        cfg.validate()?;
        if ds.image_size != cfg.arch.input_size {
            return Err(Error::Config(format!(
                "dataset images are {} px but the architecture expects {}",
                ds.image_size, cfg.arch.input_size
            )));
        }
        if cfg.arch.tasks.contains(&TaskId::Depth) {
            ds.require_depth_labels()?;
        }
        let specs = cfg.task_specs()?;
        let curriculum = if cfg.schedule.uses_curriculum() {
            Some(CurriculumState::new(
                &cfg.arch.tasks,
                &specs,
                cfg.validation_cadence,
            )?)
        } else {
            None
        };
        let optim_cfg = OptimConfig::new(cfg.optimizer, cfg.learning_rate)?;
        let models = Models::build(&cfg)?;
        let perm_table = PermutationTable::build(cfg.seed ^ 0x5151, JIGSAW_CLASSES)?;
        let batches = BatchIterator::new(ds, cfg.batch_size, cfg.seed ^ 0x77)?;
        let label_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x99);
        Ok(Trainer {
            cfg,
            ds,
            models,
            g_opt: Optimizer::new(optim_cfg),
            d_opt: Optimizer::new(optim_cfg),
            curriculum,
            perm_table,
            label_rng,
            batches,
            step: 0,
            translation_steps: 0,
            frozen: BTreeSet::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Tasks completed so far; their heads no longer receive updates.
    pub fn frozen_tasks(&self) -> &BTreeSet<TaskId> {
        &self.frozen
    }

    /// Tasks whose losses are assembled this step.
    fn active_tasks(&self) -> Vec<TaskId> {
        match self.cfg.schedule {
            ScheduleKind::Baseline => vec![TaskId::Translation],
            ScheduleKind::Parallel => self.cfg.arch.tasks.clone(),
            ScheduleKind::Sequential | ScheduleKind::Continual => {
                vec![self.curriculum.as_ref().unwrap().current_task()]
            }
        }
    }

    fn distillation_active(&self) -> bool {
        self.cfg.schedule == ScheduleKind::Continual
            && self.cfg.beta > 0.0
            && self.models.ref_a.is_active()
    }

    /// One optimization step on a joint batch: generator-side update, then
    /// the discriminator updates for the active generative tasks.
    /// Returns the scalar loss terms actually used.
    fn train_step(
        &mut self,
        batch: &StepBatch<'_>,
        active: &[TaskId],
    ) -> Result<BTreeMap<String, f64>> {
        let mut graph: Graph<T> = Graph::new();
        let mut reg = Registry::new();
        let mut terms: BTreeMap<String, f64> = BTreeMap::new();
        let mut weighted: Vec<ValueId> = Vec::new();
        let mut pending: Vec<PendingDiscUpdate<T>> = Vec::new();
        let mut fake_ids: Vec<(usize, ValueId, ValueId)> = Vec::new(); // pending idx, fake, real

        {
            let mut f = Fwd::new(&mut graph, &mut reg);
            for &task in active {
                match task {
                    TaskId::Rotation | TaskId::Jigsaw => {
                        for d in Domain::BOTH {
                            let (node, value) = self.classification_term(&mut f, d, task, batch)?;
                            terms.insert(format!("loss_{}_{}", task.name(), d.tag()), value);
                            let w = self.cfg.weight_of(task);
                            weighted.push(f.graph.scale(node, T::from_f64(w)));
                        }
                    }
                    TaskId::Depth => {
                        for d in Domain::BOTH {
                            let (node, value) = self.depth_term(&mut f, d, batch)?;
                            terms.insert(format!("loss_depth_{}", d.tag()), value);
                            let w = self.cfg.weight_of(task);
                            weighted.push(f.graph.scale(node, T::from_f64(w)));
                        }
                    }
                    TaskId::Colorization => {
                        for d in Domain::BOTH {
                            let (node, value, fake, real) =
                                self.colorization_term(&mut f, d, batch)?;
                            terms.insert(format!("loss_colorization_{}", d.tag()), value);
                            let w = self.cfg.weight_of(task);
                            weighted.push(f.graph.scale(node, T::from_f64(w)));
                            pending.push(PendingDiscUpdate {
                                domain: d,
                                task,
                                real: ArrayD::zeros(IxDyn(&[1])),
                                fake: ArrayD::zeros(IxDyn(&[1])),
                            });
                            fake_ids.push((pending.len() - 1, fake, real));
                        }
                    }
                    TaskId::Translation => {
                        let out = self.translation_term(&mut f, batch)?;
                        for (k, v) in out.terms {
                            terms.insert(k, v);
                        }
                        let w = self.cfg.weight_of(task);
                        weighted.push(f.graph.scale(out.node, T::from_f64(w)));
                        for (d, fake, real) in out.fakes {
                            pending.push(PendingDiscUpdate {
                                domain: d,
                                task,
                                real: ArrayD::zeros(IxDyn(&[1])),
                                fake: ArrayD::zeros(IxDyn(&[1])),
                            });
                            fake_ids.push((pending.len() - 1, fake, real));
                        }
                    }
                }
            }

            if self.distillation_active() {
                for d in Domain::BOTH {
                    let x = stack_images::<T>(batch.images(d));
                    let xv = f.graph.constant(x);
                    let z = self.models.gen(d).encode(&mut f, true, xv)?;
                    let dist = distillation_loss(&mut f, self.models.reference(d), z, xv)?;
                    let value = f.graph.scalar(dist).as_f64();
                    terms.insert(format!("loss_dist_{}", d.tag()), value);
                    weighted.push(f.graph.scale(dist, T::from_f64(self.cfg.beta)));
                }
            }
        }

        if std::env::var("LISS_DEBUG_TERMS").is_ok() {
            eprintln!("step {} terms: {:?}", self.step + 1, terms);
        }
        for (name, value) in &terms {
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    term: name.clone(),
                    step: self.step + 1,
                });
            }
        }

        let total = graph.add_n(&weighted);
        let grads = graph.backward(total);
        self.apply_generator_updates(&reg, grads)?;

        // Extract fake/real values before the graph is dropped.
        for (idx, fake_id, real_id) in fake_ids {
            pending[idx].fake = graph.value(fake_id).clone();
            pending[idx].real = graph.value(real_id).clone();
        }
        drop(graph);

        // Discriminator pass: fresh graph per update, fakes detached.
        for upd in pending {
            let value = self.discriminator_update(&upd)?;
            terms.insert(
                format!("loss_disc_{}_{}", upd.task.name(), upd.domain.tag()),
                value,
            );
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    term: format!("loss_disc_{}_{}", upd.task.name(), upd.domain.tag()),
                    step: self.step + 1,
                });
            }
        }

        Ok(terms)
    }

    fn classification_term(
        &mut self,
        f: &mut Fwd<'_, T>,
        d: Domain,
        task: TaskId,
        batch: &StepBatch<'_>,
    ) -> Result<(ValueId, f64)> {
        let imgs = batch.images(d);
        let classes = if task == TaskId::Rotation {
            ROTATION_CLASSES
        } else {
            JIGSAW_CLASSES
        };
        let mut labels = Vec::with_capacity(imgs.len());
        let mut transformed = Vec::with_capacity(imgs.len());
        for img in imgs {
            let label = self.label_rng.random_range(0..classes);
            let t = if task == TaskId::Rotation {
                make_rotation_sample(img, label)?.0
            } else {
                make_jigsaw_sample(img, label, &self.perm_table)?.0
            };
            labels.push(label);
            transformed.push(t);
        }
        let refs: Vec<&Array3<f32>> = transformed.iter().collect();
        let x = f.graph.constant(stack_images::<T>(&refs));
        let gen = self.models.gen(d);
        let z = gen.encode(f, true, x)?;
        let logits = gen.head_forward(f, task, true, z)?;
        let loss = classification_loss(f.graph, logits, &labels)?;
        let value = f.graph.scalar(loss).as_f64();
        Ok((loss, value))
    }

    fn depth_term(
        &mut self,
        f: &mut Fwd<'_, T>,
        d: Domain,
        batch: &StepBatch<'_>,
    ) -> Result<(ValueId, f64)> {
        let imgs = batch.images(d);
        let mut maps = Vec::with_capacity(imgs.len());
        for m in batch.depths(d) {
            maps.push(m.ok_or_else(|| {
                Error::Dataset("depth label missing in training batch".to_string())
            })?);
        }
        let x = f.graph.constant(stack_images::<T>(imgs));
        let labels = f.graph.constant(stack_depths::<T>(&maps));
        let gen = self.models.gen(d);
        let z = gen.encode(f, true, x)?;
        let pred = gen.head_forward(f, TaskId::Depth, true, z)?;
        let loss = depth_loss(f.graph, pred, labels)?;
        let value = f.graph.scalar(loss).as_f64();
        Ok((loss, value))
    }

    /// Returns `(loss node, loss value, fake id, real id)`.
    fn colorization_term(
        &mut self,
        f: &mut Fwd<'_, T>,
        d: Domain,
        batch: &StepBatch<'_>,
    ) -> Result<(ValueId, f64, ValueId, ValueId)> {
        let imgs = batch.images(d);
        let grays: Vec<Array3<f32>> = imgs.iter().map(|img| grayify(img)).collect();
        let gray_refs: Vec<&Array3<f32>> = grays.iter().collect();
        let gray = f.graph.constant(stack_images::<T>(&gray_refs));
        let target = f.graph.constant(stack_images::<T>(imgs));
        let gen = self.models.gen(d);
        let z = gen.encode(f, true, gray)?;
        let pred = gen.head_forward(f, TaskId::Colorization, true, z)?;
        let disc = self.models.disc(d, TaskId::Colorization)?;
        let loss = colorization_loss(f, disc, pred, target, self.cfg.gan_mode)?;
        let value = f.graph.scalar(loss).as_f64();
        Ok((loss, value, pred, target))
    }

    fn translation_term(
        &mut self,
        f: &mut Fwd<'_, T>,
        batch: &StepBatch<'_>,
    ) -> Result<TranslationOut> {
        let xa = f.graph.constant(stack_images::<T>(batch.images(Domain::A)));
        let xb = f.graph.constant(stack_images::<T>(batch.images(Domain::B)));
        let gen_a = &self.models.gen_a;
        let gen_b = &self.models.gen_b;

        // The domain-i generator renders *into* domain i.
        let translate = |f: &mut Fwd<'_, T>, gen: &Generator<T>, x: ValueId| -> Result<ValueId> {
            let z = gen.encode(f, true, x)?;
            gen.head_forward(f, TaskId::Translation, true, z)
        };

        let fake_a = translate(f, gen_a, xb)?; // looks like domain A
        let fake_b = translate(f, gen_b, xa)?;
        let idt_a_img = translate(f, gen_a, xa)?;
        let idt_b_img = translate(f, gen_b, xb)?;
        let rec_a = translate(f, gen_a, fake_b)?;
        let rec_b = translate(f, gen_b, fake_a)?;

        let disc_a = self.models.disc(Domain::A, TaskId::Translation)?;
        let disc_b = self.models.disc(Domain::B, TaskId::Translation)?;
        let gan_a = gan_generator_loss(f, disc_a, fake_a, self.cfg.gan_mode)?;
        let gan_b = gan_generator_loss(f, disc_b, fake_b, self.cfg.gan_mode)?;
        let idt_a = identity_loss(f.graph, idt_a_img, xa)?;
        let idt_b = identity_loss(f.graph, idt_b_img, xb)?;
        let cyc_a = cycle_loss(f.graph, xa, rec_a)?;
        let cyc_b = cycle_loss(f.graph, xb, rec_b)?;

        let total_a = translation_objective(
            f.graph,
            gan_a,
            idt_a,
            cyc_a,
            self.cfg.lambda_idt,
            self.cfg.lambda_cyc,
        )?;
        let total_b = translation_objective(
            f.graph,
            gan_b,
            idt_b,
            cyc_b,
            self.cfg.lambda_idt,
            self.cfg.lambda_cyc,
        )?;
        let node = f.graph.add(total_a, total_b);

        let mut terms = BTreeMap::new();
        for (name, id) in [
            ("loss_gan_g_a", gan_a),
            ("loss_gan_g_b", gan_b),
            ("loss_idt_a", idt_a),
            ("loss_idt_b", idt_b),
            ("loss_cyc_a", cyc_a),
            ("loss_cyc_b", cyc_b),
            ("loss_translation_a", total_a),
            ("loss_translation_b", total_b),
        ] {
            terms.insert(name.to_string(), f.graph.scalar(id).as_f64());
        }

        Ok(TranslationOut {
            node,
            terms,
            fakes: vec![(Domain::A, fake_a, xa), (Domain::B, fake_b, xb)],
        })
    }

    fn apply_generator_updates(
        &mut self,
        reg: &Registry,
        mut grads: liss_tensor::Gradients<T>,
    ) -> Result<()> {
        let mut by_name: std::collections::HashMap<String, ArrayD<T>> =
            std::collections::HashMap::new();
        for (name, id) in reg.entries() {
            if let Some(g) = grads.take(*id) {
                by_name.insert(name.clone(), g);
            }
        }
        let g_opt = &mut self.g_opt;
        for (gen, prefix) in [(&mut self.models.gen_a, "gen_a"), (&mut self.models.gen_b, "gen_b")]
        {
            gen.visit_mut(&mut |name, arr| {
                let full = format!("{prefix}.{name}");
                if let Some(g) = by_name.remove(&full) {
                    g_opt.apply(&full, arr, &g);
                }
            });
        }
        // Anything left over would be a gradient for a non-generator
        // parameter leaking out of the generator pass.
        debug_assert!(
            by_name.is_empty(),
            "unexpected gradients: {:?}",
            by_name.keys().collect::<Vec<_>>()
        );
        Ok(())
    }

    fn discriminator_update(&mut self, upd: &PendingDiscUpdate<T>) -> Result<f64> {
        let mut graph: Graph<T> = Graph::new();
        let mut reg = Registry::new();
        let value;
        {
            let mut f = Fwd::new(&mut graph, &mut reg);
            let real = f.graph.constant(upd.real.clone());
            let fake = f.graph.constant(upd.fake.clone());
            let disc = self.models.disc(upd.domain, upd.task)?;
            let loss = gan_discriminator_loss(&mut f, disc, real, fake, self.cfg.gan_mode)?;
            value = f.graph.scalar(loss).as_f64();
            let mut grads = f.graph.backward(loss);
            let mut by_name: std::collections::HashMap<String, ArrayD<T>> =
                std::collections::HashMap::new();
            for (name, id) in reg.entries() {
                if let Some(g) = grads.take(*id) {
                    by_name.insert(name.clone(), g);
                }
            }
            let d_opt = &mut self.d_opt;
            let prefix = format!("disc_{}.{}", upd.domain.tag(), upd.task.name());
            let disc = self
                .models
                .discs
                .get_mut(&(upd.domain, upd.task))
                .expect("checked above");
            disc.visit_mut(&mut |name, arr| {
                let full = format!("{prefix}.{name}");
                if let Some(g) = by_name.remove(&full) {
                    d_opt.apply(&full, arr, &g);
                }
            });
        }
        Ok(value)
    }

    fn select_batch(&mut self) -> StepBatch<'d> {
        let idx = self.batches.next_batch();
        let ds: &'d UnpairedDataset = self.ds;
        let a: Vec<&Array3<f32>> = idx.a.iter().map(|&i| &ds.a.train[i]).collect();
        let b: Vec<&Array3<f32>> = idx.b.iter().map(|&i| &ds.b.train[i]).collect();
        let a_depth = idx
            .a
            .iter()
            .map(|&i| ds.a.train_depth[i].as_ref())
            .collect();
        let b_depth = idx
            .b
            .iter()
            .map(|&i| ds.b.train_depth[i].as_ref())
            .collect();
        StepBatch {
            a,
            b,
            a_depth,
            b_depth,
        }
    }

    fn checkpoint(&self, note_step: u64) -> Result<PathBuf> {
        let dir = self
            .cfg
            .output_dir
            .join("checkpoints")
            .join(format!("step_{note_step}"));
        let manifest = ckpt::Manifest {
            format_version: 1,
            schedule: self.cfg.schedule,
            seed: self.cfg.seed,
            step: self.step,
            translation_steps: self.translation_steps,
            arch: self.cfg.arch.clone(),
            current_task_index: self
                .curriculum
                .as_ref()
                .map(|c| c.current_index())
                .unwrap_or(0),
            task_start_step: self
                .curriculum
                .as_ref()
                .map(|c| c.task_start_step())
                .unwrap_or(0),
            transitions: self
                .curriculum
                .as_ref()
                .map(|c| c.transitions().to_vec())
                .unwrap_or_default(),
            reference_tasks: {
                let mut map = BTreeMap::new();
                for (r, tag) in [(&self.models.ref_a, "a"), (&self.models.ref_b, "b")] {
                    if r.is_active() {
                        map.insert(tag.to_string(), r.last_update_task());
                    }
                }
                map
            },
        };
        ckpt::save(&dir, &manifest, &self.models.collect_params())
    }

    /// Runs the configured schedule to completion.
    pub fn run(mut self) -> Result<TrainingLog> {
        std::fs::create_dir_all(&self.cfg.output_dir)?;
        self.perm_table
            .save(&self.cfg.output_dir.join("permutations.txt"))?;

        let mut records: Vec<MetricsRecord> = Vec::new();
        let mut last_record_step = u64::MAX;

        while self.translation_steps < self.cfg.max_translation_steps {
            let active = self.active_tasks();
            let batch = self.select_batch();
            let t0 = Instant::now();
            let terms = self.train_step(&batch, &active)?;
            let dt = t0.elapsed().as_secs_f64();
            self.step += 1;
            if active.contains(&TaskId::Translation) {
                self.translation_steps += 1;
            }
            let wall_per_sample = dt / (2.0 * self.cfg.batch_size as f64);

            let finished = self.translation_steps >= self.cfg.max_translation_steps;
            if self.step % self.cfg.validation_cadence == 0 || finished {
                let metrics = validate(
                    &self.models.gen_a,
                    &self.models.gen_b,
                    self.ds,
                    &self.cfg.arch.tasks,
                    &self.perm_table,
                    self.cfg.batch_size,
                    self.cfg.val_max,
                )?;
                let task_label = match self.cfg.schedule {
                    ScheduleKind::Parallel => "all".to_string(),
                    ScheduleKind::Baseline => TaskId::Translation.name().to_string(),
                    _ => self
                        .curriculum
                        .as_ref()
                        .unwrap()
                        .current_task()
                        .name()
                        .to_string(),
                };
                let mut transition_note = None;

                if let Some(cur) = self.curriculum.as_mut() {
                    let task = cur.current_task();
                    if task != TaskId::Translation {
                        let ma = metrics[&metric_key(Domain::A, task)];
                        let mb = metrics[&metric_key(Domain::B, task)];
                        cur.latest_metrics = Some((ma, mb));
                        let capped = self
                            .cfg
                            .max_steps_per_task
                            .is_some_and(|cap| self.step - cur.task_start_step() >= cap);
                        if cur.should_transition(ma, mb) || capped {
                            let tr = cur.advance(self.step)?;
                            self.frozen.insert(tr.completed);
                            if self.cfg.schedule == ScheduleKind::Continual {
                                let snap_a = self.models.gen_a.encoder.snapshot();
                                let snap_b = self.models.gen_b.encoder.snapshot();
                                self.models.ref_a.update(&snap_a, tr.entered_index)?;
                                self.models.ref_b.update(&snap_b, tr.entered_index)?;
                            }
                            transition_note = Some(format!(
                                "{}:{}:{}",
                                tr.completed.name(),
                                self.step_of_transition_start(&tr),
                                self.step
                            ));
                            self.checkpoint(self.step)?;
                        } else if self.step - cur.task_start_step() >= self.cfg.stall_budget {
                            return Err(Error::Stall {
                                task: task.name().to_string(),
                                steps: self.step - cur.task_start_step(),
                                detail: format!("domain A metric {ma:.4}, domain B metric {mb:.4}"),
                            });
                        }
                    }
                }

                records.push(MetricsRecord {
                    step: self.step,
                    schedule: self.cfg.schedule,
                    task: task_label,
                    metrics,
                    losses: terms.clone(),
                    wall_per_sample,
                    transition: transition_note,
                });
                last_record_step = self.step;
            }
        }

        // Guarantee a final validation record.
        if last_record_step != self.step {
            let metrics = validate(
                &self.models.gen_a,
                &self.models.gen_b,
                self.ds,
                &self.cfg.arch.tasks,
                &self.perm_table,
                self.cfg.batch_size,
                self.cfg.val_max,
            )?;
            records.push(MetricsRecord {
                step: self.step,
                schedule: self.cfg.schedule,
                task: TaskId::Translation.name().to_string(),
                metrics,
                losses: BTreeMap::new(),
                wall_per_sample: 0.0,
                transition: None,
            });
        }

        let final_ckpt = self.checkpoint(self.step)?;

        let trained_intervals = self.trained_intervals();
        let log = TrainingLog {
            schedule: self.cfg.schedule,
            seed: self.cfg.seed,
            tasks: self.cfg.arch.tasks.clone(),
            records,
            transitions: self
                .curriculum
                .as_ref()
                .map(|c| c.transitions().to_vec())
                .unwrap_or_default(),
            trained_intervals,
            final_step: self.step,
            final_checkpoint: Some(final_ckpt),
        };
        log.write_metrics_csv(&self.cfg.output_dir.join("metrics.csv"))?;
        log.write_transitions(&self.cfg.output_dir)?;
        Ok(log)
    }

    fn step_of_transition_start(&self, tr: &crate::schedule::Transition) -> u64 {
        self.curriculum
            .as_ref()
            .and_then(|c| c.transitions().iter().find(|r| r.task == tr.completed))
            .map(|r| r.start_step)
            .unwrap_or(0)
    }

    fn trained_intervals(&self) -> BTreeMap<TaskId, (u64, u64)> {
        let mut map = BTreeMap::new();
        match self.cfg.schedule {
            ScheduleKind::Baseline => {
                map.insert(TaskId::Translation, (0, self.step));
            }
            ScheduleKind::Parallel => {
                for &t in &self.cfg.arch.tasks {
                    map.insert(t, (0, self.step));
                }
            }
            _ => {
                let cur = self.curriculum.as_ref().unwrap();
                for row in cur.transitions() {
                    map.insert(row.task, (row.start_step, row.end_step));
                }
                // The task still in flight at the end of the run.
                map.insert(cur.current_task(), (cur.task_start_step(), self.step));
            }
        }
        map
    }
}

struct TranslationOut {
    node: ValueId,
    terms: BTreeMap<String, f64>,
    fakes: Vec<(Domain, ValueId, ValueId)>,
}

/// Deterministic validation metrics for every pretext head of both
/// domains: accuracy for the classification heads, mean L1 for depth and
/// colorization. Labels cycle through the classes so they are balanced.
pub fn validate<T: Scalar>(
    gen_a: &Generator<T>,
    gen_b: &Generator<T>,
    ds: &UnpairedDataset,
    tasks: &[TaskId],
    table: &PermutationTable,
    chunk: usize,
    val_max: Option<usize>,
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for d in Domain::BOTH {
        let gen = match d {
            Domain::A => gen_a,
            Domain::B => gen_b,
        };
        let data = ds.domain(d);
        let limit = val_max.unwrap_or(data.val.len()).min(data.val.len());
        if limit == 0 {
            return Err(Error::Config(format!(
                "validation set for domain {} is empty",
                d.tag()
            )));
        }
        for &task in tasks.iter().filter(|t| t.is_pretext()) {
            let value = match task {
                TaskId::Rotation => {
                    classification_accuracy(gen, task, &data.val[..limit], chunk, |idx, img| {
                        let label = idx % ROTATION_CLASSES;
                        Ok((make_rotation_sample(img, label)?.0, label))
                    })?
                }
                TaskId::Jigsaw => {
                    classification_accuracy(gen, task, &data.val[..limit], chunk, |idx, img| {
                        let label = idx % table.len();
                        Ok((make_jigsaw_sample(img, label, table)?.0, label))
                    })?
                }
                TaskId::Depth => {
                    let mut total = 0.0f64;
                    let mut count = 0usize;
                    for (img, depth) in data.val[..limit].iter().zip(&data.val_depth[..limit]) {
                        let depth = depth.as_ref().ok_or_else(|| {
                            Error::Dataset("validation image lacks a depth label".to_string())
                        })?;
                        let pred = gen.run_task_array(TaskId::Depth, &stack_images::<T>(&[img]))?;
                        for (p, l) in pred.iter().zip(depth.iter()) {
                            total += (p.as_f64() - *l as f64).abs();
                            count += 1;
                        }
                    }
                    total / count as f64
                }
                TaskId::Colorization => {
                    let mut total = 0.0f64;
                    let mut count = 0usize;
                    for img in &data.val[..limit] {
                        let gray = grayify(img);
                        let pred = gen
                            .run_task_array(TaskId::Colorization, &stack_images::<T>(&[&gray]))?;
                        for (p, t) in pred.iter().zip(img.iter()) {
                            total += (p.as_f64() - *t as f64).abs();
                            count += 1;
                        }
                    }
                    total / count as f64
                }
                TaskId::Translation => continue,
            };
            out.insert(metric_key(d, task), value);
        }
    }
    Ok(out)
}

fn classification_accuracy<T: Scalar>(
    gen: &Generator<T>,
    task: TaskId,
    images: &[Array3<f32>],
    chunk: usize,
    mut sample: impl FnMut(usize, &Array3<f32>) -> Result<(Array3<f32>, usize)>,
) -> Result<f64> {
    let mut correct = 0usize;
    let mut seen = 0usize;
    let mut batch: Vec<Array3<f32>> = Vec::with_capacity(chunk);
    let mut labels: Vec<usize> = Vec::with_capacity(chunk);
    let flush = |batch: &mut Vec<Array3<f32>>,
                     labels: &mut Vec<usize>,
                     correct: &mut usize,
                     seen: &mut usize|
     -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let refs: Vec<&Array3<f32>> = batch.iter().collect();
        let logits = gen.run_task_array(task, &stack_images::<T>(&refs))?;
        let k = logits.shape()[1];
        for (i, &label) in labels.iter().enumerate() {
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for j in 0..k {
                let v = logits[[i, j]].as_f64();
                if v > best_v {
                    best_v = v;
                    best = j;
                }
            }
            if best == label {
                *correct += 1;
            }
            *seen += 1;
        }
        batch.clear();
        labels.clear();
        Ok(())
    };
    for (idx, img) in images.iter().enumerate() {
        let (x, label) = sample(idx, img)?;
        batch.push(x);
        labels.push(label);
        if batch.len() == chunk {
            flush(&mut batch, &mut labels, &mut correct, &mut seen)?;
        }
    }
    flush(&mut batch, &mut labels, &mut correct, &mut seen)?;
    Ok(correct as f64 / seen as f64)
}
