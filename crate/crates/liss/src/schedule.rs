//! Loss-composition schedules, the EMA reference encoder and the
//! threshold-gated curriculum.

use std::collections::BTreeMap;

use liss_tensor::{Scalar, ValueId};
use ndarray::ArrayD;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{ArchConfig, Domain, Encoder, Fwd, Init, ParamVector};
use crate::tasks::{TaskId, TaskSpec};

/// Loss-composition rule applied at every optimization step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Translation objective only (the plain cycle-consistent baseline).
    Baseline,
    /// All task losses summed at every step.
    Parallel,
    /// One task at a time, advanced by the curriculum.
    Sequential,
    /// Sequential plus a distillation pull toward the reference encoder.
    Continual,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 4] = [
        ScheduleKind::Baseline,
        ScheduleKind::Parallel,
        ScheduleKind::Sequential,
        ScheduleKind::Continual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Baseline => "baseline",
            ScheduleKind::Parallel => "parallel",
            ScheduleKind::Sequential => "sequential",
            ScheduleKind::Continual => "continual",
        }
    }

    pub fn parse(s: &str) -> Result<ScheduleKind> {
        ScheduleKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown schedule '{s}' (expected baseline|parallel|sequential|continual)"
                ))
            })
    }

    pub fn uses_curriculum(self) -> bool {
        matches!(self, ScheduleKind::Sequential | ScheduleKind::Continual)
    }
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Parallel objective: the weighted sum over every configured task.
pub fn parallel_loss(
    per_task: &BTreeMap<TaskId, f64>,
    weights: &BTreeMap<TaskId, f64>,
    tasks: &[TaskId],
) -> Result<f64> {
    let mut total = 0.0;
    for task in tasks {
        let loss = per_task.get(task).ok_or_else(|| {
            Error::Config(format!("parallel_loss: missing loss for task '{task}'"))
        })?;
        let w = weights.get(task).copied().unwrap_or(1.0);
        total += w * loss;
    }
    Ok(total)
}

/// Sequential objective: only the current task contributes.
pub fn sequential_loss(loss_t: f64, weight_t: f64) -> f64 {
    weight_t * loss_t
}

/// Continual objective: sequential term plus `beta` times the distillation
/// term when a reference encoder is active (i.e. after the first
/// transition).
pub fn continual_loss(seq_term: f64, dist_term: Option<f64>, beta: f64) -> Result<f64> {
    if beta < 0.0 {
        return Err(Error::Config(format!(
            "distillation weight beta must be >= 0, got {beta}"
        )));
    }
    Ok(match dist_term {
        Some(d) => seq_term + beta * d,
        None => seq_term,
    })
}

/// EMA recurrence over encoder snapshots: the new reference after
/// transitioning into task `k`, given the snapshot frozen at that instant.
///
/// `k = 1` adopts the snapshot verbatim; for `k > 1` the reference becomes
/// `alpha * snapshot + (1 - alpha) * previous_reference`, a convex
/// combination of all past snapshots.
pub fn ema_update<T: Scalar>(
    previous: Option<&ParamVector<T>>,
    snapshot: &ParamVector<T>,
    k: usize,
    alpha: f64,
) -> Result<ParamVector<T>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must be in [0, 1], got {alpha}")));
    }
    match k {
        0 => Err(Error::Ordering(
            "reference encoder update requires k >= 1".to_string(),
        )),
        1 => Ok(snapshot.clone()),
        _ => {
            let prev = previous.ok_or_else(|| {
                Error::State(format!("no previous reference available at k={k}"))
            })?;
            prev.compatible_with(snapshot)?;
            let a = T::from_f64(alpha);
            let b = T::from_f64(1.0 - alpha);
            let entries: Vec<(String, ArrayD<T>)> = snapshot
                .entries()
                .iter()
                .zip(prev.entries().iter())
                .map(|((name, snap), (_, old))| {
                    let mut merged = snap.mapv(|v| v * a);
                    merged.zip_mut_with(old, |m, o| *m = *m + *o * b);
                    (name.clone(), merged)
                })
                .collect();
            Ok(ParamVector::new(entries))
        }
    }
}

/// The frozen, non-trainable exponential moving average of past encoder
/// snapshots. Inactive until the first task transition; distillation is
/// skipped while inactive.
pub struct ReferenceEncoder<T: Scalar> {
    net: Encoder<T>,
    domain: Domain,
    alpha: f64,
    last_update_task: usize,
    active: bool,
    params: Option<ParamVector<T>>,
}

impl<T: Scalar> ReferenceEncoder<T> {
    pub fn new(cfg: &ArchConfig, domain: Domain, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha must be in [0, 1], got {alpha}")));
        }
        cfg.validate()?;
        // Placeholder weights; overwritten on the first update.
        let mut init = Init::new(ChaCha8Rng::seed_from_u64(0));
        Ok(ReferenceEncoder {
            net: Encoder::new(&mut init, cfg),
            domain,
            alpha,
            last_update_task: 0,
            active: false,
            params: None,
        })
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn last_update_task(&self) -> usize {
        self.last_update_task
    }

    pub fn params(&self) -> Option<&ParamVector<T>> {
        self.params.as_ref()
    }

    /// Folds the snapshot taken at the transition into task `k` into the
    /// moving average. `k` must increase strictly across calls.
    pub fn update(&mut self, snapshot: &ParamVector<T>, k: usize) -> Result<()> {
        if k <= self.last_update_task {
            return Err(Error::Ordering(format!(
                "reference encoder updates must use strictly increasing task indices \
                 (got k={k} after k={})",
                self.last_update_task
            )));
        }
        let merged = ema_update(self.params.as_ref(), snapshot, k, self.alpha)?;
        self.net.load(&merged)?;
        self.params = Some(merged);
        self.last_update_task = k;
        self.active = true;
        Ok(())
    }

    /// Restores a previously saved reference state (checkpoint loading).
    pub fn restore(&mut self, params: ParamVector<T>, k: usize) -> Result<()> {
        self.net.load(&params)?;
        self.params = Some(params);
        self.last_update_task = k;
        self.active = true;
        Ok(())
    }

    /// Encodes a batch with the frozen reference parameters; never
    /// trainable, so no gradient can flow into the reference.
    pub fn encode(&self, f: &mut Fwd<T>, x: ValueId) -> Result<ValueId> {
        if !self.active {
            return Err(Error::State(
                "reference encoder is inactive (no transition has happened yet)".to_string(),
            ));
        }
        let prefix = format!("ref_{}.enc", self.domain.tag());
        Ok(self.net.forward(f, &prefix, false, x))
    }
}

/// Distillation loss: mean absolute distance between the reference and
/// current encodings of the same batch. Gradient flows only through
/// `current_latent`.
pub fn distillation_loss<T: Scalar>(
    f: &mut Fwd<T>,
    reference: &ReferenceEncoder<T>,
    current_latent: ValueId,
    batch: ValueId,
) -> Result<ValueId> {
    let z_ref = reference.encode(f, batch)?;
    if f.graph.shape(z_ref) != f.graph.shape(current_latent) {
        return Err(Error::Input(format!(
            "distillation_loss: latent shapes differ ({:?} vs {:?})",
            f.graph.shape(z_ref),
            f.graph.shape(current_latent)
        )));
    }
    Ok(f.graph.l1_loss(current_latent, z_ref))
}

/// One completed-task row of the transition log (Table-1 shaped).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRow {
    pub task: TaskId,
    pub start_step: u64,
    pub end_step: u64,
}

/// Result of advancing the curriculum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub completed: TaskId,
    /// Index of the task just entered (the `k` of the EMA recurrence).
    pub entered_index: usize,
    pub entered: TaskId,
    pub step: u64,
}

/// Threshold-gated task progression for the sequential and continual
/// schedules.
#[derive(Debug, Clone)]
pub struct CurriculumState {
    tasks: Vec<TaskId>,
    specs: BTreeMap<TaskId, TaskSpec>,
    current: usize,
    pub validation_cadence: u64,
    task_start_step: u64,
    transitions: Vec<TransitionRow>,
    /// Latest per-domain validation metrics for the current task.
    pub latest_metrics: Option<(f64, f64)>,
}

impl CurriculumState {
    pub fn new(
        tasks: &[TaskId],
        specs: &BTreeMap<TaskId, TaskSpec>,
        validation_cadence: u64,
    ) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Config("curriculum requires at least one task".into()));
        }
        if validation_cadence == 0 {
            return Err(Error::Config("validation_cadence must be >= 1".into()));
        }
        for t in tasks {
            let spec = specs
                .get(t)
                .ok_or_else(|| Error::Config(format!("missing TaskSpec for '{t}'")))?;
            spec.validate()?;
        }
        Ok(CurriculumState {
            tasks: tasks.to_vec(),
            specs: specs.clone(),
            current: 0,
            validation_cadence,
            task_start_step: 0,
            transitions: Vec::new(),
            latest_metrics: None,
        })
    }

    pub fn current_task(&self) -> TaskId {
        self.tasks[self.current]
    }

    pub fn current_index(&self) -> usize {
        self.current
    }

    pub fn task_start_step(&self) -> u64 {
        self.task_start_step
    }

    pub fn transitions(&self) -> &[TransitionRow] {
        &self.transitions
    }

    pub fn spec(&self, task: TaskId) -> Option<&TaskSpec> {
        self.specs.get(&task)
    }

    /// Completed tasks whose heads are frozen.
    pub fn frozen_tasks(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.transitions.iter().map(|r| r.task)
    }

    /// True when both domains' validation metrics clear the current
    /// task's threshold. The terminal translation task never transitions.
    pub fn should_transition(&self, metric_a: f64, metric_b: f64) -> bool {
        let task = self.current_task();
        if task == TaskId::Translation {
            return false;
        }
        let spec = &self.specs[&task];
        spec.threshold.met(metric_a) && spec.threshold.met(metric_b)
    }

    /// Logs the completed task and moves to the next one. The caller must
    /// snapshot the encoder and update the reference encoder (continual
    /// schedule) before taking any further training step.
    pub fn advance(&mut self, step: u64) -> Result<Transition> {
        let task = self.current_task();
        if task == TaskId::Translation {
            return Err(Error::Terminal(
                "cannot advance past the translation task".to_string(),
            ));
        }
        if let Some(last) = self.transitions.last() {
            if step <= last.end_step {
                return Err(Error::Ordering(format!(
                    "transition step {step} must exceed previous end step {}",
                    last.end_step
                )));
            }
        }
        self.transitions.push(TransitionRow {
            task,
            start_step: self.task_start_step,
            end_step: step,
        });
        self.current += 1;
        self.task_start_step = step;
        self.latest_metrics = None;
        Ok(Transition {
            completed: task,
            entered_index: self.current,
            entered: self.tasks[self.current],
            step,
        })
    }

    /// Restores progression state from a checkpoint manifest.
    pub fn restore(&mut self, transitions: Vec<TransitionRow>, current: usize, start: u64) {
        self.transitions = transitions;
        self.current = current.min(self.tasks.len() - 1);
        self.task_start_step = start;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn scalar_pv(v: f64) -> ParamVector<f64> {
        ParamVector::new(vec![(
            "w".to_string(),
            ArrayD::from_elem(IxDyn(&[1]), v),
        )])
    }

    fn default_specs(tasks: &[TaskId]) -> BTreeMap<TaskId, TaskSpec> {
        tasks.iter().map(|&t| (t, TaskSpec::defaults(t))).collect()
    }

    #[test]
    fn parallel_loss_sums_all_tasks() {
        let tasks = TaskId::ALL.to_vec();
        let losses: BTreeMap<TaskId, f64> = tasks.iter().map(|&t| (t, 1.0)).collect();
        let weights: BTreeMap<TaskId, f64> = tasks.iter().map(|&t| (t, 1.0)).collect();
        assert_eq!(parallel_loss(&losses, &weights, &tasks).unwrap(), 5.0);

        let zeros: BTreeMap<TaskId, f64> = tasks.iter().map(|&t| (t, 0.0)).collect();
        assert_eq!(parallel_loss(&zeros, &weights, &tasks).unwrap(), 0.0);

        // Doubling one weight adds exactly that task's loss once more.
        let mut w2 = weights.clone();
        w2.insert(TaskId::Rotation, 2.0);
        let base = parallel_loss(&losses, &weights, &tasks).unwrap();
        let bumped = parallel_loss(&losses, &w2, &tasks).unwrap();
        assert!((bumped - base - losses[&TaskId::Rotation]).abs() < 1e-12);
    }

    #[test]
    fn parallel_loss_requires_every_task() {
        let tasks = TaskId::ALL.to_vec();
        let mut losses: BTreeMap<TaskId, f64> = tasks.iter().map(|&t| (t, 1.0)).collect();
        losses.remove(&TaskId::Depth);
        let weights: BTreeMap<TaskId, f64> = tasks.iter().map(|&t| (t, 1.0)).collect();
        assert!(parallel_loss(&losses, &weights, &tasks).is_err());
    }

    #[test]
    fn sequential_and_continual_compose_as_written() {
        assert!((sequential_loss(0.7, 1.0) - 0.7).abs() < 1e-12);
        assert_eq!(continual_loss(0.5, Some(0.2), 1.0).unwrap(), 0.7);
        assert_eq!(continual_loss(0.5, Some(0.2), 0.0).unwrap(), 0.5);
        assert_eq!(continual_loss(0.5, None, 1.0).unwrap(), 0.5);
        assert!(continual_loss(0.5, Some(0.2), -0.1).is_err());
    }

    #[test]
    fn ema_first_transition_adopts_snapshot() {
        let e0 = scalar_pv(4.0);
        let r = ema_update::<f64>(None, &e0, 1, 0.5).unwrap();
        assert_eq!(r.entries()[0].1[[0]], 4.0);
    }

    #[test]
    fn ema_second_transition_hand_checked() {
        let e0 = scalar_pv(4.0);
        let e1 = scalar_pv(2.0);
        let r1 = ema_update::<f64>(None, &e0, 1, 0.5).unwrap();
        let r2 = ema_update(Some(&r1), &e1, 2, 0.5).unwrap();
        assert_eq!(r2.entries()[0].1[[0]], 3.0);
    }

    #[test]
    fn ema_is_a_convex_combination_for_k_up_to_five() {
        // Direct expansion: coefficients of E^(0..k-1) must sum to 1.
        let alpha = 0.3f64;
        let snaps: Vec<ParamVector<f64>> =
            (0..5).map(|i| scalar_pv(10.0 + i as f64)).collect();
        let mut reference: Option<ParamVector<f64>> = None;
        for k in 1..=5usize {
            let r = ema_update(reference.as_ref(), &snaps[k - 1], k, alpha).unwrap();
            // Expansion: coeff of E^(k-1) is alpha (or 1 at k=1); earlier
            // snapshots decay by (1 - alpha) per later transition.
            let mut coeffs = vec![0.0; k];
            coeffs[0] = 1.0;
            for later in 2..=k {
                for c in coeffs.iter_mut().take(later - 1) {
                    *c *= 1.0 - alpha;
                }
                coeffs[later - 1] = alpha;
            }
            let total: f64 = coeffs.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            let expect: f64 = coeffs
                .iter()
                .enumerate()
                .map(|(i, c)| c * (10.0 + i as f64))
                .sum();
            let got = r.entries()[0].1[[0]];
            assert!((got - expect).abs() < 1e-12, "k={k}: {got} vs {expect}");
            reference = Some(r);
        }
    }

    #[test]
    fn ema_fixed_point_when_snapshots_equal() {
        let p = scalar_pv(7.5);
        let mut reference: Option<ParamVector<f64>> = None;
        for k in 1..=4usize {
            let r = ema_update(reference.as_ref(), &p, k, 0.5).unwrap();
            assert_eq!(r.entries()[0].1[[0]], 7.5);
            reference = Some(r);
        }
    }

    #[test]
    fn ema_rejects_incompatible_and_unordered_updates() {
        let a = scalar_pv(1.0);
        let b = ParamVector::new(vec![(
            "w".to_string(),
            ArrayD::from_elem(IxDyn(&[2]), 1.0),
        )]);
        assert!(ema_update(Some(&a), &b, 2, 0.5).is_err());
        assert!(ema_update::<f64>(None, &a, 0, 0.5).is_err());
    }

    #[test]
    fn curriculum_transitions_on_both_domains_only() {
        let tasks = [TaskId::Rotation, TaskId::Jigsaw, TaskId::Translation];
        let cur = CurriculumState::new(&tasks, &default_specs(&tasks), 100).unwrap();
        assert!(!cur.should_transition(0.90, 0.80));
        assert!(cur.should_transition(0.86, 0.85));
        assert!(!cur.should_transition(0.84, 0.99));
    }

    #[test]
    fn depth_threshold_is_an_upper_bound() {
        let tasks = [TaskId::Depth, TaskId::Translation];
        let cur = CurriculumState::new(&tasks, &default_specs(&tasks), 100).unwrap();
        assert!(!cur.should_transition(0.14, 0.16));
        assert!(cur.should_transition(0.14, 0.15));
    }

    #[test]
    fn advance_logs_and_is_terminal_on_translation() {
        let tasks = [TaskId::Rotation, TaskId::Jigsaw, TaskId::Translation];
        let mut cur = CurriculumState::new(&tasks, &default_specs(&tasks), 100).unwrap();
        let t = cur.advance(200).unwrap();
        assert_eq!(t.completed, TaskId::Rotation);
        assert_eq!(t.entered, TaskId::Jigsaw);
        assert_eq!(t.entered_index, 1);

        // Same-step advance is rejected.
        assert!(matches!(cur.advance(200), Err(Error::Ordering(_))));

        let t = cur.advance(500).unwrap();
        assert_eq!(t.completed, TaskId::Jigsaw);
        assert_eq!(cur.current_task(), TaskId::Translation);
        assert!(matches!(cur.advance(900), Err(Error::Terminal(_))));

        let rows = cur.transitions();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].start_step, 0);
        assert_eq!(rows[0].end_step, 200);
        assert_eq!(rows[1].start_step, 200);
        assert_eq!(rows[1].end_step, 500);
        // Contiguity: end of task k is the start of task k+1.
        assert_eq!(rows[0].end_step, rows[1].start_step);
    }

    #[test]
    fn reference_encoder_requires_activation() {
        let cfg = ArchConfig {
            input_channels: 3,
            input_size: 32,
            base_channels: 4,
            n_residual_blocks: 1,
            tasks: vec![TaskId::Rotation, TaskId::Translation],
        };
        let r: ReferenceEncoder<f64> = ReferenceEncoder::new(&cfg, Domain::A, 0.5).unwrap();
        assert!(!r.is_active());
        assert!(ReferenceEncoder::<f64>::new(&cfg, Domain::A, 1.5).is_err());
    }
}
