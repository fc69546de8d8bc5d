//! End-to-end behavior of the training loop at tiny desk scale: term
//! logging per schedule, freezing, checkpoint fidelity, determinism and
//! failure modes.

use std::collections::BTreeMap;

use liss::ckpt;
use liss::data::{synth_generate, SynthConfig, UnpairedDataset};
use liss::nets::Domain;
use liss::schedule::ScheduleKind;
use liss::tasks::TaskId;
use liss::trainer::{metric_key, validate, Models, TrainConfig, Trainer};
use ndarray::ArrayD;

fn tiny_dataset(seed: u64, per_domain: usize, size: usize) -> UnpairedDataset {
    synth_generate(&SynthConfig {
        seed,
        per_domain,
        image_size: size,
        split_fraction: 0.2,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn tiny_cfg(schedule: ScheduleKind, tasks: Vec<TaskId>, out: &std::path::Path) -> TrainConfig {
    let mut cfg = TrainConfig::desk(schedule, tasks, out.to_path_buf());
    cfg.arch.input_size = 32;
    cfg.arch.base_channels = 4;
    cfg.arch.n_residual_blocks = 1;
    cfg.batch_size = 2;
    cfg.validation_cadence = 5;
    cfg.max_steps_per_task = Some(5);
    cfg.max_translation_steps = 5;
    cfg.val_max = Some(6);
    cfg.seed = 41;
    cfg
}

fn params_by_name(entries: &[(String, ArrayD<f32>)]) -> BTreeMap<String, ArrayD<f32>> {
    entries.iter().cloned().collect()
}

fn bits_equal(a: &ArrayD<f32>, b: &ArrayD<f32>) -> bool {
    a.shape() == b.shape()
        && a.iter()
            .zip(b.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

#[test]
fn baseline_logs_only_translation_terms() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(1, 12, 32);
    let cfg = tiny_cfg(ScheduleKind::Baseline, TaskId::ALL.to_vec(), tmp.path());
    let log = Trainer::<f32>::new(cfg, &ds).unwrap().run().unwrap();
    let losses = &log.records.last().unwrap().losses;
    assert!(losses.keys().all(|k| {
        k.starts_with("loss_gan_g")
            || k.starts_with("loss_idt")
            || k.starts_with("loss_cyc")
            || k.starts_with("loss_translation")
            || k.starts_with("loss_disc_translation")
    }));
    assert!(losses.contains_key("loss_translation_a"));
    assert!(!losses.contains_key("loss_rotation_a"));
}

#[test]
fn parallel_logs_every_task_term() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(2, 12, 32);
    let cfg = tiny_cfg(ScheduleKind::Parallel, TaskId::ALL.to_vec(), tmp.path());
    let log = Trainer::<f32>::new(cfg, &ds).unwrap().run().unwrap();
    let losses = &log.records.last().unwrap().losses;
    for t in ["rotation", "jigsaw", "depth", "colorization"] {
        assert!(losses.contains_key(&format!("loss_{t}_a")), "missing {t}");
        assert!(losses.contains_key(&format!("loss_{t}_b")), "missing {t}");
    }
    assert!(losses.contains_key("loss_translation_a"));
    assert!(losses.contains_key("loss_disc_colorization_b"));
}

#[test]
fn continual_has_no_distillation_term_during_first_task() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(3, 12, 32);
    let mut cfg = tiny_cfg(
        ScheduleKind::Continual,
        vec![TaskId::Rotation, TaskId::Jigsaw, TaskId::Translation],
        tmp.path(),
    );
    cfg.max_steps_per_task = Some(5);
    cfg.max_translation_steps = 5;
    let log = Trainer::<f32>::new(cfg, &ds).unwrap().run().unwrap();
    // First record is during the rotation task (step 5): no distillation.
    let first = &log.records[0];
    assert_eq!(first.task, "rotation");
    assert!(!first.losses.contains_key("loss_dist_a"));
    // After the first transition the reference is active.
    let later = log
        .records
        .iter()
        .find(|r| r.task == "jigsaw")
        .expect("jigsaw record");
    assert!(later.losses.contains_key("loss_dist_a"));
    assert!(later.losses.contains_key("loss_dist_b"));
}

#[test]
fn sequential_updates_touch_only_active_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(4, 12, 32);
    let cfg = tiny_cfg(
        ScheduleKind::Sequential,
        vec![TaskId::Rotation, TaskId::Jigsaw, TaskId::Translation],
        tmp.path(),
    );
    let fresh = Models::<f32>::build(&cfg).unwrap();
    let log = Trainer::<f32>::new(cfg.clone(), &ds).unwrap().run().unwrap();

    // Transition checkpoints exist at steps 5 and 10; final at 15.
    let ck5 = params_by_name(&ckpt::load::<f32>(&tmp.path().join("checkpoints/step_5")).unwrap().1);
    let ck10 =
        params_by_name(&ckpt::load::<f32>(&tmp.path().join("checkpoints/step_10")).unwrap().1);
    let final_dir = log.final_checkpoint.clone().unwrap();
    let ck_end = params_by_name(&ckpt::load::<f32>(&final_dir).unwrap().1);

    // During the rotation phase the jigsaw and translation heads (and all
    // discriminators) kept their initial values.
    let fresh_params: BTreeMap<String, ArrayD<f32>> = {
        let mut map = BTreeMap::new();
        for (n, a) in fresh.collect_params() {
            map.insert(n, a);
        }
        map
    };
    for (name, arr) in &ck5 {
        let untouched = name.contains(".head.jigsaw.")
            || name.contains(".head.translation.")
            || name.starts_with("disc_");
        if untouched {
            assert!(
                bits_equal(arr, &fresh_params[name]),
                "{name} changed during rotation phase"
            );
        }
    }
    // The encoder and rotation head did move.
    assert!(ck5.iter().any(|(n, a)| n.starts_with("gen_a.enc.")
        && !bits_equal(a, &fresh_params[n])));
    assert!(ck5.iter().any(|(n, a)| n.contains(".head.rotation.")
        && !bits_equal(a, &fresh_params[n])));

    // Frozen after its transition: the rotation head is bit-identical at
    // every later checkpoint.
    for name in ck5.keys().filter(|n| n.contains(".head.rotation.")) {
        assert!(bits_equal(&ck5[name], &ck10[name]), "{name} moved after freeze");
        assert!(bits_equal(&ck5[name], &ck_end[name]), "{name} moved after freeze");
    }
}

#[test]
fn checkpoint_reload_reproduces_validation_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(5, 14, 32);
    let cfg = tiny_cfg(
        ScheduleKind::Sequential,
        vec![TaskId::Rotation, TaskId::Translation],
        tmp.path(),
    );
    let trainer = Trainer::<f32>::new(cfg.clone(), &ds).unwrap();
    let table = trainer.perm_table.clone();
    let log = trainer.run().unwrap();

    let (manifest, params) =
        ckpt::load::<f32>(log.final_checkpoint.as_ref().unwrap()).unwrap();
    let mut reloaded = Models::<f32>::build(&cfg).unwrap();
    reloaded
        .load_params(&params, &manifest.reference_tasks)
        .unwrap();

    let metrics_before = validate(
        &reloaded.gen_a,
        &reloaded.gen_b,
        &ds,
        &cfg.arch.tasks,
        &table,
        cfg.batch_size,
        cfg.val_max,
    )
    .unwrap();
    let last = &log.records.last().unwrap().metrics;
    assert_eq!(last.len(), metrics_before.len());
    for (k, v) in last {
        assert_eq!(
            v.to_bits(),
            metrics_before[k].to_bits(),
            "metric {k} differs after reload"
        );
    }
}

#[test]
fn identical_config_and_seed_reproduce_metrics_bytes() {
    let ds = tiny_dataset(6, 14, 32);
    let run = |dir: &std::path::Path| {
        let cfg = tiny_cfg(
            ScheduleKind::Sequential,
            vec![TaskId::Rotation, TaskId::Translation],
            dir,
        );
        Trainer::<f32>::new(cfg, &ds).unwrap().run().unwrap();
        std::fs::read(dir.join("metrics.csv")).unwrap()
    };
    let t1 = tempfile::tempdir().unwrap();
    let t2 = tempfile::tempdir().unwrap();
    assert_eq!(run(t1.path()), run(t2.path()));
}

#[test]
fn untrained_rotation_head_scores_near_chance() {
    // 200 balanced validation samples per domain; a random head must sit
    // near 1/4 accuracy.
    let ds = tiny_dataset(7, 500, 32);
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_cfg(
        ScheduleKind::Sequential,
        vec![TaskId::Rotation, TaskId::Translation],
        tmp.path(),
    );
    cfg.val_max = Some(200);
    let models = Models::<f32>::build(&cfg).unwrap();
    let table = liss::tasks::PermutationTable::build(1, 64).unwrap();
    let metrics = validate(
        &models.gen_a,
        &models.gen_b,
        &ds,
        &cfg.arch.tasks,
        &table,
        8,
        cfg.val_max,
    )
    .unwrap();
    for d in Domain::BOTH {
        let acc = metrics[&metric_key(d, TaskId::Rotation)];
        assert!(
            (acc - 0.25).abs() <= 0.1,
            "domain {} accuracy {acc} not near chance",
            d.tag()
        );
    }
}

#[test]
fn parallel_costs_more_wall_time_per_sample_than_sequential() {
    let ds = tiny_dataset(8, 12, 32);
    let run = |schedule: ScheduleKind, dir: &std::path::Path| {
        let mut cfg = tiny_cfg(schedule, TaskId::ALL.to_vec(), dir);
        cfg.validation_cadence = 2;
        cfg.max_steps_per_task = Some(50);
        cfg.max_translation_steps = 6;
        let log = Trainer::<f32>::new(cfg, &ds).unwrap().run().unwrap();
        let times: Vec<f64> = log.records.iter().map(|r| r.wall_per_sample).collect();
        times.iter().sum::<f64>() / times.len() as f64
    };
    let t1 = tempfile::tempdir().unwrap();
    let t2 = tempfile::tempdir().unwrap();
    // Sequential spends its first steps on the cheap rotation task.
    let seq = run(ScheduleKind::Sequential, t1.path());
    let par = run(ScheduleKind::Parallel, t2.path());
    assert!(
        par > seq,
        "parallel per-sample time {par} not above sequential {seq}"
    );
}

#[test]
fn poisoned_parameters_abort_with_the_term_name() {
    let ds = tiny_dataset(9, 12, 32);
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_cfg(
        ScheduleKind::Sequential,
        vec![TaskId::Rotation, TaskId::Translation],
        tmp.path(),
    );
    let mut trainer = Trainer::<f32>::new(cfg, &ds).unwrap();
    trainer.models.gen_a.encoder.visit_mut(&mut |name, arr| {
        if name == "c1.w" {
            arr.fill(f32::NAN);
        }
    });
    let err = trainer.run().unwrap_err();
    match err {
        liss::Error::NonFinite { term, step } => {
            assert_eq!(term, "loss_rotation_a");
            assert_eq!(step, 1);
        }
        other => panic!("expected NonFinite, got {other}"),
    }
}

#[test]
fn stall_aborts_with_task_and_metrics() {
    let ds = tiny_dataset(10, 12, 32);
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_cfg(
        ScheduleKind::Sequential,
        vec![TaskId::Rotation, TaskId::Translation],
        tmp.path(),
    );
    // Unreachable threshold, tiny stall budget, no cap.
    cfg.max_steps_per_task = None;
    cfg.stall_budget = 10;
    cfg.thresholds
        .insert(TaskId::Rotation, liss::tasks::Threshold::AccuracyAtLeast(1.1));
    let err = Trainer::<f32>::new(cfg, &ds).unwrap().run().unwrap_err();
    match err {
        liss::Error::Stall { task, steps, .. } => {
            assert_eq!(task, "rotation");
            assert!(steps >= 10);
        }
        other => panic!("expected Stall, got {other}"),
    }
}

#[test]
fn forgetting_report_reads_the_log() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(11, 12, 32);
    let cfg = tiny_cfg(
        ScheduleKind::Sequential,
        vec![TaskId::Rotation, TaskId::Translation],
        tmp.path(),
    );
    let log = Trainer::<f32>::new(cfg, &ds).unwrap().run().unwrap();
    let rep = log.forgetting_report(TaskId::Rotation).unwrap();
    assert!(rep.mean_peak > 0.0);
    assert!(rep.per_domain.len() == 2);
    // Baseline never trains the pretext tasks.
    assert!(log.forgetting_report(TaskId::Jigsaw).is_err());
}
