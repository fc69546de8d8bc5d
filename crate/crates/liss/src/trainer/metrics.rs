//! Validation records, the training log, metrics-file emission and the
//! forgetting report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nets::Domain;
use crate::schedule::{ScheduleKind, TransitionRow};
use crate::tasks::{TaskId, TaskKind};

/// Key of one per-domain per-head validation metric column.
pub fn metric_key(domain: Domain, task: TaskId) -> String {
    let suffix = match task.kind() {
        TaskKind::Classification { .. } => "acc",
        _ => "l1",
    };
    format!("{}_{}_{}", domain.tag(), task.name(), suffix)
}

/// One validation point.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub step: u64,
    pub schedule: ScheduleKind,
    /// Task being trained at this step ("all" under the parallel schedule).
    pub task: String,
    /// `metric_key` -> value for every pretext head in the task list.
    pub metrics: BTreeMap<String, f64>,
    /// Loss-term name -> value from the step that hit this cadence point.
    pub losses: BTreeMap<String, f64>,
    /// Seconds per sample (both domains); diagnostic only, deliberately
    /// excluded from the metrics file so reruns stay byte-identical.
    pub wall_per_sample: f64,
    /// `task:start:end` when a transition fired at this validation point.
    pub transition: Option<String>,
}

/// Retention of one task in one domain.
#[derive(Debug, Clone, Copy)]
pub struct DomainRetention {
    pub peak: f64,
    pub final_value: f64,
    /// `final / peak`. For accuracy metrics values below 1 mean
    /// forgetting; for L1 metrics values above 1 mean degradation.
    pub retention: f64,
}

#[derive(Debug, Clone)]
pub struct ForgettingReport {
    pub task: TaskId,
    pub per_domain: BTreeMap<Domain, DomainRetention>,
    pub mean_retention: f64,
    pub mean_final: f64,
    pub mean_peak: f64,
}

/// Complete outcome of one training run.
#[derive(Debug)]
pub struct TrainingLog {
    pub schedule: ScheduleKind,
    pub seed: u64,
    pub tasks: Vec<TaskId>,
    pub records: Vec<MetricsRecord>,
    pub transitions: Vec<TransitionRow>,
    /// Steps during which each task was actively trained.
    pub trained_intervals: BTreeMap<TaskId, (u64, u64)>,
    pub final_step: u64,
    pub final_checkpoint: Option<PathBuf>,
}

impl TrainingLog {
    /// Canonical loss-column names for this task list, in file order.
    pub fn loss_columns(tasks: &[TaskId]) -> Vec<String> {
        let mut cols = Vec::new();
        for t in tasks.iter().filter(|t| t.is_pretext()) {
            for d in Domain::BOTH {
                cols.push(format!("loss_{}_{}", t.name(), d.tag()));
            }
        }
        if tasks.contains(&TaskId::Translation) {
            for name in ["gan_g", "idt", "cyc", "translation"] {
                for d in Domain::BOTH {
                    cols.push(format!("loss_{}_{}", name, d.tag()));
                }
            }
        }
        for d in Domain::BOTH {
            cols.push(format!("loss_dist_{}", d.tag()));
        }
        for t in tasks.iter().filter(|t| t.needs_discriminator()) {
            for d in Domain::BOTH {
                cols.push(format!("loss_disc_{}_{}", t.name(), d.tag()));
            }
        }
        cols
    }

    pub fn metric_columns(tasks: &[TaskId]) -> Vec<String> {
        let mut cols = Vec::new();
        for d in Domain::BOTH {
            for t in tasks.iter().filter(|t| t.is_pretext()) {
                cols.push(metric_key(d, *t));
            }
        }
        cols
    }

    /// Writes the delimited metrics file: one row per validation point,
    /// fixed header, empty cells for terms inactive at that step.
    pub fn write_metrics_csv(&self, path: &Path) -> Result<()> {
        let metric_cols = Self::metric_columns(&self.tasks);
        let loss_cols = Self::loss_columns(&self.tasks);
        let mut text = String::new();
        text.push_str("step,schedule,task");
        for c in &metric_cols {
            text.push(',');
            text.push_str(c);
        }
        for c in &loss_cols {
            text.push(',');
            text.push_str(c);
        }
        text.push_str(",transition\n");
        for r in &self.records {
            text.push_str(&format!("{},{},{}", r.step, self.schedule, r.task));
            for c in &metric_cols {
                match r.metrics.get(c) {
                    Some(v) => text.push_str(&format!(",{v:.6}")),
                    None => text.push(','),
                }
            }
            for c in &loss_cols {
                match r.losses.get(c) {
                    Some(v) => text.push_str(&format!(",{v:.6}")),
                    None => text.push(','),
                }
            }
            text.push(',');
            if let Some(t) = &r.transition {
                text.push_str(t);
            }
            text.push('\n');
        }
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Transition table in the published format.
    pub fn transitions_table(&self) -> String {
        let mut text = String::new();
        text.push_str(&format!(
            "{:<12} {:<14} {:>10} {:>10}\n",
            "Schedule", "Task", "Start_Step", "End_Step"
        ));
        for (i, row) in self.transitions.iter().enumerate() {
            let schedule = if i == 0 {
                self.schedule.name()
            } else {
                ""
            };
            text.push_str(&format!(
                "{:<12} {:<14} {:>10} {:>10}\n",
                schedule,
                row.task.name(),
                row.start_step,
                row.end_step
            ));
        }
        text
    }

    pub fn write_transitions(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join("transitions.txt"), self.transitions_table())?;
        let mut csv = String::from("schedule,task,start_step,end_step\n");
        for row in &self.transitions {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                self.schedule,
                row.task.name(),
                row.start_step,
                row.end_step
            ));
        }
        std::fs::write(dir.join("transitions.csv"), csv)?;
        Ok(())
    }

    /// Peak metric while the task was being trained, final metric at the
    /// last validation point, and their ratio, per domain and averaged.
    pub fn forgetting_report(&self, task: TaskId) -> Result<ForgettingReport> {
        let interval = self.trained_intervals.get(&task).ok_or_else(|| {
            Error::State(format!("task '{task}' was never trained in this run"))
        })?;
        let last = self
            .records
            .last()
            .ok_or_else(|| Error::State("empty training log".to_string()))?;
        let higher_is_better = matches!(task.kind(), TaskKind::Classification { .. });

        let mut per_domain = BTreeMap::new();
        for d in Domain::BOTH {
            let key = metric_key(d, task);
            let in_window: Vec<f64> = self
                .records
                .iter()
                .filter(|r| r.step >= interval.0 && r.step <= interval.1)
                .filter_map(|r| r.metrics.get(&key).copied())
                .collect();
            if in_window.is_empty() {
                return Err(Error::State(format!(
                    "no validation points for '{task}' while it was current"
                )));
            }
            let peak = if higher_is_better {
                in_window.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            } else {
                in_window.iter().cloned().fold(f64::INFINITY, f64::min)
            };
            let final_value = *last.metrics.get(&key).ok_or_else(|| {
                Error::State(format!("final record lacks metric '{key}'"))
            })?;
            let retention = final_value / peak.max(1e-12);
            per_domain.insert(
                d,
                DomainRetention {
                    peak,
                    final_value,
                    retention,
                },
            );
        }
        let n = per_domain.len() as f64;
        let mean_retention = per_domain.values().map(|r| r.retention).sum::<f64>() / n;
        let mean_final = per_domain.values().map(|r| r.final_value).sum::<f64>() / n;
        let mean_peak = per_domain.values().map(|r| r.peak).sum::<f64>() / n;
        Ok(ForgettingReport {
            task,
            per_domain,
            mean_retention,
            mean_final,
            mean_peak,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(step: u64, rot_a: f64, rot_b: f64) -> MetricsRecord {
        let mut metrics = BTreeMap::new();
        metrics.insert(metric_key(Domain::A, TaskId::Rotation), rot_a);
        metrics.insert(metric_key(Domain::B, TaskId::Rotation), rot_b);
        MetricsRecord {
            step,
            schedule: ScheduleKind::Sequential,
            task: "rotation".to_string(),
            metrics,
            losses: BTreeMap::new(),
            wall_per_sample: 0.0,
            transition: None,
        }
    }

    fn log_with(records: Vec<MetricsRecord>, end: u64) -> TrainingLog {
        TrainingLog {
            schedule: ScheduleKind::Sequential,
            seed: 0,
            tasks: vec![TaskId::Rotation, TaskId::Translation],
            records,
            transitions: vec![TransitionRow {
                task: TaskId::Rotation,
                start_step: 0,
                end_step: 200,
            }],
            trained_intervals: [
                (TaskId::Rotation, (0, 200)),
                (TaskId::Translation, (200, end)),
            ]
            .into_iter()
            .collect(),
            final_step: end,
            final_checkpoint: None,
        }
    }

    #[test]
    fn constant_metric_gives_unit_retention() {
        let log = log_with(vec![record(100, 0.8, 0.8), record(200, 0.8, 0.8), record(300, 0.8, 0.8)], 300);
        let rep = log.forgetting_report(TaskId::Rotation).unwrap();
        assert!((rep.mean_retention - 1.0).abs() < 1e-12);
    }

    #[test]
    fn halved_metric_gives_half_retention() {
        let log = log_with(
            vec![record(100, 0.9, 0.9), record(200, 0.9, 0.9), record(300, 0.45, 0.45)],
            300,
        );
        let rep = log.forgetting_report(TaskId::Rotation).unwrap();
        assert!((rep.mean_retention - 0.5).abs() < 1e-12);
        assert!((rep.per_domain[&Domain::A].peak - 0.9).abs() < 1e-12);
    }

    #[test]
    fn untrained_task_is_an_error() {
        let log = log_with(vec![record(100, 0.5, 0.5)], 100);
        assert!(log.forgetting_report(TaskId::Jigsaw).is_err());
    }

    #[test]
    fn metrics_csv_has_fixed_header_and_transition_column() {
        let tmp = tempfile::tempdir().unwrap();
        let mut r = record(100, 0.5, 0.6);
        r.transition = Some("rotation:0:100".to_string());
        let log = log_with(vec![r], 100);
        let path = tmp.path().join("metrics.csv");
        log.write_metrics_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("step,schedule,task,"));
        assert!(header.contains("a_rotation_acc"));
        assert!(header.contains("loss_dist_b"));
        assert!(header.ends_with(",transition"));
        let row = lines.next().unwrap();
        assert!(row.starts_with("100,sequential,rotation,"));
        assert!(row.ends_with("rotation:0:100"));
    }
}
