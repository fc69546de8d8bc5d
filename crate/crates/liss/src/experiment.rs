//! Multi-schedule orchestration: runs the selected schedules on one
//! shared dataset and seed, then emits the side-by-side comparison report
//! and plot-ready series files.

use std::collections::BTreeMap;
use std::path::Path;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::nets::Domain;
use crate::schedule::ScheduleKind;
use crate::tasks::{TaskId, TaskKind};
use crate::trainer::{metric_key, Trainer, TrainingLog};

pub struct ComparisonReport {
    pub runs: Vec<(ScheduleKind, TrainingLog)>,
}

/// Runs every selected schedule with the same seed, dataset and task set.
pub fn run_comparison(cfg: &ExperimentConfig) -> Result<ComparisonReport> {
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join("resolved_config.toml"), cfg.echo_toml()?)?;
    let ds = cfg.build_dataset()?;

    let mut runs = Vec::new();
    for &schedule in &cfg.schedules {
        let train_cfg = cfg.train_config(schedule)?;
        let out_dir = train_cfg.output_dir.clone();
        let log = Trainer::<f32>::new(train_cfg, &ds)?.run()?;
        emit_series(&log, &out_dir.join("series"))?;
        runs.push((schedule, log));
    }

    let report = ComparisonReport { runs };
    std::fs::write(cfg.out.join("comparison.txt"), report.render_text())?;
    std::fs::write(cfg.out.join("comparison.csv"), report.render_csv())?;
    Ok(report)
}

/// Writes one `(step, value)` series file per (domain, pretext head):
/// accuracies for the classification heads, L1 losses for the regression
/// heads. Returns the number of files written.
pub fn emit_series(log: &TrainingLog, dir: &Path) -> Result<usize> {
    if log.records.is_empty() {
        eprintln!("warning: empty training log, no series files written");
        return Ok(0);
    }
    std::fs::create_dir_all(dir)?;
    let mut written = 0usize;
    for d in Domain::BOTH {
        for &task in log.tasks.iter().filter(|t| t.is_pretext()) {
            let key = metric_key(d, task);
            let mut text = String::from("step,value\n");
            for r in &log.records {
                if let Some(v) = r.metrics.get(&key) {
                    text.push_str(&format!("{},{:.6}\n", r.step, v));
                }
            }
            std::fs::write(dir.join(format!("{key}.csv")), text)?;
            written += 1;
        }
    }
    Ok(written)
}

impl ComparisonReport {
    fn pretext_tasks(&self) -> Vec<TaskId> {
        self.runs
            .first()
            .map(|(_, log)| log.tasks.iter().filter(|t| t.is_pretext()).cloned().collect())
            .unwrap_or_default()
    }

    /// Retention per (schedule, task), averaged over domains; `None` when
    /// a schedule never trained the task (the baseline).
    fn retention_matrix(&self) -> BTreeMap<(ScheduleKind, TaskId), Option<(f64, f64)>> {
        let mut out = BTreeMap::new();
        for (schedule, log) in &self.runs {
            for &task in log.tasks.iter().filter(|t| t.is_pretext()) {
                let cell = log
                    .forgetting_report(task)
                    .ok()
                    .map(|r| (r.mean_retention, r.mean_final));
                out.insert((*schedule, task), cell);
            }
        }
        out
    }

    pub fn render_text(&self) -> String {
        let mut text = String::new();
        text.push_str("Schedule comparison\n===================\n\n");
        text.push_str("Transition tables\n-----------------\n");
        for (_, log) in &self.runs {
            text.push_str(&log.transitions_table());
            text.push('\n');
        }

        text.push_str("Retention and final metrics per pretext task\n");
        text.push_str("---------------------------------------------\n");
        text.push_str(&format!(
            "{:<12} {:<14} {:>10} {:>10}\n",
            "Schedule", "Task", "Retention", "Final"
        ));
        let matrix = self.retention_matrix();
        for (schedule, _) in &self.runs {
            for task in self.pretext_tasks() {
                match matrix.get(&(*schedule, task)) {
                    Some(Some((ret, fin))) => text.push_str(&format!(
                        "{:<12} {:<14} {:>10.4} {:>10.4}\n",
                        schedule.name(),
                        task.name(),
                        ret,
                        fin
                    )),
                    _ => text.push_str(&format!(
                        "{:<12} {:<14} {:>10} {:>10}\n",
                        schedule.name(),
                        task.name(),
                        "-",
                        "-"
                    )),
                }
            }
        }

        if self.runs.len() >= 2 {
            let (first, _) = self.runs[0];
            text.push_str("\nRetention deltas vs first schedule\n");
            text.push_str("----------------------------------\n");
            for (schedule, _) in self.runs.iter().skip(1) {
                for task in self.pretext_tasks() {
                    let base = matrix.get(&(first, task)).and_then(|c| *c);
                    let this = matrix.get(&(*schedule, task)).and_then(|c| *c);
                    if let (Some((rb, _)), Some((rt, _))) = (base, this) {
                        text.push_str(&format!(
                            "{:<12} {:<14} {:>+10.4}\n",
                            schedule.name(),
                            task.name(),
                            rt - rb
                        ));
                    }
                }
            }
        }
        text
    }

    pub fn render_csv(&self) -> String {
        let mut text = String::from("schedule,task,metric_kind,retention,final\n");
        let matrix = self.retention_matrix();
        for (schedule, _) in &self.runs {
            for task in self.pretext_tasks() {
                let kind = match task.kind() {
                    TaskKind::Classification { .. } => "acc",
                    _ => "l1",
                };
                match matrix.get(&(*schedule, task)) {
                    Some(Some((ret, fin))) => text.push_str(&format!(
                        "{},{},{kind},{ret:.6},{fin:.6}\n",
                        schedule.name(),
                        task.name()
                    )),
                    _ => text.push_str(&format!(
                        "{},{},{kind},,\n",
                        schedule.name(),
                        task.name()
                    )),
                }
            }
        }
        text
    }
}
