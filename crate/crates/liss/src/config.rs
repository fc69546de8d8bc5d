//! Experiment configuration: a flat TOML file with dotted keys, overlaid
//! by command-line flags. Precedence is defaults, then file, then flags;
//! the fully resolved configuration is echoed into the output directory
//! so a run can be reproduced from its artifacts alone.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_unpaired_dataset, synth_generate, SynthConfig, UnpairedDataset};
use crate::error::{Error, Result};
use crate::nets::ArchConfig;
use crate::optim::OptimKind;
use crate::schedule::ScheduleKind;
use crate::tasks::{GanMode, TaskId, TaskKind, Threshold};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    /// Schedules to run, in order.
    pub schedules: Vec<String>,
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DatasetSection,
    pub train: TrainSection,
    pub arch: ArchSection,
}

impl Default for FileConfig {
    fn default() -> Self {
        FileConfig {
            schedules: vec!["continual".to_string()],
            seed: 0,
            out: PathBuf::from("runs/liss"),
            dataset: DatasetSection::default(),
            train: TrainSection::default(),
            arch: ArchSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// "synthetic" or "paths".
    pub source: String,
    pub data_a: Option<PathBuf>,
    pub data_b: Option<PathBuf>,
    pub depth_a: Option<PathBuf>,
    pub depth_b: Option<PathBuf>,
    pub size: usize,
    pub split_fraction: f64,
    pub synth_per_domain: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            source: "synthetic".to_string(),
            data_a: None,
            data_b: None,
            depth_a: None,
            depth_b: None,
            size: 64,
            split_fraction: 0.1,
            synth_per_domain: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub batch: usize,
    /// Translation-task steps to run.
    pub steps: u64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_idt: f64,
    pub lambda_cyc: f64,
    /// Per-task loss weights, e.g. `lambda.rotation = 2.0`.
    pub lambda: BTreeMap<String, f64>,
    /// Per-task curriculum bounds (accuracy floor or L1 ceiling per kind).
    pub thresholds: BTreeMap<String, f64>,
    pub cadence: u64,
    pub stall_budget: u64,
    pub max_steps_per_task: Option<u64>,
    pub val_max: Option<usize>,
    /// "logistic" or "least_squares".
    pub gan_mode: String,
    /// "radam" or "adam".
    pub optimizer: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: 0.0005,
            batch: 5,
            steps: 2000,
            alpha: 0.5,
            beta: 1.0,
            lambda_idt: 5.0,
            lambda_cyc: 10.0,
            lambda: BTreeMap::new(),
            thresholds: BTreeMap::new(),
            cadence: 100,
            stall_budget: 5000,
            max_steps_per_task: None,
            val_max: None,
            gan_mode: "logistic".to_string(),
            optimizer: "radam".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchSection {
    pub base_channels: usize,
    pub n_residual_blocks: usize,
    pub tasks: Vec<String>,
}

impl Default for ArchSection {
    fn default() -> Self {
        ArchSection {
            base_channels: 16,
            n_residual_blocks: 2,
            tasks: TaskId::ALL.iter().map(|t| t.name().to_string()).collect(),
        }
    }
}

/// Command-line overrides; `None` leaves the file/default value alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub schedule: Option<String>,
    pub dataset: Option<String>,
    pub data_a: Option<PathBuf>,
    pub data_b: Option<PathBuf>,
    pub depth_dir: Option<PathBuf>,
    pub size: Option<usize>,
    pub steps: Option<u64>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Where the images come from.
#[derive(Debug, Clone)]
pub enum DatasetSource {
    Synthetic(SynthConfig),
    Paths {
        data_a: PathBuf,
        data_b: PathBuf,
        depth_a: Option<PathBuf>,
        depth_b: Option<PathBuf>,
        split_fraction: f64,
        size: usize,
        seed: u64,
    },
}

/// Fully resolved experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub schedules: Vec<ScheduleKind>,
    pub dataset: DatasetSource,
    pub out: PathBuf,
    pub seed: u64,
    pub file: FileConfig,
}

impl ExperimentConfig {
    pub fn build_dataset(&self) -> Result<UnpairedDataset> {
        match &self.dataset {
            DatasetSource::Synthetic(cfg) => synth_generate(cfg),
            DatasetSource::Paths {
                data_a,
                data_b,
                depth_a,
                depth_b,
                split_fraction,
                size,
                seed,
            } => load_unpaired_dataset(
                data_a,
                data_b,
                depth_a.as_deref(),
                depth_b.as_deref(),
                *split_fraction,
                *seed,
                *size,
            ),
        }
    }

    /// Per-schedule training configuration (artifacts go to a schedule
    /// subdirectory).
    pub fn train_config(&self, schedule: ScheduleKind) -> Result<TrainConfig> {
        let f = &self.file;
        let tasks: Vec<TaskId> = f
            .arch
            .tasks
            .iter()
            .map(|s| TaskId::parse(s))
            .collect::<Result<_>>()?;
        let mut lambda = BTreeMap::new();
        for (name, w) in &f.train.lambda {
            lambda.insert(TaskId::parse(name)?, *w);
        }
        let mut thresholds = BTreeMap::new();
        for (name, bound) in &f.train.thresholds {
            let task = TaskId::parse(name)?;
            let th = match task.kind() {
                TaskKind::Classification { .. } => Threshold::AccuracyAtLeast(*bound),
                _ => Threshold::L1AtMost(*bound),
            };
            thresholds.insert(task, th);
        }
        let gan_mode = match f.train.gan_mode.as_str() {
            "logistic" => GanMode::Logistic,
            "least_squares" => GanMode::LeastSquares,
            other => {
                return Err(Error::Config(format!(
                    "unknown gan_mode '{other}' (expected logistic|least_squares)"
                )))
            }
        };
        let optimizer = match f.train.optimizer.as_str() {
            "radam" => OptimKind::RAdam,
            "adam" => OptimKind::Adam,
            other => {
                return Err(Error::Config(format!(
                    "unknown optimizer '{other}' (expected radam|adam)"
                )))
            }
        };
        let cfg = TrainConfig {
            schedule,
            arch: ArchConfig {
                input_channels: 3,
                input_size: f.dataset.size,
                base_channels: f.arch.base_channels,
                n_residual_blocks: f.arch.n_residual_blocks,
                tasks,
            },
            learning_rate: f.train.lr,
            batch_size: f.train.batch,
            max_translation_steps: f.train.steps,
            alpha: f.train.alpha,
            beta: f.train.beta,
            lambda,
            lambda_idt: f.train.lambda_idt,
            lambda_cyc: f.train.lambda_cyc,
            thresholds,
            validation_cadence: f.train.cadence,
            stall_budget: f.train.stall_budget,
            max_steps_per_task: f.train.max_steps_per_task,
            val_max: f.train.val_max,
            gan_mode,
            optimizer,
            seed: self.seed,
            output_dir: self.out.join(schedule.name()),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// TOML text of the resolved configuration.
    pub fn echo_toml(&self) -> Result<String> {
        toml::to_string_pretty(&self.file)
            .map_err(|e| Error::Config(format!("cannot encode resolved config: {e}")))
    }
}

/// Loads the optional file, applies flag overrides and validates.
pub fn parse_config(file_path: Option<&Path>, ov: &Overrides) -> Result<ExperimentConfig> {
    let mut file: FileConfig = match file_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                Error::Config(format!("cannot read config '{}': {e}", p.display()))
            })?;
            toml::from_str(&text)
                .map_err(|e| Error::Config(format!("config '{}': {e}", p.display())))?
        }
        None => FileConfig::default(),
    };

    if let Some(s) = &ov.schedule {
        file.schedules = s.split(',').map(|t| t.trim().to_string()).collect();
    }
    if let Some(d) = &ov.dataset {
        file.dataset.source = d.clone();
    }
    if let Some(p) = &ov.data_a {
        file.dataset.data_a = Some(p.clone());
    }
    if let Some(p) = &ov.data_b {
        file.dataset.data_b = Some(p.clone());
    }
    if let Some(root) = &ov.depth_dir {
        file.dataset.depth_a = Some(root.join("depth_a"));
        file.dataset.depth_b = Some(root.join("depth_b"));
    }
    if let Some(s) = ov.size {
        file.dataset.size = s;
    }
    if let Some(s) = ov.steps {
        file.train.steps = s;
    }
    if let Some(s) = ov.seed {
        file.seed = s;
    }
    if let Some(a) = ov.alpha {
        file.train.alpha = a;
    }
    if let Some(b) = ov.beta {
        file.train.beta = b;
    }
    if let Some(lr) = ov.lr {
        file.train.lr = lr;
    }
    if let Some(b) = ov.batch {
        file.train.batch = b;
    }
    if let Some(o) = &ov.out {
        file.out = o.clone();
    }

    if file.schedules.is_empty() {
        return Err(Error::Config("at least one schedule must be selected".into()));
    }
    let schedules: Vec<ScheduleKind> = file
        .schedules
        .iter()
        .map(|s| ScheduleKind::parse(s))
        .collect::<Result<_>>()?;
    if !(0.0..=1.0).contains(&file.train.alpha) {
        return Err(Error::Config(format!(
            "alpha must be in [0, 1], got {}",
            file.train.alpha
        )));
    }
    if file.train.beta < 0.0 {
        return Err(Error::Config(format!(
            "beta must be >= 0, got {}",
            file.train.beta
        )));
    }

    let dataset = match file.dataset.source.as_str() {
        "synthetic" => DatasetSource::Synthetic(SynthConfig {
            seed: file.seed,
            per_domain: file.dataset.synth_per_domain,
            image_size: file.dataset.size,
            split_fraction: file.dataset.split_fraction,
            ..SynthConfig::default()
        }),
        "paths" => {
            let data_a = file.dataset.data_a.clone().ok_or_else(|| {
                Error::Config("dataset.source = \"paths\" requires data_a".into())
            })?;
            let data_b = file.dataset.data_b.clone().ok_or_else(|| {
                Error::Config("dataset.source = \"paths\" requires data_b".into())
            })?;
            for p in [&data_a, &data_b] {
                if !p.is_dir() {
                    return Err(Error::Config(format!(
                        "dataset directory '{}' does not exist",
                        p.display()
                    )));
                }
            }
            DatasetSource::Paths {
                data_a,
                data_b,
                depth_a: file.dataset.depth_a.clone(),
                depth_b: file.dataset.depth_b.clone(),
                split_fraction: file.dataset.split_fraction,
                size: file.dataset.size,
                seed: file.seed,
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown dataset source '{other}' (expected synthetic|paths)"
            )))
        }
    };

    let cfg = ExperimentConfig {
        schedules,
        dataset,
        out: file.out.clone(),
        seed: file.seed,
        file,
    };
    // Surface arch/train inconsistencies now rather than mid-run.
    for &s in &cfg.schedules {
        cfg.train_config(s)?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_settings() {
        let cfg = parse_config(None, &Overrides::default()).unwrap();
        let t = cfg.train_config(ScheduleKind::Continual).unwrap();
        assert_eq!(t.learning_rate, 0.0005);
        assert_eq!(t.alpha, 0.5);
        assert_eq!(t.batch_size, 5);
        let specs = t.task_specs().unwrap();
        for spec in specs.values() {
            assert_eq!(spec.weight, 1.0);
            match spec.threshold {
                Threshold::AccuracyAtLeast(v) => assert_eq!(v, 0.85),
                Threshold::L1AtMost(v) => assert_eq!(v, 0.15),
            }
        }
    }

    #[test]
    fn flags_override_file_values() {
        let ov = Overrides {
            schedule: Some("continual".to_string()),
            beta: Some(0.0),
            ..Overrides::default()
        };
        let cfg = parse_config(None, &ov).unwrap();
        assert_eq!(cfg.schedules, vec![ScheduleKind::Continual]);
        let t = cfg.train_config(ScheduleKind::Continual).unwrap();
        assert_eq!(t.beta, 0.0);
    }

    #[test]
    fn alpha_out_of_range_is_rejected() {
        let ov = Overrides {
            alpha: Some(1.5),
            ..Overrides::default()
        };
        let err = parse_config(None, &ov).unwrap_err();
        assert!(err.to_string().contains("alpha"));
    }

    #[test]
    fn unknown_keys_are_rejected_with_candidates() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("c.toml");
        std::fs::write(&p, "train.learning = 1.0\n").unwrap();
        let err = parse_config(Some(&p), &Overrides::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("learning"), "{msg}");
        assert!(msg.contains("lr") || msg.contains("expected"), "{msg}");
    }

    #[test]
    fn type_mismatch_names_the_key() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("c.toml");
        std::fs::write(&p, "train.lr = \"fast\"\n").unwrap();
        let err = parse_config(Some(&p), &Overrides::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("lr") || msg.contains("invalid type"), "{msg}");
    }

    #[test]
    fn dotted_keys_parse_into_sections() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("c.toml");
        std::fs::write(
            &p,
            "seed = 9\ntrain.lr = 0.001\ntrain.lambda.rotation = 2.0\narch.tasks = [\"rotation\", \"translation\"]\n",
        )
        .unwrap();
        let cfg = parse_config(Some(&p), &Overrides::default()).unwrap();
        assert_eq!(cfg.seed, 9);
        let t = cfg.train_config(ScheduleKind::Sequential).unwrap();
        assert_eq!(t.learning_rate, 0.001);
        assert_eq!(t.lambda[&TaskId::Rotation], 2.0);
        assert_eq!(
            t.arch.tasks,
            vec![TaskId::Rotation, TaskId::Translation]
        );
    }

    #[test]
    fn echo_round_trips_to_the_same_resolution() {
        let ov = Overrides {
            schedule: Some("sequential,continual".to_string()),
            steps: Some(123),
            ..Overrides::default()
        };
        let cfg = parse_config(None, &ov).unwrap();
        let echo = cfg.echo_toml().unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("echo.toml");
        std::fs::write(&p, &echo).unwrap();
        let cfg2 = parse_config(Some(&p), &Overrides::default()).unwrap();
        assert_eq!(cfg2.schedules, cfg.schedules);
        assert_eq!(cfg2.file.train.steps, 123);
    }
}
