use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::features::FeatureConfig;
use crate::model::ArchitectureConfig;
use crate::task::Task;

/// Sampling setup for one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawTaskSpec")]
pub struct TaskSpec {
    pub task: Task,
    pub manifest: PathBuf,
    pub batch_size: usize,
    pub crop_s: f64,
    /// Scored at every epoch boundary when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_manifest: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTaskSpec {
    task: Task,
    manifest: PathBuf,
    batch_size: Option<usize>,
    crop_s: Option<f64>,
    validation_manifest: Option<PathBuf>,
}

impl From<RawTaskSpec> for TaskSpec {
    fn from(r: RawTaskSpec) -> Self {
        let mut s = TaskSpec::new(r.task, r.manifest);
        s.batch_size = r.batch_size.unwrap_or(s.batch_size);
        s.crop_s = r.crop_s.unwrap_or(s.crop_s);
        s.validation_manifest = r.validation_manifest;
        s
    }
}

impl TaskSpec {
    /// Batch 32/24/32 and crop 5/5/30 s for ASC/TAG/SED.
    pub fn new(task: Task, manifest: impl Into<PathBuf>) -> Self {
        let (batch_size, crop_s) = match task {
            Task::Asc => (32, 5.0),
            Task::Tag => (24, 5.0),
            Task::Sed => (32, 30.0),
        };
        Self {
            task,
            manifest: manifest.into(),
            batch_size,
            crop_s,
            validation_manifest: None,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config(format!("{} batch size must be positive", self.task)));
        }
        if !(self.crop_s > 0.0 && self.crop_s.is_finite()) {
            return Err(TrainError::Config(format!("{} crop must be positive", self.task)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub iterations_per_epoch: u64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            iterations_per_epoch: 500,
            epochs: 160,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl Schedule {
    pub fn total_iterations(&self) -> u64 {
        self.iterations_per_epoch * self.epochs as u64
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.iterations_per_epoch == 0 || self.epochs == 0 {
            return Err(TrainError::Config("epochs and iterations per epoch must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

/// How the per-task losses of one iteration become optimizer steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepMode {
    /// One Adam step on the summed loss of all tasks.
    #[default]
    Summed,
    /// One Adam step per task, in ASC, TAG, SED order.
    Alternating,
}

/// Everything a training run needs besides the data itself.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub schedule: Schedule,
    pub mixup: bool,
    /// Overrides the architecture's mix-up alpha when set.
    pub mixup_alpha: Option<f64>,
    pub step_mode: StepMode,
    /// Runs batch preparation and kernels on a single thread.
    pub deterministic: bool,
    /// Checkpoint directory; nothing is written when absent.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            schedule: Schedule::default(),
            mixup: true,
            mixup_alpha: None,
            step_mode: StepMode::Summed,
            deterministic: false,
            out_dir: None,
        }
    }
}

fn yes() -> bool {
    true
}

/// Run config file: tasks, model, features and training options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub architecture: ArchitectureConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "yes")]
    pub mixup: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixup_alpha: Option<f64>,
    #[serde(default)]
    pub step_mode: StepMode,
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    /// Makes relative manifest and output paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for t in &mut self.tasks {
            fix(&mut t.manifest);
            if let Some(v) = &mut t.validation_manifest {
                fix(v);
            }
        }
        if let Some(o) = &mut self.out_dir {
            fix(o);
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            schedule: self.schedule.clone(),
            mixup: self.mixup,
            mixup_alpha: self.mixup_alpha,
            step_mode: self.step_mode,
            deterministic: self.deterministic,
            out_dir: self.out_dir.clone(),
        }
    }

    /// Checks ranges, task uniqueness and that every referenced file exists.
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.tasks.is_empty() {
            return Err(TrainError::Config("no tasks configured".into()));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            t.validate()?;
            if self.tasks[..i].iter().any(|o| o.task == t.task) {
                return Err(TrainError::Config(format!("task {} listed twice", t.task)));
            }
            for p in std::iter::once(&t.manifest).chain(&t.validation_manifest) {
                if !p.is_file() {
                    return Err(TrainError::MissingFile(p.clone()));
                }
            }
        }
        self.architecture
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        self.features
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        if self.features.n_mels != self.architecture.n_mels {
            return Err(TrainError::Config(format!(
                "features produce {} mel bands, the model expects {}",
                self.features.n_mels, self.architecture.n_mels
            )));
        }
        self.schedule.validate()?;
        if let Some(a) = self.mixup_alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(TrainError::Config(format!("mix-up alpha {a} must be positive")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn task_defaults_follow_task() {
        let specs: Vec<TaskSpec> = serde_json::from_str(
            r#"[{"task":"ASC","manifest":"a"},{"task":"TAG","manifest":"t"},{"task":"SED","manifest":"s","crop_s":2.0}]"#,
        )
        .unwrap();
        let got: Vec<_> = specs.iter().map(|s| (s.batch_size, s.crop_s)).collect();
        assert_eq!(got, [(32, 5.0), (24, 5.0), (32, 2.0)]);
        let back: Vec<TaskSpec> = serde_json::from_str(&serde_json::to_string(&specs).unwrap()).unwrap();
        assert_eq!(back, specs);
    }

    #[test]
    fn schedule_defaults() {
        let s = Schedule::default();
        assert_eq!((s.iterations_per_epoch, s.epochs, s.lr), (500, 160, 1e-3));
        assert_eq!(Schedule { epochs: 2, ..s }.total_iterations(), 1000);
    }

    #[test]
    fn run_config_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("asc.jsonl"), "").unwrap();
        let text = r#"{
            "tasks": [{"task": "ASC", "manifest": "asc.jsonl", "batch_size": 4}],
            "architecture": {"variant": "v3", "channels": [8, 16, 16, 32]},
            "schedule": {"epochs": 2, "iterations_per_epoch": 3},
            "mixup": false,
            "deterministic": true
        }"#;
        let path = dir.path().join("run.json");
        std::fs::write(&path, text).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.architecture.variant, Variant::V3);
        assert_eq!(cfg.tasks[0].manifest, dir.path().join("asc.jsonl"));
        assert!(!cfg.mixup && cfg.deterministic);
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        cfg.validate().unwrap();

        let mut bad = cfg.clone();
        bad.tasks[0].manifest = dir.path().join("missing.jsonl");
        assert!(matches!(bad.validate(), Err(TrainError::MissingFile(_))));
        let mut bad = cfg.clone();
        bad.tasks.push(bad.tasks[0].clone());
        assert!(bad.validate().is_err());
        let mut bad = cfg;
        bad.features.n_mels = 64;
        assert!(bad.validate().is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"tasks": [], "bogus": 1}"#).is_err());
    }
}
