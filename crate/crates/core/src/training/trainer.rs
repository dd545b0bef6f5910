use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{evaluate_task, sample_crop_batch, MetricReport, StepMode, TaskData, TrainError, TrainOptions};
use crate::model::{mixup_batch, multi_task_loss, Checkpoint, Model};
use crate::nn::{Adam, AdamConfig, Mode, Module};
use crate::task::{Task, TaskSet};
use crate::Scalar;

/// One optimizer iteration, as written to the JSONL log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    #[serde(rename = "iter")]
    pub iteration: u64,
    pub epoch: usize,
    pub loss: BTreeMap<Task, f64>,
    pub total: f64,
    /// Examples drawn per task this iteration.
    pub examples: BTreeMap<Task, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub iteration: u64,
    pub mean_loss: f64,
    pub validation: Vec<MetricReport>,
    pub saved: Vec<PathBuf>,
}

/// Progress callbacks. All methods default to doing nothing.
pub trait TrainObserver<T: Scalar> {
    /// Called once with the initial model, before the first step.
    fn on_start(&mut self, _model: &Model<T>) {}
    fn on_iteration(&mut self, _record: &IterationRecord) {}
    fn on_epoch(&mut self, _record: &EpochRecord, _checkpoint: &Checkpoint) {}
}

impl<T: Scalar> TrainObserver<T> for () {}

pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub optimizer: Adam<T>,
    /// Checkpoint of the final epoch.
    pub last: Checkpoint,
    pub iterations: u64,
    pub epochs: Vec<EpochRecord>,
    /// Best validation report per task, with its epoch.
    pub best: BTreeMap<Task, (usize, MetricReport)>,
}

const DATA_STREAM: u64 = 1;
const MIXUP_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(s);
    r
}

fn checkpoint_name(task: Task) -> String {
    format!("best_{task}.ckpt")
}

/// Trains `model` on every task in `data` (one batch per task per
/// iteration). Validation sets, if any, are scored at every epoch boundary;
/// with an output directory the run keeps `last.ckpt` plus the best
/// checkpoint per validated task.
pub fn joint_train<T, O>(
    model: Model<T>,
    data: &[TaskData],
    validation: &[TaskData],
    opts: &TrainOptions,
    observer: &mut O,
) -> Result<TrainOutcome<T>, TrainError>
where
    T: Scalar,
    O: TrainObserver<T> + Send,
{
    let adam = Adam::new(AdamConfig {
        lr: opts.schedule.lr,
        ..AdamConfig::default()
    });
    run_with_threads(model, adam, data, validation, opts, observer)
}

/// Continues from a joint checkpoint on `target` alone, with a fresh
/// optimizer and the same hyperparameters.
pub fn fine_tune<T, O>(
    checkpoint: &Checkpoint,
    target: &TaskData,
    validation: Option<&TaskData>,
    opts: &TrainOptions,
    observer: &mut O,
) -> Result<TrainOutcome<T>, TrainError>
where
    T: Scalar,
    O: TrainObserver<T> + Send,
{
    if !checkpoint.header.tasks.contains(target.task()) {
        return Err(TrainError::IncompatibleCheckpoint(format!(
            "checkpoint was not trained on {}",
            target.task()
        )));
    }
    let model = checkpoint
        .restore_model::<T>()
        .map_err(|e| TrainError::IncompatibleCheckpoint(e.to_string()))?;
    let validation: Vec<&TaskData> = validation.into_iter().collect();
    let adam = Adam::new(AdamConfig {
        lr: opts.schedule.lr,
        ..AdamConfig::default()
    });
    run_with_threads(model, adam, std::slice::from_ref(target), &validation, opts, observer)
}

fn run_with_threads<T, O, V>(
    model: Model<T>,
    adam: Adam<T>,
    data: &[TaskData],
    validation: &[V],
    opts: &TrainOptions,
    observer: &mut O,
) -> Result<TrainOutcome<T>, TrainError>
where
    T: Scalar,
    O: TrainObserver<T> + Send,
    V: std::borrow::Borrow<TaskData> + Sync,
{
    if opts.deterministic {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        pool.install(|| run(model, adam, data, validation, opts, observer))
    } else {
        run(model, adam, data, validation, opts, observer)
    }
}

fn run<T, O, V>(
    mut model: Model<T>,
    mut adam: Adam<T>,
    data: &[TaskData],
    validation: &[V],
    opts: &TrainOptions,
    observer: &mut O,
) -> Result<TrainOutcome<T>, TrainError>
where
    T: Scalar,
    O: TrainObserver<T>,
    V: std::borrow::Borrow<TaskData>,
{
    let sched = &opts.schedule;
    sched.validate()?;
    if data.is_empty() {
        return Err(TrainError::Config("no tasks to train".into()));
    }
    let mut order: Vec<&TaskData> = data.iter().collect();
    order.sort_by_key(|d| d.task());
    if order.windows(2).any(|w| w[0].task() == w[1].task()) {
        return Err(TrainError::Config("a task appears twice".into()));
    }
    let tasks: TaskSet = order.iter().map(|d| d.task()).collect();
    let alpha = opts.mixup_alpha.unwrap_or(model.config().mixup_alpha);
    if opts.mixup && !(alpha > 0.0 && alpha.is_finite()) {
        return Err(TrainError::Config(format!("mix-up alpha {alpha} must be positive")));
    }
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let arch = model.config().clone();
    let mut data_rng = stream(sched.seed, DATA_STREAM);
    let mut mix_rng = stream(sched.seed, MIXUP_STREAM);
    let mut drop_rng = stream(sched.seed, DROPOUT_STREAM);

    observer.on_start(&model);
    model.zero_grad();
    let mut iteration = 0u64;
    let mut last_saved: Option<PathBuf> = None;
    let mut last = None;
    let mut epochs = Vec::with_capacity(sched.epochs);
    let mut best: BTreeMap<Task, (usize, MetricReport)> = BTreeMap::new();
    let non_finite = |iteration, task, last_saved: &Option<PathBuf>| TrainError::NonFiniteLoss {
        iteration,
        task,
        last_checkpoint: last_saved.clone(),
    };

    for epoch in 1..=sched.epochs {
        let mut loss_sum = 0.0;
        for _ in 0..sched.iterations_per_epoch {
            iteration += 1;
            let mut loss = BTreeMap::new();
            let mut examples = BTreeMap::new();
            for d in &order {
                let task = d.task();
                let batch = sample_crop_batch::<T, _>(d, &arch, &mut data_rng)?;
                examples.insert(task, batch.len());
                let (x, labels) = if opts.mixup && batch.len() >= 2 {
                    mixup_batch(&batch.inputs, &batch.labels, alpha, &mut mix_rng)?
                } else {
                    (batch.inputs, batch.labels)
                };
                let active = TaskSet::only(task);
                let (out, cache) = model.forward(&x, active, Mode::Train, &mut drop_rng)?;
                let (report, grads) = multi_task_loss(&out, &labels, active)?;
                if !report.total.is_finite() {
                    return Err(non_finite(iteration, Some(task), &last_saved));
                }
                model.backward(&cache, &grads);
                loss.insert(task, report.total);
                if opts.step_mode == StepMode::Alternating {
                    adam.step(&mut model)
                        .map_err(|_| non_finite(iteration, Some(task), &last_saved))?;
                }
            }
            if opts.step_mode == StepMode::Summed {
                adam.step(&mut model)
                    .map_err(|_| non_finite(iteration, None, &last_saved))?;
            }
            let total: f64 = loss.values().sum();
            loss_sum += total;
            observer.on_iteration(&IterationRecord {
                iteration,
                epoch,
                loss,
                total,
                examples,
            });
        }

        let mut reports = Vec::new();
        for v in validation {
            reports.push(evaluate_task(&mut model, v.borrow())?);
        }
        let mut ckpt = Checkpoint::capture(&model, Some(&adam), epoch, iteration, tasks, sched.seed);
        for r in &reports {
            ckpt.header.metrics.extend(r.keyed());
        }
        let mut saved = Vec::new();
        for r in &reports {
            let improved = match best.get(&r.task) {
                None => r.selection_score().is_finite(),
                Some((_, b)) => r.selection_score() > b.selection_score(),
            };
            if improved {
                best.insert(r.task, (epoch, r.clone()));
                if let Some(dir) = &opts.out_dir {
                    let p = dir.join(checkpoint_name(r.task));
                    ckpt.save(&p)?;
                    saved.push(p);
                }
            }
        }
        if let Some(dir) = &opts.out_dir {
            let p = dir.join("last.ckpt");
            ckpt.save(&p)?;
            saved.push(p.clone());
            last_saved = Some(p);
        }
        let record = EpochRecord {
            epoch,
            iteration,
            mean_loss: loss_sum / sched.iterations_per_epoch as f64,
            validation: reports,
            saved,
        };
        observer.on_epoch(&record, &ckpt);
        epochs.push(record);
        last = Some(ckpt);
    }

    Ok(TrainOutcome {
        model,
        optimizer: adam,
        last: last.expect("at least one epoch"),
        iterations: iteration,
        epochs,
        best,
    })
}
