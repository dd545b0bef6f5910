use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use dcasenet::audio::{load_wav, read_manifest, resample, synthesize_toy_dataset, write_manifest, AudioError, ToySpec};
use dcasenet::features::{write_feature_cache, FeatureConfig, FeatureError, MelExtractor};
use dcasenet::model::{check_model_gradients, ArchitectureConfig, Checkpoint, Model, ModelError};
use dcasenet::nn::GradCheckOptions;
use dcasenet::task::Task;
use dcasenet::training::{
    fine_tune, joint_train, predict, score_predictions, EpochRecord, IterationRecord, MetricReport, RunConfig,
    SamplePrediction, TaskData, TaskSpec, TrainError, TrainObserver, TrainOutcome,
};
use serde_json::json;

use crate::{
    Cli, Command, EvaluateArgs, FeaturesArgs, FinetuneArgs, GradcheckArgs, Overrides, SynthArgs, TrainArgs,
};

pub fn report_error(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": message, "kind": kind }));
}

pub fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(t) = cause.downcast_ref::<TrainError>() {
            return match t {
                TrainError::Config(_) => "config",
                TrainError::MissingFile(_) => "missing_file",
                TrainError::EmptyManifest(_) => "empty_manifest",
                TrainError::Audio(_) => "audio",
                TrainError::Features(_) => "features",
                TrainError::Model(_) => "model",
                TrainError::Metrics(_) => "metrics",
                TrainError::Predictions(_) => "predictions",
                TrainError::IncompatibleCheckpoint(_) => "incompatible_checkpoint",
                TrainError::NonFiniteLoss { .. } => "non_finite_loss",
                TrainError::Io(_) => "io",
            };
        }
        if cause.is::<AudioError>() {
            return "audio";
        }
        if cause.is::<FeatureError>() {
            return "features";
        }
        if cause.is::<ModelError>() {
            return "model";
        }
        if cause.is::<serde_json::Error>() {
            return "parse";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "error"
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("building thread pool")?;
    }
    match cli.command {
        Command::Features(a) => features(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Finetune(a) => finetune(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn features(a: FeaturesArgs) -> Result<ExitCode> {
    let mut cfg: FeatureConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => FeatureConfig::default(),
    };
    if let Some(n) = a.n_mels {
        cfg.n_mels = n;
    }
    let extractor = MelExtractor::new(cfg.clone())?;
    let featurize = |wav: &Path, out: &Path| -> Result<(usize, usize)> {
        let w = resample(&load_wav(wav)?, cfg.sample_rate)?;
        let m = extractor.extract(&w).with_context(|| wav.display().to_string())?;
        write_feature_cache(out, &m)?;
        Ok((m.frames(), m.bands()))
    };
    if let Some(input) = &a.input {
        if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let (frames, bands) = featurize(input, &a.out)?;
        println!("{}", json!({ "out": a.out, "frames": frames, "bands": bands }));
        return Ok(ExitCode::SUCCESS);
    }
    let manifest = a.manifest.as_ref().expect("clap requires --input or --manifest");
    let entries = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new(""));
    std::fs::create_dir_all(&a.out)?;
    for e in &entries {
        let rel = Path::new(&e.path);
        let out = a.out.join(rel.with_extension("dmel"));
        if let Some(dir) = out.parent() {
            std::fs::create_dir_all(dir)?;
        }
        featurize(&base.join(rel), &out)?;
    }
    println!("{}", json!({ "out": a.out, "files": entries.len(), "bands": cfg.n_mels }));
    Ok(ExitCode::SUCCESS)
}

fn synth(a: SynthArgs) -> Result<ExitCode> {
    let mut spec: ToySpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => ToySpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let entries = synthesize_toy_dataset(&spec, &a.out, &a.prefix)?;
    let mut manifests = serde_json::Map::new();
    for task in Task::ALL {
        let mine: Vec<_> = entries.iter().filter(|e| e.task == task).cloned().collect();
        let path = a.out.join(format!("{}{}.jsonl", a.prefix, task.as_str().to_lowercase()));
        write_manifest(&path, &mine)?;
        manifests.insert(task.as_str().into(), json!({ "path": path, "segments": mine.len() }));
    }
    println!("{}", json!({ "out": a.out, "seed": spec.seed, "manifests": manifests }));
    Ok(ExitCode::SUCCESS)
}

fn apply(cfg: &mut RunConfig, o: &Overrides) {
    if let Some(v) = o.epochs {
        cfg.schedule.epochs = v;
    }
    if let Some(v) = o.iterations_per_epoch {
        cfg.schedule.iterations_per_epoch = v;
    }
    if let Some(v) = o.lr {
        cfg.schedule.lr = v;
    }
    if let Some(v) = o.seed {
        cfg.schedule.seed = v;
    }
    if let Some(v) = o.mixup_alpha {
        cfg.mixup_alpha = Some(v);
    }
    if o.no_mixup {
        cfg.mixup = false;
    }
    if o.deterministic {
        cfg.deterministic = true;
    }
    if let Some(v) = o.variant {
        cfg.architecture.variant = v;
    }
    if let Some(v) = o.step_mode {
        cfg.step_mode = v;
    }
    if let Some(v) = &o.out {
        cfg.out_dir = Some(v.clone());
    }
}

fn load_run_config(path: &Path, o: &Overrides) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(path)?;
    apply(&mut cfg, o);
    cfg.validate()?;
    let out = cfg
        .out_dir
        .clone()
        .context("no output directory: set out_dir in the config or pass --out")?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("run.json"), serde_json::to_string_pretty(&cfg)?)?;
    Ok((cfg, out))
}

/// Streams iteration records to `iterations.jsonl` and epoch summaries to stderr.
struct Logger {
    log: BufWriter<File>,
    failed: Option<std::io::Error>,
}

impl Logger {
    fn new(out: &Path) -> Result<Self> {
        let f = File::create(out.join("iterations.jsonl"))?;
        Ok(Self {
            log: BufWriter::new(f),
            failed: None,
        })
    }

    fn finish(mut self) -> Result<()> {
        if let Some(e) = self.failed.take() {
            return Err(e).context("writing iterations.jsonl");
        }
        self.log.flush()?;
        Ok(())
    }
}

impl<T: dcasenet::Scalar> TrainObserver<T> for Logger {
    fn on_iteration(&mut self, r: &IterationRecord) {
        if self.failed.is_none() {
            let line = serde_json::to_string(r).expect("records serialize");
            if let Err(e) = writeln!(self.log, "{line}") {
                self.failed = Some(e);
            }
        }
    }

    fn on_epoch(&mut self, r: &EpochRecord, _ckpt: &Checkpoint) {
        let mut line = format!("epoch {:>4}  iter {:>7}  loss {:.4}", r.epoch, r.iteration, r.mean_loss);
        for v in &r.validation {
            for (k, x) in v.values() {
                line.push_str(&format!("  {}.{k} {x:.4}", v.task.as_str()));
            }
        }
        eprintln!("{line}");
        let _ = self.log.flush();
    }
}

fn load_data(cfg: &RunConfig, specs: &[&TaskSpec]) -> Result<(Vec<TaskData>, Vec<TaskData>)> {
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for s in specs {
        train.push(TaskData::load(s, &cfg.features)?);
        if let Some(v) = TaskData::load_validation(s, &cfg.features)? {
            valid.push(v);
        }
    }
    Ok((train, valid))
}

fn summarize(outcome: &TrainOutcome<f32>, out: &Path) {
    println!(
        "trained {} iterations over {} epochs; checkpoints in {}",
        outcome.iterations,
        outcome.epochs.len(),
        out.display()
    );
    for (task, (epoch, r)) in &outcome.best {
        let vals: Vec<String> = r.values().iter().map(|(k, v)| format!("{k} {v:.4}")).collect();
        println!("best {task} (epoch {epoch}): {}", vals.join(", "));
    }
}

fn train(a: TrainArgs) -> Result<ExitCode> {
    let (cfg, out) = load_run_config(&a.config, &a.overrides)?;
    let specs: Vec<&TaskSpec> = cfg.tasks.iter().collect();
    let (data, valid) = load_data(&cfg, &specs)?;
    let model = Model::<f32>::new(cfg.architecture.clone(), cfg.schedule.seed)?;
    let mut logger = Logger::new(&out)?;
    let outcome = joint_train(model, &data, &valid, &cfg.train_options(), &mut logger)?;
    logger.finish()?;
    summarize(&outcome, &out);
    Ok(ExitCode::SUCCESS)
}

fn finetune(a: FinetuneArgs) -> Result<ExitCode> {
    let (cfg, out) = load_run_config(&a.config, &a.overrides)?;
    let spec = cfg
        .tasks
        .iter()
        .find(|t| t.task == a.task)
        .with_context(|| format!("run config has no {} task", a.task))?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    if ckpt.header.config.n_mels != cfg.features.n_mels {
        return Err(TrainError::IncompatibleCheckpoint(format!(
            "checkpoint expects {} mel bands, features produce {}",
            ckpt.header.config.n_mels, cfg.features.n_mels
        ))
        .into());
    }
    let (data, valid) = load_data(&cfg, &[spec])?;
    let mut logger = Logger::new(&out)?;
    let outcome = fine_tune::<f32, _>(&ckpt, &data[0], valid.first(), &cfg.train_options(), &mut logger)?;
    logger.finish()?;
    summarize(&outcome, &out);
    Ok(ExitCode::SUCCESS)
}

fn read_predictions(path: &Path) -> Result<Vec<SamplePrediction>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                TrainError::Predictions(format!("{} line {}: {e}", path.display(), i + 1)).into()
            })
        })
        .collect()
}

fn evaluate(a: EvaluateArgs) -> Result<ExitCode> {
    let entries = read_manifest(&a.manifest)?;
    let report: MetricReport = if let Some(p) = &a.predictions {
        let preds = read_predictions(p)?;
        score_predictions(a.task, &entries, &preds, a.pooled_hop_s)?
    } else {
        let ckpt = Checkpoint::load(a.checkpoint.as_ref().expect("clap requires --checkpoint"))?;
        if !ckpt.header.tasks.contains(a.task) {
            return Err(TrainError::IncompatibleCheckpoint(format!("checkpoint was not trained on {}", a.task)).into());
        }
        let features = match &a.config {
            Some(c) => RunConfig::load(c)?.features,
            None => FeatureConfig {
                n_mels: ckpt.header.config.n_mels,
                ..FeatureConfig::default()
            },
        };
        let mut model = ckpt.restore_model::<f32>()?;
        let spec = TaskSpec::new(a.task, &a.manifest);
        let data = TaskData::from_entries(spec, entries.clone(), a.manifest.parent(), &features)?;
        let preds = predict(&mut model, &data)?;
        if let Some(w) = &a.write_predictions {
            let mut f = BufWriter::new(File::create(w).with_context(|| format!("creating {}", w.display()))?);
            for p in &preds {
                writeln!(f, "{}", serde_json::to_string(p)?)?;
            }
            f.flush()?;
        }
        let pooled = features.hop_s() * model.config().time_reduction() as f64;
        score_predictions(a.task, &entries, &preds, pooled)?
    };
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(o) = &a.out {
        std::fs::write(o, &text).with_context(|| format!("writing {}", o.display()))?;
    }
    println!("{text}");
    eprint!("{}", report.to_text());
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let arch: ArchitectureConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => ArchitectureConfig::gradcheck(a.variant),
    };
    arch.validate()?;
    if a.frames < arch.min_frames() {
        bail!(TrainError::Config(format!(
            "--frames {} is below the network minimum of {}",
            a.frames,
            arch.min_frames()
        )));
    }
    let opts = GradCheckOptions {
        step: a.step,
        tolerance: a.tol,
        max_elements_per_param: a.max_elements,
        ..GradCheckOptions::default()
    };
    let report = check_model_gradients(&arch, a.frames, a.seed, &opts)?;
    let passed = report.passed();
    println!(
        "{}",
        json!({
            "variant": arch.variant,
            "passed": passed,
            "max_rel_err": report.max_rel_err,
            "tolerance": report.tolerance,
            "params": report.params,
        })
    );
    eprintln!(
        "gradcheck {}: max relative error {:.3e} (tolerance {:.1e})",
        if passed { "passed" } else { "FAILED" },
        report.max_rel_err,
        report.tolerance
    );
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
