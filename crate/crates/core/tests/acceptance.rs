//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use dcasenet::audio::{synthesize_toy_dataset, write_manifest, ManifestEntry, ToySpec, Waveform};
use dcasenet::features::{log_mel_spectrogram, FeatureConfig};
use dcasenet::metrics::{accuracy, lwlrap, sed_segment_metrics, ScoreMatrix, SegmentRoll};
use dcasenet::model::{
    check_model_gradients, mixup_batch, mixup_with, ArchitectureConfig, BatchLabels, Checkpoint,
    Model, Variant,
};
use dcasenet::nn::{
    finite_difference_check, BiGru, ConvBlock, DenseBlock, GradCheckOptions, MaxPool2d, Mode, Module,
    NnError, Parameter,
};
use dcasenet::task::{Task, TaskSet};
use dcasenet::training::{
    evaluate_task, fine_tune, joint_train, EpochRecord, IterationRecord, Schedule, TaskData, TaskSpec,
    TrainObserver, TrainOptions,
};
use dcasenet::{Model32, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

// ---------------------------------------------------------------- 1

struct WithInput<L> {
    layer: L,
    input: Parameter<f64>,
    weights: Tensor<f64>,
}

impl<L: Module<f64>> Module<f64> for WithInput<L> {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter<f64>)) {
        f(&self.input);
        self.layer.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<f64>)) {
        f(&mut self.input);
        self.layer.visit_params_mut(f);
    }
}

fn weighted_sum(y: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

fn isolated_layers() -> Result<Vec<(&'static str, f64)>, NnError> {
    let opts = GradCheckOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut out = Vec::new();

    let layer = ConvBlock::<f64>::new("conv", 2, 3, MaxPool2d::new(2, 2), &mut rng);
    let input = Parameter::new("input", rand_tensor(&[2, 2, 6, 6], &mut rng));
    let weights = rand_tensor(&[2, 3, 3, 3], &mut rng);
    let mut t = WithInput { layer, input, weights };
    let r = finite_difference_check(
        &mut t,
        |t: &mut WithInput<ConvBlock<f64>>, g| {
            let (y, c) = t.layer.forward(&t.input.value.clone(), Mode::Train)?;
            if g {
                let dx = t.layer.backward(&c, &t.weights);
                t.input.grad.add_assign(&dx);
            }
            Ok(weighted_sum(&y, &t.weights))
        },
        &opts,
    )?;
    out.push(("conv block", r.max_rel_err));

    let mut layer = BiGru::<f64>::new("gru", 4, 3, &mut rng);
    layer.visit_params_mut(&mut |p| {
        if p.name.contains(".b_") {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
    });
    let input = Parameter::new("input", rand_tensor(&[2, 6, 4], &mut rng));
    let weights = rand_tensor(&[2, 6, 6], &mut rng);
    let mut t = WithInput { layer, input, weights };
    let r = finite_difference_check(
        &mut t,
        |t: &mut WithInput<BiGru<f64>>, g| {
            let (y, c) = t.layer.forward(&t.input.value.clone())?;
            if g {
                let dx = t.layer.backward(&c, &t.weights);
                t.input.grad.add_assign(&dx);
            }
            Ok(weighted_sum(&y, &t.weights))
        },
        &opts,
    )?;
    out.push(("BiGRU", r.max_rel_err));

    let layer = DenseBlock::<f64>::new("dense", 5, 8, 0.0, &mut rng)?;
    let input = Parameter::new("input", rand_tensor(&[3, 5], &mut rng));
    let weights = rand_tensor(&[3, 8], &mut rng);
    let mut t = WithInput { layer, input, weights };
    let r = finite_difference_check(
        &mut t,
        |t: &mut WithInput<DenseBlock<f64>>, g| {
            let mut drop = ChaCha8Rng::seed_from_u64(0);
            let (y, c) = t.layer.forward(&t.input.value.clone(), Mode::Train, &mut drop)?;
            if g {
                let dx = t.layer.backward(&c, &t.weights);
                t.input.grad.add_assign(&dx);
            }
            Ok(weighted_sum(&y, &t.weights))
        },
        &opts,
    )?;
    out.push(("dense block", r.max_rel_err));
    Ok(out)
}

fn criterion_gradients() -> Outcome {
    let mut notes = Vec::new();
    for (name, err) in isolated_layers().map_err(|e| e.to_string())? {
        ensure(err <= 1e-4, || format!("{name} max rel err {err:.2e} > 1e-4"))?;
        notes.push(format!("{name} {err:.1e}"));
    }
    let opts = GradCheckOptions {
        tolerance: 1e-3,
        ..GradCheckOptions::default()
    };
    for v in Variant::ALL {
        let t = Instant::now();
        let r = check_model_gradients(&ArchitectureConfig::gradcheck(v), 16, 7, &opts).map_err(|e| e.to_string())?;
        let secs = t.elapsed().as_secs_f64();
        ensure(r.max_rel_err <= 1e-3, || format!("{v} max rel err {:.2e} > 1e-3", r.max_rel_err))?;
        ensure(secs <= 120.0, || format!("{v} took {secs:.0} s"))?;
        notes.push(format!("{v} {:.1e} in {secs:.1}s", r.max_rel_err));
    }
    Ok(notes.join(", "))
}

// ---------------------------------------------------------------- 2

fn criterion_features() -> Outcome {
    let cfg = FeatureConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 10 * 24_000;
    let noise: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect();
    let w = Waveform::new(noise, 24_000).map_err(|e| e.to_string())?;
    let m = log_mel_spectrogram(&w, &cfg).map_err(|e| e.to_string())?;
    ensure((m.frames(), m.bands()) == (499, 128), || format!("shape {}x{}", m.frames(), m.bands()))?;

    let silent = Waveform::new(vec![0.0; n], 24_000).map_err(|e| e.to_string())?;
    let s = log_mel_spectrogram(&silent, &cfg).map_err(|e| e.to_string())?;
    let floor = cfg.log_floor.ln();
    ensure(s.values().iter().all(|&v| v == floor), || "silence is not at the log floor".into())?;

    let c = 3.0;
    let scaled = log_mel_spectrogram(&w.scaled(c), &cfg).map_err(|e| e.to_string())?;
    let want = 2.0 * f64::ln(c);
    let mut worst = 0.0f64;
    for (a, b) in m.values().iter().zip(scaled.values()) {
        ensure(*a > floor + 1.0, || "test signal too quiet".into())?;
        worst = worst.max((b - a - want).abs());
    }
    ensure(worst <= 1e-6, || format!("scale shift off by {worst:.2e}"))?;
    Ok(format!("499x128, silence = ln(1e-10), shift error {worst:.1e}"))
}

// ---------------------------------------------------------------- 3

fn criterion_structure() -> Outcome {
    for v in Variant::ALL {
        let m = Model32::new(ArchitectureConfig::full(v), 0).map_err(|e| e.to_string())?;
        ensure(m.final_conv_channels() == 512, || format!("{v} ends at {}", m.final_conv_channels()))?;
        ensure(m.head_dims() == (10, 80, 14), || format!("{v} heads {:?}", m.head_dims()))?;
    }
    let p2 = Model32::new(ArchitectureConfig::full(Variant::V2), 0).unwrap().parameter_count();
    let p3 = Model32::new(ArchitectureConfig::full(Variant::V3), 0).unwrap().parameter_count();
    ensure(p3 > p2, || format!("v3 {p3} <= v2 {p2}"))?;

    let mut m = Model32::new(ArchitectureConfig::full(Variant::V2), 0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::from_fn(&[1, 1, 499, 128], |_| rng.gen_range(-1.0f32..1.0));
    let (out, _) = m
        .forward(&x, TaskSet::only(Task::Sed), Mode::Train, &mut rng)
        .map_err(|e| e.to_string())?;
    let roll = out.sed_roll.ok_or("no SED output")?;
    ensure(roll.shape() == [1, 124, 14], || format!("SED roll {:?}", roll.shape()))?;
    Ok(format!("512 filters, heads (10, 80, 14), params v2 {p2} < v3 {p3}, 499 -> 124 frames"))
}

// ---------------------------------------------------------------- 4

fn lwlrap_by_enumeration(scores: &[Vec<f64>], truth: &[Vec<bool>]) -> f64 {
    let (mut sum, mut n) = (0.0, 0);
    for (s, t) in scores.iter().zip(truth) {
        for c in (0..s.len()).filter(|&c| t[c]) {
            let mut hits = 0;
            let mut ranked = 0;
            for k in 0..s.len() {
                if s[k] >= s[c] {
                    ranked += 1;
                    hits += t[k] as usize;
                }
            }
            sum += hits as f64 / ranked as f64;
            n += 1;
        }
    }
    sum / n as f64
}

fn criterion_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=8);
        let c = rng.gen_range(1..=10);
        let scores: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..c).map(|_| (rng.gen_range(0..6) as f64) * 0.1).collect())
            .collect();
        let mut truth: Vec<Vec<bool>> = (0..n).map(|_| (0..c).map(|_| rng.gen_bool(0.35)).collect()).collect();
        for t in &mut truth {
            if !t.contains(&true) {
                t[rng.gen_range(0..c)] = true;
            }
        }
        let got = lwlrap(&ScoreMatrix::new(scores.clone(), truth.clone()).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        worst = worst.max((got - lwlrap_by_enumeration(&scores, &truth)).abs());
    }
    ensure(worst <= 1e-12, || format!("lwlrap differs from enumeration by {worst:.2e}"))?;

    let l = |s: Vec<f64>, t: Vec<usize>| lwlrap(&ScoreMatrix::from_label_sets(vec![s], &[t]).unwrap()).unwrap();
    let a = l(vec![0.9, 0.3, 0.5], vec![1, 2]);
    ensure((a - 7.0 / 12.0).abs() <= 1e-12, || format!("7/12 case gave {a}"))?;
    let b = l(vec![0.4; 4], vec![2]);
    ensure((b - 0.25).abs() <= 1e-12, || format!("1/4 case gave {b}"))?;

    let roll = |on: &[usize]| {
        let mut r = SegmentRoll::empty(50, 3, 0.02);
        for t in 0..50 {
            for &c in on {
                r.set(t, c, true);
            }
        }
        r
    };
    let m = sed_segment_metrics(&roll(&[0, 1]), &roll(&[0, 2]), 1.0).map_err(|e| e.to_string())?;
    ensure((m.f1 - 0.5).abs() < 1e-12 && (m.er - 0.5).abs() < 1e-12, || format!("hand case gave {m:?}"))?;
    let m = sed_segment_metrics(&roll(&[0, 1]), &roll(&[0, 1]), 1.0).map_err(|e| e.to_string())?;
    ensure(m.f1 == 1.0 && m.er == 0.0, || format!("perfect case gave {m:?}"))?;

    let logits: Vec<Vec<f64>> = (0..4).map(|i| (0..10).map(|k| (k == i) as u8 as f64).collect()).collect();
    let acc = accuracy(&logits, &[0, 1, 2, 9]).map_err(|e| e.to_string())?;
    ensure(acc == 0.75, || format!("accuracy gave {acc}"))?;
    Ok(format!("lwlrap vs enumeration {worst:.0e} on 1000 instances, 7/12, 1/4, (0.5, 0.5), (1, 0), 0.75"))
}

// ---------------------------------------------------------------- shared toy setup

struct Toy {
    _dir: tempfile::TempDir,
    train: Vec<TaskData>,
    valid: Vec<TaskData>,
}

fn toy(n_mels: usize, sizes: &[(Task, usize, f64)]) -> Result<Toy, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = ToySpec::default();
    let train = synthesize_toy_dataset(&spec, dir.path(), "train_").map_err(|e| e.to_string())?;
    let valid = synthesize_toy_dataset(&ToySpec { seed: 1000, ..spec }, dir.path(), "valid_").map_err(|e| e.to_string())?;
    let feat = FeatureConfig {
        n_mels,
        ..FeatureConfig::default()
    };
    let write = |name: String, all: &[ManifestEntry], task: Task| -> Result<std::path::PathBuf, String> {
        let p = dir.path().join(name);
        let subset: Vec<_> = all.iter().filter(|e| e.task == task).cloned().collect();
        write_manifest(&p, &subset).map_err(|e| e.to_string())?;
        Ok(p)
    };
    let (mut tr, mut va) = (Vec::new(), Vec::new());
    for &(task, batch, crop) in sizes {
        let mut s = TaskSpec::new(task, write(format!("{task}_train.jsonl"), &train, task)?);
        s.batch_size = batch;
        s.crop_s = crop;
        s.validation_manifest = Some(write(format!("{task}_valid.jsonl"), &valid, task)?);
        tr.push(TaskData::load(&s, &feat).map_err(|e| e.to_string())?);
        va.push(TaskData::load_validation(&s, &feat).map_err(|e| e.to_string())?.unwrap());
    }
    Ok(Toy {
        _dir: dir,
        train: tr,
        valid: va,
    })
}

#[derive(Default)]
struct Counter {
    iterations: u64,
    examples: BTreeMap<Task, Vec<usize>>,
    losses_finite: bool,
    initial: Option<Vec<(String, Vec<u32>)>>,
}

fn bits<T: dcasenet::Scalar>(m: &Model<T>) -> Vec<(String, Vec<u32>)> {
    let mut out = Vec::new();
    m.visit_params(&mut |p| {
        out.push((
            p.name.clone(),
            p.value.data().iter().map(|v| (v.to_f64().unwrap() as f32).to_bits()).collect(),
        ))
    });
    out
}

impl TrainObserver<f32> for Counter {
    fn on_start(&mut self, model: &Model<f32>) {
        self.initial = Some(bits(model));
        self.losses_finite = true;
    }
    fn on_iteration(&mut self, r: &IterationRecord) {
        self.iterations += 1;
        self.losses_finite &= r.total.is_finite() && r.loss.values().all(|l| l.is_finite());
        for (t, n) in &r.examples {
            self.examples.entry(*t).or_default().push(*n);
        }
    }
    fn on_epoch(&mut self, _r: &EpochRecord, _c: &Checkpoint) {}
}

fn ckpt_bits(c: &Checkpoint) -> Vec<(String, Vec<u32>)> {
    c.params
        .iter()
        .map(|(n, t)| (n.clone(), t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

// ---------------------------------------------------------------- 5

fn criterion_schedule() -> Outcome {
    let toy = toy(16, &[(Task::Asc, 32, 0.4), (Task::Tag, 24, 0.4), (Task::Sed, 32, 0.4)])?;
    let arch = ArchitectureConfig::gradcheck(Variant::V3);
    let model = Model32::new(arch, 5).map_err(|e| e.to_string())?;
    let opts = TrainOptions {
        schedule: Schedule {
            epochs: 2,
            iterations_per_epoch: 500,
            lr: 1e-3,
            seed: 5,
        },
        ..TrainOptions::default()
    };
    let mut counter = Counter::default();
    let out = joint_train(model, &toy.train, &[], &opts, &mut counter).map_err(|e| e.to_string())?;
    ensure(counter.iterations == 1000 && out.iterations == 1000, || {
        format!("{} iterations executed", counter.iterations)
    })?;
    ensure(out.epochs.len() == 2, || format!("{} epochs", out.epochs.len()))?;
    for (task, want) in [(Task::Asc, 32), (Task::Tag, 24), (Task::Sed, 32)] {
        let seen = &counter.examples[&task];
        ensure(seen.len() == 1000 && seen.iter().all(|&n| n == want), || {
            format!("{task} consumption not {want} per iteration")
        })?;
    }
    ensure(counter.losses_finite, || "non-finite loss recorded".into())?;

    let ft_opts = TrainOptions {
        schedule: Schedule {
            epochs: 1,
            iterations_per_epoch: 20,
            ..opts.schedule.clone()
        },
        ..opts
    };
    let mut ft_counter = Counter::default();
    let ft = fine_tune::<f32, _>(&out.last, &toy.train[0], None, &ft_opts, &mut ft_counter).map_err(|e| e.to_string())?;
    ensure(ft_counter.initial.as_ref() == Some(&ckpt_bits(&out.last)), || {
        "fine-tune start differs from checkpoint".into()
    })?;
    let mut frozen: Vec<String> = ft.model.head_parameter_names(Task::Tag);
    frozen.extend(ft.model.head_parameter_names(Task::Sed));
    let before: BTreeMap<_, _> = ckpt_bits(&out.last).into_iter().collect();
    let mut moved_shared = false;
    for (name, after) in bits(&ft.model) {
        if frozen.contains(&name) {
            ensure(before[&name] == after, || format!("inactive head parameter {name} changed"))?;
        } else if before[&name] != after {
            moved_shared = true;
        }
    }
    ensure(moved_shared, || "fine-tuning changed nothing".into())?;
    Ok(format!(
        "1000 iterations, 32/24/32 per iteration, bitwise fine-tune start, {} inactive-head tensors unchanged",
        frozen.len()
    ))
}

// ---------------------------------------------------------------- 6

fn criterion_learning() -> Outcome {
    let start = Instant::now();
    let toy = toy(64, &[(Task::Asc, 8, 2.0), (Task::Tag, 8, 1.5), (Task::Sed, 8, 4.0)])?;
    let audio_s: f64 = toy
        .train
        .iter()
        .flat_map(|d| d.segments.iter().map(|s| s.duration_s()))
        .sum();
    ensure(audio_s <= 300.0, || format!("{audio_s:.0} s of toy training audio"))?;
    let arch = ArchitectureConfig {
        n_mels: 64,
        ..ArchitectureConfig::tiny(Variant::V3)
    };
    let model = Model32::new(arch, 1).map_err(|e| e.to_string())?;
    let opts = TrainOptions {
        schedule: Schedule {
            epochs: 4,
            iterations_per_epoch: 50,
            lr: 3e-3,
            seed: 1,
        },
        ..TrainOptions::default()
    };
    let mut counter = Counter::default();
    let mut joint = joint_train(model, &toy.train, &[], &opts, &mut counter).map_err(|e| e.to_string())?;
    ensure(counter.losses_finite, || "non-finite loss recorded".into())?;
    let mut metrics = Vec::new();
    for v in &toy.valid {
        metrics.push(evaluate_task(&mut joint.model, v).map_err(|e| e.to_string())?);
    }
    let acc = metrics[0].accuracy.unwrap();
    let lw = metrics[1].lwlrap.unwrap();
    let er = metrics[2].er.unwrap();
    ensure(acc >= 0.75, || format!("ASC accuracy {acc:.3} < 0.75 (3x chance of 4 classes)"))?;
    ensure(lw >= 0.6, || format!("lwlrap {lw:.3} < 0.6"))?;
    ensure(er < 1.0, || format!("SED ER {er:.3} >= 1"))?;

    let ft_opts = TrainOptions {
        schedule: Schedule {
            epochs: 1,
            ..opts.schedule.clone()
        },
        ..opts
    };
    let mut ft = fine_tune::<f32, _>(&joint.last, &toy.train[0], None, &ft_opts, &mut ())
        .map_err(|e| e.to_string())?;
    let ft_acc = evaluate_task(&mut ft.model, &toy.valid[0]).map_err(|e| e.to_string())?.accuracy.unwrap();
    ensure(ft_acc >= acc - 0.02, || format!("fine-tuned accuracy {ft_acc:.3} < joint {acc:.3} - 0.02"))?;
    let elapsed = start.elapsed();
    ensure(elapsed <= Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{:.0} s train audio, acc {acc:.3}, lwlrap {lw:.3}, ER {er:.3}, fine-tuned acc {ft_acc:.3}, {:.0} s",
        audio_s,
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- 7

fn criterion_determinism() -> Outcome {
    let toy = toy(16, &[(Task::Asc, 6, 0.5), (Task::Tag, 6, 0.5), (Task::Sed, 6, 1.0)])?;
    let run = |dir: &Path| -> Result<Vec<u8>, String> {
        let arch = ArchitectureConfig {
            dropout: 0.2,
            ..ArchitectureConfig::gradcheck(Variant::V3)
        };
        let model = Model32::new(arch, 9).map_err(|e| e.to_string())?;
        let opts = TrainOptions {
            schedule: Schedule {
                epochs: 2,
                iterations_per_epoch: 15,
                lr: 1e-3,
                seed: 9,
            },
            mixup: false,
            deterministic: true,
            out_dir: Some(dir.to_path_buf()),
            ..TrainOptions::default()
        };
        let out = joint_train(model, &toy.train, &toy.valid, &opts, &mut ()).map_err(|e| e.to_string())?;
        let on_disk = std::fs::read(dir.join("last.ckpt")).map_err(|e| e.to_string())?;
        ensure(on_disk == out.last.to_bytes(), || "saved checkpoint differs from returned one".into())?;
        Ok(on_disk)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run(a.path())?;
    let second = run(b.path())?;
    ensure(first == second, || "final checkpoints differ".into())?;
    Ok(format!("two runs, identical {}-byte final checkpoints", first.len()))
}

// ---------------------------------------------------------------- 8

fn criterion_mixup() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_tensor(&[4, 1, 20, 16], &mut rng);
    let mut labels = BatchLabels::<f64>::from_scenes(&[0, 3, 3, 9]);
    labels.tags = Some(Tensor::from_fn(&[4, 80], |_| rng.gen_range(0..2) as f64));
    labels.events = Some(Tensor::from_fn(&[4, 5, 14], |_| rng.gen_range(0..2) as f64));
    let (mx, ml) = mixup_with(&x, &labels, 1.0, &[1, 2, 3, 0]).map_err(|e| e.to_string())?;
    ensure(mx == x && ml == labels, || "lambda = 1 is not the identity".into())?;

    let mut worst = 0.0f64;
    for trial in 0..200 {
        let alpha = [0.1, 0.4, 1.0, 3.0][trial % 4];
        let ids: Vec<usize> = (0..8).map(|_| rng.gen_range(0..10)).collect();
        let labels = BatchLabels::<f32>::from_scenes(&ids);
        let x = Tensor::from_fn(&[8, 1, 4, 4], |_| rng.gen_range(-1.0f32..1.0));
        let (_, ml) = mixup_batch(&x, &labels, alpha, &mut rng).map_err(|e| e.to_string())?;
        for row in ml.scene.unwrap().data().chunks(10) {
            ensure(row.iter().all(|&p| p >= 0.0), || "negative mixed label".into())?;
            worst = worst.max((row.iter().map(|&p| p as f64).sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("mixed scene rows off the simplex by {worst:.2e}"))?;
    Ok(format!("identity at lambda = 1, simplex error {worst:.1e} over 200 batches"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient fidelity", criterion_gradients),
        ("feature pipeline", criterion_features),
        ("architecture structure", criterion_structure),
        ("metric oracles", criterion_metrics),
        ("training schedule", criterion_schedule),
        ("end-to-end learning", criterion_learning),
        ("determinism", criterion_determinism),
        ("mix-up contract", criterion_mixup),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {} {name}: PASS [{secs:.1}s] {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL [{secs:.1}s] {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
