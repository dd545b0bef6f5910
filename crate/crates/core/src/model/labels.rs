use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::Serialize;

use super::{ModelError, ModelOutputs, OutputGrads};
use crate::audio::EventAnnotation;
use crate::nn::ops::{sigmoid, softmax_rows};
use crate::task::{Task, TaskSet, ASC_CLASSES, SED_CLASSES, TAG_CLASSES};
use crate::{Scalar, Tensor};

/// Seconds covered by one output frame of the SED head.
pub const POOLED_FRAME_S: f64 = 0.08;

/// Probability clamp used inside the cross-entropy terms.
pub const PROB_CLAMP: f64 = 1e-7;

/// Frame-level event roll (`frames x 14`, row-major, entries 0/1).
///
/// Frame `k` spans `[k*frame_s, (k+1)*frame_s)` and is active when at least
/// half of it overlaps an event of that class.
pub fn rasterize_events(events: &[EventAnnotation], frames: usize, frame_s: f64) -> Vec<f64> {
    let mut roll = vec![0.0; frames * SED_CLASSES];
    for e in events {
        for k in 0..frames {
            let (a, b) = (k as f64 * frame_s, (k + 1) as f64 * frame_s);
            let overlap = e.offset.min(b) - e.onset.max(a);
            if overlap >= 0.5 * frame_s - 1e-12 {
                roll[k * SED_CLASSES + e.class] = 1.0;
            }
        }
    }
    roll
}

/// Inverse of [`rasterize_events`]: one event per run of active frames.
pub fn roll_to_events(roll: &[f64], frames: usize, frame_s: f64) -> Vec<EventAnnotation> {
    let mut out = Vec::new();
    for c in 0..SED_CLASSES {
        let mut start = None;
        for k in 0..=frames {
            let on = k < frames && roll[k * SED_CLASSES + c] >= 0.5;
            match (on, start) {
                (true, None) => start = Some(k),
                (false, Some(s)) => {
                    out.push(EventAnnotation {
                        onset: s as f64 * frame_s,
                        offset: k as f64 * frame_s,
                        class: c,
                    });
                    start = None;
                }
                _ => {}
            }
        }
    }
    out.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.class.cmp(&b.class)));
    out
}

/// Targets for one batch. Only the fields of tasks in the batch are present.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLabels<T> {
    /// `(B, 10)`, rows on the simplex.
    pub scene: Option<Tensor<T>>,
    /// `(B, 80)` in `[0, 1]`.
    pub tags: Option<Tensor<T>>,
    /// `(B, T', 14)` in `[0, 1]`.
    pub events: Option<Tensor<T>>,
}

impl<T: Scalar> BatchLabels<T> {
    pub fn empty() -> Self {
        Self {
            scene: None,
            tags: None,
            events: None,
        }
    }

    pub fn from_scenes(ids: &[usize]) -> Self {
        let mut t = Tensor::zeros(&[ids.len(), ASC_CLASSES]);
        for (i, &s) in ids.iter().enumerate() {
            t.data_mut()[i * ASC_CLASSES + s] = T::one();
        }
        Self {
            scene: Some(t),
            ..Self::empty()
        }
    }

    pub fn from_tags(sets: &[Vec<usize>]) -> Self {
        let mut t = Tensor::zeros(&[sets.len(), TAG_CLASSES]);
        for (i, set) in sets.iter().enumerate() {
            for &c in set {
                t.data_mut()[i * TAG_CLASSES + c] = T::one();
            }
        }
        Self {
            tags: Some(t),
            ..Self::empty()
        }
    }

    /// Rasterizes each example's events onto `frames` pooled frames.
    pub fn from_events(lists: &[Vec<EventAnnotation>], frames: usize) -> Self {
        Self::from_events_at(lists, frames, POOLED_FRAME_S)
    }

    /// As [`BatchLabels::from_events`] with an explicit pooled frame length.
    pub fn from_events_at(lists: &[Vec<EventAnnotation>], frames: usize, frame_s: f64) -> Self {
        let mut data = Vec::with_capacity(lists.len() * frames * SED_CLASSES);
        for events in lists {
            data.extend(
                rasterize_events(events, frames, frame_s)
                    .into_iter()
                    .map(T::lit),
            );
        }
        Self {
            events: Some(Tensor::from_vec(&[lists.len(), frames, SED_CLASSES], data)),
            ..Self::empty()
        }
    }

    pub fn batch_size(&self) -> Option<usize> {
        [&self.scene, &self.tags, &self.events]
            .into_iter()
            .flatten()
            .map(|t| t.dim(0))
            .next()
    }

    pub fn has(&self, task: Task) -> bool {
        match task {
            Task::Asc => self.scene.is_some(),
            Task::Tag => self.tags.is_some(),
            Task::Sed => self.events.is_some(),
        }
    }
}

fn mix_rows<T: Scalar>(t: &Tensor<T>, lambda: T, perm: &[usize]) -> Tensor<T> {
    let row = t.len() / t.dim(0);
    let src = t.data();
    let mut out = Vec::with_capacity(t.len());
    for (i, &j) in perm.iter().enumerate() {
        let (a, b) = (&src[i * row..(i + 1) * row], &src[j * row..(j + 1) * row]);
        out.extend(a.iter().zip(b).map(|(&x, &y)| lambda * x + (T::one() - lambda) * y));
    }
    Tensor::from_vec(t.shape(), out)
}

/// Mixes example `i` with example `perm[i]` using weight `lambda` on `i`.
pub fn mixup_with<T: Scalar>(
    inputs: &Tensor<T>,
    labels: &BatchLabels<T>,
    lambda: f64,
    perm: &[usize],
) -> Result<(Tensor<T>, BatchLabels<T>), ModelError> {
    let bs = inputs.dim(0);
    if bs < 2 {
        return Err(ModelError::BatchTooSmall(bs));
    }
    let mut seen = vec![false; bs];
    if perm.len() != bs || perm.iter().any(|&j| j >= bs || std::mem::replace(&mut seen[j], true)) {
        return Err(ModelError::InvalidConfig("mix-up pairing must be a permutation".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ModelError::InvalidConfig(format!("mix-up weight {lambda} outside [0, 1]")));
    }
    let l = T::lit(lambda);
    let mix = |t: &Option<Tensor<T>>| t.as_ref().map(|t| mix_rows(t, l, perm));
    Ok((
        mix_rows(inputs, l, perm),
        BatchLabels {
            scene: mix(&labels.scene),
            tags: mix(&labels.tags),
            events: mix(&labels.events),
        },
    ))
}

/// Draws `lambda ~ Beta(alpha, alpha)` and a random pairing, then mixes.
pub fn mixup_batch<T: Scalar, R: Rng + ?Sized>(
    inputs: &Tensor<T>,
    labels: &BatchLabels<T>,
    alpha: f64,
    rng: &mut R,
) -> Result<(Tensor<T>, BatchLabels<T>), ModelError> {
    if inputs.dim(0) < 2 {
        return Err(ModelError::BatchTooSmall(inputs.dim(0)));
    }
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| ModelError::InvalidConfig(format!("mix-up alpha {alpha}: {e}")))?;
    let lambda = beta.sample(rng);
    let mut perm: Vec<usize> = (0..inputs.dim(0)).collect();
    perm.shuffle(rng);
    mixup_with(inputs, labels, lambda, &perm)
}

/// Total and per-task loss values.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossReport {
    pub total: f64,
    pub per_task: BTreeMap<Task, f64>,
}

fn clamp<T: Scalar>(p: T) -> T {
    p.max(T::lit(PROB_CLAMP)).min(T::lit(1.0 - PROB_CLAMP))
}

/// Mean binary cross-entropy of `sigmoid(logits)` and its logit gradient.
///
/// The gradient is `(sigmoid - y) / n`, passed straight through the clamp.
fn bce<T: Scalar>(logits: &Tensor<T>, y: &Tensor<T>) -> (T, Tensor<T>) {
    let p = sigmoid(logits);
    let n = T::lit(logits.len() as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (&pi, &yi) in p.data().iter().zip(y.data()) {
        let pc = clamp(pi);
        loss = loss - (yi * pc.ln() + (T::one() - yi) * (T::one() - pc).ln());
        grad.push((pi - yi) / n);
    }
    (loss / n, Tensor::from_vec(logits.shape(), grad))
}

/// Soft-target categorical cross-entropy averaged over the batch.
fn cross_entropy<T: Scalar>(logits: &Tensor<T>, y: &Tensor<T>) -> (T, Tensor<T>) {
    let p = softmax_rows(logits);
    let bs = logits.dim(0);
    let k = logits.dim(1);
    let nb = T::lit(bs as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for i in 0..bs {
        let (pr, yr) = (&p.data()[i * k..(i + 1) * k], &y.data()[i * k..(i + 1) * k]);
        let ysum: T = yr.iter().copied().sum();
        for (&pj, &yj) in pr.iter().zip(yr) {
            loss = loss - yj * clamp(pj).ln();
            grad.push((pj * ysum - yj) / nb);
        }
    }
    (loss / nb, Tensor::from_vec(logits.shape(), grad))
}

fn check_shape(task: Task, out: &Tensor<impl Scalar>, y: &Tensor<impl Scalar>) -> Result<(), ModelError> {
    if out.shape() != y.shape() {
        return Err(ModelError::LabelShape {
            task,
            expected: out.shape().to_vec(),
            got: y.shape().to_vec(),
        });
    }
    Ok(())
}

/// Unweighted sum of the active tasks' losses, with logit gradients.
pub fn multi_task_loss<T: Scalar>(
    out: &ModelOutputs<T>,
    labels: &BatchLabels<T>,
    active: TaskSet,
) -> Result<(LossReport, OutputGrads<T>), ModelError> {
    if active.is_empty() {
        return Err(ModelError::NoActiveTask);
    }
    let mut per_task = BTreeMap::new();
    let mut grads = OutputGrads::default();
    let mut total = T::zero();
    for task in active.iter() {
        let (logits, y) = match task {
            Task::Asc => (&out.asc_logits, &labels.scene),
            Task::Tag => (&out.tag_logits, &labels.tags),
            Task::Sed => (&out.sed_logits, &labels.events),
        };
        let y = y.as_ref().ok_or(ModelError::MissingLabels(task))?;
        let logits = logits.as_ref().ok_or(ModelError::MissingOutput(task))?;
        check_shape(task, logits, y)?;
        let (l, g) = match task {
            Task::Asc => cross_entropy(logits, y),
            _ => bce(logits, y),
        };
        total = total + l;
        per_task.insert(task, l.to_f64_lossy());
        match task {
            Task::Asc => grads.asc_logits = Some(g),
            Task::Tag => grads.tag_logits = Some(g),
            Task::Sed => grads.sed_logits = Some(g),
        }
    }
    Ok((
        LossReport {
            total: total.to_f64_lossy(),
            per_task,
        },
        grads,
    ))
}
