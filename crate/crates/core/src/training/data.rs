use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use super::{TaskSpec, TrainError};
use crate::audio::{load_wav, read_manifest, resample, EventAnnotation, ManifestEntry, Waveform};
use crate::features::{crop_at, crop_len, FeatureConfig, MelExtractor, MelSpectrogram};
use crate::model::{ArchitectureConfig, BatchLabels};
use crate::task::Task;
use crate::{Scalar, Tensor};

/// One loaded segment: labels, waveform at the feature rate and, when the
/// segment is at least one window long, its full log-mel spectrogram.
#[derive(Clone, Debug)]
pub struct Segment {
    pub entry: ManifestEntry,
    pub waveform: Waveform,
    pub features: Option<MelSpectrogram>,
}

impl Segment {
    pub fn duration_s(&self) -> f64 {
        self.waveform.duration_s()
    }
}

/// All segments of one task, preloaded.
pub struct TaskData {
    pub spec: TaskSpec,
    pub segments: Vec<Segment>,
    extractor: MelExtractor,
}

fn resolve(base: Option<&Path>, p: &str) -> PathBuf {
    let p = Path::new(p);
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    }
}

impl TaskData {
    /// Reads `spec.manifest`; relative audio paths are taken from the
    /// manifest's directory.
    pub fn load(spec: &TaskSpec, features: &FeatureConfig) -> Result<Self, TrainError> {
        Self::load_manifest(spec, &spec.manifest, features)
    }

    pub fn load_validation(spec: &TaskSpec, features: &FeatureConfig) -> Result<Option<Self>, TrainError> {
        spec.validation_manifest
            .as_ref()
            .map(|m| Self::load_manifest(spec, m, features))
            .transpose()
    }

    fn load_manifest(spec: &TaskSpec, manifest: &Path, features: &FeatureConfig) -> Result<Self, TrainError> {
        let entries = read_manifest(manifest)?;
        Self::from_entries(spec.clone(), entries, manifest.parent(), features)
    }

    pub fn from_entries(
        spec: TaskSpec,
        entries: Vec<ManifestEntry>,
        base: Option<&Path>,
        features: &FeatureConfig,
    ) -> Result<Self, TrainError> {
        spec.validate()?;
        if entries.is_empty() {
            return Err(TrainError::EmptyManifest(spec.task));
        }
        if let Some(e) = entries.iter().find(|e| e.task != spec.task) {
            return Err(TrainError::Config(format!(
                "{} manifest contains a {} entry ({})",
                spec.task, e.task, e.path
            )));
        }
        let extractor = MelExtractor::new(features.clone())?;
        let segments = entries
            .into_par_iter()
            .map(|entry| -> Result<Segment, TrainError> {
                let w = load_wav(resolve(base, &entry.path))?;
                let waveform = resample(&w, features.sample_rate)?;
                let features = if waveform.len() >= features.win_samples() {
                    Some(extractor.extract(&waveform)?)
                } else {
                    None
                };
                Ok(Segment {
                    entry,
                    waveform,
                    features,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            spec,
            segments,
            extractor,
        })
    }

    pub fn task(&self) -> Task {
        self.spec.task
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn feature_config(&self) -> &FeatureConfig {
        self.extractor.config()
    }

    /// Frames of one training crop.
    pub fn crop_frames(&self) -> Result<usize, TrainError> {
        let cfg = self.feature_config();
        let n = crop_len(self.spec.crop_s, cfg.sample_rate)?;
        cfg.frame_count(n).ok_or_else(|| {
            TrainError::Config(format!("{} crop of {} s is shorter than one window", self.task(), self.spec.crop_s))
        })
    }

    /// Whole-segment features for evaluation. Segments shorter than
    /// `min_frames` are tiled up to that length.
    pub fn full_features(&self, i: usize, min_frames: usize) -> Result<MelSpectrogram, TrainError> {
        let seg = &self.segments[i];
        match &seg.features {
            Some(f) if f.frames() >= min_frames => Ok(f.clone()),
            _ => {
                let cfg = self.feature_config();
                let need = cfg.win_samples() + (min_frames - 1) * cfg.hop_samples();
                let len = need.max(seg.waveform.len());
                Ok(self.extractor.extract(&crop_at(&seg.waveform, 0, len))?)
            }
        }
    }
}

/// Events seen through the window `[start_s, start_s + crop_s)`, shifted to
/// start at 0. With `period_s` set the segment repeats with that period (the
/// crop of a short segment is tiled).
pub fn crop_events(
    events: &[EventAnnotation],
    start_s: f64,
    crop_s: f64,
    period_s: Option<f64>,
) -> Vec<EventAnnotation> {
    let end = start_s + crop_s;
    let mut out = Vec::new();
    let mut shift = 0.0;
    loop {
        for e in events {
            let onset = (e.onset + shift).max(start_s);
            let offset = (e.offset + shift).min(end);
            if offset > onset {
                out.push(EventAnnotation {
                    onset: onset - start_s,
                    offset: offset - start_s,
                    class: e.class,
                });
            }
        }
        match period_s {
            Some(p) if p > 0.0 && shift + p < end => shift += p,
            _ => break,
        }
    }
    out
}

/// A sampled mini-batch for one task.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    /// `(B, 1, frames, n_mels)`.
    pub inputs: Tensor<T>,
    pub labels: BatchLabels<T>,
    /// Segment index of each example.
    pub indices: Vec<usize>,
    /// Crop start of each example in seconds.
    pub offsets_s: Vec<f64>,
}

impl<T> Batch<T> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Samples `batch_size` segments with replacement and cuts one random crop
/// from each. Crop starts fall on the feature hop grid, so a crop's features
/// are a slice of the segment's precomputed spectrogram. Segments shorter
/// than the crop are tiled from their start.
pub fn sample_crop_batch<T: Scalar, R: Rng + ?Sized>(
    data: &TaskData,
    arch: &ArchitectureConfig,
    rng: &mut R,
) -> Result<Batch<T>, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyManifest(data.task()));
    }
    let cfg = data.feature_config();
    let crop = crop_len(data.spec.crop_s, cfg.sample_rate)?;
    let frames = data.crop_frames()?;
    if frames < arch.min_frames() {
        return Err(TrainError::Config(format!(
            "{} crop gives {frames} frames, the model needs {}",
            data.task(),
            arch.min_frames()
        )));
    }
    let hop = cfg.hop_samples();
    let bands = cfg.n_mels;
    let bs = data.spec.batch_size;

    let mut draws = Vec::with_capacity(bs);
    for _ in 0..bs {
        let i = rng.gen_range(0..data.len());
        let seg = &data.segments[i];
        let k = if seg.waveform.len() >= crop && seg.features.is_some() {
            Some(rng.gen_range(0..=(seg.waveform.len() - crop) / hop))
        } else {
            None
        };
        draws.push((i, k));
    }

    let rows = draws
        .par_iter()
        .map(|&(i, k)| -> Result<Vec<f64>, TrainError> {
            let seg = &data.segments[i];
            match (k, &seg.features) {
                (Some(k), Some(f)) => Ok(f.values()[k * bands..(k + frames) * bands].to_vec()),
                _ => {
                    let m = data.extractor.extract(&crop_at(&seg.waveform, 0, crop))?;
                    Ok(m.values().to_vec())
                }
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut x = Vec::with_capacity(bs * frames * bands);
    for r in rows {
        x.extend(r.into_iter().map(T::lit));
    }
    let inputs = Tensor::from_vec(&[bs, 1, frames, bands], x);

    let sr = cfg.sample_rate as f64;
    let offsets_s: Vec<f64> = draws
        .iter()
        .map(|&(_, k)| k.map_or(0.0, |k| (k * hop) as f64 / sr))
        .collect();
    let indices: Vec<usize> = draws.iter().map(|d| d.0).collect();
    let labels = match data.task() {
        Task::Asc => {
            let ids: Vec<usize> = indices
                .iter()
                .map(|&i| data.segments[i].entry.scene_id.unwrap_or(0))
                .collect();
            BatchLabels::from_scenes(&ids)
        }
        Task::Tag => {
            let sets: Vec<Vec<usize>> = indices
                .iter()
                .map(|&i| data.segments[i].entry.tags.clone().unwrap_or_default())
                .collect();
            BatchLabels::from_tags(&sets)
        }
        Task::Sed => {
            let crop_s = crop as f64 / sr;
            let lists: Vec<Vec<EventAnnotation>> = draws
                .iter()
                .zip(&offsets_s)
                .map(|(&(i, k), &start)| {
                    let seg = &data.segments[i];
                    let events = seg.entry.events.as_deref().unwrap_or_default();
                    let period = k.is_none().then(|| seg.duration_s());
                    crop_events(events, start, crop_s, period)
                })
                .collect();
            let pooled = arch.pooled_frames(frames);
            BatchLabels::from_events_at(&lists, pooled, cfg.hop_s() * arch.time_reduction() as f64)
        }
    };
    Ok(Batch {
        inputs,
        labels,
        indices,
        offsets_s,
    })
}
