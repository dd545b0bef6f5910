use std::f64::consts::TAU;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{write_wav, AudioError, EventAnnotation, ManifestEntry, WavEncoding, Waveform};
use crate::task::{ASC_CLASSES, SED_CLASSES, TAG_CLASSES};

/// Generator configuration for the synthetic tone corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToySpec {
    pub seed: u64,
    pub sample_rate: u32,
    pub scenes: usize,
    pub segments_per_scene: usize,
    pub scene_duration_s: f64,
    pub tag_classes: usize,
    pub tag_segments: usize,
    pub tag_duration_s: [f64; 2],
    pub max_tags_per_segment: usize,
    pub event_classes: usize,
    pub sed_segments: usize,
    pub sed_duration_s: f64,
    pub events_per_segment: [usize; 2],
    pub event_duration_s: [f64; 2],
    /// Tone frequencies per scene; defaults derived from the scene id.
    pub scene_tones_hz: Option<Vec<Vec<f64>>>,
    pub tag_tones_hz: Option<Vec<f64>>,
    pub event_tones_hz: Option<Vec<f64>>,
    pub tone_amplitude: f64,
    pub noise_amplitude: f64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            seed: 0,
            sample_rate: 24_000,
            scenes: 4,
            segments_per_scene: 8,
            scene_duration_s: 3.0,
            tag_classes: 6,
            tag_segments: 24,
            tag_duration_s: [1.0, 3.0],
            max_tags_per_segment: 2,
            event_classes: 4,
            sed_segments: 8,
            sed_duration_s: 8.0,
            events_per_segment: [2, 4],
            event_duration_s: [0.6, 2.0],
            scene_tones_hz: None,
            tag_tones_hz: None,
            event_tones_hz: None,
            tone_amplitude: 0.2,
            noise_amplitude: 0.02,
        }
    }
}

impl ToySpec {
    pub fn scene_tones(&self) -> Vec<Vec<f64>> {
        self.scene_tones_hz.clone().unwrap_or_else(|| {
            (0..self.scenes)
                .map(|s| vec![180.0 + 140.0 * s as f64, 2600.0 + 310.0 * s as f64])
                .collect()
        })
    }

    pub fn tag_tones(&self) -> Vec<f64> {
        self.tag_tones_hz.clone().unwrap_or_else(|| {
            (0..self.tag_classes)
                .map(|k| 350.0 * 1.3f64.powi(k as i32))
                .collect()
        })
    }

    pub fn event_tones(&self) -> Vec<f64> {
        self.event_tones_hz.clone().unwrap_or_else(|| {
            (0..self.event_classes)
                .map(|k| 600.0 * 1.45f64.powi(k as i32))
                .collect()
        })
    }

    /// Total seconds of audio this spec produces (TAG at its maximum length).
    pub fn max_total_duration_s(&self) -> f64 {
        (self.scenes * self.segments_per_scene) as f64 * self.scene_duration_s
            + self.tag_segments as f64 * self.tag_duration_s[1]
            + self.sed_segments as f64 * self.sed_duration_s
    }

    pub fn validate(&self) -> Result<(), AudioError> {
        let bad = |m: String| Err(AudioError::InvalidSpec(m));
        if self.sample_rate == 0 {
            return bad("sample rate must be positive".into());
        }
        if self.scenes == 0 || self.tag_classes == 0 || self.event_classes == 0 {
            return bad("every task needs at least one class".into());
        }
        if self.scenes > ASC_CLASSES || self.tag_classes > TAG_CLASSES || self.event_classes > SED_CLASSES {
            return bad("class count exceeds the task's label space".into());
        }
        let durations = [
            self.scene_duration_s,
            self.tag_duration_s[0],
            self.sed_duration_s,
            self.event_duration_s[0],
        ];
        if durations.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return bad("durations must be positive".into());
        }
        if self.tag_duration_s[1] < self.tag_duration_s[0]
            || self.event_duration_s[1] < self.event_duration_s[0]
            || self.events_per_segment[1] < self.events_per_segment[0]
        {
            return bad("ranges must be ordered [min, max]".into());
        }
        if self.event_duration_s[1] > self.sed_duration_s {
            return bad("events cannot outlast their segment".into());
        }
        if self.max_tags_per_segment == 0 {
            return bad("max_tags_per_segment must be positive".into());
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        let tones = self
            .scene_tones()
            .into_iter()
            .flatten()
            .chain(self.tag_tones())
            .chain(self.event_tones());
        for f in tones {
            if !(f > 0.0 && f < nyquist) {
                return bad(format!("tone {f} Hz outside (0, Nyquist)"));
            }
        }
        if self.scene_tones().len() != self.scenes
            || self.tag_tones().len() != self.tag_classes
            || self.event_tones().len() != self.event_classes
        {
            return bad("tone maps must have one entry per class".into());
        }
        Ok(())
    }
}

struct Canvas {
    samples: Vec<f64>,
    rate: f64,
}

impl Canvas {
    fn new(duration_s: f64, rate: u32) -> Self {
        Self {
            samples: vec![0.0; (duration_s * rate as f64).round() as usize],
            rate: rate as f64,
        }
    }

    /// Adds a tone on `[start_s, end_s)` with 10 ms linear fades.
    fn tone(&mut self, freq: f64, amp: f64, phase: f64, start_s: f64, end_s: f64) {
        let a = (start_s * self.rate).round() as usize;
        let b = ((end_s * self.rate).round() as usize).min(self.samples.len());
        let fade = (0.01 * self.rate) as usize;
        for i in a..b {
            let env = ((i - a).min(b - 1 - i) as f64 / fade.max(1) as f64).min(1.0);
            self.samples[i] += amp * env * (TAU * freq * i as f64 / self.rate + phase).sin();
        }
    }

    fn noise(&mut self, amp: f64, rng: &mut impl Rng) {
        for s in &mut self.samples {
            *s += amp * rng.gen_range(-1.0..1.0);
        }
    }

    fn into_waveform(mut self, rate: u32) -> Result<Waveform, AudioError> {
        let peak = self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if peak > 0.99 {
            let g = 0.99 / peak;
            self.samples.iter_mut().for_each(|s| *s *= g);
        }
        Waveform::new(self.samples, rate)
    }
}

/// Writes the toy corpus as 16-bit WAV files into `out_dir` (file names are
/// prefixed with `prefix`) and returns the manifest entries for all tasks,
/// with paths relative to `out_dir`.
pub fn synthesize_toy_dataset(
    spec: &ToySpec,
    out_dir: &Path,
    prefix: &str,
) -> Result<Vec<ManifestEntry>, AudioError> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|source| AudioError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rate = spec.sample_rate;
    let amp = spec.tone_amplitude;
    let mut entries = Vec::new();
    let emit = |name: String, canvas: Canvas, entry: ManifestEntry| -> Result<ManifestEntry, AudioError> {
        let w = canvas.into_waveform(rate)?;
        write_wav(out_dir.join(&name), &w, WavEncoding::Pcm16)?;
        Ok(entry)
    };

    let scene_tones = spec.scene_tones();
    for scene in 0..spec.scenes {
        for i in 0..spec.segments_per_scene {
            let mut c = Canvas::new(spec.scene_duration_s, rate);
            for &f in &scene_tones[scene] {
                let gain = rng.gen_range(0.7..1.0);
                c.tone(f, amp * gain, rng.gen_range(0.0..TAU), 0.0, spec.scene_duration_s);
            }
            c.noise(spec.noise_amplitude, &mut rng);
            let name = format!("{prefix}asc_s{scene}_{i:03}.wav");
            entries.push(emit(name.clone(), c, ManifestEntry::scene(name, scene))?);
        }
    }

    let tag_tones = spec.tag_tones();
    for i in 0..spec.tag_segments {
        let [lo, hi] = spec.tag_duration_s;
        let dur = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let dur = (dur * 1000.0).round() / 1000.0;
        let count = rng.gen_range(1..=spec.max_tags_per_segment.min(spec.tag_classes));
        let mut tags = sample(&mut rng, spec.tag_classes, count).into_vec();
        tags.sort_unstable();
        let mut c = Canvas::new(dur, rate);
        for &t in &tags {
            c.tone(tag_tones[t], amp, rng.gen_range(0.0..TAU), 0.0, dur);
        }
        c.noise(spec.noise_amplitude, &mut rng);
        let name = format!("{prefix}tag_{i:03}.wav");
        entries.push(emit(name.clone(), c, ManifestEntry::tagged(name, tags))?);
    }

    let event_tones = spec.event_tones();
    for i in 0..spec.sed_segments {
        let dur = spec.sed_duration_s;
        let [lo, hi] = spec.events_per_segment;
        let count = rng.gen_range(lo..=hi);
        let mut c = Canvas::new(dur, rate);
        let mut events = Vec::with_capacity(count);
        for _ in 0..count {
            let [elo, ehi] = spec.event_duration_s;
            let len = if ehi > elo { rng.gen_range(elo..ehi) } else { elo };
            let class = rng.gen_range(0..spec.event_classes);
            let onset = ((rng.gen_range(0.0..=(dur - len))) * 1000.0).round() / 1000.0;
            let offset = ((onset + len) * 1000.0).round() / 1000.0;
            let offset = offset.min(dur);
            c.tone(event_tones[class], amp, rng.gen_range(0.0..TAU), onset, offset);
            events.push(EventAnnotation {
                onset,
                offset,
                class,
            });
        }
        events.sort_by(|a, b| a.onset.total_cmp(&b.onset));
        c.noise(spec.noise_amplitude, &mut rng);
        let name = format!("{prefix}sed_{i:03}.wav");
        entries.push(emit(name.clone(), c, ManifestEntry::with_events(name, events))?);
    }
    Ok(entries)
}
