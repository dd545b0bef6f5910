//! Log-mel spectrogram extraction, random crops and the binary feature cache.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::Waveform;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("expected sample rate {expected} Hz, got {got} Hz")]
    WrongSampleRate { expected: u32, got: u32 },
    #[error("segment of {len} samples is shorter than one {win}-sample window")]
    TooShort { len: usize, win: usize },
    #[error("crop length must be positive, got {0} s")]
    InvalidCrop(f64),
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
    #[error("feature cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub n_fft: usize,
    pub win_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub sample_rate: u32,
    pub log_floor: f64,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            n_fft: 2048,
            win_ms: 40.0,
            hop_ms: 20.0,
            n_mels: 128,
            sample_rate: 24_000,
            log_floor: 1e-10,
            f_min: 0.0,
            f_max: 12_000.0,
        }
    }
}

impl FeatureConfig {
    pub fn win_samples(&self) -> usize {
        (self.win_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_s(&self) -> f64 {
        self.hop_samples() as f64 / self.sample_rate as f64
    }

    /// Number of frames for `len` samples, or `None` if shorter than a window.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        let win = self.win_samples();
        (len >= win).then(|| (len - win) / self.hop_samples() + 1)
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: &str| Err(FeatureError::InvalidConfig(m.into()));
        if !(self.win_ms > self.hop_ms && self.hop_ms > 0.0) {
            return bad("need win_ms > hop_ms > 0");
        }
        if self.sample_rate == 0 || self.hop_samples() == 0 {
            return bad("sample rate too low for the hop");
        }
        if self.win_samples() > self.n_fft {
            return bad("window longer than n_fft");
        }
        if self.n_mels == 0 || self.n_mels > self.n_fft / 2 + 1 {
            return bad("need 0 < n_mels <= n_fft/2 + 1");
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive");
        }
        if !(0.0 <= self.f_min && self.f_min < self.f_max && self.f_max <= self.sample_rate as f64 / 2.0) {
            return bad("need 0 <= f_min < f_max <= Nyquist");
        }
        Ok(())
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-mel filters with unit peak, stored as (first bin, weights).
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    filters: Vec<(usize, Vec<f64>)>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(cfg: &FeatureConfig) -> Self {
        let n_bins = cfg.n_fft / 2 + 1;
        let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
        let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let filters = (0..cfg.n_mels)
            .map(|m| {
                let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
                let mut first = None;
                let mut weights = Vec::new();
                for k in 0..n_bins {
                    let f = k as f64 * bin_hz;
                    let w = ((f - l) / (c - l)).min((r - f) / (r - c)).max(0.0);
                    if w > 0.0 {
                        let start = *first.get_or_insert(k);
                        weights.resize(k - start, 0.0);
                        weights.push(w);
                    }
                }
                (first.unwrap_or(0), weights)
            })
            .collect();
        Self {
            filters,
            centers_hz: edges[1..=cfg.n_mels].to_vec(),
        }
    }

    pub fn filters(&self) -> &[(usize, Vec<f64>)] {
        &self.filters
    }

    pub fn center_hz(&self, band: usize) -> f64 {
        self.centers_hz[band]
    }

    fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, (start, w)) in out.iter_mut().zip(&self.filters) {
            *o = w.iter().zip(&power[*start..]).map(|(a, b)| a * b).sum();
        }
    }
}

/// Frames × bands matrix of natural-log mel energies, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    values: Vec<f64>,
    frames: usize,
    bands: usize,
    hop_s: f64,
}

impl MelSpectrogram {
    pub fn new(values: Vec<f64>, frames: usize, bands: usize, hop_s: f64) -> Result<Self, FeatureError> {
        if values.len() != frames * bands {
            return Err(FeatureError::InvalidConfig(format!(
                "{} values for {frames}x{bands}",
                values.len()
            )));
        }
        Ok(Self {
            values,
            frames,
            bands,
            hop_s,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn hop_s(&self) -> f64 {
        self.hop_s
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.bands..(t + 1) * self.bands]
    }
}

/// Reusable extractor holding the window, FFT plan and filterbank.
pub struct MelExtractor {
    cfg: FeatureConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    bank: MelFilterbank,
}

impl MelExtractor {
    pub fn new(cfg: FeatureConfig) -> Result<Self, FeatureError> {
        cfg.validate()?;
        let win = cfg.win_samples();
        // periodic Hann
        let window = (0..win)
            .map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / win as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        let bank = MelFilterbank::new(&cfg);
        Ok(Self {
            cfg,
            window,
            fft,
            bank,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    pub fn extract(&self, w: &Waveform) -> Result<MelSpectrogram, FeatureError> {
        let cfg = &self.cfg;
        if w.sample_rate() != cfg.sample_rate {
            return Err(FeatureError::WrongSampleRate {
                expected: cfg.sample_rate,
                got: w.sample_rate(),
            });
        }
        let win = cfg.win_samples();
        let frames = cfg.frame_count(w.len()).ok_or(FeatureError::TooShort {
            len: w.len(),
            win,
        })?;
        let hop = cfg.hop_samples();
        let bands = cfg.n_mels;
        let n_bins = cfg.n_fft / 2 + 1;
        let x = w.samples();
        let mut values = vec![0.0; frames * bands];
        values
            .par_chunks_mut(bands)
            .enumerate()
            .for_each_init(
                || {
                    (
                        vec![Complex::new(0.0, 0.0); cfg.n_fft],
                        vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()],
                        vec![0.0; n_bins],
                    )
                },
                |(buf, scratch, power), (t, row)| {
                    let seg = &x[t * hop..t * hop + win];
                    for (b, (s, h)) in buf.iter_mut().zip(seg.iter().zip(&self.window)) {
                        *b = Complex::new(s * h, 0.0);
                    }
                    buf[win..].fill(Complex::new(0.0, 0.0));
                    self.fft.process_with_scratch(buf, scratch);
                    for (p, c) in power.iter_mut().zip(buf.iter()) {
                        *p = c.norm_sqr();
                    }
                    self.bank.apply(power, row);
                    for v in row.iter_mut() {
                        *v = v.max(cfg.log_floor).ln();
                    }
                },
            );
        MelSpectrogram::new(values, frames, bands, cfg.hop_s())
    }
}

pub fn log_mel_spectrogram(w: &Waveform, cfg: &FeatureConfig) -> Result<MelSpectrogram, FeatureError> {
    MelExtractor::new(cfg.clone())?.extract(w)
}

/// Number of samples a crop of `crop_s` seconds spans.
pub fn crop_len(crop_s: f64, sample_rate: u32) -> Result<usize, FeatureError> {
    if !(crop_s > 0.0 && crop_s.is_finite()) {
        return Err(FeatureError::InvalidCrop(crop_s));
    }
    Ok(((crop_s * sample_rate as f64).round() as usize).max(1))
}

/// Draws a crop start: uniform over valid offsets, 0 when the input is shorter
/// than the crop (the crop is then tiled).
pub fn draw_crop_offset<R: Rng + ?Sized>(len: usize, crop: usize, rng: &mut R) -> usize {
    if len > crop {
        rng.gen_range(0..=len - crop)
    } else {
        0
    }
}

/// Cuts `crop` samples starting at `offset`, repeating the input cyclically if
/// it runs out.
pub fn crop_at(w: &Waveform, offset: usize, crop: usize) -> Waveform {
    let x = w.samples();
    let samples = if offset + crop <= x.len() {
        x[offset..offset + crop].to_vec()
    } else {
        x.iter().cycle().skip(offset).take(crop).copied().collect()
    };
    Waveform::new(samples, w.sample_rate()).expect("crop of a valid waveform")
}

pub fn random_crop_waveform<R: Rng + ?Sized>(
    w: &Waveform,
    crop_s: f64,
    rng: &mut R,
) -> Result<Waveform, FeatureError> {
    let crop = crop_len(crop_s, w.sample_rate())?;
    if w.is_empty() {
        return Err(FeatureError::TooShort { len: 0, win: 1 });
    }
    let offset = draw_crop_offset(w.len(), crop, rng);
    Ok(crop_at(w, offset, crop))
}

const CACHE_MAGIC: &[u8; 4] = b"DMEL";
const CACHE_VERSION: u32 = 1;

/// Writes `magic, version, frames, bands (u32), hop_s (f32)` then f32 values,
/// all little-endian.
pub fn write_feature_cache(path: impl AsRef<Path>, m: &MelSpectrogram) -> Result<(), FeatureError> {
    let mut buf = Vec::with_capacity(20 + 4 * m.values.len());
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.frames as u32).to_le_bytes());
    buf.extend_from_slice(&(m.bands as u32).to_le_bytes());
    buf.extend_from_slice(&(m.hop_s as f32).to_le_bytes());
    for &v in &m.values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_feature_cache(path: impl AsRef<Path>) -> Result<MelSpectrogram, FeatureError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..4] != CACHE_MAGIC {
        return Err(FeatureError::Cache("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if word(4) != CACHE_VERSION {
        return Err(FeatureError::Cache(format!("unsupported version {}", word(4))));
    }
    let (frames, bands) = (word(8) as usize, word(12) as usize);
    let hop_s = f32::from_le_bytes(bytes[16..20].try_into().unwrap()) as f64;
    let body = &bytes[20..];
    if body.len() != 4 * frames * bands {
        return Err(FeatureError::Cache("payload length mismatch".into()));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    MelSpectrogram::new(values, frames, bands, hop_s)
}
