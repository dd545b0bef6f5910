//! Audio ingestion: WAV I/O, resampling, dataset manifests and the synthetic
//! toy corpus.

mod manifest;
mod resample;
mod synth;
mod wav;

use std::path::PathBuf;

use thiserror::Error;

pub use manifest::{parse_manifest, read_manifest, to_jsonl, write_manifest, EventAnnotation, ManifestEntry};
pub use resample::{resample, resample_to_24k, TARGET_RATE};
pub use synth::{synthesize_toy_dataset, ToySpec};
pub use wav::{load_wav, write_wav, WavEncoding};

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("audio file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("unsupported WAV encoding in {}: {reason}", .path.display())]
    UnsupportedEncoding { path: PathBuf, reason: String },
    #[error("WAV file {} has no samples", .0.display())]
    EmptyPayload(PathBuf),
    #[error("I/O error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("invalid toy dataset spec: {0}")]
    InvalidSpec(String),
}

/// Mono audio buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidWaveform("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::InvalidWaveform(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * c).collect(),
            sample_rate: self.sample_rate,
        }
    }
}
