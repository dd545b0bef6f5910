use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{AudioError, Waveform};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

fn map_hound(path: &Path, err: hound::Error) -> AudioError {
    match err {
        hound::Error::IoError(source) => AudioError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => AudioError::UnsupportedEncoding {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

/// Reads 16-bit PCM or 32-bit float WAV, averaging stereo to mono.
///
/// 16-bit values are scaled by `1/32768`; float samples are clamped to `[-1, 1]`.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform, AudioError> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(AudioError::MissingFile(path.to_path_buf()));
    }
    let reader = WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let unsupported = |reason: String| AudioError::UnsupportedEncoding {
        path: path.to_path_buf(),
        reason,
    };
    if !(1..=2).contains(&spec.channels) {
        return Err(unsupported(format!("{} channels", spec.channels)));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| (v as f64).clamp(-1.0, 1.0)))
            .collect::<Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => return Err(unsupported(format!("{fmt:?} at {bits} bits"))),
    };
    if interleaved.is_empty() {
        return Err(AudioError::EmptyPayload(path.to_path_buf()));
    }
    let samples = if spec.channels == 2 {
        interleaved
            .chunks_exact(2)
            .map(|f| 0.5 * (f[0] + f[1]))
            .collect()
    } else {
        interleaved
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Writes a mono WAV file.
pub fn write_wav(
    path: impl AsRef<Path>,
    w: &Waveform,
    encoding: WavEncoding,
) -> Result<(), AudioError> {
    let path = path.as_ref();
    let spec = match encoding {
        WavEncoding::Pcm16 => WavSpec {
            channels: 1,
            sample_rate: w.sample_rate(),
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        },
        WavEncoding::Float32 => WavSpec {
            channels: 1,
            sample_rate: w.sample_rate(),
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in w.samples() {
        match encoding {
            WavEncoding::Pcm16 => {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(v)
            }
            WavEncoding::Float32 => writer.write_sample(s as f32),
        }
        .map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}
