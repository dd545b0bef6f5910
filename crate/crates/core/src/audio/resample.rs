use super::{AudioError, Waveform};

pub const TARGET_RATE: u32 = 24_000;

const TAPS: usize = 64;
const HALF: isize = (TAPS / 2) as isize;
const KAISER_BETA: f64 = 8.6;
/// Passband edge as a fraction of the narrower Nyquist frequency.
const ROLLOFF: f64 = 0.95;
/// Phase tables above this size are evaluated per output sample instead.
const MAX_TABLE_PHASES: u64 = 4096;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Kaiser-windowed sinc taps for fractional delay `frac` in `[0, 1)`,
/// normalised to unit DC gain. Tap `k` multiplies input `i + k - (HALF - 1)`.
fn phase_taps(frac: f64, cutoff: f64) -> [f64; TAPS] {
    let norm = bessel_i0(KAISER_BETA);
    let mut taps = [0.0; TAPS];
    for (k, tap) in taps.iter_mut().enumerate() {
        let offset = k as isize - (HALF - 1);
        let d = frac - offset as f64;
        let u = d / HALF as f64;
        let window = if u.abs() <= 1.0 {
            bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / norm
        } else {
            0.0
        };
        *tap = 2.0 * cutoff * sinc(2.0 * cutoff * d) * window;
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Polyphase windowed-sinc resampling (64 taps per phase, Kaiser β = 8.6).
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform, AudioError> {
    if target_rate == 0 {
        return Err(AudioError::InvalidWaveform("target rate must be positive".into()));
    }
    let src = w.sample_rate() as u64;
    if src == target_rate as u64 {
        return Ok(w.clone());
    }
    let g = gcd(src, target_rate as u64);
    let up = target_rate as u64 / g;
    let down = src / g;
    let cutoff = 0.5 * (up as f64 / down as f64).min(1.0) * ROLLOFF;
    let table: Option<Vec<[f64; TAPS]>> = (up <= MAX_TABLE_PHASES)
        .then(|| (0..up).map(|p| phase_taps(p as f64 / up as f64, cutoff)).collect());

    let x = w.samples();
    let len = x.len() as u64;
    let n_out = (len * up).div_ceil(down);
    let mut out = Vec::with_capacity(n_out as usize);
    for n in 0..n_out {
        let pos = n * down;
        let i = (pos / up) as isize;
        let phase = pos % up;
        let computed;
        let taps = match &table {
            Some(t) => &t[phase as usize],
            None => {
                computed = phase_taps(phase as f64 / up as f64, cutoff);
                &computed
            }
        };
        let mut acc = 0.0;
        for (k, &tap) in taps.iter().enumerate() {
            let j = i + k as isize - (HALF - 1);
            if j >= 0 && (j as u64) < len {
                acc += x[j as usize] * tap;
            }
        }
        out.push(acc);
    }
    Waveform::new(out, target_rate)
}

/// Resamples to 24 kHz; input already at 24 kHz is returned unchanged.
pub fn resample_to_24k(w: &Waveform) -> Result<Waveform, AudioError> {
    resample(w, TARGET_RATE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dft_peak_hz(x: &[f64], rate: f64) -> f64 {
        // naive DFT magnitude scan, independent of any FFT implementation
        let n = x.len();
        let mut best = (0usize, 0.0f64);
        for k in 1..n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            let mag = re * re + im * im;
            if mag > best.1 {
                best = (k, mag);
            }
        }
        best.0 as f64 * rate / n as f64
    }

    #[test]
    fn identity_rate_is_bitwise_copy() {
        let w = Waveform::new(vec![0.1, -0.2, 0.3], TARGET_RATE).unwrap();
        assert_eq!(resample_to_24k(&w).unwrap(), w);
    }

    #[test]
    fn dc_is_preserved_away_from_edges() {
        let w = Waveform::new(vec![0.7; 48_000], 48_000).unwrap();
        let out = resample_to_24k(&w).unwrap();
        assert_eq!(out.sample_rate(), 24_000);
        let edge = 240; // 10 ms at 24 kHz
        for &v in &out.samples()[edge..out.len() - edge] {
            assert!((v - 0.7).abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn sine_frequency_survives_downsampling() {
        let rate = 48_000.0;
        let x: Vec<f64> = (0..9600)
            .map(|t| 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * t as f64 / rate).sin())
            .collect();
        let out = resample_to_24k(&Waveform::new(x, 48_000).unwrap()).unwrap();
        let seg = &out.samples()[240..240 + 2400];
        let peak = dft_peak_hz(seg, 24_000.0);
        let bin = 24_000.0 / seg.len() as f64;
        assert!((peak - 1000.0).abs() <= bin, "peak at {peak}");
    }

    #[test]
    fn duration_preserved_within_one_sample() {
        for &(rate, len) in &[(44_100u32, 44_101usize), (22_050, 1000), (16_000, 333), (8_000, 7)] {
            let w = Waveform::new(vec![0.0; len], rate).unwrap();
            let out = resample_to_24k(&w).unwrap();
            assert!((out.duration_s() - w.duration_s()).abs() <= 1.0 / 24_000.0);
        }
    }

    #[test]
    fn resampling_twice_equals_once() {
        let x: Vec<f64> = (0..1000).map(|t| (t as f64 * 0.01).sin() * 0.3).collect();
        let once = resample_to_24k(&Waveform::new(x, 44_100).unwrap()).unwrap();
        assert_eq!(resample_to_24k(&once).unwrap(), once);
    }

    #[test]
    fn large_phase_count_path_matches_dc() {
        // 24001 Hz forces on-the-fly tap evaluation
        let w = Waveform::new(vec![0.25; 2000], 24_001).unwrap();
        let out = resample_to_24k(&w).unwrap();
        assert!((out.samples()[1000] - 0.25).abs() < 1e-9);
    }
}
