//! WAV input/output and sample-rate conversion.
//!
//! Everything downstream works on mono 8 kHz signals, so [`load_audio`]
//! downmixes, resamples and (when needed) peak-normalizes on the way in.

use std::f64::consts::PI;
use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use crate::{Error, Result};

/// Sample rate used by the separation pipeline.
pub const DEFAULT_SAMPLE_RATE: u32 = 8000;

/// Half-width of the resampling kernel; 32 taps per output phase.
const SINC_HALF_TAPS: i64 = 16;

/// Mono time-domain signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidWaveform("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidWaveform(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
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

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    /// Returns a copy truncated to at most `len` samples.
    pub fn truncated(&self, len: usize) -> Self {
        Self {
            samples: self.samples[..len.min(self.samples.len())].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Reads a PCM or float WAV file, downmixes to mono, and resamples to `target_rate`.
///
/// The result is divided by its peak only when the peak exceeds 1.
pub fn load_audio(path: impl AsRef<Path>, target_rate: u32) -> Result<Waveform> {
    let path = path.as_ref();
    let read_err = |source| Error::AudioRead { path: path.to_path_buf(), source };
    let reader = hound::WavReader::open(path).map_err(read_err)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::UnsupportedEncoding("zero channels".into()));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(read_err)?
        }
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(read_err)?,
        (format, bits) => {
            return Err(Error::UnsupportedEncoding(format!("{format:?} with {bits} bits per sample")))
        }
    };

    let frames = interleaved.len() / channels;
    if frames == 0 {
        return Err(Error::EmptyAudio);
    }
    let mono: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();

    let mut wave = Waveform::new(mono, spec.sample_rate)?;
    if wave.sample_rate != target_rate {
        wave = resample(&wave, target_rate)?;
    }
    let peak = wave.peak();
    if peak > 1.0 {
        wave.samples.iter_mut().for_each(|s| *s /= peak);
    }
    Ok(wave)
}

/// Writes a 16-bit PCM WAV. Samples are clipped to [-1, 1) before quantization.
pub fn save_audio(waveform: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if waveform.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: waveform.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let write_err = |source| Error::AudioWrite { path: path.to_path_buf(), source };
    let mut writer = WavWriter::create(path, spec).map_err(write_err)?;
    for &s in &waveform.samples {
        writer.write_sample(quantize_i16(s)).map_err(write_err)?;
    }
    writer.finalize().map_err(write_err)
}

fn quantize_i16(sample: f64) -> i16 {
    (sample * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Band-limited resampling by windowed-sinc interpolation (Hann window, 32 taps).
pub fn resample(waveform: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::InvalidWaveform("target rate must be positive".into()));
    }
    let source_rate = waveform.sample_rate;
    if source_rate == target_rate {
        return Ok(waveform.clone());
    }
    let input = &waveform.samples;
    let ratio = target_rate as f64 / source_rate as f64;
    let out_len = (input.len() as f64 * ratio).round() as usize;
    // Normalized cutoff relative to the input Nyquist; below 1 when decimating.
    let cutoff = ratio.min(1.0);
    let step = source_rate as f64 / target_rate as f64;

    let samples = (0..out_len)
        .map(|m| {
            let t = m as f64 * step;
            let center = t.floor() as i64;
            let mut acc = 0.0;
            for k in (center - SINC_HALF_TAPS + 1)..=(center + SINC_HALF_TAPS) {
                if k < 0 || k as usize >= input.len() {
                    continue;
                }
                let x = t - k as f64;
                acc += input[k as usize] * cutoff * sinc(cutoff * x) * hann_taper(x);
            }
            acc
        })
        .collect();
    Waveform::new(samples, target_rate)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn hann_taper(x: f64) -> f64 {
    let half = SINC_HALF_TAPS as f64;
    if x.abs() >= half {
        0.0
    } else {
        0.5 * (1.0 + (PI * x / half).cos())
    }
}
