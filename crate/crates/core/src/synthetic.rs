//! Heart-like and lung-like surrogate signals with known periodicity.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::signal_io::{Waveform, DEFAULT_SAMPLE_RATE};
use crate::{Error, Result};

pub const MIN_DURATION_S: f64 = 3.0;
pub const PEAK_LEVEL: f64 = 0.8;
/// Burst amplitudes vary uniformly within ±this fraction.
const BURST_JITTER: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceKind {
    /// Exponentially decaying tone bursts repeating at the source rate.
    ImpulseTrainTone { carrier_hz: f64, decay_s: f64 },
    /// Band-limited noise whose amplitude follows `(1 + sin(2π·rate·t)) / 2`.
    AmNoise { band_lo_hz: f64, band_hi_hz: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSpec {
    pub kind: SourceKind,
    pub rate_hz: f64,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl SourceSpec {
    /// 1.2 Hz train of 90 Hz bursts with a 40 ms decay.
    pub fn heart(duration_s: f64, seed: u64) -> Self {
        Self {
            kind: SourceKind::ImpulseTrainTone { carrier_hz: 90.0, decay_s: 0.04 },
            rate_hz: 1.2,
            duration_s,
            sample_rate: DEFAULT_SAMPLE_RATE,
            seed,
        }
    }

    /// 150–900 Hz noise modulated at 0.25 Hz.
    pub fn lung(duration_s: f64, seed: u64) -> Self {
        Self {
            kind: SourceKind::AmNoise { band_lo_hz: 150.0, band_hi_hz: 900.0 },
            rate_hz: 0.25,
            duration_s,
            sample_rate: DEFAULT_SAMPLE_RATE,
            seed,
        }
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate as f64 / 2.0;
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.sample_rate == 0 {
            return bad("sample rate must be positive".into());
        }
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return bad(format!("rate must be positive, got {} Hz", self.rate_hz));
        }
        if !(self.duration_s.is_finite() && self.duration_s >= MIN_DURATION_S) {
            return bad(format!("duration must be at least {MIN_DURATION_S} s, got {} s", self.duration_s));
        }
        match self.kind {
            SourceKind::ImpulseTrainTone { carrier_hz, decay_s } => {
                if !(carrier_hz > 0.0 && carrier_hz < nyquist) {
                    return bad(format!("carrier {carrier_hz} Hz outside (0, {nyquist}) Hz"));
                }
                if !(decay_s.is_finite() && decay_s > 0.0) {
                    return bad(format!("decay must be positive, got {decay_s} s"));
                }
            }
            SourceKind::AmNoise { band_lo_hz, band_hi_hz } => {
                if !(band_lo_hz > 0.0 && band_lo_hz < band_hi_hz && band_hi_hz < nyquist.min(4000.0)) {
                    return bad(format!("band {band_lo_hz}–{band_hi_hz} Hz must satisfy 0 < lo < hi < {}", nyquist.min(4000.0)));
                }
            }
        }
        Ok(())
    }
}

/// Renders a source, peak-normalized to 0.8.
pub fn generate(spec: &SourceSpec) -> Result<Waveform> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut samples = match spec.kind {
        SourceKind::ImpulseTrainTone { carrier_hz, decay_s } => burst_train(spec, carrier_hz, decay_s, &mut rng),
        SourceKind::AmNoise { band_lo_hz, band_hi_hz } => modulated_noise(spec, band_lo_hz, band_hi_hz, &mut rng),
    };
    let peak = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.0 {
        samples.iter_mut().for_each(|x| *x *= PEAK_LEVEL / peak);
    }
    Waveform::new(samples, spec.sample_rate)
}

/// Burst onset times (s) for an impulse-train source: a seeded offset within the first period, then every period.
pub fn burst_onsets(spec: &SourceSpec) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let period = 1.0 / spec.rate_hz;
    let offset = rng.random_range(0.0..period);
    (0..).map(|k| offset + k as f64 * period).take_while(|&t| t < spec.duration_s).collect()
}

fn burst_train(spec: &SourceSpec, carrier_hz: f64, decay_s: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let rate = spec.sample_rate as f64;
    let len = spec.num_samples();
    let mut out = vec![0.0; len];
    let period = 1.0 / spec.rate_hz;
    let offset = rng.random_range(0.0..period);
    let tail = (10.0 * decay_s * rate).ceil() as usize;
    let mut k = 0usize;
    loop {
        let onset_t = offset + k as f64 * period;
        if onset_t >= spec.duration_s {
            break;
        }
        let amp = 1.0 + rng.random_range(-BURST_JITTER..BURST_JITTER);
        let onset = (onset_t * rate).round() as usize;
        for (i, x) in out.iter_mut().skip(onset).take(tail).enumerate() {
            let tau = i as f64 / rate;
            *x += amp * (-tau / decay_s).exp() * (2.0 * PI * carrier_hz * tau).sin();
        }
        k += 1;
    }
    out
}

fn modulated_noise(spec: &SourceSpec, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let rate = spec.sample_rate as f64;
    let len = spec.num_samples();
    let mut buf: Vec<Complex64> = (0..len).map(|_| Complex64::new(rng.random_range(-1.0..1.0), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(len - k);
        let freq = bin as f64 * rate / len as f64;
        if freq < lo || freq > hi {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    buf.iter()
        .enumerate()
        .map(|(n, c)| {
            let t = n as f64 / rate;
            c.re / len as f64 * 0.5 * (1.0 + (2.0 * PI * spec.rate_hz * t).sin())
        })
        .collect()
}
