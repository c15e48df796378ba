//! STFT analysis/synthesis and the band-limited log-power feature space.

use std::f64::consts::PI;

use ndarray::{s, Array2, Axis};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::signal_io::Waveform;
use crate::{Error, Result};

pub const DEFAULT_FRAME_LEN: usize = 2048;
pub const DEFAULT_HOP: usize = 128;
/// Number of low-frequency bins kept as features (bins 0..=300).
pub const DEFAULT_BAND_BINS: usize = 301;
/// Added to the power before taking the log so silent bins stay finite.
pub const EPS_FLOOR: f64 = 1e-12;

/// Window-energy floor for overlap-add, relative to the steady-state energy.
const WOLA_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    Hann,
}

impl WindowKind {
    /// Periodic window of length `len`.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..len).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()).collect(),
        }
    }
}

/// One-sided STFT, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub frames: Array2<Complex64>,
    pub frame_len: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.frames.ncols()
    }

    /// Frames per second.
    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.frames.mapv(|c| c.norm())
    }

    /// Number of samples covered by the frames.
    pub fn signal_len(&self) -> usize {
        (self.num_frames() - 1) * self.hop + self.frame_len
    }
}

/// How bins above the feature band are filled when resynthesizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HighBandPolicy {
    #[default]
    Zero,
    Mixture,
}

keyword_enum!(HighBandPolicy, HighBandPolicy::Zero => "zero", HighBandPolicy::Mixture => "mixture");

/// Normalized log-power features for the low band, plus what is needed to invert them.
#[derive(Debug, Clone, PartialEq)]
pub struct LpsBand {
    /// N x F, min-max normalized to [0, 1].
    pub lps: Array2<f64>,
    /// N x F phase in radians.
    pub phase: Array2<f64>,
    /// N x (B - F) residual bins above the band.
    pub high_band: Array2<Complex64>,
    pub norm_lo: f64,
    pub norm_hi: f64,
    pub frame_len: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl LpsBand {
    pub fn num_frames(&self) -> usize {
        self.lps.nrows()
    }

    pub fn band_bins(&self) -> usize {
        self.lps.ncols()
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    /// Maps normalized values back to natural-log power.
    pub fn denormalize(&self, normalized: &Array2<f64>) -> Array2<f64> {
        let span = self.norm_hi - self.norm_lo;
        normalized.mapv(|v| self.norm_lo + v * span)
    }

    /// Magnitude `exp(lps / 2)` of normalized features.
    pub fn magnitude_of(&self, normalized: &Array2<f64>) -> Array2<f64> {
        self.denormalize(normalized).mapv(|l| (0.5 * l).exp())
    }

    /// Band magnitude of the analysed signal.
    pub fn band_magnitude(&self) -> Array2<f64> {
        self.magnitude_of(&self.lps)
    }
}

fn check_frame_config(frame_len: usize, hop: usize) -> Result<()> {
    if frame_len < 2 || !frame_len.is_multiple_of(2) {
        return Err(Error::InvalidFrameConfig(format!("frame length {frame_len} must be even and at least 2")));
    }
    if hop == 0 || hop > frame_len / 2 || !frame_len.is_multiple_of(hop) {
        return Err(Error::InvalidFrameConfig(format!(
            "hop {hop} must divide frame length {frame_len} with at least 50% overlap"
        )));
    }
    Ok(())
}

/// Hann-windowed one-sided STFT with `floor((len - frame_len) / hop) + 1` frames.
pub fn stft(waveform: &Waveform, frame_len: usize, hop: usize) -> Result<ComplexSpectrogram> {
    check_frame_config(frame_len, hop)?;
    let x = waveform.samples();
    if x.len() < frame_len {
        return Err(Error::SignalTooShort { len: x.len(), frame_len });
    }
    let n_frames = (x.len() - frame_len) / hop + 1;
    let bins = frame_len / 2 + 1;
    let window = WindowKind::Hann.coefficients(frame_len);
    let fft = FftPlanner::new().plan_fft_forward(frame_len);
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_len];
    let mut frames = Array2::zeros((n_frames, bins));

    for (n, mut row) in frames.axis_iter_mut(Axis(0)).enumerate() {
        let start = n * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(x[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (dst, src) in row.iter_mut().zip(&buf[..bins]) {
            *dst = *src;
        }
    }
    Ok(ComplexSpectrogram { frames, frame_len, hop, window: WindowKind::Hann, sample_rate: waveform.sample_rate() })
}

/// Weighted overlap-add inverse with per-sample window-energy normalization.
pub fn istft(spec: &ComplexSpectrogram) -> Result<Waveform> {
    let frame_len = spec.frame_len;
    check_frame_config(frame_len, spec.hop)?;
    if spec.num_bins() != frame_len / 2 + 1 || spec.num_frames() == 0 {
        return Err(Error::ShapeMismatch {
            expected: format!("N x {} with N >= 1", frame_len / 2 + 1),
            actual: format!("{} x {}", spec.num_frames(), spec.num_bins()),
        });
    }
    let window = spec.window.coefficients(frame_len);
    let ifft = FftPlanner::new().plan_fft_inverse(frame_len);
    let out_len = spec.signal_len();
    let mut out = vec![0.0; out_len];
    let mut energy = vec![0.0; out_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_len];
    let half = frame_len / 2;

    for (n, row) in spec.frames.axis_iter(Axis(0)).enumerate() {
        // Rebuild the Hermitian-symmetric full spectrum.
        for k in 0..=half {
            buf[k] = row[k];
        }
        buf[0].im = 0.0;
        buf[half].im = 0.0;
        for k in 1..half {
            buf[frame_len - k] = row[k].conj();
        }
        ifft.process(&mut buf);
        let start = n * spec.hop;
        for i in 0..frame_len {
            out[start + i] += window[i] * buf[i].re / frame_len as f64;
            energy[start + i] += window[i] * window[i];
        }
    }
    // Near the ends only one or two tapered frames overlap; dividing by their
    // tiny window energy would blow up any spectral modification there.
    let floor = WOLA_FLOOR * energy.iter().copied().fold(0.0, f64::max);
    for (y, e) in out.iter_mut().zip(&energy) {
        *y = if *e > 0.0 { *y / e.max(floor) } else { 0.0 };
    }
    Waveform::new(out, spec.sample_rate)
}

/// Converts the low `band_bins` bins to min-max normalized natural-log power.
pub fn to_lps(spec: &ComplexSpectrogram, band_bins: usize) -> Result<LpsBand> {
    if band_bins == 0 || band_bins > spec.num_bins() {
        return Err(Error::ShapeMismatch {
            expected: format!("at least {band_bins} bins"),
            actual: format!("{} bins", spec.num_bins()),
        });
    }
    let band = spec.frames.slice(s![.., ..band_bins]);
    let raw = band.mapv(|c| (c.norm_sqr() + EPS_FLOOR).ln());
    let phase = band.mapv(|c| c.arg());
    let high_band = spec.frames.slice(s![.., band_bins..]).to_owned();

    let norm_lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let mut norm_hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if norm_hi <= norm_lo {
        norm_hi = norm_lo + 1.0;
    }
    let span = norm_hi - norm_lo;
    let lps = raw.mapv(|l| (l - norm_lo) / span);

    Ok(LpsBand {
        lps,
        phase,
        high_band,
        norm_lo,
        norm_hi,
        frame_len: spec.frame_len,
        hop: spec.hop,
        sample_rate: spec.sample_rate,
    })
}

/// Rebuilds a full spectrogram from band magnitudes and the stored phase.
pub fn from_masked(lps: &LpsBand, masked_magnitude: &Array2<f64>, policy: HighBandPolicy) -> Result<ComplexSpectrogram> {
    if masked_magnitude.dim() != lps.phase.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", lps.phase.dim()),
            actual: format!("{:?}", masked_magnitude.dim()),
        });
    }
    if masked_magnitude.iter().any(|m| !m.is_finite() || *m < 0.0) {
        return Err(Error::InvalidConfig("masked magnitude must be finite and nonnegative".into()));
    }
    let n = lps.num_frames();
    let f = lps.band_bins();
    let bins = lps.frame_len / 2 + 1;
    let mut frames = Array2::zeros((n, bins));
    frames
        .slice_mut(s![.., ..f])
        .zip_mut_with(masked_magnitude, |dst, &m| *dst = Complex64::new(m, 0.0));
    frames.slice_mut(s![.., ..f]).zip_mut_with(&lps.phase, |dst, &p| *dst = Complex64::from_polar(dst.re, p));
    if policy == HighBandPolicy::Mixture {
        frames.slice_mut(s![.., f..]).assign(&lps.high_band);
    }
    Ok(ComplexSpectrogram {
        frames,
        frame_len: lps.frame_len,
        hop: lps.hop,
        window: WindowKind::Hann,
        sample_rate: lps.sample_rate,
    })
}
