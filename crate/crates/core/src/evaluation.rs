//! SNR-controlled mixing and BSS-eval style scoring with gain-only projections.

use crate::signal_io::Waveform;
use crate::{Error, Result};

/// Scores are clamped to ±this many dB; exact matches land on the cap.
pub const SCORE_CAP_DB: f64 = 200.0;

/// Output of [`mix_at_snr`]. The references are scaled exactly as they appear in the mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub mixture: Waveform,
    pub target: Waveform,
    pub noise: Waveform,
    /// Gain applied to the noise before summation.
    pub noise_gain: f64,
    /// Factor applied to everything afterwards to keep the mixture peak at or below 1.
    pub rescale: f64,
    pub achieved_snr_db: f64,
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `10·log10(Σt² / Σn²)`.
pub fn snr_db(target: &[f64], noise: &[f64]) -> f64 {
    10.0 * (energy(target) / energy(noise)).log10()
}

/// Adds `noise` to `target` so that the target-to-noise ratio equals `snr_db`.
///
/// Longer noise is truncated to the target length; shorter noise is an error.
pub fn mix_at_snr(target: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Mixture> {
    if target.sample_rate() != noise.sample_rate() {
        return Err(Error::InvalidWaveform(format!(
            "sample rates differ: target {} Hz, noise {} Hz",
            target.sample_rate(),
            noise.sample_rate()
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidConfig(format!("SNR must be finite, got {snr_db}")));
    }
    let len = target.len();
    if noise.len() < len {
        return Err(Error::LengthMismatch(format!(
            "noise has {} samples but the target has {len}",
            noise.len()
        )));
    }
    let noise = noise.truncated(len);
    let rms_t = target.rms();
    let rms_n = noise.rms();
    if rms_t == 0.0 {
        return Err(Error::SilentSignal("target"));
    }
    if rms_n == 0.0 {
        return Err(Error::SilentSignal("noise"));
    }
    let noise_gain = rms_t / rms_n * 10f64.powf(-snr_db / 20.0);
    let scaled_noise: Vec<f64> = noise.samples().iter().map(|x| x * noise_gain).collect();
    let sum: Vec<f64> = target.samples().iter().zip(&scaled_noise).map(|(a, b)| a + b).collect();
    let peak = sum.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let rescale = if peak > 1.0 { 1.0 / peak } else { 1.0 };

    let rate = target.sample_rate();
    let scale = |v: &[f64]| Waveform::new(v.iter().map(|x| x * rescale).collect(), rate);
    let target = scale(target.samples())?;
    let noise = scale(&scaled_noise)?;
    let mixture = scale(&sum)?;
    let achieved_snr_db = self::snr_db(target.samples(), noise.samples());
    Ok(Mixture { mixture, target, noise, noise_gain, rescale, achieved_snr_db })
}

/// `estimate = s_target + e_interf + e_artif`; the noise term is identically zero here.
#[derive(Debug, Clone, PartialEq)]
pub struct BssDecomposition {
    pub s_target: Vec<f64>,
    pub e_interf: Vec<f64>,
    pub e_artif: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BssScores {
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
}

/// Splits `estimate` against reference `which` of `refs`, with scalar (zero-lag) projections.
///
/// The interference term is the projection onto the other reference after
/// removing its component along the target reference.
pub fn bss_decompose(estimate: &[f64], refs: [&[f64]; 2], which: usize) -> Result<BssDecomposition> {
    if which > 1 {
        return Err(Error::InvalidConfig(format!("source index {which} out of range")));
    }
    for r in refs {
        if r.len() != estimate.len() {
            return Err(Error::LengthMismatch(format!(
                "estimate has {} samples, reference has {}",
                estimate.len(),
                r.len()
            )));
        }
    }
    let s = refs[which];
    let other = refs[1 - which];
    let ss = energy(s);
    if ss == 0.0 {
        return Err(Error::SilentSignal("reference"));
    }
    if energy(other) == 0.0 {
        return Err(Error::SilentSignal("reference"));
    }

    let gain = dot(estimate, s) / ss;
    let s_target: Vec<f64> = s.iter().map(|x| gain * x).collect();

    let along = dot(other, s) / ss;
    let ortho: Vec<f64> = other.iter().zip(s).map(|(o, x)| o - along * x).collect();
    let oo = energy(&ortho);
    let residual: Vec<f64> = estimate.iter().zip(&s_target).map(|(e, t)| e - t).collect();
    let e_interf: Vec<f64> = if oo > 1e-20 * energy(other) {
        let g = dot(&residual, &ortho) / oo;
        ortho.iter().map(|x| g * x).collect()
    } else {
        vec![0.0; estimate.len()]
    };
    let e_artif = residual.iter().zip(&e_interf).map(|(r, i)| r - i).collect();
    Ok(BssDecomposition { s_target, e_interf, e_artif })
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        -SCORE_CAP_DB
    } else if den == 0.0 {
        SCORE_CAP_DB
    } else {
        (10.0 * (num / den).log10()).clamp(-SCORE_CAP_DB, SCORE_CAP_DB)
    }
}

pub fn score(d: &BssDecomposition) -> BssScores {
    let target = energy(&d.s_target);
    let distortion: f64 = d.e_interf.iter().zip(&d.e_artif).map(|(i, a)| (i + a) * (i + a)).sum();
    let signal: f64 = d.s_target.iter().zip(&d.e_interf).map(|(t, i)| (t + i) * (t + i)).sum();
    BssScores {
        sdr: ratio_db(target, distortion),
        sir: ratio_db(target, energy(&d.e_interf)),
        sar: ratio_db(signal, energy(&d.e_artif)),
    }
}

/// Scores of `estimate` against reference `which`.
pub fn score_estimate(estimate: &[f64], refs: [&[f64]; 2], which: usize) -> Result<BssScores> {
    Ok(score(&bss_decompose(estimate, refs, which)?))
}

/// Per-reference scores of two estimates under the better of the two pairings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// `scores[i]` belongs to reference `i`.
    pub scores: [BssScores; 2],
    /// Whether estimate 1 was matched with reference 0.
    pub swapped: bool,
}

/// Tries both estimate orderings and keeps the one with the larger summed SDR (ties keep the given order).
pub fn evaluate_pair(estimates: [&[f64]; 2], refs: [&[f64]; 2]) -> Result<Evaluation> {
    let direct = [score_estimate(estimates[0], refs, 0)?, score_estimate(estimates[1], refs, 1)?];
    let crossed = [score_estimate(estimates[1], refs, 0)?, score_estimate(estimates[0], refs, 1)?];
    let sum = |s: &[BssScores; 2]| s[0].sdr + s[1].sdr;
    if sum(&crossed) > sum(&direct) {
        Ok(Evaluation { scores: crossed, swapped: true })
    } else {
        Ok(Evaluation { scores: direct, swapped: false })
    }
}
