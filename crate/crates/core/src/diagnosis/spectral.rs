use alloc::vec;
use alloc::vec::Vec;

use crate::domain::{RuntimeTrace, RUNTIME_CHANNELS};
use crate::error::{Error, Result};
use crate::math;

pub const SPECTRAL_PER_CHANNEL: usize = 8;
/// Eight statistics for each of the six channels, then the global length.
pub const SPECTRAL_DIM: usize = SPECTRAL_PER_CHANNEL * RUNTIME_CHANNELS + 1;
pub const ENTROPY_BINS: usize = 16;

/// DFT magnitudes `|X_k|` for `k = 0..=n/2`.
pub fn dft_magnitudes(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &x) in xs.iter().enumerate() {
                // reduce the phase index first to keep the angle small
                let ang = 2.0 * core::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                re += x * math::cos(ang);
                im -= x * math::sin(ang);
            }
            math::sqrt(re * re + im * im)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSpectrum {
    pub length: f64,
    pub harmonic_mean: f64,
    pub std: f64,
    pub kurtosis: f64,
    pub entropy: f64,
    pub fundamental: f64,
    pub second_harmonic: f64,
    pub third_harmonic: f64,
    pub thd: f64,
}

/// Harmonic mean of magnitudes; zero when any value is zero.
fn harmonic_mean(xs: &[f64]) -> f64 {
    if xs.iter().any(|&x| math::abs(x) < 1e-12) {
        return 0.0;
    }
    xs.len() as f64 / xs.iter().map(|&x| 1.0 / math::abs(x)).sum::<f64>()
}

fn histogram_entropy(xs: &[f64]) -> f64 {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return 0.0;
    }
    let mut counts = [0usize; ENTROPY_BINS];
    for &x in xs {
        let b = (((x - lo) / (hi - lo)) * ENTROPY_BINS as f64) as usize;
        counts[b.min(ENTROPY_BINS - 1)] += 1;
    }
    let n = xs.len() as f64;
    counts.iter().filter(|&&c| c > 0).map(|&c| -(c as f64 / n) * math::ln(c as f64 / n)).sum()
}

pub fn channel_spectrum(xs: &[f64]) -> Result<ChannelSpectrum> {
    if xs.len() < 4 {
        return Err(Error::InvalidParameter(alloc::format!("spectral features need at least 4 samples, got {}", xs.len())));
    }
    crate::error::ensure_finite(xs, "runtime channel")?;
    let n = xs.len() as f64;
    let mean = math::mean(xs);
    let m2 = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| math::powf(x - mean, 4.0)).sum::<f64>() / n;
    let mut s = ChannelSpectrum {
        length: n,
        harmonic_mean: harmonic_mean(xs),
        std: math::sqrt(m2),
        kurtosis: 0.0,
        entropy: 0.0,
        fundamental: 0.0,
        second_harmonic: 0.0,
        third_harmonic: 0.0,
        thd: 0.0,
    };
    if m2 == 0.0 {
        return Ok(s);
    }
    s.kurtosis = m4 / (m2 * m2);
    s.entropy = histogram_entropy(xs);
    let mag = dft_magnitudes(xs);
    let f = (1..mag.len()).fold(1, |best, k| if mag[k] > mag[best] { k } else { best });
    let at = |h: usize| mag.get(h * f).copied().unwrap_or(0.0);
    s.fundamental = mag[f] / n;
    s.second_harmonic = at(2) / n;
    s.third_harmonic = at(3) / n;
    if mag[f] > 0.0 {
        s.thd = math::sqrt((2..=5).map(|h| at(h) * at(h)).sum::<f64>()) / mag[f];
    }
    Ok(s)
}

/// Length, harmonic mean, standard deviation, kurtosis, entropy, second and
/// third harmonic and total harmonic distortion of every channel, followed by
/// the trace length.
pub fn extract_spectral_features(trace: &RuntimeTrace) -> Result<Vec<f64>> {
    let mut out = vec![0.0; SPECTRAL_DIM];
    for c in 0..RUNTIME_CHANNELS {
        let s = channel_spectrum(&trace.channel(c))?;
        let block = [s.length, s.harmonic_mean, s.std, s.kurtosis, s.entropy, s.second_harmonic, s.third_harmonic, s.thd];
        out[c * SPECTRAL_PER_CHANNEL..(c + 1) * SPECTRAL_PER_CHANNEL].copy_from_slice(&block);
    }
    out[SPECTRAL_DIM - 1] = trace.len() as f64;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_tone_has_no_harmonics() {
        let xs: Vec<f64> = (0..128).map(|t| (2.0 * core::f64::consts::PI * t as f64 / 32.0).sin()).collect();
        let s = channel_spectrum(&xs).unwrap();
        assert!(s.fundamental > 0.4);
        assert!(s.second_harmonic < 0.01 * s.fundamental);
        assert!(s.third_harmonic < 0.01 * s.fundamental);
        assert!(s.thd < 0.01);
    }

    #[test]
    fn square_wave_third_harmonic() {
        // odd harmonics of a square wave decay as 1/h
        let xs: Vec<f64> = (0..128).map(|t| if (t / 16) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let s = channel_spectrum(&xs).unwrap();
        let ratio = s.third_harmonic / s.fundamental;
        assert!((ratio - 1.0 / 3.0).abs() < 0.02, "{ratio}");
        assert!(s.second_harmonic < 1e-9);
    }

    #[test]
    fn constant_channel() {
        let s = channel_spectrum(&[3.0; 20]).unwrap();
        assert_eq!(s.std, 0.0);
        assert_eq!(s.entropy, 0.0);
        assert_eq!((s.second_harmonic, s.third_harmonic, s.thd), (0.0, 0.0, 0.0));
        assert_eq!(channel_spectrum(&[1.0; 8]).unwrap().harmonic_mean, 1.0);
    }

    #[test]
    fn harmonic_mean_oracle() {
        let s = channel_spectrum(&[1.0, 2.0, 4.0, 4.0]).unwrap();
        assert!((s.harmonic_mean - 4.0 / (1.0 + 0.5 + 0.25 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn uniform_histogram_entropy() {
        let xs: Vec<f64> = (0..160).map(|i| (i / 10) as f64).collect();
        let s = channel_spectrum(&xs).unwrap();
        assert!((s.entropy - (16.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn layout_and_short_traces() {
        let rows: Vec<[f64; 6]> = (0..36).map(|t| [t as f64, 1.0, 2.0, 3.0, 4.0, 5.0 + (t % 3) as f64]).collect();
        let f = extract_spectral_features(&RuntimeTrace { rows, sampling_period: 10.0 }).unwrap();
        assert_eq!(f.len(), 49);
        assert_eq!(f[48], 36.0);
        assert_eq!(f[0], 36.0);
        let short = RuntimeTrace { rows: alloc::vec![[1.0; 6]; 3], sampling_period: 10.0 };
        assert!(extract_spectral_features(&short).is_err());
    }
}
