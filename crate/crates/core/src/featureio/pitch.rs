//! Autocorrelation pitch tracker, framed like the spectrogram so contours align frame-for-frame.

use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::mel::MelConfig;
use super::{PitchContour, Waveform};

/// Anything that turns a waveform into one f0 value per spectrogram frame (0 = unvoiced).
pub trait PitchTracker {
    fn track(&self, wave: &Waveform, frames: &MelConfig) -> PitchContour;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutocorrelationTracker {
    pub min_hz: f64,
    pub max_hz: f64,
    /// Frames quieter than this RMS level (dB re full scale) are unvoiced.
    pub energy_floor_db: f64,
    /// Minimum normalised autocorrelation peak for a voiced decision.
    pub clarity: f64,
    /// Prefer the shortest lag whose correlation is within this fraction of the best.
    pub octave_tolerance: f64,
}

impl Default for AutocorrelationTracker {
    fn default() -> Self {
        Self { min_hz: 50.0, max_hz: 600.0, energy_floor_db: -50.0, clarity: 0.6, octave_tolerance: 0.95 }
    }
}

impl AutocorrelationTracker {
    /// f0 of one analysis window, or 0 when unvoiced.
    pub fn frame_f0(&self, x: &[f64], sample_rate: f64) -> f64 {
        let n = x.len();
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let rms_db = 10.0 * Float::log10((energy / n as f64).max(1e-20));
        if rms_db < self.energy_floor_db {
            return 0.0;
        }
        let min_lag = Float::floor(sample_rate / self.max_hz).max(2.0) as usize;
        let max_lag = (Float::ceil(sample_rate / self.min_hz) as usize).min(n / 2);
        if min_lag + 2 >= max_lag {
            return 0.0;
        }
        // Normalised autocorrelation on lags [min_lag - 1, max_lag + 1] for interpolation.
        let lo = min_lag - 1;
        let hi = max_lag + 1;
        let mut r = Vec::with_capacity(hi - lo + 1);
        for lag in lo..=hi {
            let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
            for i in 0..n - lag {
                let (a, b) = (x[i], x[i + lag]);
                xy += a * b;
                xx += a * a;
                yy += b * b;
            }
            let den = Float::sqrt(xx * yy);
            r.push(if den > 0.0 { xy / den } else { 0.0 });
        }
        let at = |lag: usize| r[lag - lo];
        let peaks: Vec<usize> = (min_lag..=max_lag).filter(|&l| at(l) >= at(l - 1) && at(l) >= at(l + 1)).collect();
        let best = peaks.iter().map(|&l| at(l)).fold(f64::NEG_INFINITY, f64::max);
        if !(best >= self.clarity) {
            return 0.0;
        }
        let lag = match peaks.iter().copied().find(|&l| at(l) >= self.octave_tolerance * best) {
            Some(l) => l,
            None => return 0.0,
        };
        let (a, b, c) = (at(lag - 1), at(lag), at(lag + 1));
        let den = a - 2.0 * b + c;
        let shift = if den.abs() > 1e-12 { (0.5 * (a - c) / den).clamp(-0.5, 0.5) } else { 0.0 };
        let f0 = sample_rate / (lag as f64 + shift);
        if f0 < self.min_hz || f0 > self.max_hz {
            0.0
        } else {
            f0
        }
    }
}

impl PitchTracker for AutocorrelationTracker {
    fn track(&self, wave: &Waveform, cfg: &MelConfig) -> PitchContour {
        let frames = cfg.frame_count(wave.samples().len());
        let sr = f64::from(wave.sample_rate());
        let mut buf = alloc::vec![0.0; cfg.frame_len];
        let f0 = (0..frames)
            .map(|t| {
                let start = t * cfg.hop;
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = f64::from(wave.samples()[start + i]);
                }
                self.frame_f0(&buf, sr) as f32
            })
            .collect();
        PitchContour::new_unchecked(f0)
    }
}
