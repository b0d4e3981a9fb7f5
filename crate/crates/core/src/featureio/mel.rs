use alloc::vec::Vec;
use core::f64::consts::PI;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::fft::Fft;
use super::{MelSpectrogram, Waveform};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Analysis settings. Frame length 1024 and hop 256 are 64 ms and 16 ms at 16 kHz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Log-magnitude floor (maps to 0).
    pub floor_db: f64,
    /// Log-magnitude ceiling (maps to 1).
    pub ceiling_db: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_len: 1024,
            hop: 256,
            n_mels: 80,
            f_min: 90.0,
            f_max: 7600.0,
            floor_db: -100.0,
            ceiling_db: 0.0,
        }
    }
}

impl MelConfig {
    /// Frames produced for `samples` samples (no centre padding).
    pub fn frame_count(&self, samples: usize) -> usize {
        if samples < self.frame_len {
            0
        } else {
            (samples - self.frame_len) / self.hop + 1
        }
    }

    /// Fractional mel-bin position of a frequency: filter `i` peaks at position `i`.
    pub fn bin_of_hz(&self, hz: f64) -> f64 {
        let (lo, hi) = (hz_to_mel(self.f_min), hz_to_mel(self.f_max));
        let step = (hi - lo) / (self.n_mels + 1) as f64;
        (hz_to_mel(hz) - lo) / step - 1.0
    }

    /// Inverse of [`Self::bin_of_hz`].
    pub fn hz_of_bin(&self, bin: f64) -> f64 {
        let (lo, hi) = (hz_to_mel(self.f_min), hz_to_mel(self.f_max));
        let step = (hi - lo) / (self.n_mels + 1) as f64;
        mel_to_hz(lo + (bin + 1.0) * step)
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * Float::log10(1.0 + hz / 700.0)
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (Float::powf(10.0, mel / 2595.0) - 1.0)
}

/// Triangular filters (unit peak) over the `frame_len/2 + 1` FFT bins; `n_mels` rows.
pub fn mel_filterbank(cfg: &MelConfig) -> Vec<Vec<f64>> {
    let n_fft_bins = cfg.frame_len / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.frame_len as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_fft_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= l || f >= r {
                        0.0
                    } else if f <= c {
                        (f - l) / (c - l)
                    } else {
                        (r - f) / (r - c)
                    }
                })
                .collect()
        })
        .collect()
}

pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * Float::cos(2.0 * PI * i as f64 / n as f64)).collect()
}

/// Log-mel spectrogram normalised to `[0, 1]` between the configured floor and ceiling.
/// Magnitudes are scaled so a full-scale sinusoid reads 0 dB.
pub fn mel_spectrogram_with(wave: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram> {
    let n = wave.samples().len();
    let frames = cfg.frame_count(n);
    if frames == 0 {
        return Err(Error::TooShort { samples: n, needed: cfg.frame_len });
    }
    let fft = Fft::new(cfg.frame_len);
    let window = hann(cfg.frame_len);
    let gain = 2.0 / window.iter().sum::<f64>();
    let bank = mel_filterbank(cfg);
    let mut buf = alloc::vec![0.0; cfg.frame_len];
    let mut mag = alloc::vec![0.0; cfg.frame_len / 2 + 1];
    let range = cfg.ceiling_db - cfg.floor_db;
    let floor_amp = Float::powf(10.0, cfg.floor_db / 20.0);
    let mut out = Matrix::zeros(frames, cfg.n_mels);
    for t in 0..frames {
        let start = t * cfg.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = f64::from(wave.samples()[start + i]) * window[i];
        }
        fft.magnitude(&buf, &mut mag);
        for (m, filt) in bank.iter().enumerate() {
            let e: f64 = filt.iter().zip(&mag).map(|(w, a)| w * a).sum::<f64>() * gain;
            let db = 20.0 * Float::log10(e.max(floor_amp));
            let v = ((db - cfg.floor_db) / range).clamp(0.0, 1.0);
            out.set(t, m, v as f32);
        }
    }
    MelSpectrogram::new(out)
}
