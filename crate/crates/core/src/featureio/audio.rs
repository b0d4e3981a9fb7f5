//! Band-limited sample-rate conversion (windowed sinc).

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_traits::Float;

const HALF_TAPS: f64 = 16.0;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        Float::sin(PI * x) / (PI * x)
    }
}

/// Output length for converting `n` samples from `from` Hz to `to` Hz.
pub fn resampled_len(n: usize, from: u32, to: u32) -> usize {
    ((n as u64 * u64::from(to) + u64::from(from) / 2) / u64::from(from)) as usize
}

/// Resample with a Blackman-windowed sinc kernel; the cutoff sits just below the lower
/// of the two Nyquist frequencies.
pub fn resample_audio(x: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to {
        return x.to_vec();
    }
    let ratio = f64::from(to) / f64::from(from);
    let cutoff = 0.95 * ratio.min(1.0);
    let half = HALF_TAPS / cutoff;
    let out_len = resampled_len(x.len(), from, to);
    (0..out_len)
        .map(|i| {
            let t = i as f64 / ratio;
            let lo = Float::ceil(t - half).max(0.0) as usize;
            let hi = (Float::floor(t + half) as usize).min(x.len().saturating_sub(1));
            let mut acc = 0.0;
            for (j, &v) in x.iter().enumerate().take(hi + 1).skip(lo) {
                let d = t - j as f64;
                let w = 0.42 + 0.5 * Float::cos(PI * d / half) + 0.08 * Float::cos(2.0 * PI * d / half);
                acc += f64::from(v) * cutoff * sinc(cutoff * d) * w;
            }
            acc as f32
        })
        .collect()
}
