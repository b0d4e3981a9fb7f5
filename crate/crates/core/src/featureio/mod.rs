//! Waveforms to model inputs: log-mel spectrograms and per-speaker normalised, quantized
//! pitch contours.

mod audio;
mod fft;
mod mel;
mod pitch;

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

pub use audio::{resample_audio, resampled_len};
pub use fft::Fft;
pub use mel::{hz_to_mel, mel_filterbank, mel_spectrogram_with, mel_to_hz, MelConfig};
pub use pitch::{AutocorrelationTracker, PitchTracker};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Scalar};

pub const SAMPLE_RATE: u32 = 16_000;
pub const N_MELS: usize = 80;
/// 256 pitch bins plus one unvoiced bin.
pub const PITCH_BINS: usize = 257;
pub const UNVOICED_BIN: u16 = 256;
pub const MIN_F0: f32 = 50.0;
pub const MAX_F0: f32 = 600.0;

/// Mono audio at 16 kHz.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::SampleRate(sample_rate));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFiniteSample(i));
        }
        Ok(Self { samples, sample_rate })
    }

    /// Accept PCM at any rate, converting to 16 kHz.
    pub fn from_pcm(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyAudio);
        }
        if sample_rate == 0 {
            return Err(Error::SampleRate(0));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFiniteSample(i));
        }
        let samples = resample_audio(&samples, sample_rate, SAMPLE_RATE);
        Self::new(samples, SAMPLE_RATE)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
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
}

/// `T × 80` log-mel frames, every entry in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    frames: Matrix<f32>,
}

impl MelSpectrogram {
    pub fn new(frames: Matrix<f32>) -> Result<Self> {
        if frames.cols() != N_MELS {
            return Err(Error::Shape(alloc::format!("spectrogram must have {N_MELS} bins, got {}", frames.cols())));
        }
        if frames.rows() == 0 {
            return Err(Error::Shape("spectrogram has no frames".into()));
        }
        if frames.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Invalid("spectrogram entries must lie in [0, 1]".into()));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &Matrix<f32> {
        &self.frames
    }

    pub fn into_matrix(self) -> Matrix<f32> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }
}

/// Frame-wise f0 in Hz; 0 marks an unvoiced frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PitchContour {
    f0: Vec<f32>,
}

impl PitchContour {
    /// Values must be 0 or within 50–600 Hz.
    pub fn new(f0: Vec<f32>) -> Result<Self> {
        if let Some(i) = f0.iter().position(|&v| !(v == 0.0 || (MIN_F0..=MAX_F0).contains(&v))) {
            return Err(Error::Invalid(alloc::format!("f0[{i}] = {} is neither 0 nor within 50-600 Hz", f0[i])));
        }
        Ok(Self { f0 })
    }

    pub(crate) fn new_unchecked(f0: Vec<f32>) -> Self {
        Self { f0 }
    }

    pub fn values(&self) -> &[f32] {
        &self.f0
    }

    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn is_voiced(&self, t: usize) -> bool {
        self.f0[t] > 0.0
    }

    pub fn voiced(&self) -> impl Iterator<Item = f32> + '_ {
        self.f0.iter().copied().filter(|&v| v > 0.0)
    }
}

/// Per-speaker f0 statistics over voiced frames (population standard deviation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerStats {
    pub speaker_id: String,
    pub mean_f0: f64,
    pub std_f0: f64,
}

impl SpeakerStats {
    pub fn new(speaker_id: impl Into<String>, mean_f0: f64, std_f0: f64) -> Result<Self> {
        if !(std_f0 > 0.0 && std_f0.is_finite() && mean_f0.is_finite()) {
            return Err(Error::ZeroVariance);
        }
        Ok(Self { speaker_id: speaker_id.into(), mean_f0, std_f0 })
    }

    /// `(v − mean) / (4·std) + 0.5`, unclipped.
    pub fn normalize(&self, hz: f64) -> f64 {
        (hz - self.mean_f0) / (4.0 * self.std_f0) + 0.5
    }

    pub fn denormalize(&self, n: f64) -> f64 {
        (n - 0.5) * 4.0 * self.std_f0 + self.mean_f0
    }
}

/// Quantized contour stored as bin indices; index 256 is unvoiced. Viewed as a `T × 257`
/// one-hot matrix by the network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedPitch {
    bins: Vec<u16>,
}

impl QuantizedPitch {
    pub fn from_bins(bins: Vec<u16>) -> Result<Self> {
        if let Some(i) = bins.iter().position(|&b| b > UNVOICED_BIN) {
            return Err(Error::Invalid(alloc::format!("pitch bin {} at frame {i} exceeds 256", bins[i])));
        }
        Ok(Self { bins })
    }

    /// Validate a one-hot matrix: every row holds a single 1 and zeros elsewhere.
    pub fn from_onehot<S: Scalar>(m: &Matrix<S>) -> Result<Self> {
        if m.cols() != PITCH_BINS {
            return Err(Error::Shape(alloc::format!("pitch matrix must have {PITCH_BINS} columns")));
        }
        let mut bins = Vec::with_capacity(m.rows());
        for (t, row) in m.row_iter().enumerate() {
            let ones: Vec<usize> = row.iter().enumerate().filter(|(_, &v)| v == S::one()).map(|(i, _)| i).collect();
            let zeros = row.iter().filter(|&&v| v == S::zero()).count();
            if ones.len() != 1 || zeros != PITCH_BINS - 1 {
                return Err(Error::Invalid(alloc::format!("pitch row {t} is not one-hot")));
            }
            bins.push(ones[0] as u16);
        }
        Ok(Self { bins })
    }

    /// Argmax of each row of a logit (or probability) matrix.
    pub fn from_logits<S: Scalar>(m: &Matrix<S>) -> Result<Self> {
        if m.cols() != PITCH_BINS {
            return Err(Error::Shape(alloc::format!("logit matrix must have {PITCH_BINS} columns")));
        }
        let bins = m
            .row_iter()
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best as u16
            })
            .collect();
        Ok(Self { bins })
    }

    pub fn unvoiced(len: usize) -> Self {
        Self { bins: alloc::vec![UNVOICED_BIN; len] }
    }

    pub fn bins(&self) -> &[u16] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn is_voiced(&self, t: usize) -> bool {
        self.bins[t] != UNVOICED_BIN
    }

    pub fn to_matrix<S: Scalar>(&self) -> Matrix<S> {
        let mut m = Matrix::zeros(self.bins.len(), PITCH_BINS);
        for (t, &b) in self.bins.iter().enumerate() {
            m.set(t, b as usize, S::one());
        }
        m
    }

    /// Hz at each bin centre, 0 for unvoiced frames.
    pub fn dequantize(&self, stats: &SpeakerStats) -> PitchContour {
        let f0 = self
            .bins
            .iter()
            .map(|&b| {
                if b == UNVOICED_BIN {
                    0.0
                } else {
                    let n = (f64::from(b) + 0.5) / 256.0;
                    stats.denormalize(n).clamp(f64::from(MIN_F0), f64::from(MAX_F0)) as f32
                }
            })
            .collect();
        PitchContour::new_unchecked(f0)
    }
}

/// Bin of a normalised pitch value: clip to `[0, 1]`, then `min(floor(n·256), 255)`.
pub fn quantize_normalized(n: f64) -> u16 {
    let n = n.clamp(0.0, 1.0);
    (Float::floor(n * 256.0) as u16).min(255)
}

pub fn mel_spectrogram(wave: &Waveform) -> Result<MelSpectrogram> {
    mel_spectrogram_with(wave, &MelConfig::default())
}

/// f0 per spectrogram frame with the default autocorrelation tracker.
pub fn extract_pitch(wave: &Waveform) -> PitchContour {
    AutocorrelationTracker::default().track(wave, &MelConfig::default())
}

/// Mean and population standard deviation over all voiced frames.
pub fn compute_speaker_stats(speaker_id: &str, contours: &[PitchContour]) -> Result<SpeakerStats> {
    let (mut n, mut sum) = (0usize, 0.0f64);
    for c in contours {
        for v in c.voiced() {
            n += 1;
            sum += f64::from(v);
        }
    }
    if n == 0 {
        return Err(Error::NoVoicedFrames);
    }
    let mean = sum / n as f64;
    let var = contours
        .iter()
        .flat_map(|c| c.voiced())
        .map(|v| {
            let d = f64::from(v) - mean;
            d * d
        })
        .sum::<f64>()
        / n as f64;
    let std = Float::sqrt(var);
    if std <= 1e-9 * mean.abs().max(1.0) {
        return Err(Error::ZeroVariance);
    }
    SpeakerStats::new(speaker_id, mean, std)
}

pub fn normalize_and_quantize(contour: &PitchContour, stats: &SpeakerStats) -> QuantizedPitch {
    let bins = contour
        .values()
        .iter()
        .map(|&v| if v > 0.0 { quantize_normalized(stats.normalize(f64::from(v))) } else { UNVOICED_BIN })
        .collect();
    QuantizedPitch { bins }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::PI;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng};

    fn tone(hz: f64, seconds: f64, amp: f64) -> Waveform {
        let n = (seconds * 16_000.0) as usize;
        let s = (0..n).map(|i| (amp * (2.0 * PI * hz * i as f64 / 16_000.0).sin()) as f32).collect();
        Waveform::new(s, 16_000).unwrap()
    }

    #[test]
    fn frame_count_law() {
        let cfg = MelConfig::default();
        assert_eq!(cfg.frame_count(16_000), 59);
        assert_eq!(cfg.frame_count(1024), 1);
        assert_eq!(cfg.frame_count(1023), 0);
        let m = mel_spectrogram(&tone(440.0, 1.0, 0.5)).unwrap();
        assert_eq!(m.frames().shape(), (59, 80));
        let one = Waveform::new(vec![0.1; 1024], 16_000).unwrap();
        assert_eq!(mel_spectrogram(&one).unwrap().len(), 1);
    }

    #[test]
    fn short_wave_is_rejected() {
        let w = Waveform::new(vec![0.0; 1000], 16_000).unwrap();
        assert_eq!(mel_spectrogram(&w), Err(Error::TooShort { samples: 1000, needed: 1024 }));
    }

    #[test]
    fn silence_sits_at_the_floor() {
        let w = Waveform::new(vec![0.0; 4000], 16_000).unwrap();
        let m = mel_spectrogram(&w).unwrap();
        assert!(m.frames().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mel_is_deterministic_and_peaks_at_the_tone() {
        let w = tone(1000.0, 0.5, 0.5);
        let a = mel_spectrogram(&w).unwrap();
        let b = mel_spectrogram(&w).unwrap();
        assert_eq!(a, b);
        let row = a.frames().row(10);
        let peak = (0..80).max_by(|&i, &j| row[i].partial_cmp(&row[j]).unwrap()).unwrap();
        let expect = MelConfig::default().bin_of_hz(1000.0);
        assert!((peak as f64 - expect).abs() <= 1.0, "peak {peak} vs {expect}");
    }

    #[test]
    fn rate_conversion_lengths() {
        let n48 = vec![0.0f32; 48_000];
        assert_eq!(Waveform::from_pcm(n48, 48_000).unwrap().len(), 16_000);
        let n16 = vec![0.0f32; 16_000];
        assert_eq!(Waveform::from_pcm(n16, 16_000).unwrap().len(), 16_000);
        assert_eq!(Waveform::from_pcm(vec![], 16_000), Err(Error::EmptyAudio));
        assert_eq!(Waveform::new(vec![0.0], 8_000), Err(Error::SampleRate(8_000)));
    }

    #[test]
    fn resampled_tone_keeps_its_pitch() {
        let n = 48_000;
        let s: Vec<f32> = (0..n).map(|i| (0.5 * (2.0 * PI * 220.0 * i as f64 / 48_000.0).sin()) as f32).collect();
        let w = Waveform::from_pcm(s, 48_000).unwrap();
        let c = extract_pitch(&w);
        let voiced: Vec<f32> = c.voiced().collect();
        assert!(voiced.len() > 50);
        assert!(voiced.iter().all(|&v| (v - 220.0).abs() < 220.0 * 0.03));
    }

    #[test]
    fn tracker_on_pure_tone() {
        let c = extract_pitch(&tone(200.0, 1.0, 0.5));
        assert_eq!(c.len(), 59);
        let voiced: Vec<f32> = c.voiced().collect();
        assert!(voiced.len() >= 55);
        for v in voiced {
            assert!((v - 200.0).abs() <= 6.0, "{v}");
        }
    }

    #[test]
    fn tracker_on_white_noise_is_mostly_unvoiced() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let s: Vec<f32> = (0..16_000).map(|_| rng.gen_range(-0.5f32..0.5)).collect();
        let c = extract_pitch(&Waveform::new(s, 16_000).unwrap());
        let unvoiced = c.values().iter().filter(|&&v| v == 0.0).count();
        assert!(unvoiced as f64 >= 0.9 * c.len() as f64, "{unvoiced}/{}", c.len());
    }

    #[test]
    fn tracker_on_silence() {
        let c = extract_pitch(&Waveform::new(vec![0.0; 16_000], 16_000).unwrap());
        assert!(c.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stats_use_voiced_frames_with_population_std() {
        let c = PitchContour::new(vec![100.0, 200.0]).unwrap();
        let s = compute_speaker_stats("a", &[c]).unwrap();
        assert_eq!((s.mean_f0, s.std_f0), (150.0, 50.0));
        let gaps = PitchContour::new(vec![0.0, 100.0, 0.0, 0.0, 200.0, 0.0]).unwrap();
        assert_eq!(compute_speaker_stats("a", &[gaps]).unwrap(), s);
    }

    #[test]
    fn degenerate_stats_are_errors() {
        let flat = PitchContour::new(vec![150.0; 10]).unwrap();
        assert_eq!(compute_speaker_stats("a", &[flat]), Err(Error::ZeroVariance));
        let silent = PitchContour::new(vec![0.0; 10]).unwrap();
        assert_eq!(compute_speaker_stats("a", &[silent]), Err(Error::NoVoicedFrames));
    }

    #[test]
    fn quantization_landmarks() {
        let stats = SpeakerStats::new("a", 150.0, 20.0).unwrap();
        let c = PitchContour::new(vec![150.0, 0.0, 350.0, 60.0]).unwrap();
        let q = normalize_and_quantize(&c, &stats);
        assert_eq!(q.bins(), &[128, 256, 255, 0]);
        let m = q.to_matrix::<f32>();
        assert_eq!(m.get(1, 256), 1.0);
        assert!(m.row_iter().all(|r| r.iter().sum::<f32>() == 1.0));
    }

    #[test]
    fn onehot_validation() {
        let q = QuantizedPitch::from_bins(vec![3, 256, 128]).unwrap();
        assert_eq!(QuantizedPitch::from_onehot(&q.to_matrix::<f32>()).unwrap(), q);
        let mut bad = q.to_matrix::<f32>();
        bad.set(0, 4, 1.0);
        assert!(QuantizedPitch::from_onehot(&bad).is_err());
        assert!(QuantizedPitch::from_onehot(&Matrix::<f32>::zeros(2, 257)).is_err());
        assert!(QuantizedPitch::from_bins(vec![257]).is_err());
    }

    proptest! {
        #[test]
        fn quantization_is_monotone(a in 50.0f32..600.0, b in 50.0f32..600.0, mean in 80.0f64..300.0, std in 5.0f64..80.0) {
            let stats = SpeakerStats::new("p", mean, std).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let q = normalize_and_quantize(&PitchContour::new(vec![lo, hi]).unwrap(), &stats);
            prop_assert!(q.bins()[0] <= q.bins()[1]);
            prop_assert!(q.bins().iter().all(|&x| x < 256));
        }

        #[test]
        fn dequantization_is_within_half_a_bin(v in 60.0f32..590.0, mean in 100.0f64..300.0, std in 10.0f64..60.0) {
            let stats = SpeakerStats::new("p", mean, std).unwrap();
            let n = stats.normalize(f64::from(v));
            prop_assume!(n > 0.0 && n < 1.0);
            let q = normalize_and_quantize(&PitchContour::new(vec![v]).unwrap(), &stats);
            let back = q.dequantize(&stats).values()[0];
            let half_bin = 4.0 * std / 256.0 / 2.0;
            prop_assert!((f64::from(back) - f64::from(v)).abs() <= half_bin + 1e-3);
        }

        #[test]
        fn quantized_rows_are_one_hot(f0 in proptest::collection::vec(prop_oneof![Just(0.0f32), 50.0f32..600.0], 1..40)) {
            let stats = SpeakerStats::new("p", 180.0, 40.0).unwrap();
            let contour = PitchContour::new(f0.clone()).unwrap();
            let q = normalize_and_quantize(&contour, &stats);
            let m = q.to_matrix::<f32>();
            for (t, row) in m.row_iter().enumerate() {
                prop_assert_eq!(row.iter().sum::<f32>(), 1.0);
                prop_assert_eq!(row[256] == 1.0, f0[t] == 0.0);
            }
        }
    }
}
