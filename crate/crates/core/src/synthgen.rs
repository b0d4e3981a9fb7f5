//! Synthetic corpus with observable content, rhythm, pitch and speaker factors.
//!
//! Spectrograms are drawn directly in the normalised log-mel domain. A syllable is a
//! static spectral template (three Gaussian formant bumps) followed by a two-frame
//! low-energy gap. The speaker shifts the bumps by a fixed number of bins and tilts their
//! amplitudes; the pitch target sets a constant f0 inside the speaker's range, drawn as
//! harmonic ridges in the low bins. The quantized contour is computed from the
//! speaker-normalised target, so it carries no speaker information.

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featureio::{quantize_normalized, MelConfig, MelSpectrogram, QuantizedPitch, N_MELS, UNVOICED_BIN};
use crate::resample::{draw_plan, identity_plan, ResampleLaw, ResamplePlan};
use crate::rng::{derive_indexed, indexed_rng, Rng};
use crate::tensor::Matrix;
use crate::trainer::{Dataset, Utterance};

pub const N_SYMBOLS: usize = 10;
pub const MIN_DURATION: usize = 10;
pub const MAX_DURATION: usize = 40;
pub const MIN_TARGET: f64 = 0.2;
pub const MAX_TARGET: f64 = 0.8;
/// Trailing low-energy frames inside every syllable's duration.
pub const GAP_FRAMES: usize = 2;
pub const MIN_SYLLABLES: usize = 6;
pub const MAX_SYLLABLES: usize = 9;
/// Speaker bump offsets are multiples of this many bins.
pub const OFFSET_STEP: f64 = 2.0;
/// Bins carrying formant structure; pitch ridges live below.
pub const ENVELOPE_BINS: core::ops::Range<usize> = 21..80;
pub const PITCH_REGION: core::ops::Range<usize> = 0..21;

const BACKGROUND: f64 = 0.05;
const BUMP_AMP: f64 = 0.5;
const BUMP_WIDTH: f64 = 1.5;
const RIDGE_AMP: f64 = 0.35;
const RIDGE_WIDTH: f64 = 0.8;
pub const HARMONICS: usize = 2;

/// Formant bump centres (bins) of the ten content symbols.
const TEMPLATES: [[f64; 3]; N_SYMBOLS] = [
    [32.0, 44.0, 58.0],
    [34.0, 50.0, 66.0],
    [36.0, 46.0, 62.0],
    [30.0, 52.0, 60.0],
    [38.0, 48.0, 70.0],
    [33.0, 42.0, 54.0],
    [40.0, 56.0, 68.0],
    [31.0, 47.0, 64.0],
    [35.0, 55.0, 63.0],
    [37.0, 45.0, 67.0],
];

/// Standard deviation of the uniform pitch-target law.
fn target_std() -> f64 {
    (MAX_TARGET - MIN_TARGET) / Float::sqrt(12.0_f64)
}

/// Normalised pitch value of a target: the target's z-score under the uniform law, mapped
/// as `z/4 + 0.5`. Identical for every speaker.
pub fn normalized_target(tau: f64) -> f64 {
    (tau - 0.5) / (4.0 * target_std()) + 0.5
}

pub fn target_bin(tau: f64) -> u16 {
    quantize_normalized(normalized_target(tau))
}

/// Voice characteristics of one synthetic speaker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpeaker {
    pub id: String,
    /// Formant shift in bins.
    pub offset: f64,
    /// Relative amplitude slope across the envelope bins.
    pub tilt: f64,
    pub f0_lo: f64,
    pub f0_hi: f64,
}

impl SynthSpeaker {
    pub fn f0_of(&self, tau: f64) -> f64 {
        self.f0_lo + tau * (self.f0_hi - self.f0_lo)
    }

    /// Population f0 mean and standard deviation implied by the uniform target law.
    pub fn f0_stats(&self) -> (f64, f64) {
        let span = self.f0_hi - self.f0_lo;
        (self.f0_of(0.5), span * target_std())
    }
}

/// The fixed set of speakers of a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerBank {
    pub speakers: Vec<SynthSpeaker>,
}

impl SpeakerBank {
    /// `n` speakers with offsets `2·(v − (n−1)/2)` bins, alternating tilts and f0 floors
    /// spread over 110–170 Hz (ceiling twice the floor).
    pub fn new(n: usize) -> Self {
        let centre = (n as f64 - 1.0) / 2.0;
        let speakers = (0..n)
            .map(|v| {
                let lo = if n > 1 { 110.0 + 60.0 * v as f64 / (n - 1) as f64 } else { 140.0 };
                let tilt = 0.15 * if v % 2 == 0 { 1.0 } else { -1.0 } * (1.0 - 0.5 * (v % 3) as f64);
                SynthSpeaker {
                    id: alloc::format!("spk{v}"),
                    offset: OFFSET_STEP * (v as f64 - centre),
                    tilt,
                    f0_lo: lo,
                    f0_hi: 2.0 * lo,
                }
            })
            .collect();
        Self { speakers }
    }

    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    pub fn get(&self, v: usize) -> Result<&SynthSpeaker> {
        self.speakers.get(v).ok_or_else(|| Error::Invalid(alloc::format!("speaker {v} not in bank of {}", self.len())))
    }
}

/// Formant envelope of a symbol shifted by `offset` bins, without tilt or background.
pub fn template_envelope(symbol: usize, offset: f64) -> [f64; N_MELS] {
    let mut env = [0.0; N_MELS];
    for (b, e) in env.iter_mut().enumerate() {
        for &c in &TEMPLATES[symbol] {
            let d = b as f64 - (c + offset);
            *e += BUMP_AMP * Float::exp(-d * d / (2.0 * BUMP_WIDTH * BUMP_WIDTH));
        }
    }
    env
}

fn tilt_gain(tilt: f64, bin: usize) -> f64 {
    1.0 + tilt * (bin as f64 - 50.0) / 30.0
}

/// A voiced frame as rendered for `speaker` (background included, before clipping).
pub fn voiced_frame(symbol: usize, tau: f64, speaker: &SynthSpeaker) -> [f64; N_MELS] {
    let mel = MelConfig::default();
    let mut frame = template_envelope(symbol, speaker.offset);
    for (b, v) in frame.iter_mut().enumerate() {
        *v = BACKGROUND + tilt_gain(speaker.tilt, b) * *v;
    }
    let f0 = speaker.f0_of(tau);
    for k in 1..=HARMONICS {
        let centre = mel.bin_of_hz(k as f64 * f0);
        let amp = RIDGE_AMP / k as f64;
        for (b, v) in frame.iter_mut().enumerate().take(PITCH_REGION.end) {
            let d = b as f64 - centre;
            *v += amp * Float::exp(-d * d / (2.0 * RIDGE_WIDTH * RIDGE_WIDTH));
        }
    }
    frame
}

/// Ground-truth factors of one utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthFactors {
    pub content: Vec<u8>,
    /// Frames per syllable, gap included.
    pub durations: Vec<usize>,
    pub pitch_targets: Vec<f64>,
    pub speaker: usize,
}

impl SynthFactors {
    pub fn validate(&self, bank: &SpeakerBank) -> Result<()> {
        let n = self.content.len();
        if n == 0 || self.durations.len() != n || self.pitch_targets.len() != n {
            return Err(Error::Invalid("content, durations and pitch targets must be non-empty and equal in count".into()));
        }
        if let Some(&c) = self.content.iter().find(|&&c| c as usize >= N_SYMBOLS) {
            return Err(Error::Invalid(alloc::format!("content symbol {c} outside the alphabet")));
        }
        if let Some(&d) = self.durations.iter().find(|&&d| !(MIN_DURATION..=MAX_DURATION).contains(&d)) {
            return Err(Error::Invalid(alloc::format!("duration {d} outside [{MIN_DURATION}, {MAX_DURATION}]")));
        }
        if let Some(&t) = self.pitch_targets.iter().find(|&&t| !(MIN_TARGET..=MAX_TARGET).contains(&t)) {
            return Err(Error::Invalid(alloc::format!("pitch target {t} outside [0.2, 0.8]")));
        }
        bank.get(self.speaker)?;
        Ok(())
    }

    pub fn total_frames(&self) -> usize {
        self.durations.iter().sum()
    }

    /// First frame of each syllable.
    pub fn onsets(&self) -> Vec<usize> {
        self.durations
            .iter()
            .scan(0, |acc, &d| {
                let s = *acc;
                *acc += d;
                Some(s)
            })
            .collect()
    }

    /// Independent uniform draws of every factor except the given content.
    pub fn draw_with_content(content: Vec<u8>, speaker: usize, rng: &mut Rng) -> Self {
        let n = content.len();
        Self {
            durations: (0..n).map(|_| rng.gen_range(MIN_DURATION..=MAX_DURATION)).collect(),
            pitch_targets: (0..n).map(|_| rng.gen_range(MIN_TARGET..=MAX_TARGET)).collect(),
            content,
            speaker,
        }
    }

    pub fn draw(speaker: usize, rng: &mut Rng) -> Self {
        let n = rng.gen_range(MIN_SYLLABLES..=MAX_SYLLABLES);
        let content = (0..n).map(|_| rng.gen_range(0..N_SYMBOLS as u8)).collect();
        Self::draw_with_content(content, speaker, rng)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthUtterance {
    pub factors: SynthFactors,
    pub mel: MelSpectrogram,
    pub pitch: QuantizedPitch,
}

/// Render the spectrogram and quantized contour of `factors`.
pub fn generate(factors: &SynthFactors, bank: &SpeakerBank) -> Result<SynthUtterance> {
    factors.validate(bank)?;
    let speaker = bank.get(factors.speaker)?;
    let total = factors.total_frames();
    let mut mel = Matrix::filled(total, N_MELS, BACKGROUND as f32);
    let mut bins = Vec::with_capacity(total);
    let mut t = 0;
    for ((&sym, &dur), &tau) in factors.content.iter().zip(&factors.durations).zip(&factors.pitch_targets) {
        let frame = voiced_frame(sym as usize, tau, speaker);
        let bin = target_bin(tau);
        for i in 0..dur {
            if i < dur - GAP_FRAMES {
                for (dst, &v) in mel.row_mut(t).iter_mut().zip(&frame) {
                    *dst = v.clamp(0.0, 1.0) as f32;
                }
                bins.push(bin);
            } else {
                bins.push(UNVOICED_BIN);
            }
            t += 1;
        }
    }
    Ok(SynthUtterance { factors: factors.clone(), mel: MelSpectrogram::new(mel)?, pitch: QuantizedPitch::from_bins(bins)? })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusEntry {
    pub id: String,
    pub split: Split,
    pub utterance: SynthUtterance,
}

/// Two test utterances sharing content, spoken by different speakers with different
/// durations and pitch targets. Indices point into [`SynthCorpus::entries`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub source: usize,
    pub target: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub bank: SpeakerBank,
    pub entries: Vec<CorpusEntry>,
    pub pairs: Vec<ParallelPair>,
    pub seed: u64,
}

impl SynthCorpus {
    pub fn train(&self) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.iter().filter(|e| e.split == Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.iter().filter(|e| e.split == Split::Test)
    }

    pub fn find(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id)
    }

    pub fn to_utterance(entry: &CorpusEntry) -> Utterance {
        let u = &entry.utterance;
        Utterance { id: entry.id.clone(), mel: u.mel.frames().clone(), pitch: u.pitch.clone(), speaker: u.factors.speaker }
    }

    /// Training split as a trainer dataset.
    pub fn train_dataset(&self) -> Result<Dataset> {
        Dataset::new(self.train().map(Self::to_utterance).collect(), self.bank.len())
    }
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (a, b) = (x[i] - mx, y[i] - my);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        sxy / Float::sqrt(sxx * syy)
    }
}

fn as_f64(d: &[usize]) -> Vec<f64> {
    d.iter().map(|&v| v as f64).collect()
}

/// Draw a parallel pair's two factor sets: shared content; durations and pitch targets
/// redrawn until they are non-positively correlated between the two sides.
fn draw_pair(src_spk: usize, tgt_spk: usize, rng: &mut Rng) -> (SynthFactors, SynthFactors) {
    let n = rng.gen_range(MIN_SYLLABLES..=MAX_SYLLABLES);
    let content: Vec<u8> = (0..n).map(|_| rng.gen_range(0..N_SYMBOLS as u8)).collect();
    loop {
        let a = SynthFactors::draw_with_content(content.clone(), src_spk, rng);
        let b = SynthFactors::draw_with_content(content.clone(), tgt_spk, rng);
        let rc = pearson(&as_f64(&a.durations), &as_f64(&b.durations));
        let pc = pearson(&a.pitch_targets, &b.pitch_targets);
        if rc <= 0.0 && pc <= 0.0 {
            return (a, b);
        }
    }
}

/// Corpus of `n_speakers × n_utterances`: per speaker, the first three quarters are
/// training utterances; the rest form parallel test pairs across speakers.
pub fn sample_corpus(n_speakers: usize, n_utterances: usize, seed: u64) -> Result<SynthCorpus> {
    if n_speakers < 2 || n_utterances < 4 {
        return Err(Error::Invalid("need at least 2 speakers and 4 utterances per speaker".into()));
    }
    let bank = SpeakerBank::new(n_speakers);
    let n_test = n_utterances / 4;
    let n_train = n_utterances - n_test;
    let mut entries = Vec::with_capacity(n_speakers * n_utterances);
    let mut counters = alloc::vec![0usize; n_speakers];
    let mut push = |entries: &mut Vec<CorpusEntry>, f: SynthFactors, split: Split| -> Result<usize> {
        let v = f.speaker;
        let id = alloc::format!("{}_{:03}", bank.speakers[v].id, counters[v]);
        counters[v] += 1;
        entries.push(CorpusEntry { id, split, utterance: generate(&f, &bank)? });
        Ok(entries.len() - 1)
    };
    for v in 0..n_speakers {
        for j in 0..n_train {
            let mut rng = indexed_rng(derive_indexed(seed, "train", v as u64), "utt", j as u64);
            push(&mut entries, SynthFactors::draw(v, &mut rng), Split::Train)?;
        }
    }
    let n_pairs = n_speakers * n_test / 2;
    let mut pairs = Vec::with_capacity(n_pairs);
    for p in 0..n_pairs {
        let src = p % n_speakers;
        let mut tgt = (p + 1 + p / n_speakers) % n_speakers;
        if tgt == src {
            tgt = (tgt + 1) % n_speakers;
        }
        let mut rng = indexed_rng(seed, "pair", p as u64);
        let (a, b) = draw_pair(src, tgt, &mut rng);
        let source = push(&mut entries, a, Split::Test)?;
        let target = push(&mut entries, b, Split::Test)?;
        pairs.push(ParallelPair { source, target });
    }
    Ok(SynthCorpus { bank, entries, pairs, seed })
}

/// Index of the template whose envelope (shifted for `speaker`) best matches `spectrum`
/// over the envelope bins, by correlation.
pub fn classify_symbol(spectrum: &[f64], speaker: &SynthSpeaker) -> usize {
    let region = &spectrum[ENVELOPE_BINS];
    (0..N_SYMBOLS)
        .map(|s| {
            let env = template_envelope(s, speaker.offset);
            (s, pearson(region, &env[ENVELOPE_BINS]))
        })
        .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
        .0
}

/// Output frames of a resampled sequence whose source position falls in `[lo, hi)`.
fn warped_frames(plan: &ResamplePlan, lo: usize, hi: usize) -> Result<Vec<usize>> {
    let interp = plan.interpolation(plan.input_len())?;
    Ok((0..interp.output_len())
        .filter(|&j| {
            let s = interp.source_position(j);
            s >= lo as f64 - 0.5 && s < hi as f64 - 0.5
        })
        .collect())
}

/// Outcome of the three resampling-assumption checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnessReport {
    pub syllables: usize,
    /// Fraction of syllables whose symbol is recovered from the resampled spectrogram.
    pub content_recovery: f64,
    /// Fraction of syllables whose pitch bin is recovered (within one bin) from the
    /// resampled contour.
    pub pitch_recovery: f64,
    /// Fraction of syllables whose resampled duration deviates from the truth by > 10%.
    pub rhythm_perturbed: f64,
    pub content_pass: bool,
    pub pitch_pass: bool,
    pub rhythm_pass: bool,
}

impl HarnessReport {
    pub fn all_pass(&self) -> bool {
        self.content_pass && self.pitch_pass && self.rhythm_pass
    }
}

/// How the harness draws resampling plans.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HarnessPlans {
    Random(ResampleLaw),
    Identity,
}

/// Apply `draws` resampling plans per utterance (one plan shared by spectrogram and
/// contour) and measure how much of each factor survives.
pub fn assumption_harness(corpus: &SynthCorpus, plans: HarnessPlans, draws: usize, rng: &mut Rng) -> Result<HarnessReport> {
    let (mut total, mut content_ok, mut pitch_ok, mut perturbed) = (0usize, 0usize, 0usize, 0usize);
    for entry in &corpus.entries {
        let u = &entry.utterance;
        let f = &u.factors;
        let speaker = corpus.bank.get(f.speaker)?;
        let frames = u.mel.len();
        let mel64 = u.mel.frames().cast::<f64>();
        let pitch64 = u.pitch.to_matrix::<f64>();
        for _ in 0..draws {
            let plan = match plans {
                HarnessPlans::Random(law) => draw_plan(frames, &law, rng),
                HarnessPlans::Identity => identity_plan(frames),
            };
            let interp = plan.interpolation(frames)?;
            let s_rr = interp.apply(&mel64);
            let p_rr = interp.apply(&pitch64);
            for (i, &onset) in f.onsets().iter().enumerate() {
                let dur = f.durations[i];
                total += 1;
                let voiced = warped_frames(&plan, onset, onset + dur - GAP_FRAMES)?;
                let whole = warped_frames(&plan, onset, onset + dur)?;
                let warped = whole.len() as f64;
                if Float::abs(warped - dur as f64) > 0.1 * dur as f64 {
                    perturbed += 1;
                }
                if voiced.is_empty() {
                    continue;
                }
                let mut mean = [0.0; N_MELS];
                for &j in &voiced {
                    for (m, &v) in mean.iter_mut().zip(s_rr.row(j)) {
                        *m += v / voiced.len() as f64;
                    }
                }
                if classify_symbol(&mean, speaker) == f.content[i] as usize {
                    content_ok += 1;
                }
                let mut hist = alloc::vec![0.0; p_rr.cols()];
                for &j in &voiced {
                    for (h, &v) in hist.iter_mut().zip(p_rr.row(j)) {
                        *h += v;
                    }
                }
                let best = (0..hist.len()).fold(0, |b, k| if hist[k] > hist[b] { k } else { b });
                if (best as i64 - i64::from(target_bin(f.pitch_targets[i]))).abs() <= 1 {
                    pitch_ok += 1;
                }
            }
        }
    }
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    let frac = |k: usize| k as f64 / total as f64;
    let (c, p, r) = (frac(content_ok), frac(pitch_ok), frac(perturbed));
    Ok(HarnessReport {
        syllables: total,
        content_recovery: c,
        pitch_recovery: p,
        rhythm_perturbed: r,
        content_pass: c >= 0.99,
        pitch_pass: p >= 0.99,
        rhythm_pass: r >= 0.30,
    })
}
