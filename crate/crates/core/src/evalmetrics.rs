//! Frame-wise pitch error rates and factor-recovery scores against synthetic ground truth.

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::converter::AspectSet;
use crate::error::{Error, Result};
use crate::featureio::{MelConfig, PitchContour, N_MELS};
use crate::synthgen::{pearson, template_envelope, SpeakerBank, SynthFactors, ENVELOPE_BINS, OFFSET_STEP, PITCH_REGION};
use crate::tensor::Matrix;

/// Relative deviation above which a voiced frame counts as a gross pitch error.
pub const GPE_TOLERANCE: f64 = 0.2;

fn check_lengths(r: &PitchContour, e: &PitchContour) -> Result<()> {
    if r.len() != e.len() {
        return Err(Error::Shape(alloc::format!("reference has {} frames, estimate {}", r.len(), e.len())));
    }
    Ok(())
}

fn gross(r: f32, e: f32, tol: f64) -> bool {
    Float::abs(f64::from(e) - f64::from(r)) / f64::from(r) > tol
}

/// Fraction of frames voiced in both contours whose f0 deviates by more than `tol`.
pub fn gpe(r: &PitchContour, e: &PitchContour, tol: f64) -> Result<f64> {
    check_lengths(r, e)?;
    let (mut both, mut bad) = (0usize, 0usize);
    for (&a, &b) in r.values().iter().zip(e.values()) {
        if a > 0.0 && b > 0.0 {
            both += 1;
            bad += usize::from(gross(a, b, tol));
        }
    }
    Ok(if both == 0 { 0.0 } else { bad as f64 / both as f64 })
}

/// Fraction of frames with differing voicing decisions.
pub fn vde(r: &PitchContour, e: &PitchContour) -> Result<f64> {
    check_lengths(r, e)?;
    if r.is_empty() {
        return Ok(0.0);
    }
    let bad = r.values().iter().zip(e.values()).filter(|(&a, &b)| (a > 0.0) != (b > 0.0)).count();
    Ok(bad as f64 / r.len() as f64)
}

/// Fraction of frames with a voicing error or a gross pitch error.
pub fn ffe(r: &PitchContour, e: &PitchContour, tol: f64) -> Result<f64> {
    check_lengths(r, e)?;
    if r.is_empty() {
        return Ok(0.0);
    }
    let bad = r
        .values()
        .iter()
        .zip(e.values())
        .filter(|(&a, &b)| (a > 0.0) != (b > 0.0) || (a > 0.0 && b > 0.0 && gross(a, b, tol)))
        .count();
    Ok(bad as f64 / r.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PitchErrors {
    pub gpe: f64,
    pub vde: f64,
    pub ffe: f64,
}

pub fn pitch_errors(r: &PitchContour, e: &PitchContour) -> Result<PitchErrors> {
    Ok(PitchErrors { gpe: gpe(r, e, GPE_TOLERANCE)?, vde: vde(r, e)?, ffe: ffe(r, e, GPE_TOLERANCE)? })
}

/// Summed magnitude over the envelope bins of each frame.
pub fn frame_energy(mel: &Matrix<f32>) -> Vec<f64> {
    mel.row_iter().map(|r| r[ENVELOPE_BINS].iter().map(|&v| f64::from(v)).sum()).collect()
}

/// Half-open frame range of one detected syllable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Syllable {
    pub start: usize,
    pub end: usize,
}

impl Syllable {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Minimum run of voiced frames accepted as a syllable.
pub const MIN_SYLLABLE_FRAMES: usize = 3;

/// A local energy minimum counts as a gap when it sits this fraction of the
/// floor-to-median range below the lower of its two flanking peaks.
pub const DIP_PROMINENCE: f64 = 0.25;

/// Half-width (frames) of the window in which flanking peaks are searched.
const DIP_WINDOW: usize = 8;

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted[sorted.len() / 2]
}

/// Marks gap frames: everything below the midpoint of the quietest and the median frame,
/// plus the trough of every sufficiently prominent dip (blurred gaps in model outputs).
fn gap_frames(energy: &[f64]) -> Vec<bool> {
    let floor = energy.iter().copied().fold(f64::INFINITY, f64::min);
    let mid = median(energy);
    let range = mid - floor;
    let mut gap: Vec<bool> = energy.iter().map(|&e| e < floor + range / 2.0).collect();
    if range <= 1e-9 {
        return gap;
    }
    let n = energy.len();
    for t in 1..n.saturating_sub(1) {
        let e = energy[t];
        if e > energy[t - 1] || e > energy[t + 1] {
            continue;
        }
        let left = energy[t.saturating_sub(DIP_WINDOW)..t].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let right = energy[t + 1..(t + 1 + DIP_WINDOW).min(n)].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let prominence = left.min(right) - e;
        if prominence < DIP_PROMINENCE * range {
            continue;
        }
        let level = e + prominence / 2.0;
        let mut a = t;
        while a > 0 && energy[a - 1] < level {
            a -= 1;
        }
        let mut b = t;
        while b + 1 < n && energy[b + 1] < level {
            b += 1;
        }
        gap[a..=b].iter_mut().for_each(|g| *g = true);
    }
    gap
}

/// Runs of voiced frames separated by energy gaps or prominent energy dips.
pub fn segment_syllables(mel: &Matrix<f32>) -> Vec<Syllable> {
    if mel.rows() == 0 {
        return Vec::new();
    }
    let gap = gap_frames(&frame_energy(mel));
    let mut out = Vec::new();
    let mut start = None;
    for (t, &g) in gap.iter().chain(core::iter::once(&true)).enumerate() {
        match (!g, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                if t - s >= MIN_SYLLABLE_FRAMES {
                    out.push(Syllable { start: s, end: t });
                }
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Lowest and highest candidate f0 (Hz) of the harmonic-comb estimator.
pub const F0_SEARCH: (f64, f64) = (100.0, 400.0);

fn interp(spectrum: &[f64], pos: f64) -> f64 {
    let last = (spectrum.len() - 1) as f64;
    let p = pos.clamp(0.0, last);
    let i = Float::floor(p) as usize;
    let w = p - i as f64;
    if i + 1 < spectrum.len() {
        (1.0 - w) * spectrum[i] + w * spectrum[i + 1]
    } else {
        spectrum[i]
    }
}

/// Harmonic-comb f0 estimate over the low bins of a spectrum: each candidate sums the
/// baseline-relative magnitude at its harmonics (weights 1/k, harmonics above the region
/// skipped), minus half the magnitude at its subharmonic. Returns the best candidate and
/// its score.
pub fn comb_f0(spectrum: &[f64]) -> (f64, f64) {
    let mel = MelConfig::default();
    let region = &spectrum[PITCH_REGION];
    let mut sorted = region.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let base = sorted[sorted.len() / 2];
    let top = (region.len() - 1) as f64;
    let (lo, hi) = F0_SEARCH;
    let mut best = (lo, f64::NEG_INFINITY);
    let mut f0 = lo;
    while f0 <= hi {
        let (mut s, mut w2) = (0.0, 0.0);
        for k in 1.. {
            let b = mel.bin_of_hz(k as f64 * f0);
            if b > top {
                break;
            }
            let w = 1.0 / k as f64;
            s += w * (interp(region, b) - base);
            w2 += w * w;
        }
        if w2 > 0.0 {
            let sub = interp(region, mel.bin_of_hz(f0 / 2.0)) - base;
            let score = s / Float::sqrt(w2) - 0.5 * sub.max(0.0);
            if score > best.1 {
                best = (f0, score);
            }
        }
        f0 *= 1.005;
    }
    (refine(region, base, best.0, &mel), best.1)
}

/// Sub-bin refinement of a comb estimate: three-point Gaussian interpolation around the
/// fundamental's ridge, or around the second harmonic when the fundamental sits on the edge.
fn refine(region: &[f64], base: f64, f0: f64, mel: &MelConfig) -> f64 {
    let top = region.len() - 1;
    let lift = |i: usize| Float::ln((region[i] - base).max(1e-6));
    for k in 1..=2 {
        let b = mel.bin_of_hz(k as f64 * f0);
        if b < 0.0 || b > top as f64 {
            continue;
        }
        let lo = Float::floor(b) as usize;
        let i = if lo < top && region[lo + 1] > region[lo] { lo + 1 } else { lo };
        if i == 0 || i == top {
            continue;
        }
        let (a, c, e) = (lift(i - 1), lift(i), lift(i + 1));
        let denom = a - 2.0 * c + e;
        if denom >= 0.0 {
            continue;
        }
        let delta = 0.5 * (a - e) / denom;
        if Float::abs(delta) < 1.0 {
            return mel.hz_of_bin(i as f64 + delta) / k as f64;
        }
    }
    f0
}

fn mean_spectrum(mel: &Matrix<f32>, start: usize, end: usize) -> Vec<f64> {
    let mut m = alloc::vec![0.0; mel.cols()];
    for t in start..end {
        for (a, &v) in m.iter_mut().zip(mel.row(t)) {
            *a += f64::from(v);
        }
    }
    let n = (end - start).max(1) as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// Frames of a syllable used for spectral averages: its interior, dropping one frame at
/// each edge when the syllable is long enough.
fn interior(s: &Syllable) -> (usize, usize) {
    if s.len() > 4 {
        (s.start + 1, s.end - 1)
    } else {
        (s.start, s.end)
    }
}

/// Frame-wise f0 estimate: frames in detected syllables are voiced with their comb
/// estimate; all others are unvoiced. Approximate by construction.
pub fn estimate_contour(mel: &Matrix<f32>) -> PitchContour {
    let mut f0 = alloc::vec![0.0f32; mel.rows()];
    for s in segment_syllables(mel) {
        for (t, v) in f0.iter_mut().enumerate().take(s.end).skip(s.start) {
            let frame: Vec<f64> = mel.row(t).iter().map(|&x| f64::from(x)).collect();
            *v = comb_f0(&frame).0 as f32;
        }
    }
    PitchContour::new_unchecked(f0)
}

/// Per-syllable f0 from each syllable's averaged interior spectrum.
pub fn syllable_f0(mel: &Matrix<f32>, syllables: &[Syllable]) -> Vec<f64> {
    syllables
        .iter()
        .map(|s| {
            let (a, b) = interior(s);
            comb_f0(&mean_spectrum(mel, a, b)).0
        })
        .collect()
}

/// Formant offset (bins) that best explains the syllable spectra given their content
/// symbols, searched over `[-10, 10]` in quarter-bin steps by summed correlation.
pub fn estimate_offset(mel: &Matrix<f32>, syllables: &[Syllable], content: &[u8]) -> f64 {
    let spectra: Vec<Vec<f64>> = syllables
        .iter()
        .map(|s| {
            let (a, b) = interior(s);
            mean_spectrum(mel, a, b)
        })
        .collect();
    let mut best = (0.0, f64::NEG_INFINITY);
    for step in -40..=40 {
        let o = step as f64 * 0.25;
        let score: f64 = spectra
            .iter()
            .zip(content)
            .map(|(s, &c)| pearson(&s[ENVELOPE_BINS], &template_envelope(c as usize, o)[ENVELOPE_BINS]))
            .sum();
        if score > best.1 {
            best = (o, score);
        }
    }
    best.0
}

/// Factor set a conversion of `aspects` from `source` toward `target` should produce.
pub fn expected_factors(source: &SynthFactors, target: &SynthFactors, aspects: AspectSet) -> SynthFactors {
    SynthFactors {
        content: source.content.clone(),
        durations: if aspects.rhythm { target.durations.clone() } else { source.durations.clone() },
        pitch_targets: if aspects.pitch { target.pitch_targets.clone() } else { source.pitch_targets.clone() },
        speaker: if aspects.timbre { target.speaker } else { source.speaker },
    }
}

/// Scores toward the target (positive) or the source (negative) for each aspect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorScores {
    /// corr(durations, target) − corr(durations, source).
    pub rhythm: f64,
    /// corr(f0, target pitch targets) − corr(f0, source pitch targets).
    pub pitch: f64,
    /// Formant-offset margin in `[-1, 1]`.
    pub timbre: f64,
    pub estimated_offset: f64,
    pub syllables_found: usize,
    /// `None` when the scores are usable.
    pub invalid: Option<String>,
}

impl FactorScores {
    pub fn is_valid(&self) -> bool {
        self.invalid.is_none()
    }

    /// Score of one aspect.
    pub fn get(&self, aspect: crate::converter::Aspect) -> f64 {
        match aspect {
            crate::converter::Aspect::Rhythm => self.rhythm,
            crate::converter::Aspect::Pitch => self.pitch,
            crate::converter::Aspect::Timbre => self.timbre,
        }
    }

    fn invalid(found: usize, reason: String) -> Self {
        Self { rhythm: 0.0, pitch: 0.0, timbre: 0.0, estimated_offset: 0.0, syllables_found: found, invalid: Some(reason) }
    }
}

/// Recover rhythm, pitch and timbre evidence from `output` and score it against the two
/// sides of a parallel pair (which share content).
pub fn factor_recovery(output: &Matrix<f32>, source: &SynthFactors, target: &SynthFactors, bank: &SpeakerBank) -> Result<FactorScores> {
    if source.content != target.content {
        return Err(Error::Invalid("factor recovery needs a pair with shared content".into()));
    }
    if output.cols() != N_MELS || !output.is_finite() {
        return Err(Error::Shape(alloc::format!("output must be a finite T x {N_MELS} matrix")));
    }
    let (os, ot) = (bank.get(source.speaker)?.offset, bank.get(target.speaker)?.offset);
    let syl = segment_syllables(output);
    let n = source.content.len();
    if syl.len() != n {
        return Ok(FactorScores::invalid(syl.len(), alloc::format!("found {} syllables, expected {n}", syl.len())));
    }
    let durations: Vec<f64> = syl.iter().map(|s| s.len() as f64).collect();
    let d = |f: &SynthFactors| -> Vec<f64> { f.durations.iter().map(|&v| v as f64).collect() };
    let rhythm = pearson(&durations, &d(target)) - pearson(&durations, &d(source));
    let f0 = syllable_f0(output, &syl);
    let pitch = pearson(&f0, &target.pitch_targets) - pearson(&f0, &source.pitch_targets);
    let o = estimate_offset(output, &syl, &source.content);
    let timbre = if os == ot {
        0.0
    } else {
        ((Float::abs(o - os) - Float::abs(o - ot)) / Float::abs(ot - os)).clamp(-1.0, 1.0)
    };
    Ok(FactorScores { rhythm, pitch, timbre, estimated_offset: o, syllables_found: n, invalid: None })
}

/// Formant shift, in units of one speaker step, between two spectrograms of the same content.
pub fn offset_shift(a: &Matrix<f32>, b: &Matrix<f32>, content: &[u8]) -> Option<f64> {
    let (sa, sb) = (segment_syllables(a), segment_syllables(b));
    if sa.len() != content.len() || sb.len() != content.len() {
        return None;
    }
    Some(Float::abs(estimate_offset(a, &sa, content) - estimate_offset(b, &sb, content)) / OFFSET_STEP)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::converter::Aspect;
    use crate::rng::child_rng;
    use crate::synthgen::{generate, sample_corpus, SynthFactors};
    use proptest::prelude::*;

    fn pc(v: &[f32]) -> PitchContour {
        PitchContour::new(v.to_vec()).unwrap()
    }

    #[test]
    fn pitch_error_examples() {
        let r = pc(&[100.0; 4]);
        assert_eq!(gpe(&r, &r, 0.2).unwrap(), 0.0);
        assert_eq!(gpe(&r, &pc(&[130.0; 4]), 0.2).unwrap(), 1.0);
        assert_eq!(gpe(&pc(&[100.0, 100.0]), &pc(&[110.0, 150.0]), 0.2).unwrap(), 0.5);
        assert_eq!(vde(&pc(&[100.0, 0.0]), &pc(&[0.0, 100.0])).unwrap(), 1.0);
        assert_eq!(vde(&r, &pc(&[100.0, 100.0, 0.0, 100.0])).unwrap(), 0.25);
        // voicing error at 1, gross error at 3, fine at 0, 2 and 4
        let a = pc(&[100.0, 100.0, 0.0, 200.0, 150.0]);
        let b = pc(&[105.0, 0.0, 0.0, 300.0, 160.0]);
        assert!((ffe(&a, &b, 0.2).unwrap() - 0.4).abs() < 1e-12);
        assert!(gpe(&r, &pc(&[100.0; 3]), 0.2).is_err());
        assert!(vde(&r, &pc(&[100.0; 3])).is_err());
        assert!(ffe(&r, &pc(&[100.0; 5]), 0.2).is_err());
        assert_eq!(pitch_errors(&pc(&[]), &pc(&[])).unwrap(), PitchErrors { gpe: 0.0, vde: 0.0, ffe: 0.0 });
    }

    fn contour() -> impl Strategy<Value = Vec<f32>> {
        prop::collection::vec(prop_oneof![Just(0.0f32), 50.0f32..600.0], 1..40)
    }

    proptest! {
        #[test]
        fn ffe_bounds(a in contour(), b in contour()) {
            let n = a.len().min(b.len());
            let (a, b) = (pc(&a[..n]), pc(&b[..n]));
            let e = pitch_errors(&a, &b).unwrap();
            let both = (0..n).filter(|&t| a.is_voiced(t) && b.is_voiced(t)).count() as f64 / n as f64;
            for v in [e.gpe, e.vde, e.ffe] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(e.ffe >= e.vde);
            prop_assert!(e.ffe + 1e-12 >= e.gpe * both);
            prop_assert_eq!(pitch_errors(&a, &a).unwrap(), PitchErrors { gpe: 0.0, vde: 0.0, ffe: 0.0 });
        }
    }

    #[test]
    fn segmentation_recovers_syllables() {
        let bank = SpeakerBank::new(8);
        for seed in 0..40 {
            let f = SynthFactors::draw((seed % 8) as usize, &mut child_rng(seed, "seg"));
            let u = generate(&f, &bank).unwrap();
            let syl = segment_syllables(u.mel.frames());
            assert_eq!(syl.len(), f.content.len(), "seed {seed}");
            for (s, (&on, &d)) in syl.iter().zip(f.onsets().iter().zip(&f.durations)) {
                assert_eq!((s.start, s.len()), (on, d - 2));
            }
        }
    }

    #[test]
    fn segmentation_survives_blurred_gaps() {
        let bank = SpeakerBank::new(8);
        for seed in 0..40 {
            let f = SynthFactors::draw((seed % 8) as usize, &mut child_rng(seed, "blur"));
            let mel = generate(&f, &bank).unwrap().mel.into_matrix();
            let n = mel.rows();
            let col_mean: Vec<f32> = (0..mel.cols()).map(|k| (0..n).map(|t| mel.get(t, k)).sum::<f32>() / n as f32).collect();
            let blurred = Matrix::from_fn(n, mel.cols(), |t, k| {
                let (a, b) = (t.saturating_sub(1), (t + 1).min(n - 1));
                (mel.get(a, k) + 2.0 * mel.get(t, k) + mel.get(b, k)) / 4.0 * 0.6 + 0.4 * col_mean[k]
            });
            assert_eq!(segment_syllables(&blurred).len(), f.content.len(), "seed {seed}");
        }
    }

    #[test]
    fn flat_energy_is_one_syllable() {
        let mel = Matrix::filled(40, 80, 0.3f32);
        assert_eq!(segment_syllables(&mel), vec![Syllable { start: 0, end: 40 }]);
    }

    #[test]
    fn comb_estimator_finds_rendered_f0() {
        let bank = SpeakerBank::new(8);
        let mut worst: f64 = 0.0;
        for spk in &bank.speakers {
            for k in 0..=12 {
                let tau = 0.2 + 0.05 * k as f64;
                let frame = crate::synthgen::voiced_frame(3, tau, spk);
                let (f0, _) = comb_f0(&frame.map(|v| v.clamp(0.0, 1.0)));
                worst = worst.max((f0 / spk.f0_of(tau) - 1.0).abs());
            }
        }
        assert!(worst < 0.03, "{worst}");
    }

    #[test]
    fn contour_of_synthetic_utterance() {
        let bank = SpeakerBank::new(8);
        let f = SynthFactors::draw(4, &mut child_rng(5, "c"));
        let u = generate(&f, &bank).unwrap();
        let est = estimate_contour(u.mel.frames());
        let spk = &bank.speakers[4];
        let mut truth = Vec::new();
        for (&d, &tau) in f.durations.iter().zip(&f.pitch_targets) {
            truth.extend((0..d).map(|i| if i < d - 2 { spk.f0_of(tau) as f32 } else { 0.0 }));
        }
        let e = pitch_errors(&pc(&truth), &est).unwrap();
        assert_eq!(e.vde, 0.0);
        assert_eq!(e.gpe, 0.0);
    }

    #[test]
    fn oracle_outputs_score_toward_their_side() {
        let corpus = sample_corpus(8, 32, 1).unwrap();
        for p in &corpus.pairs {
            let (s, t) = (&corpus.entries[p.source].utterance, &corpus.entries[p.target].utterance);
            let to_t = factor_recovery(t.mel.frames(), &s.factors, &t.factors, &corpus.bank).unwrap();
            let to_s = factor_recovery(s.mel.frames(), &s.factors, &t.factors, &corpus.bank).unwrap();
            for a in Aspect::ALL {
                assert!(to_t.get(a) >= 0.99, "{a:?} {to_t:?}");
                assert!(to_s.get(a) <= -0.99, "{a:?} {to_s:?}");
            }
        }
    }

    #[test]
    fn single_aspect_oracles_move_only_their_aspect() {
        let corpus = sample_corpus(8, 32, 1).unwrap();
        for p in corpus.pairs.iter().take(10) {
            let (s, t) = (&corpus.entries[p.source].utterance.factors, &corpus.entries[p.target].utterance.factors);
            for a in Aspect::ALL {
                let f = expected_factors(s, t, AspectSet::only(a));
                let out = generate(&f, &corpus.bank).unwrap();
                let sc = factor_recovery(out.mel.frames(), s, t, &corpus.bank).unwrap();
                for b in Aspect::ALL {
                    if a == b {
                        assert!(sc.get(b) >= 0.99, "{a:?}->{b:?} {sc:?}");
                    } else {
                        assert!(sc.get(b) <= -0.99, "{a:?}->{b:?} {sc:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn degenerate_output_is_invalid() {
        let bank = SpeakerBank::new(2);
        let f = SynthFactors::draw(0, &mut child_rng(1, "d"));
        let mut g = f.clone();
        g.speaker = 1;
        let flat = Matrix::filled(f.total_frames(), N_MELS, 0.3f32);
        let sc = factor_recovery(&flat, &f, &g, &bank).unwrap();
        assert!(!sc.is_valid());
        let mut other = g.clone();
        other.content[0] = (other.content[0] + 1) % 10;
        assert!(factor_recovery(&flat, &f, &other, &bank).is_err());
    }

    #[test]
    fn offset_shift_counts_speaker_steps() {
        let bank = SpeakerBank::new(8);
        let f = SynthFactors::draw(0, &mut child_rng(2, "o"));
        let mut g = f.clone();
        g.speaker = 3;
        let (a, b) = (generate(&f, &bank).unwrap(), generate(&g, &bank).unwrap());
        let s = offset_shift(a.mel.frames(), b.mel.frames(), &f.content).unwrap();
        assert!((s - 3.0).abs() < 0.2, "{s}");
    }
}
