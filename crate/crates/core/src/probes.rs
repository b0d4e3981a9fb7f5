//! Component-removal probes, a bottleneck-width report built on them, and the
//! resampled-autoencoder alignment probe.

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::converter::{reconstruct, Trained};
use crate::error::Result;
use crate::evalmetrics::{comb_f0, segment_syllables, Syllable};
use crate::network::{ForwardInputs, ModelConfig, PlanSource, SpeakerLabel, SpeechSplit};
use crate::nn::{Gradients, ParamStore};
use crate::resample::ResampleLaw;
use crate::synthgen::{pearson, ENVELOPE_BINS, OFFSET_STEP};
use crate::tensor::{Matrix, Scalar};
use crate::trainer::{mse_and_grad, Crop, Trainable, Utterance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Rhythm,
    Content,
    Pitch,
    Timbre,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::Rhythm, Component::Content, Component::Pitch, Component::Timbre];

    pub fn name(self) -> &'static str {
        match self {
            Component::Rhythm => "rhythm",
            Component::Content => "content",
            Component::Pitch => "pitch",
            Component::Timbre => "timbre",
        }
    }
}

/// Measurements of one zero-out run against the input and the plain reconstruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Summed output magnitude over summed input magnitude.
    pub energy_ratio: f64,
    /// Mean per-frame correlation of output and input envelope bins over the input's syllables.
    pub envelope_correlation: f64,
    /// Variance of frame-wise f0 estimates over the input's syllable frames.
    pub f0_variance: f64,
    /// The same variance measured on the plain reconstruction.
    pub recon_f0_variance: f64,
    /// Formant shift (bins) of the mean envelope relative to the reconstruction.
    pub envelope_shift: f64,
    /// Mean squared change from the reconstruction, relative to the reconstruction's mean square.
    pub relative_change: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZeroOut {
    pub output: Matrix<f32>,
    pub diagnostics: Diagnostics,
}

fn input_syllable_frames(mel: &Matrix<f32>) -> Vec<usize> {
    segment_syllables(mel).iter().flat_map(|s: &Syllable| s.start..s.end).collect()
}

fn f0_variance(mel: &Matrix<f32>, frames: &[usize]) -> f64 {
    if frames.len() < 2 {
        return 0.0;
    }
    let f0: Vec<f64> = frames
        .iter()
        .map(|&t| {
            let row: Vec<f64> = mel.row(t).iter().map(|&v| f64::from(v)).collect();
            comb_f0(&row).0
        })
        .collect();
    let m = f0.iter().sum::<f64>() / f0.len() as f64;
    f0.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / f0.len() as f64
}

fn mean_envelope(mel: &Matrix<f32>, frames: &[usize]) -> Vec<f64> {
    let mut m = alloc::vec![0.0; mel.cols()];
    for &t in frames {
        for (a, &v) in m.iter_mut().zip(mel.row(t)) {
            *a += f64::from(v) / frames.len().max(1) as f64;
        }
    }
    m
}

fn shifted(x: &[f64], by: f64) -> Vec<f64> {
    let last = x.len() as f64 - 1.0;
    (0..x.len())
        .map(|i| {
            let p = (i as f64 - by).clamp(0.0, last);
            let j = Float::floor(p) as usize;
            let w = p - j as f64;
            if j + 1 < x.len() {
                (1.0 - w) * x[j] + w * x[j + 1]
            } else {
                x[j]
            }
        })
        .collect()
}

/// Shift (bins, quarter-bin resolution within ±10) that best aligns `b`'s envelope to `a`'s.
pub fn envelope_shift(a: &[f64], b: &[f64]) -> f64 {
    let mut best = (0.0, f64::NEG_INFINITY);
    for step in -40..=40 {
        let s = step as f64 * 0.25;
        let c = pearson(&a[ENVELOPE_BINS], &shifted(b, s)[ENVELOPE_BINS]);
        if c > best.1 {
            best = (s, c);
        }
    }
    Float::abs(best.0)
}

fn sum(m: &Matrix<f32>) -> f64 {
    m.as_slice().iter().map(|&v| f64::from(v)).sum()
}

/// Run the model with one input replaced by zeros and measure what disappeared.
pub fn zero_out(component: Component, utt: &Utterance, model: &Trained<SpeechSplit>) -> Result<ZeroOut> {
    let recon = reconstruct(utt, model)?;
    let n = model.model.config.n_speakers;
    let mut speaker = SpeakerLabel::new(utt.speaker, n)?.onehot::<f32>();
    let pitch = utt.pitch.to_matrix::<f32>();
    let zeros_mel = Matrix::zeros(utt.mel.rows(), utt.mel.cols());
    let zeros_pitch = Matrix::zeros(pitch.rows(), pitch.cols());
    let mut inp = ForwardInputs { rhythm: &utt.mel, content: &utt.mel, pitch: &pitch, speaker: &[] };
    match component {
        Component::Rhythm => inp.rhythm = &zeros_mel,
        Component::Content => inp.content = &zeros_mel,
        Component::Pitch => inp.pitch = &zeros_pitch,
        Component::Timbre => speaker.iter_mut().for_each(|v| *v = 0.0),
    }
    inp.speaker = &speaker;
    let output = model.model.infer(&model.params, &inp)?;
    let frames = input_syllable_frames(&utt.mel);
    let corr = if frames.is_empty() {
        0.0
    } else {
        frames
            .iter()
            .map(|&t| {
                let a: Vec<f64> = output.row(t)[ENVELOPE_BINS].iter().map(|&v| f64::from(v)).collect();
                let b: Vec<f64> = utt.mel.row(t)[ENVELOPE_BINS].iter().map(|&v| f64::from(v)).collect();
                pearson(&a, &b)
            })
            .sum::<f64>()
            / frames.len() as f64
    };
    let recon_sq = recon.as_slice().iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>();
    let diff_sq = output.as_slice().iter().zip(recon.as_slice()).map(|(&a, &b)| f64::from(a - b) * f64::from(a - b)).sum::<f64>();
    let diagnostics = Diagnostics {
        energy_ratio: sum(&output) / sum(&utt.mel).max(f64::MIN_POSITIVE),
        envelope_correlation: corr,
        f0_variance: f0_variance(&output, &frames),
        recon_f0_variance: f0_variance(&recon, &frames),
        envelope_shift: envelope_shift(&mean_envelope(&recon, &frames), &mean_envelope(&output, &frames)),
        relative_change: if recon_sq > 0.0 { diff_sq / recon_sq } else { 0.0 },
    };
    Ok(ZeroOut { output, diagnostics })
}

/// Numeric stand-ins for the listening criteria of the bottleneck tuning procedure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeThresholds {
    pub rhythm_energy_max: f64,
    pub pitch_variance_ratio_max: f64,
    pub content_correlation_max: f64,
    pub content_energy_min: f64,
    /// Minimum envelope shift, in speaker offset steps.
    pub timbre_shift_min: f64,
    pub timbre_fraction_min: f64,
    /// Below this relative change a zeroed path counts as unused.
    pub unused_change_max: f64,
}

impl Default for ProbeThresholds {
    fn default() -> Self {
        Self {
            rhythm_energy_max: 0.10,
            pitch_variance_ratio_max: 0.10,
            content_correlation_max: 0.5,
            content_energy_min: 0.3,
            timbre_shift_min: 1.0,
            timbre_fraction_min: 0.7,
            unused_change_max: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeCheck {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    /// Tuning hint when the check fails.
    pub hint: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceProbe {
    pub utterance: String,
    pub component: Component,
    pub diagnostics: Diagnostics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportStatus {
    Conclusive,
    Inconclusive(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BottleneckReport {
    pub status: ReportStatus,
    pub checks: Vec<ProbeCheck>,
    /// Paths whose removal barely changes the output.
    pub unused_paths: Vec<Component>,
    pub records: Vec<UtteranceProbe>,
}

impl BottleneckReport {
    pub fn all_pass(&self) -> bool {
        self.status == ReportStatus::Conclusive && self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&ProbeCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Plain-text rendering, one line per check.
    pub fn to_text(&self) -> String {
        let mut s = match &self.status {
            ReportStatus::Conclusive => String::from("status: conclusive\n"),
            ReportStatus::Inconclusive(why) => alloc::format!("status: inconclusive: {why}\n"),
        };
        for c in &self.checks {
            s += &alloc::format!(
                "{:<22} {:>9.4} (threshold {:.4}) {}{}\n",
                c.name,
                c.value,
                c.threshold,
                if c.pass { "PASS" } else { "FAIL" },
                c.hint.as_deref().map(|h| alloc::format!(" - {h}")).unwrap_or_default()
            );
        }
        for p in &self.unused_paths {
            s += &alloc::format!("unused path: {}\n", p.name());
        }
        s
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// All four zero-out probes over `set`, reduced to pass/fail checks (medians over
/// utterances; the timbre check counts utterances).
pub fn bottleneck_report(model: &Trained<SpeechSplit>, set: &[Utterance], th: &ProbeThresholds) -> BottleneckReport {
    if model.ensure_trained().is_err() {
        return BottleneckReport {
            status: ReportStatus::Inconclusive("untrained".into()),
            checks: Vec::new(),
            unused_paths: Vec::new(),
            records: Vec::new(),
        };
    }
    let mut records = Vec::new();
    for utt in set {
        for c in Component::ALL {
            match zero_out(c, utt, model) {
                Ok(z) => records.push(UtteranceProbe { utterance: utt.id.clone(), component: c, diagnostics: z.diagnostics }),
                Err(e) => {
                    return BottleneckReport {
                        status: ReportStatus::Inconclusive(alloc::format!("{e} ({})", utt.id)),
                        checks: Vec::new(),
                        unused_paths: Vec::new(),
                        records,
                    }
                }
            }
        }
    }
    if records.is_empty() {
        return BottleneckReport {
            status: ReportStatus::Inconclusive("empty validation set".into()),
            checks: Vec::new(),
            unused_paths: Vec::new(),
            records,
        };
    }
    let of = |c: Component| records.iter().filter(move |r| r.component == c).map(|r| &r.diagnostics);
    let check = |name: &str, value: f64, threshold: f64, pass: bool, hint: &str| ProbeCheck {
        name: name.into(),
        value,
        threshold,
        pass,
        hint: (!pass).then(|| hint.into()),
    };
    let rhythm_energy = median(of(Component::Rhythm).map(|d| d.energy_ratio).collect());
    let pitch_ratio = median(
        of(Component::Pitch)
            .map(|d| if d.recon_f0_variance > 0.0 { d.f0_variance / d.recon_f0_variance } else { 1.0 })
            .collect(),
    );
    let content_corr = median(of(Component::Content).map(|d| d.envelope_correlation).collect());
    let content_energy = median(of(Component::Content).map(|d| d.energy_ratio).collect());
    let timbre: Vec<f64> = of(Component::Timbre).map(|d| d.envelope_shift / OFFSET_STEP).collect();
    let timbre_frac = timbre.iter().filter(|&&s| s >= th.timbre_shift_min).count() as f64 / timbre.len() as f64;
    let checks = alloc::vec![
        check(
            "rhythm_energy_ratio",
            rhythm_energy,
            th.rhythm_energy_max,
            rhythm_energy <= th.rhythm_energy_max,
            "output survives without the rhythm code: content or pitch code carries rhythm (narrow them), or the rhythm code is too narrow",
        ),
        check(
            "pitch_variance_ratio",
            pitch_ratio,
            th.pitch_variance_ratio_max,
            pitch_ratio <= th.pitch_variance_ratio_max,
            "pitch varies without the pitch code: content or rhythm code too wide",
        ),
        check(
            "content_correlation",
            content_corr,
            th.content_correlation_max,
            content_corr <= th.content_correlation_max,
            "spectral shape survives without the content code: rhythm code too wide",
        ),
        check(
            "content_energy_ratio",
            content_energy,
            th.content_energy_min,
            content_energy >= th.content_energy_min,
            "output collapses without the content code: rhythm code too narrow",
        ),
        check(
            "timbre_shift_fraction",
            timbre_frac,
            th.timbre_fraction_min,
            timbre_frac >= th.timbre_fraction_min,
            "envelope unchanged without the speaker label: content code carries timbre (narrow it)",
        ),
    ];
    let unused_paths = Component::ALL
        .into_iter()
        .filter(|&c| median(of(c).map(|d| d.relative_change).collect()) < th.unused_change_max)
        .collect();
    BottleneckReport { status: ReportStatus::Conclusive, checks, unused_paths, records }
}

/// Reduced autoencoder: the content path and decoder carry everything; the rhythm and pitch
/// encoders only ever see zeros.
#[derive(Clone, Debug)]
pub struct ContentAutoencoder {
    pub inner: SpeechSplit,
}

impl ContentAutoencoder {
    /// Desk configuration with the (unused) pitch encoder shrunk to a minimal width.
    pub fn config(n_speakers: usize) -> ModelConfig {
        let mut c = ModelConfig::desk(n_speakers);
        c.pitch.conv_dim = 8;
        c.pitch.norm_groups = 1;
        c.pitch.conv_layers = 1;
        c
    }

    pub fn new(config: ModelConfig, rng: &mut crate::rng::Rng) -> Result<(Self, ParamStore<f32>)> {
        let (inner, p) = SpeechSplit::new(config, rng)?;
        Ok((Self { inner }, p))
    }

    pub fn infer(&self, p: &ParamStore<f32>, utt: &Utterance) -> Result<Matrix<f32>> {
        let zr = Matrix::zeros(utt.mel.rows(), utt.mel.cols());
        let zp = Matrix::zeros(utt.mel.rows(), self.inner.config.pitch_bins);
        let spk = SpeakerLabel::new(utt.speaker, self.inner.config.n_speakers)?.onehot::<f32>();
        self.inner.infer(p, &ForwardInputs { rhythm: &zr, content: &utt.mel, pitch: &zp, speaker: &spk })
    }
}

impl Trainable for ContentAutoencoder {
    fn resample_law(&self) -> ResampleLaw {
        self.inner.config.resample
    }

    fn loss_and_grad<S: Scalar>(&self, p: &ParamStore<S>, batch: &[Crop<S>], plans: Option<&mut PlanSource<'_>>, g: &mut Gradients<S>) -> Result<f64> {
        let zr: Vec<Matrix<S>> = batch.iter().map(|c| Matrix::zeros(c.mel.rows(), c.mel.cols())).collect();
        let zp: Vec<Matrix<S>> = batch.iter().map(|c| Matrix::zeros(c.pitch.rows(), c.pitch.cols())).collect();
        let inputs: Vec<_> = batch
            .iter()
            .zip(zr.iter().zip(&zp))
            .map(|(c, (r, q))| ForwardInputs { rhythm: r, content: &c.mel, pitch: q, speaker: &c.speaker })
            .collect();
        let (out, tape) = self.inner.forward_batch(p, &inputs, plans)?;
        let (loss, d_out) = mse_and_grad(&out, batch.iter().map(|c| &c.mel));
        self.inner.backward_batch(p, tape, &d_out, g);
        Ok(loss)
    }

    fn activation_pattern<S: Scalar>(&self, p: &ParamStore<S>, batch: &[Crop<S>], plans: Option<&mut PlanSource<'_>>) -> Result<Vec<bool>> {
        self.inner.activation_pattern(p, batch, plans)
    }
}

/// Window and maximum lag (frames) of the local cross-correlation alignment.
pub const ALIGN_WINDOW: usize = 32;
pub const ALIGN_MAX_LAG: usize = 48;
pub const ALIGN_STRIDE: usize = 8;

fn envelope(mel: &Matrix<f32>) -> Vec<f64> {
    mel.row_iter().map(|r| r.iter().map(|&v| f64::from(v)).sum()).collect()
}

/// Mean absolute local time offset (frames) between two spectrograms' energy envelopes.
/// Each window of the truth is matched against the reconstruction by normalised
/// cross-correlation over lags up to [`ALIGN_MAX_LAG`].
pub fn alignment_offset(recon: &Matrix<f32>, truth: &Matrix<f32>) -> f64 {
    let (r, g) = (envelope(recon), envelope(truth));
    let n = g.len().min(r.len());
    if n < ALIGN_WINDOW {
        return 0.0;
    }
    let mut lags = Vec::new();
    let mut start = 0;
    while start + ALIGN_WINDOW <= n {
        let win = &g[start..start + ALIGN_WINDOW];
        let scores: Vec<(i64, f64)> = (-(ALIGN_MAX_LAG as i64)..=ALIGN_MAX_LAG as i64)
            .filter_map(|lag| {
                let s = start as i64 + lag;
                (s >= 0 && s as usize + ALIGN_WINDOW <= r.len()).then(|| (lag, pearson(win, &r[s as usize..s as usize + ALIGN_WINDOW])))
            })
            .collect();
        let top = scores.iter().fold(f64::NEG_INFINITY, |m, &(_, c)| m.max(c));
        let lag = scores.iter().filter(|&&(_, c)| c >= top - 1e-9).map(|&(l, _)| l.unsigned_abs()).min().unwrap_or(0);
        lags.push(lag as f64);
        start += ALIGN_STRIDE;
    }
    lags.iter().sum::<f64>() / lags.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub offsets: Vec<f64>,
    pub max_offset: f64,
    /// Fraction of utterances with offset at most `max_offset`.
    pub aligned_fraction: f64,
}

/// Alignment of reconstructions against their ground truth.
pub fn rr_recon_probe(pairs: &[(Matrix<f32>, Matrix<f32>)], max_offset: f64) -> AlignmentReport {
    let offsets: Vec<f64> = pairs.iter().map(|(r, g)| alignment_offset(r, g)).collect();
    let ok = offsets.iter().filter(|&&o| o <= max_offset).count();
    AlignmentReport { aligned_fraction: ok as f64 / offsets.len().max(1) as f64, offsets, max_offset }
}

/// Segment-shuffled copy of a spectrogram (segments of 19–32 frames), used as a
/// misaligned negative control.
pub fn shuffle_segments(mel: &Matrix<f32>, rng: &mut crate::rng::Rng) -> Matrix<f32> {
    use rand::seq::SliceRandom;
    let plan = crate::resample::draw_plan(mel.rows(), &ResampleLaw::unit_factor(), rng);
    let mut segs = plan.segments.clone();
    segs.shuffle(rng);
    let rows: Vec<&[f32]> = segs.iter().flat_map(|s| (s.start..s.start + s.length).map(|t| mel.row(t))).collect();
    Matrix::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::child_rng;
    use crate::synthgen::{sample_corpus, SynthCorpus};

    fn setup() -> (Trained<SpeechSplit>, Vec<Utterance>) {
        let corpus = sample_corpus(2, 4, 5).unwrap();
        let utts: Vec<Utterance> = corpus.entries.iter().take(3).map(SynthCorpus::to_utterance).collect();
        let cfg = ModelConfig { n_mels: 80, pitch_bins: 257, ..ModelConfig::tiny(2) };
        let (m, p) = SpeechSplit::new::<f32>(cfg, &mut child_rng(0, "m")).unwrap();
        (Trained::new(m, p, 1), utts)
    }

    #[test]
    fn zero_out_is_deterministic_and_shaped() {
        let (m, utts) = setup();
        for c in Component::ALL {
            let a = zero_out(c, &utts[0], &m).unwrap();
            let b = zero_out(c, &utts[0], &m).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.output.shape(), utts[0].mel.shape());
            assert!(a.diagnostics.energy_ratio.is_finite());
        }
    }

    #[test]
    fn untrained_report_is_inconclusive() {
        let (m, utts) = setup();
        let fresh = Trained::new(m.model.clone(), m.params.clone(), 0);
        let r = bottleneck_report(&fresh, &utts, &ProbeThresholds::default());
        assert_eq!(r.status, ReportStatus::Inconclusive("untrained".into()));
        assert!(!r.all_pass());
        let r = bottleneck_report(&m, &utts, &ProbeThresholds::default());
        assert_eq!(r.status, ReportStatus::Conclusive);
        assert_eq!(r.checks.len(), 5);
        assert_eq!(r.records.len(), 12);
        assert!(r.to_text().contains("rhythm_energy_ratio"));
    }

    #[test]
    fn envelope_shift_measures_translation() {
        let corpus = sample_corpus(2, 4, 5).unwrap();
        let mel = corpus.entries[0].utterance.mel.frames();
        let frames = input_syllable_frames(mel);
        let env = mean_envelope(mel, &frames);
        assert_eq!(envelope_shift(&env, &env), 0.0);
        assert!((envelope_shift(&env, &shifted(&env, 3.0)) - 3.0).abs() < 0.01);
    }

    #[test]
    fn alignment_of_identical_and_shuffled() {
        let corpus = sample_corpus(4, 8, 2).unwrap();
        let mut rng = child_rng(3, "shuffle");
        let same: Vec<_> = corpus.entries.iter().map(|e| (e.utterance.mel.frames().clone(), e.utterance.mel.frames().clone())).collect();
        let r = rr_recon_probe(&same, 8.0);
        assert!(r.offsets.iter().all(|&o| o == 0.0));
        assert_eq!(r.aligned_fraction, 1.0);
        let shuffled: Vec<_> = corpus
            .entries
            .iter()
            .map(|e| (shuffle_segments(e.utterance.mel.frames(), &mut rng), e.utterance.mel.frames().clone()))
            .collect();
        let r = rr_recon_probe(&shuffled, 8.0);
        let mean = r.offsets.iter().sum::<f64>() / r.offsets.len() as f64;
        assert!(mean > 16.0, "{:?}", r.offsets);
    }

    #[test]
    fn content_autoencoder_trains_through_the_content_path() {
        let cfg = ModelConfig { n_mels: 80, pitch_bins: 257, ..ModelConfig::tiny(2) };
        let (ae, p) = ContentAutoencoder::new(cfg, &mut child_rng(1, "ae")).unwrap();
        let corpus = sample_corpus(2, 4, 5).unwrap();
        let ds = corpus.train_dataset().unwrap();
        let mut state = crate::trainer::TrainState::new(p);
        let tc = crate::trainer::TrainConfig { total_steps: 3, batch_size: 2, crop_len: 32, ..Default::default() };
        let losses = crate::trainer::train_loop(&ae, &mut state, &ds, &tc, |_, _| Ok(crate::trainer::Control::Continue)).unwrap();
        assert_eq!(losses.len(), 3);
        let out = ae.infer(&state.params, &ds.utterances[0]).unwrap();
        assert_eq!(out.shape(), ds.utterances[0].mel.shape());
    }
}
