//! Aspect-wise style transfer between two utterances.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featureio::QuantizedPitch;
use crate::network::{ForwardInputs, MiniInputs, PitchMini, SpeakerLabel, SpeechSplit};
use crate::nn::ParamStore;
use crate::tensor::Matrix;
use crate::trainer::Utterance;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aspect {
    Rhythm,
    Pitch,
    Timbre,
}

impl Aspect {
    pub const ALL: [Aspect; 3] = [Aspect::Rhythm, Aspect::Pitch, Aspect::Timbre];

    pub fn name(self) -> &'static str {
        match self {
            Aspect::Rhythm => "rhythm",
            Aspect::Pitch => "pitch",
            Aspect::Timbre => "timbre",
        }
    }
}

/// Which aspects to take from the target utterance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AspectSet {
    pub rhythm: bool,
    pub pitch: bool,
    pub timbre: bool,
}

impl AspectSet {
    pub const fn only(a: Aspect) -> Self {
        Self { rhythm: matches!(a, Aspect::Rhythm), pitch: matches!(a, Aspect::Pitch), timbre: matches!(a, Aspect::Timbre) }
    }

    pub const fn all() -> Self {
        Self { rhythm: true, pitch: true, timbre: true }
    }

    pub fn contains(self, a: Aspect) -> bool {
        match a {
            Aspect::Rhythm => self.rhythm,
            Aspect::Pitch => self.pitch,
            Aspect::Timbre => self.timbre,
        }
    }

    pub fn is_empty(self) -> bool {
        !(self.rhythm || self.pitch || self.timbre)
    }

    /// The seven non-empty subsets: three single, three double, one triple.
    pub fn nonempty_subsets() -> [AspectSet; 7] {
        let s = |rhythm, pitch, timbre| AspectSet { rhythm, pitch, timbre };
        [
            s(true, false, false),
            s(false, true, false),
            s(false, false, true),
            s(true, true, false),
            s(true, false, true),
            s(false, true, true),
            s(true, true, true),
        ]
    }

    /// `rhythm+pitch` style label.
    pub fn label(self) -> String {
        let names: Vec<&str> = Aspect::ALL.iter().filter(|&&a| self.contains(a)).map(|a| a.name()).collect();
        names.join("+")
    }
}

impl fmt::Display for AspectSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for AspectSet {
    type Err = Error;

    /// Comma- or plus-separated aspect names.
    fn from_str(s: &str) -> Result<Self> {
        let mut set = AspectSet::default();
        for part in s.split([',', '+']).map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "rhythm" => set.rhythm = true,
                "pitch" => set.pitch = true,
                "timbre" => set.timbre = true,
                other => return Err(Error::Invalid(alloc::format!("unknown aspect '{other}'"))),
            }
        }
        if set.is_empty() {
            return Err(Error::Invalid("aspect set must not be empty".into()));
        }
        Ok(set)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversionRequest {
    pub source: String,
    pub target: String,
    pub aspects: AspectSet,
}

impl ConversionRequest {
    pub fn new(source: impl Into<String>, target: impl Into<String>, aspects: AspectSet) -> Result<Self> {
        if aspects.is_empty() {
            return Err(Error::Invalid("aspect set must not be empty".into()));
        }
        Ok(Self { source: source.into(), target: target.into(), aspects })
    }
}

/// A model with its parameters and the number of optimisation steps behind them.
#[derive(Clone, Debug)]
pub struct Trained<M> {
    pub model: M,
    pub params: ParamStore<f32>,
    pub steps: u64,
}

impl<M> Trained<M> {
    pub fn new(model: M, params: ParamStore<f32>, steps: u64) -> Self {
        Self { model, params, steps }
    }

    pub fn ensure_trained(&self) -> Result<()> {
        if self.steps == 0 {
            Err(Error::Untrained)
        } else {
            Ok(())
        }
    }
}

fn lookup<'a>(corpus: &'a [Utterance], id: &str) -> Result<&'a Utterance> {
    corpus
        .iter()
        .find(|u| u.id == id)
        .ok_or_else(|| Error::Invalid(alloc::format!("no features for utterance '{id}'")))
}

/// Re-time `target_pitch` onto the rhythm of `source_mel` with the pitch-contour model.
/// The result has one frame per source frame.
pub fn align_pitch_contour(target_pitch: &QuantizedPitch, source_mel: &Matrix<f32>, mini: &Trained<PitchMini>) -> Result<QuantizedPitch> {
    mini.ensure_trained()?;
    if target_pitch.bins().iter().all(|&b| b == crate::featureio::UNVOICED_BIN) {
        return Ok(QuantizedPitch::unvoiced(source_mel.rows()));
    }
    let pitch = target_pitch.to_matrix::<f32>();
    let logits = mini.model.infer(&mini.params, &MiniInputs { rhythm: source_mel, pitch: &pitch })?;
    QuantizedPitch::from_logits(&logits)
}

/// Convert `req.source` toward `req.target` in the requested aspects. Resampling is off;
/// the output has as many frames as the utterance feeding the rhythm encoder. Pitch
/// conversions need the pitch-contour model.
pub fn convert(
    req: &ConversionRequest,
    model: &Trained<SpeechSplit>,
    mini: Option<&Trained<PitchMini>>,
    corpus: &[Utterance],
) -> Result<Matrix<f32>> {
    if req.aspects.is_empty() {
        return Err(Error::Invalid("aspect set must not be empty".into()));
    }
    model.ensure_trained()?;
    let src = lookup(corpus, &req.source)?;
    let tgt = lookup(corpus, &req.target)?;
    let a = req.aspects;
    let rhythm_side = if a.rhythm { tgt } else { src };
    let pitch = if a.pitch {
        let mini = mini.ok_or_else(|| Error::Invalid("pitch conversion needs a trained pitch-contour model".into()))?;
        align_pitch_contour(&tgt.pitch, &rhythm_side.mel, mini)?
    } else {
        src.pitch.clone()
    };
    let speaker = if a.timbre { tgt.speaker } else { src.speaker };
    let onehot = SpeakerLabel::new(speaker, model.model.config.n_speakers)?.onehot::<f32>();
    let pitch = pitch.to_matrix::<f32>();
    model.model.infer(
        &model.params,
        &ForwardInputs { rhythm: &rhythm_side.mel, content: &src.mel, pitch: &pitch, speaker: &onehot },
    )
}

/// Plain reconstruction (every input from the utterance itself).
pub fn reconstruct(utt: &Utterance, model: &Trained<SpeechSplit>) -> Result<Matrix<f32>> {
    model.ensure_trained()?;
    let onehot = SpeakerLabel::new(utt.speaker, model.model.config.n_speakers)?.onehot::<f32>();
    let pitch = utt.pitch.to_matrix::<f32>();
    model.model.infer(&model.params, &ForwardInputs { rhythm: &utt.mel, content: &utt.mel, pitch: &pitch, speaker: &onehot })
}

/// All seven conversions of a pair, in [`AspectSet::nonempty_subsets`] order.
pub fn enumerate_conversions(
    source: &str,
    target: &str,
    model: &Trained<SpeechSplit>,
    mini: Option<&Trained<PitchMini>>,
    corpus: &[Utterance],
) -> Result<Vec<(AspectSet, Matrix<f32>)>> {
    AspectSet::nonempty_subsets()
        .into_iter()
        .map(|a| Ok((a, convert(&ConversionRequest::new(source, target, a)?, model, mini, corpus)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ModelConfig;
    use crate::rng::child_rng;
    use crate::synthgen::sample_corpus;

    fn tiny_pair() -> (Trained<SpeechSplit>, Trained<PitchMini>, Vec<Utterance>) {
        let corpus = sample_corpus(2, 4, 9).unwrap();
        let utts: Vec<Utterance> = corpus.entries.iter().map(crate::synthgen::SynthCorpus::to_utterance).collect();
        let cfg = ModelConfig { n_mels: 80, pitch_bins: 257, ..ModelConfig::tiny(2) };
        let (m, p) = SpeechSplit::new::<f32>(cfg.clone(), &mut child_rng(0, "m")).unwrap();
        let (mm, mp) = PitchMini::new::<f32>(cfg, &mut child_rng(0, "mini")).unwrap();
        (Trained::new(m, p, 1), Trained::new(mm, mp, 1), utts)
    }

    #[test]
    fn aspect_sets_parse_and_enumerate() {
        assert_eq!("rhythm,pitch".parse::<AspectSet>().unwrap(), AspectSet { rhythm: true, pitch: true, timbre: false });
        assert_eq!("timbre".parse::<AspectSet>().unwrap(), AspectSet::only(Aspect::Timbre));
        assert!("".parse::<AspectSet>().is_err());
        assert!("tempo".parse::<AspectSet>().is_err());
        let subsets = AspectSet::nonempty_subsets();
        assert_eq!(subsets.len(), 7);
        for (i, a) in subsets.iter().enumerate() {
            assert!(!a.is_empty());
            assert_eq!(a.label().parse::<AspectSet>().unwrap(), *a);
            assert!(subsets[i + 1..].iter().all(|b| b != a));
        }
        assert!(ConversionRequest::new("a", "b", AspectSet::default()).is_err());
    }

    #[test]
    fn rhythm_input_sets_the_clock() {
        let (m, mini, utts) = tiny_pair();
        let (s, t) = (&utts[6], &utts[7]);
        assert_ne!(s.mel.rows(), t.mel.rows());
        let outs = enumerate_conversions(&s.id, &t.id, &m, Some(&mini), &utts).unwrap();
        assert_eq!(outs.len(), 7);
        for (a, out) in &outs {
            let expect = if a.rhythm { t.mel.rows() } else { s.mel.rows() };
            assert_eq!(out.rows(), expect, "{a}");
            assert_eq!(out.cols(), 80);
        }
        let timbre = &outs[2].1;
        let recon = reconstruct(s, &m).unwrap();
        assert_ne!(timbre, &recon);
    }

    #[test]
    fn alignment_follows_source_length() {
        let (_, mini, utts) = tiny_pair();
        let (s, t) = (&utts[0], &utts[1]);
        let aligned = align_pitch_contour(&t.pitch, &s.mel, &mini).unwrap();
        assert_eq!(aligned.len(), s.mel.rows());
        let silent = align_pitch_contour(&QuantizedPitch::unvoiced(t.pitch.len()), &s.mel, &mini).unwrap();
        assert!(silent.bins().iter().all(|&b| b == crate::featureio::UNVOICED_BIN));
    }

    #[test]
    fn errors_are_reported() {
        let (m, mini, utts) = tiny_pair();
        let req = ConversionRequest::new(utts[0].id.clone(), "missing", AspectSet::only(Aspect::Timbre)).unwrap();
        assert!(matches!(convert(&req, &m, None, &utts), Err(Error::Invalid(_))));
        let req = ConversionRequest::new(utts[0].id.clone(), utts[1].id.clone(), AspectSet::only(Aspect::Pitch)).unwrap();
        assert!(convert(&req, &m, None, &utts).is_err());
        let fresh = Trained::new(m.model.clone(), m.params.clone(), 0);
        assert_eq!(convert(&req, &fresh, Some(&mini), &utts), Err(Error::Untrained));
        let fresh_mini = Trained::new(mini.model.clone(), mini.params.clone(), 0);
        assert_eq!(align_pitch_contour(&utts[1].pitch, &utts[0].mel, &fresh_mini), Err(Error::Untrained));
    }
}
