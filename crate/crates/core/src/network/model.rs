use alloc::vec::Vec;

use super::config::ModelConfig;
use super::decoder::{deinterleave, interleave, Decoder, DecoderCache};
use super::encoder::{Encoder, EncoderCache, PlanSource};
use crate::codec::{fit_rows, fit_rows_backward, padded_len, upsample_rows, upsample_rows_backward};
use crate::error::{Error, Result};
use crate::featureio::QuantizedPitch;
use crate::nn::{Gradients, ParamStore};
use crate::resample::identity_plan;
use crate::rng::Rng;
use crate::tensor::{Matrix, Scalar};

/// The three bottleneck codes at the reduced frame rate, sharing one row count.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeBundle<S = f32> {
    pub content: Matrix<S>,
    pub rhythm: Matrix<S>,
    pub pitch: Matrix<S>,
    pub factor: usize,
}

impl<S: Scalar> CodeBundle<S> {
    /// Bundle codes on the rhythm code's clock: content and pitch codes are truncated or
    /// extended (repeating their last row) to the rhythm row count.
    pub fn on_rhythm_clock(content: &Matrix<S>, rhythm: Matrix<S>, pitch: &Matrix<S>, factor: usize) -> Self {
        let rows = rhythm.rows();
        Self { content: fit_rows(content, rows), pitch: fit_rows(pitch, rows), rhythm, factor }
    }

    pub fn rows(&self) -> usize {
        self.rhythm.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.rhythm.rows();
        if self.content.rows() != r || self.pitch.rows() != r {
            return Err(Error::Shape(alloc::format!(
                "code rows differ: content {}, rhythm {}, pitch {}",
                self.content.rows(),
                r,
                self.pitch.rows()
            )));
        }
        if !(self.content.is_finite() && self.rhythm.is_finite() && self.pitch.is_finite()) {
            return Err(Error::NonFinite("code bundle".into()));
        }
        Ok(())
    }
}

/// One-hot speaker identity.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerLabel {
    index: usize,
    count: usize,
}

impl SpeakerLabel {
    pub fn new(index: usize, count: usize) -> Result<Self> {
        if index >= count {
            return Err(Error::Invalid(alloc::format!("speaker {index} out of range for {count} speakers")));
        }
        Ok(Self { index, count })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn onehot<S: Scalar>(&self) -> Vec<S> {
        (0..self.count).map(|i| if i == self.index { S::one() } else { S::zero() }).collect()
    }
}

/// Inputs of one forward pass. Each encoder input can be swapped independently, which is
/// how conversions and zero-out probes are expressed.
#[derive(Clone, Copy, Debug)]
pub struct ForwardInputs<'a, S> {
    pub rhythm: &'a Matrix<S>,
    pub content: &'a Matrix<S>,
    pub pitch: &'a Matrix<S>,
    /// One-hot (or all-zero) speaker vector.
    pub speaker: &'a [S],
}

/// Content, rhythm and pitch encoders with a shared decoder.
#[derive(Clone, Debug)]
pub struct SpeechSplit {
    pub config: ModelConfig,
    pub rhythm: Encoder,
    pub content: Encoder,
    pub pitch: Encoder,
    pub decoder: Decoder,
}

struct SampleTape<S> {
    rhythm: EncoderCache<S>,
    content: EncoderCache<S>,
    pitch: EncoderCache<S>,
    rows: (usize, usize, usize),
}

/// Everything the backward pass of a batch needs.
pub struct Tape<S> {
    samples: Vec<SampleTape<S>>,
    decoder: DecoderCache<S>,
    t_len: usize,
}

impl<S: Scalar> Tape<S> {
    /// Rectifier activation pattern of every encoder in the batch.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut v = Vec::new();
        for s in &self.samples {
            s.rhythm.push_active(&mut v);
            s.content.push_active(&mut v);
            s.pitch.push_active(&mut v);
        }
        v
    }
}

impl SpeechSplit {
    pub fn new<S: Scalar>(config: ModelConfig, rng: &mut Rng) -> Result<(Self, ParamStore<S>)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let c = &config;
        let rhythm = Encoder::new(&mut store, "rhythm", c.n_mels, c.rhythm, c.kernel, c.norm_eps, c.forget_bias, rng);
        let content = Encoder::new(&mut store, "content", c.n_mels, c.content, c.kernel, c.norm_eps, c.forget_bias, rng);
        let pitch = Encoder::new(&mut store, "pitch", c.pitch_bins, c.pitch, c.kernel, c.norm_eps, c.forget_bias, rng);
        let code_dim = c.content.code_dim() + c.rhythm.code_dim() + c.pitch.code_dim();
        let decoder = Decoder::new(
            &mut store,
            "decoder",
            code_dim,
            c.n_speakers,
            c.speaker_embedding,
            c.decoder_dim,
            c.decoder_layers,
            c.n_mels,
            c.forget_bias,
            rng,
        );
        Ok((Self { config, rhythm, content, pitch, decoder }, store))
    }

    fn factor(&self) -> usize {
        self.config.frame_factor()
    }

    fn check_inputs<S: Scalar>(&self, inp: &ForwardInputs<'_, S>) -> Result<()> {
        let c = &self.config;
        if inp.rhythm.cols() != c.n_mels || inp.content.cols() != c.n_mels {
            return Err(Error::Shape(alloc::format!("spectrogram inputs must have {} bins", c.n_mels)));
        }
        if inp.pitch.cols() != c.pitch_bins {
            return Err(Error::Shape(alloc::format!("pitch input must have {} bins", c.pitch_bins)));
        }
        if inp.speaker.len() != c.n_speakers {
            return Err(Error::Shape(alloc::format!("speaker vector must have {} entries", c.n_speakers)));
        }
        if inp.rhythm.rows() == 0 || inp.content.rows() == 0 || inp.pitch.rows() == 0 {
            return Err(Error::Shape("inputs must have at least one frame".into()));
        }
        Ok(())
    }

    /// Rhythm code of a spectrogram: `ceil(T/8) × 2`.
    pub fn encode_rhythm<S: Scalar>(&self, p: &ParamStore<S>, mel: &Matrix<S>) -> Result<Matrix<S>> {
        self.rhythm.encode(p, mel, None)
    }

    /// Content code; internal resampling runs only when `plans` is given.
    pub fn encode_content<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        mel: &Matrix<S>,
        plans: Option<&mut PlanSource<'_>>,
    ) -> Result<Matrix<S>> {
        self.content.encode(p, mel, plans)
    }

    /// Pitch code of a validated one-hot contour.
    pub fn encode_pitch<S: Scalar>(&self, p: &ParamStore<S>, pitch: &QuantizedPitch) -> Result<Matrix<S>> {
        self.pitch.encode(p, &pitch.to_matrix(), None)
    }

    /// Pitch code of an arbitrary (e.g. zeroed) pitch input matrix.
    pub fn encode_pitch_raw<S: Scalar>(&self, p: &ParamStore<S>, pitch: &Matrix<S>) -> Result<Matrix<S>> {
        self.pitch.encode(p, pitch, None)
    }

    /// Decode a bundle to `t_out × n_mels`.
    pub fn decode<S: Scalar>(&self, p: &ParamStore<S>, bundle: &CodeBundle<S>, speaker: &[S], t_out: usize) -> Result<Matrix<S>> {
        bundle.validate()?;
        if speaker.len() != self.config.n_speakers {
            return Err(Error::Shape(alloc::format!("speaker vector must have {} entries", self.config.n_speakers)));
        }
        let k = bundle.factor;
        let codes = Matrix::hcat(&[
            &upsample_rows(&bundle.content, k, t_out)?,
            &upsample_rows(&bundle.rhythm, k, t_out)?,
            &upsample_rows(&bundle.pitch, k, t_out)?,
        ]);
        let spk = tile(speaker, t_out);
        Ok(self.decoder.forward(p, &codes, &spk, 1)?.0)
    }

    /// Encode and decode without random resampling. The output length follows the rhythm input.
    pub fn infer<S: Scalar>(&self, p: &ParamStore<S>, inp: &ForwardInputs<'_, S>) -> Result<Matrix<S>> {
        self.check_inputs(inp)?;
        let rhythm = self.encode_rhythm(p, inp.rhythm)?;
        let content = self.encode_content(p, inp.content, None)?;
        let pitch = self.encode_pitch_raw(p, inp.pitch)?;
        let bundle = CodeBundle::on_rhythm_clock(&content, rhythm, &pitch, self.factor());
        self.decode(p, &bundle, inp.speaker, inp.rhythm.rows())
    }

    /// Reconstruction of `(mel, pitch)` with resampling plans drawn from `plans` (or identity
    /// plans when `None`). The output has the input's frame count.
    pub fn forward<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        mel: &Matrix<S>,
        pitch: &Matrix<S>,
        speaker: &[S],
        plans: Option<&mut PlanSource<'_>>,
    ) -> Result<Matrix<S>> {
        let (mut out, _) = self.forward_batch(p, &[ForwardInputs { rhythm: mel, content: mel, pitch, speaker }], plans)?;
        Ok(out.pop().unwrap())
    }

    /// Batched training forward. Every sample's rhythm input must have the same length.
    /// Content and pitch inputs share one drawn plan per sample; the content encoder draws
    /// fresh plans after each of its convolutions.
    pub fn forward_batch<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        batch: &[ForwardInputs<'_, S>],
        mut plans: Option<&mut PlanSource<'_>>,
    ) -> Result<(Vec<Matrix<S>>, Tape<S>)> {
        let t_len = batch.first().map(|b| b.rhythm.rows()).ok_or(Error::EmptyDataset)?;
        let k = self.factor();
        let rows = padded_len(t_len, k) / k;
        let mut tapes = Vec::with_capacity(batch.len());
        let mut dec_codes = Vec::with_capacity(batch.len());
        let mut dec_spk = Vec::with_capacity(batch.len());
        for inp in batch {
            self.check_inputs(inp)?;
            if inp.rhythm.rows() != t_len {
                return Err(Error::Shape("batched samples must share a length".into()));
            }
            if inp.content.rows() != inp.pitch.rows() {
                return Err(Error::Shape(alloc::format!(
                    "content input has {} frames but pitch input {}",
                    inp.content.rows(),
                    inp.pitch.rows()
                )));
            }
            let frames = inp.content.rows();
            let plan = match plans.as_deref_mut() {
                Some(src) if self.config.input_rr => src.draw(frames),
                _ => identity_plan(frames),
            };
            let interp = plan.interpolation(frames)?;
            let content_in = interp.apply(inp.content);
            let pitch_in = interp.apply(inp.pitch);

            let (zr, rhythm) = self.rhythm.forward(p, inp.rhythm, None)?;
            let (zc, content) = self.content.forward(p, &content_in, plans.as_deref_mut())?;
            let (zf, pitch) = self.pitch.forward(p, &pitch_in, None)?;
            let sample_rows = (zc.rows(), zr.rows(), zf.rows());
            let bundle = CodeBundle::on_rhythm_clock(&zc, zr, &zf, k);
            debug_assert_eq!(bundle.rows(), rows);
            dec_codes.push(Matrix::hcat(&[
                &upsample_rows(&bundle.content, k, t_len)?,
                &upsample_rows(&bundle.rhythm, k, t_len)?,
                &upsample_rows(&bundle.pitch, k, t_len)?,
            ]));
            dec_spk.push(tile(inp.speaker, t_len));
            tapes.push(SampleTape { rhythm, content, pitch, rows: sample_rows });
        }
        let n = batch.len();
        let (out, decoder) = self.decoder.forward(p, &interleave(&dec_codes), &interleave(&dec_spk), n)?;
        Ok((deinterleave(&out, n), Tape { samples: tapes, decoder, t_len }))
    }

    /// Accumulate parameter gradients given the output gradients of [`Self::forward_batch`].
    pub fn backward_batch<S: Scalar>(&self, p: &ParamStore<S>, tape: Tape<S>, d_out: &[Matrix<S>], g: &mut Gradients<S>) {
        let n = d_out.len();
        let k = self.factor();
        let rows = padded_len(tape.t_len, k) / k;
        let d_codes = self.decoder.backward(p, tape.decoder, &interleave(d_out), g);
        let per_sample = deinterleave(&d_codes, n);
        let (cd, rd) = (self.config.content.code_dim(), self.config.rhythm.code_dim());
        let fd = self.config.pitch.code_dim();
        for (d, st) in per_sample.into_iter().zip(tape.samples) {
            let d_c = upsample_rows_backward(&d.slice_cols(0, cd), k, rows);
            let d_r = upsample_rows_backward(&d.slice_cols(cd, cd + rd), k, rows);
            let d_f = upsample_rows_backward(&d.slice_cols(cd + rd, cd + rd + fd), k, rows);
            let (c_rows, _, f_rows) = st.rows;
            self.rhythm.backward(p, st.rhythm, &d_r, g);
            self.content.backward(p, st.content, &fit_rows_backward(&d_c, c_rows), g);
            self.pitch.backward(p, st.pitch, &fit_rows_backward(&d_f, f_rows), g);
        }
    }
}

/// Repeat a row vector `t` times.
pub(crate) fn tile<S: Scalar>(v: &[S], t: usize) -> Matrix<S> {
    let mut m = Matrix::zeros(t, v.len());
    for r in 0..t {
        m.row_mut(r).copy_from_slice(v);
    }
    m
}
