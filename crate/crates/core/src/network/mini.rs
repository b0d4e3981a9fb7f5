use alloc::vec::Vec;

use super::config::ModelConfig;
use super::decoder::{deinterleave, interleave, Decoder, DecoderCache};
use super::encoder::{Encoder, EncoderCache, PlanSource};
use crate::codec::{fit_rows, fit_rows_backward, padded_len, upsample_rows, upsample_rows_backward};
use crate::error::{Error, Result};
use crate::nn::{Gradients, ParamStore};
use crate::resample::identity_plan;
use crate::rng::Rng;
use crate::tensor::{Matrix, Scalar};

/// Two-encoder variant that reconstructs the quantized pitch contour: a rhythm encoder on
/// the spectrogram and a pitch encoder on the resampled contour, decoded to per-frame logits
/// over the pitch bins. Used to re-time a contour onto another utterance's rhythm.
#[derive(Clone, Debug)]
pub struct PitchMini {
    pub config: ModelConfig,
    pub rhythm: Encoder,
    pub pitch: Encoder,
    pub decoder: Decoder,
}

/// Inputs of one mini-model pass.
#[derive(Clone, Copy, Debug)]
pub struct MiniInputs<'a, S> {
    pub rhythm: &'a Matrix<S>,
    pub pitch: &'a Matrix<S>,
}

struct MiniSampleTape<S> {
    rhythm: EncoderCache<S>,
    pitch: EncoderCache<S>,
    pitch_rows: usize,
}

pub struct MiniTape<S> {
    samples: Vec<MiniSampleTape<S>>,
    decoder: DecoderCache<S>,
    t_len: usize,
}

impl<S: Scalar> MiniTape<S> {
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut v = Vec::new();
        for s in &self.samples {
            s.rhythm.push_active(&mut v);
            s.pitch.push_active(&mut v);
        }
        v
    }
}

/// Build the mini model with the same encoder and decoder settings as the main model.
pub fn build_pitch_mini<S: Scalar>(config: &ModelConfig, rng: &mut Rng) -> Result<(PitchMini, ParamStore<S>)> {
    PitchMini::new(config.clone(), rng)
}

impl PitchMini {
    pub fn new<S: Scalar>(config: ModelConfig, rng: &mut Rng) -> Result<(Self, ParamStore<S>)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let c = &config;
        let rhythm = Encoder::new(&mut store, "rhythm", c.n_mels, c.rhythm, c.kernel, c.norm_eps, c.forget_bias, rng);
        let pitch = Encoder::new(&mut store, "pitch", c.pitch_bins, c.pitch, c.kernel, c.norm_eps, c.forget_bias, rng);
        let decoder = Decoder::new(
            &mut store,
            "decoder",
            c.rhythm.code_dim() + c.pitch.code_dim(),
            0,
            None,
            c.decoder_dim,
            c.decoder_layers,
            c.pitch_bins,
            c.forget_bias,
            rng,
        );
        Ok((Self { config, rhythm, pitch, decoder }, store))
    }

    /// Logits (`T × pitch_bins`, `T` from the rhythm input) without resampling.
    pub fn infer<S: Scalar>(&self, p: &ParamStore<S>, inp: &MiniInputs<'_, S>) -> Result<Matrix<S>> {
        let (mut out, _) = self.forward_batch(p, &[*inp], None)?;
        Ok(out.pop().unwrap())
    }

    pub fn forward_batch<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        batch: &[MiniInputs<'_, S>],
        mut plans: Option<&mut PlanSource<'_>>,
    ) -> Result<(Vec<Matrix<S>>, MiniTape<S>)> {
        let t_len = batch.first().map(|b| b.rhythm.rows()).ok_or(Error::EmptyDataset)?;
        let k = self.config.frame_factor();
        let mut codes = Vec::with_capacity(batch.len());
        let mut tapes = Vec::with_capacity(batch.len());
        for inp in batch {
            if inp.rhythm.rows() != t_len {
                return Err(Error::Shape("batched samples must share a length".into()));
            }
            if inp.pitch.cols() != self.config.pitch_bins || inp.pitch.rows() == 0 {
                return Err(Error::Shape(alloc::format!("pitch input must be T x {}", self.config.pitch_bins)));
            }
            let frames = inp.pitch.rows();
            let plan = match plans.as_deref_mut() {
                Some(src) if self.config.input_rr => src.draw(frames),
                _ => identity_plan(frames),
            };
            let pitch_in = plan.interpolation(frames)?.apply(inp.pitch);
            let (zr, rhythm) = self.rhythm.forward(p, inp.rhythm, None)?;
            let (zf, pitch) = self.pitch.forward(p, &pitch_in, None)?;
            let pitch_rows = zf.rows();
            let zf = fit_rows(&zf, zr.rows());
            codes.push(Matrix::hcat(&[&upsample_rows(&zr, k, t_len)?, &upsample_rows(&zf, k, t_len)?]));
            tapes.push(MiniSampleTape { rhythm, pitch, pitch_rows });
        }
        let n = batch.len();
        let none = Matrix::zeros(t_len * n, 0);
        let (out, decoder) = self.decoder.forward(p, &interleave(&codes), &none, n)?;
        Ok((deinterleave(&out, n), MiniTape { samples: tapes, decoder, t_len }))
    }

    pub fn backward_batch<S: Scalar>(&self, p: &ParamStore<S>, tape: MiniTape<S>, d_out: &[Matrix<S>], g: &mut Gradients<S>) {
        let n = d_out.len();
        let k = self.config.frame_factor();
        let rows = padded_len(tape.t_len, k) / k;
        let d_codes = deinterleave(&self.decoder.backward(p, tape.decoder, &interleave(d_out), g), n);
        let rd = self.config.rhythm.code_dim();
        let fd = self.config.pitch.code_dim();
        for (d, st) in d_codes.into_iter().zip(tape.samples) {
            let d_r = upsample_rows_backward(&d.slice_cols(0, rd), k, rows);
            let d_f = upsample_rows_backward(&d.slice_cols(rd, rd + fd), k, rows);
            self.rhythm.backward(p, st.rhythm, &d_r, g);
            self.pitch.backward(p, st.pitch, &fit_rows_backward(&d_f, st.pitch_rows), g);
        }
    }
}

/// Row-wise softmax.
pub fn softmax_rows<S: Scalar>(logits: &Matrix<S>) -> Matrix<S> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
        let mut z = S::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v = *v / z;
        }
    }
    out
}
