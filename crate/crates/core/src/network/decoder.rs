use alloc::vec::Vec;

use super::encoder::check_finite;
use crate::error::Result;
use crate::nn::{join, BiLstmCache, BiLstmStack, Gradients, Linear, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Matrix, Scalar};

/// Bidirectional LSTM stack with a linear output projection, over time-major batches.
#[derive(Clone, Debug)]
pub struct Decoder {
    lstm: BiLstmStack,
    proj: Linear,
    speaker_embed: Option<Linear>,
    pub code_dim: usize,
    pub speaker_dim: usize,
    pub output_dim: usize,
}

pub struct DecoderCache<S> {
    speakers: Matrix<S>,
    lstm: Vec<BiLstmCache<S>>,
    hidden: Matrix<S>,
}

impl Decoder {
    /// `speaker_dim` is the one-hot width; `embedding` optionally maps it through a learned table.
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        code_dim: usize,
        speaker_dim: usize,
        embedding: Option<usize>,
        hidden: usize,
        layers: usize,
        output_dim: usize,
        forget_bias: f64,
        rng: &mut Rng,
    ) -> Self {
        let speaker_embed = embedding.map(|e| Linear::new(store, &join(name, "speaker_embed"), speaker_dim, e, rng));
        let spk_width = embedding.unwrap_or(speaker_dim);
        let lstm = BiLstmStack::new(store, name, code_dim + spk_width, hidden, layers, forget_bias, rng);
        let proj = Linear::new(store, &join(name, "proj"), 2 * hidden, output_dim, rng);
        Self { lstm, proj, speaker_embed, code_dim, speaker_dim, output_dim }
    }

    /// `codes` and `speakers` are time-major batched sequences with equal row counts.
    pub fn forward<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        codes: &Matrix<S>,
        speakers: &Matrix<S>,
        batch: usize,
    ) -> Result<(Matrix<S>, DecoderCache<S>)> {
        let input = if self.speaker_dim == 0 {
            codes.clone()
        } else {
            let spk = match &self.speaker_embed {
                Some(e) => e.forward(p, speakers),
                None => speakers.clone(),
            };
            Matrix::hcat(&[codes, &spk])
        };
        let (hidden, lstm) = self.lstm.forward(p, &input, batch);
        check_finite(&hidden, "decoder.lstm")?;
        let out = self.proj.forward(p, &hidden);
        check_finite(&out, "decoder.proj")?;
        Ok((out, DecoderCache { speakers: speakers.clone(), lstm, hidden }))
    }

    /// Returns the gradient with respect to `codes`.
    pub fn backward<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        cache: DecoderCache<S>,
        d_out: &Matrix<S>,
        g: &mut Gradients<S>,
    ) -> Matrix<S> {
        let dh = self.proj.backward(p, &cache.hidden, d_out, g);
        let d_in = self.lstm.backward(p, cache.lstm, &dh, g);
        if let Some(e) = &self.speaker_embed {
            let d_spk = d_in.slice_cols(self.code_dim, d_in.cols());
            e.backward(p, &cache.speakers, &d_spk, g);
        }
        d_in.slice_cols(0, self.code_dim)
    }
}

/// Interleave equal-length per-sample sequences into one time-major batch.
pub fn interleave<S: Scalar>(parts: &[Matrix<S>]) -> Matrix<S> {
    let b = parts.len();
    let t_len = parts.first().map_or(0, Matrix::rows);
    let cols = parts.first().map_or(0, Matrix::cols);
    let mut out = Matrix::zeros(t_len * b, cols);
    for t in 0..t_len {
        for (i, part) in parts.iter().enumerate() {
            assert_eq!(part.shape(), (t_len, cols), "batched sequences must share a shape");
            out.row_mut(t * b + i).copy_from_slice(part.row(t));
        }
    }
    out
}

/// Inverse of [`interleave`].
pub fn deinterleave<S: Scalar>(m: &Matrix<S>, batch: usize) -> Vec<Matrix<S>> {
    let t_len = m.rows() / batch;
    (0..batch)
        .map(|i| {
            let mut out = Matrix::zeros(t_len, m.cols());
            for t in 0..t_len {
                out.row_mut(t).copy_from_slice(m.row(t * batch + i));
            }
            out
        })
        .collect()
}
