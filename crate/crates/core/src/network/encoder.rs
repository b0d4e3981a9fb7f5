use alloc::string::String;
use alloc::vec::Vec;

use super::config::EncoderSpec;
use crate::codec::{downsample, downsample_backward};
use crate::error::{Error, Result};
use crate::nn::{join, BiLstmCache, BiLstmStack, ConvNorm, ConvNormCache, Gradients, ParamStore};
use crate::resample::{draw_plan, Interpolation, ResampleLaw, ResamplePlan};
use crate::rng::Rng;
use crate::tensor::{Matrix, Scalar};

/// Source of random resampling plans for one forward pass.
pub struct PlanSource<'a> {
    pub law: ResampleLaw,
    pub rng: &'a mut Rng,
}

impl<'a> PlanSource<'a> {
    pub fn new(law: ResampleLaw, rng: &'a mut Rng) -> Self {
        Self { law, rng }
    }

    pub fn draw(&mut self, frames: usize) -> ResamplePlan {
        draw_plan(frames, &self.law, self.rng)
    }
}

/// Convolution stack, bidirectional LSTM stack, downsampling.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub spec: EncoderSpec,
    pub input_dim: usize,
    name: String,
    convs: Vec<ConvNorm>,
    lstm: BiLstmStack,
}

pub struct EncoderCache<S> {
    convs: Vec<(ConvNormCache<S>, Option<Interpolation>)>,
    lstm: Vec<BiLstmCache<S>>,
    lstm_len: usize,
}

impl<S: Scalar> EncoderCache<S> {
    pub fn push_active(&self, v: &mut Vec<bool>) {
        for (c, _) in &self.convs {
            c.push_active(v);
        }
    }
}

pub(crate) fn check_finite<S: Scalar>(m: &Matrix<S>, what: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(String::from(what)))
    }
}

impl Encoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        input_dim: usize,
        spec: EncoderSpec,
        kernel: usize,
        eps: f64,
        forget_bias: f64,
        rng: &mut Rng,
    ) -> Self {
        let convs = (0..spec.conv_layers)
            .map(|i| {
                let inp = if i == 0 { input_dim } else { spec.conv_dim };
                ConvNorm::new(
                    store,
                    &join(name, &alloc::format!("conv{i}")),
                    inp,
                    spec.conv_dim,
                    spec.norm_groups,
                    kernel,
                    eps,
                    rng,
                )
            })
            .collect();
        let lstm = BiLstmStack::new(store, name, spec.conv_dim, spec.blstm_dim, spec.blstm_layers, forget_bias, rng);
        Self { spec, input_dim, name: String::from(name), convs, lstm }
    }

    /// Encode one sequence to a `ceil(T'/k) × 2H` code (`[fwd | bwd]` columns), where `T'` is
    /// the length after any internal resampling. Internal resampling runs only when the spec
    /// enables it and `plans` is given.
    pub fn forward<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        x: &Matrix<S>,
        mut plans: Option<&mut PlanSource<'_>>,
    ) -> Result<(Matrix<S>, EncoderCache<S>)> {
        if x.cols() != self.input_dim {
            return Err(Error::Shape(alloc::format!(
                "{} encoder expects {} channels, got {}",
                self.name,
                self.input_dim,
                x.cols()
            )));
        }
        if x.rows() == 0 {
            return Err(Error::Shape(alloc::format!("{} encoder input has no frames", self.name)));
        }
        let mut caches = Vec::with_capacity(self.convs.len());
        let mut cur = x.clone();
        for conv in &self.convs {
            let (y, c) = conv.forward(p, &cur);
            check_finite(&y, &conv.name)?;
            let (y, interp) = match plans.as_deref_mut() {
                Some(src) if self.spec.uses_internal_rr => {
                    let interp = src.draw(y.rows()).interpolation(y.rows())?;
                    (interp.apply(&y), Some(interp))
                }
                _ => (y, None),
            };
            caches.push((c, interp));
            cur = y;
        }
        let lstm_len = cur.rows();
        let (h, lstm) = self.lstm.forward(p, &cur, 1);
        check_finite(&h, &join(&self.name, "lstm"))?;
        let hd = self.spec.blstm_dim;
        let code = downsample(&h.slice_cols(0, hd), &h.slice_cols(hd, 2 * hd), self.spec.downsample_factor)?;
        Ok((code.concat(), EncoderCache { convs: caches, lstm, lstm_len }))
    }

    /// Forward pass without keeping the backward caches.
    pub fn encode<S: Scalar>(&self, p: &ParamStore<S>, x: &Matrix<S>, plans: Option<&mut PlanSource<'_>>) -> Result<Matrix<S>> {
        self.forward(p, x, plans).map(|(c, _)| c)
    }

    pub fn backward<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        cache: EncoderCache<S>,
        d_code: &Matrix<S>,
        g: &mut Gradients<S>,
    ) {
        let hd = self.spec.blstm_dim;
        let (df, db) = downsample_backward(
            &d_code.slice_cols(0, hd),
            &d_code.slice_cols(hd, 2 * hd),
            cache.lstm_len,
            self.spec.downsample_factor,
        );
        let mut d = self.lstm.backward(p, cache.lstm, &Matrix::hcat(&[&df, &db]), g);
        for (i, (conv, (c, interp))) in self.convs.iter().zip(cache.convs).enumerate().rev() {
            if let Some(interp) = interp {
                d = interp.backward(&d);
            }
            if i == 0 {
                conv.param_grads(p, c, d, g);
                return;
            }
            d = conv.backward(p, c, d, g);
        }
    }
}
