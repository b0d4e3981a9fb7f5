use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resample::ResampleLaw;

/// Hyperparameters of one encoder stack: convolutions with group normalisation, then a
/// bidirectional LSTM stack, then temporal downsampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub conv_layers: usize,
    pub conv_dim: usize,
    pub norm_groups: usize,
    pub blstm_layers: usize,
    /// Hidden width per direction.
    pub blstm_dim: usize,
    pub downsample_factor: usize,
    /// Random resampling after every convolution layer.
    pub uses_internal_rr: bool,
}

impl EncoderSpec {
    pub const fn rhythm() -> Self {
        Self {
            conv_layers: 1,
            conv_dim: 128,
            norm_groups: 8,
            blstm_layers: 1,
            blstm_dim: 1,
            downsample_factor: 8,
            uses_internal_rr: false,
        }
    }

    pub const fn content() -> Self {
        Self {
            conv_layers: 3,
            conv_dim: 512,
            norm_groups: 32,
            blstm_layers: 2,
            blstm_dim: 8,
            downsample_factor: 8,
            uses_internal_rr: true,
        }
    }

    pub const fn pitch() -> Self {
        Self {
            conv_layers: 3,
            conv_dim: 256,
            norm_groups: 16,
            blstm_layers: 1,
            blstm_dim: 32,
            downsample_factor: 8,
            uses_internal_rr: false,
        }
    }

    /// Channels of the downsampled code (both directions).
    pub fn code_dim(&self) -> usize {
        2 * self.blstm_dim
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let bad = |what: &str| Err(Error::Invalid(alloc::format!("{name} encoder: {what}")));
        if self.conv_layers == 0 || self.blstm_layers == 0 {
            return bad("needs at least one convolution and one recurrent layer");
        }
        if self.norm_groups == 0 || self.conv_dim % self.norm_groups != 0 {
            return bad("conv_dim must be divisible by norm_groups");
        }
        if self.blstm_dim == 0 || self.downsample_factor == 0 {
            return bad("recurrent width and downsample factor must be positive");
        }
        Ok(())
    }
}

/// Full architecture description. Stored in checkpoints; loading refuses a mismatch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_mels: usize,
    pub pitch_bins: usize,
    pub n_speakers: usize,
    pub rhythm: EncoderSpec,
    pub content: EncoderSpec,
    pub pitch: EncoderSpec,
    /// Decoder recurrent width per direction.
    pub decoder_dim: usize,
    pub decoder_layers: usize,
    pub kernel: usize,
    pub norm_eps: f64,
    pub forget_bias: f64,
    /// Random resampling at the content and pitch inputs (shared plan).
    pub input_rr: bool,
    pub resample: ResampleLaw,
    /// Replace the one-hot speaker input by a learned embedding of this width.
    pub speaker_embedding: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            pitch_bins: 257,
            n_speakers: 8,
            rhythm: EncoderSpec::rhythm(),
            content: EncoderSpec::content(),
            pitch: EncoderSpec::pitch(),
            decoder_dim: 512,
            decoder_layers: 3,
            kernel: 5,
            norm_eps: 1e-5,
            forget_bias: 1.0,
            input_rr: true,
            resample: ResampleLaw::default(),
            speaker_embedding: None,
        }
    }
}

impl ModelConfig {
    /// Encoders exactly as tabulated; decoder narrowed to 128 per direction so a full
    /// training run fits on one CPU core.
    pub fn desk(n_speakers: usize) -> Self {
        Self { n_speakers, decoder_dim: 128, ..Self::default() }
    }

    /// Small configuration for finite-difference gradient checks.
    pub fn tiny(n_speakers: usize) -> Self {
        let shrink = |s: EncoderSpec, blstm_layers| EncoderSpec {
            conv_dim: 8,
            norm_groups: 2,
            blstm_dim: 2,
            blstm_layers,
            ..s
        };
        Self {
            n_mels: 6,
            pitch_bins: 9,
            n_speakers,
            rhythm: shrink(EncoderSpec::rhythm(), 1),
            content: EncoderSpec { conv_layers: 2, ..shrink(EncoderSpec::content(), 1) },
            pitch: EncoderSpec { conv_layers: 1, ..shrink(EncoderSpec::pitch(), 1) },
            decoder_dim: 3,
            decoder_layers: 1,
            ..Self::default()
        }
    }

    /// Rhythm code widened as in the wide-bottleneck failure experiment.
    pub fn with_rhythm_dim(mut self, dim: usize) -> Self {
        self.rhythm.blstm_dim = dim;
        self
    }

    pub fn frame_factor(&self) -> usize {
        self.rhythm.downsample_factor
    }

    pub fn decoder_input_dim(&self) -> usize {
        self.content.code_dim() + self.rhythm.code_dim() + self.pitch.code_dim() + self.speaker_dim()
    }

    pub fn speaker_dim(&self) -> usize {
        self.speaker_embedding.unwrap_or(self.n_speakers)
    }

    pub fn validate(&self) -> Result<()> {
        self.rhythm.validate("rhythm")?;
        self.content.validate("content")?;
        self.pitch.validate("pitch")?;
        self.resample.validate()?;
        let k = self.rhythm.downsample_factor;
        if self.content.downsample_factor != k || self.pitch.downsample_factor != k {
            return Err(Error::Invalid("all encoders must share one downsample factor".into()));
        }
        if self.n_speakers == 0 || self.n_mels == 0 || self.pitch_bins < 2 {
            return Err(Error::Invalid("speaker count, mel bins and pitch bins must be positive".into()));
        }
        if self.decoder_dim == 0 || self.decoder_layers == 0 || self.kernel % 2 == 0 {
            return Err(Error::Invalid("decoder needs width and depth; kernel must be odd".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_encoders_match_the_table() {
        let c = ModelConfig::default();
        let row = |s: EncoderSpec| {
            (s.conv_layers, s.conv_dim, s.norm_groups, s.blstm_layers, s.blstm_dim, s.downsample_factor, s.uses_internal_rr)
        };
        assert_eq!(row(c.rhythm), (1, 128, 8, 1, 1, 8, false));
        assert_eq!(row(c.content), (3, 512, 32, 2, 8, 8, true));
        assert_eq!(row(c.pitch), (3, 256, 16, 1, 32, 8, false));
        assert_eq!(c.decoder_input_dim(), 16 + 2 + 64 + 8);
        c.validate().unwrap();
        ModelConfig::tiny(2).validate().unwrap();
    }

    #[test]
    fn bad_group_count_is_rejected() {
        let mut c = ModelConfig::default();
        c.pitch.norm_groups = 7;
        assert!(c.validate().is_err());
    }
}
