//! The trainable graph: rhythm, content and pitch encoders, the decoder, and the
//! two-encoder pitch-contour variant.

mod config;
mod decoder;
mod encoder;
mod mini;
mod model;

pub use config::{EncoderSpec, ModelConfig};
pub use decoder::{deinterleave, interleave, Decoder};
pub use encoder::{Encoder, PlanSource};
pub use mini::{build_pitch_mini, softmax_rows, MiniInputs, MiniTape, PitchMini};
pub use model::{CodeBundle, ForwardInputs, SpeakerLabel, SpeechSplit, Tape};
