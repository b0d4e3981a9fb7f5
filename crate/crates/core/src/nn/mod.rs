//! Neural-network building blocks with explicit forward and backward passes.

mod adam;
mod layers;
mod lstm;
mod params;

pub use adam::{AdamConfig, AdamState};
pub use layers::{relu, relu_backward, Conv1d, ConvCache, ConvNorm, ConvNormCache, GroupNorm, GroupNormCache, Linear};
pub use lstm::{BiLstm, BiLstmCache, BiLstmStack, Lstm, LstmCache};
pub use params::{Gradients, ParamId, ParamStore};
pub(crate) use params::join;
