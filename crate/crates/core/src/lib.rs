//! Unsupervised decomposition of speech into rhythm, content, pitch and timbre through
//! three narrow encoder bottlenecks and a speaker-conditioned decoder.
//!
//! The crate is `no_std` with `alloc` when built without the default `std` feature.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod codec;
pub mod converter;
pub mod error;
pub mod evalmetrics;
pub mod featureio;
pub mod network;
pub mod nn;
pub mod probes;
pub mod resample;
pub mod trainer;
pub mod rng;
pub mod synthgen;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Matrix, Scalar};
