//! File formats, audio IO, plotting and the end-to-end workflows behind the `speechsplit` binary.

pub mod audio;
pub mod error;
pub mod persistence;
pub mod plot;
pub mod workflows;

pub use error::{AppError, AppResult};
pub use speechsplit_core as core;
