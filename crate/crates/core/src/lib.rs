//! Meta-world models: per-environment variational vision models sharing
//! one recurrent latent dynamics model across visually transformed Pong
//! variants, with cross-decoding evaluation.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod frame;
pub mod memory;
pub mod metatrain;
pub mod numcore;
pub mod pongsim;
pub mod transforms;
pub mod vision;

pub use error::{Error, Result};
