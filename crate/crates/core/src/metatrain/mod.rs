//! Alternating meta-training of one shared memory model with a vision
//! model per environment.
//!
//! A cycle is a prediction stage (memory and both vision models learn to
//! predict the next frame) followed by a reconstruction stage (vision
//! models only, with the variant's latent statistics pulled toward the
//! original environment's).

pub mod batch;
pub mod config;
pub mod metrics;
pub mod step;
pub mod train;

pub use batch::{Batch, Sampler, Window};
pub use config::{LatentInput, PairingMode, Precision, TrainConfig};
pub use metrics::{MetricRow, Stage, CSV_HEADER};
pub use train::{load_dataset, train, RunDir, TrainState};
