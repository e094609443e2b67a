//! Unified quality regressor over caption and interleaved sequences.

mod assemble;
mod checkpoint;
mod config;
mod model;
mod params;
mod train;

pub use assemble::{AssembledSequence, Position, Segment, SequenceInput};
pub use checkpoint::{checkpoint_precision, CHECKPOINT_FORMAT};
pub use config::ModelConfig;
pub use model::{mse_loss, Classifier};
pub use params::ModelParams;
pub use train::{build_vocab, fit, record_texts, train, EpochRecord, TrainConfig, TrainHistory};
