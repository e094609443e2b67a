//! Unified multimodal data-quality classifier and the curation pipeline
//! around it: synthetic data generation, clustering, scoring, filtering,
//! packing and evaluation.

pub mod classifier;
pub mod cluster;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod filter;
pub mod io;
pub mod nn;
pub mod packing;
pub mod rng;
pub mod scalar;
pub mod synthgen;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};

pub type Tensor32 = nn::Tensor2D<f32>;
pub type Tensor64 = nn::Tensor2D<f64>;
pub type Classifier32 = classifier::Classifier<f32>;
pub type Classifier64 = classifier::Classifier<f64>;
pub type ModelParams32 = classifier::ModelParams<f32>;
pub type ModelParams64 = classifier::ModelParams<f64>;
