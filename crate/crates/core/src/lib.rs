//! Word sense disambiguation with a from-scratch transformer encoder.
//!
//! The crate trains a small transformer on sense-annotated text and
//! disambiguates polysemes either with a per-lemma classifier head or with
//! sense vectors encoded from dictionary definitions, so that lemmas never
//! seen in training can still be classified.
//!
//! All tensor math is generic over the [`Scalar`] type; the training and
//! evaluation pipeline uses the 64-bit aliases exported below.

pub mod data;
pub mod encoder;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod tokenizer;
pub mod train;

pub use scalar::Scalar;

/// 64-bit instantiations used by the training pipeline and the CLI.
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph64 = tensor::Graph<f64>;
pub type EncoderParams64 = encoder::EncoderParams<f64>;
pub type WsdModel64 = model::WsdModel<f64>;

/// 32-bit instantiations, available for memory-constrained experiments.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph32 = tensor::Graph<f32>;
