//! Ranking-based group identification (RGI) on a social tripartite graph.
//!
//! The library ingests user-group, user-item and group-item edge lists,
//! trains personalized and contextual embeddings with tripartite graph
//! convolution plus factorized-attention propagation augmentation under a
//! BPR objective, and evaluates top-K group recommendation.
//!
//! Numeric kernels are generic over the scalar type ([`scalar::Scalar`],
//! implemented for `f32`/`f64`); training and the CLI use the `f64` aliases
//! below.

pub mod analysis;
pub mod checkpoint;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod graph;
pub mod model;
pub mod numeric;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use graph::{DatasetSplit, TripartiteGraph};
pub use model::{HyperParams, ModelParams};

/// Default 64-bit working types.
pub type Matrix64 = numeric::DenseMatrix<f64>;
pub type Model64 = model::ModelParams<f64>;
pub type AdamState64 = numeric::AdamState<f64>;
pub type Trace64 = model::ForwardTrace<f64>;

/// 32-bit counterparts for memory-bound experimentation.
pub type Matrix32 = numeric::DenseMatrix<f32>;
pub type Model32 = model::ModelParams<f32>;
