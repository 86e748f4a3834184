//! Functional data embeddings, knowledge-graph estimation, and graph
//! convolutional models for multi-modal longitudinal data.
//!
//! The pipeline has three stages. First, longitudinal, categorical, and
//! scalar features observed per entity are embedded into a common tensor
//! representation: functional principal component scores for graph
//! estimation, B-spline coefficients (or codebook vectors) for model
//! training. Second, a knowledge graph over the features is estimated by
//! node-wise functional group-lasso selection along a regularization path.
//! Third, a two-layer graph convolutional network trained on the embedded
//! tensor performs regression, classification, or forecasting, and
//! predictions are decoded back to curves or category levels.

pub mod decode;
pub mod embed;
pub mod error;
pub mod fda;
pub mod gcn;
pub mod graph;
pub mod metrics;
pub mod seeds;
pub mod synth;

pub use error::{Error, Result};
