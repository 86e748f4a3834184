//! Synthetic multi-modal data generation.
//!
//! Scenarios are built from Matern Gaussian-process draws: an
//! interconnected block of ten features sharing correlated noise, plus
//! independent filler features to reach the requested modality mix.

mod gp;
mod matern;
mod scenario;

pub use gp::{cholesky_with_jitter, sample_gp};
pub use matern::{matern_cov, matern_gram, MaternParams};
pub use scenario::{
    generate_scenario, make_interconnected, train_test_split, InterconnectedBlock, ScenarioConfig,
};
