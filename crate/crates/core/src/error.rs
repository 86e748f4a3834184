//! Error types shared across the library.

use thiserror::Error;

/// Errors produced by the embedding, graph, model, and generator stages.
///
/// Variants are grouped by origin so callers can map them onto coarse
/// classes: configuration and contract violations versus numerical
/// failures discovered at run time.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Invalid construction parameters for a basis, config, or task.
    #[error("config: {0}")]
    Config(String),

    /// Input data violates a documented precondition.
    #[error("contract: {0}")]
    Contract(String),

    /// Evaluation point lies outside the basis domain.
    #[error("point {t} outside domain [{lo}, {hi}]")]
    OutsideDomain { t: f64, lo: f64, hi: f64 },

    /// Two functional arguments live on different domains.
    #[error("domain mismatch: [{a_lo}, {a_hi}] vs [{b_lo}, {b_hi}]")]
    DomainMismatch {
        a_lo: f64,
        a_hi: f64,
        b_lo: f64,
        b_hi: f64,
    },

    /// Penalized least squares failed at every penalty on the grid.
    #[error("smoothing failed: {0}")]
    Smoothing(String),

    /// Functional principal component analysis could not run.
    #[error("fpca: {0}")]
    Fpca(String),

    /// One or more features failed to embed; each entry carries the
    /// feature name and the underlying failure.
    #[error("embedding failed for {} feature(s): {}", .0.len(), format_feature_errors(.0))]
    Embedding(Vec<(String, Box<Error>)>),

    /// Group-lasso solver exhausted its iteration budget.
    #[error("solver did not converge: KKT residual {kkt:.3e} after {iters} iterations")]
    Convergence { kkt: f64, iters: usize },

    /// The optimization problem is degenerate (for example a zero design).
    #[error("degenerate problem: {0}")]
    Degenerate(String),

    /// Adjacency assembly or normalization failed.
    #[error("graph: {0}")]
    Graph(String),

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    /// Synthetic data generation failed.
    #[error("generation: {0}")]
    Generation(String),

    /// A numerical routine was asked for something outside its validated range.
    #[error("unsupported: {0}")]
    Unsupported(String),
}

fn format_feature_errors(errors: &[(String, Box<Error>)]) -> String {
    errors
        .iter()
        .map(|(name, e)| format!("{name}: {e}"))
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by invalid configuration or input contracts,
    /// as opposed to numerical failures at run time.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Contract(_)
                | Error::OutsideDomain { .. }
                | Error::DomainMismatch { .. }
                | Error::Unsupported(_)
        )
    }
}
