//! Gaussian-process sampling on a fixed grid.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::synth::matern::{matern_gram, MaternParams};

/// Cholesky factorization with a multiplicative jitter ladder: the diagonal
/// is inflated by factors 1 + 1e-12, 1e-11, ..., 1e-6 until the
/// factorization succeeds. Fails only for matrices that are indefinite
/// well beyond floating-point noise.
pub fn cholesky_with_jitter(mat: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(chol) = Cholesky::new(mat.clone()) {
        return Ok(chol);
    }
    let mut jitter = 1e-12;
    while jitter <= 1e-6 {
        let mut bumped = mat.clone();
        for i in 0..bumped.nrows() {
            bumped[(i, i)] *= 1.0 + jitter;
        }
        if let Some(chol) = Cholesky::new(bumped) {
            return Ok(chol);
        }
        jitter *= 10.0;
    }
    Err(Error::Generation(format!(
        "covariance matrix of size {} is not positive definite even with 1e-6 relative jitter",
        mat.nrows()
    )))
}

/// Draws `n` independent GP sample paths over `grid` with the given Matern
/// kernel. Draws are consumed path by path from the supplied generator, so
/// the output is reproducible for a fixed seed and grid.
pub fn sample_gp<R: Rng>(
    n: usize,
    grid: &[f64],
    params: &MaternParams,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    if n == 0 || grid.is_empty() {
        return Err(Error::Contract("need at least one path and one grid point".into()));
    }
    let gram = matern_gram(grid, params)?;
    let chol = cholesky_with_jitter(&gram)?;
    let g = grid.len();
    let mut paths = Vec::with_capacity(n);
    for _ in 0..n {
        let z = DVector::from_iterator(g, (0..g).map(|_| rng.sample::<f64, _>(StandardNormal)));
        paths.push(chol.l() * z);
    }
    Ok(paths)
}
