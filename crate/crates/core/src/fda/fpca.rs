//! Functional principal components of a curve ensemble.
//!
//! The covariance operator is discretized on the shared quadrature grid:
//! with quadrature weights W and grid covariance C, the symmetric problem
//! W^(1/2) C W^(1/2) u = lambda u yields components phi = W^(-1/2) u that
//! are orthonormal in L2. Components are kept both as grid functions (used
//! for projection) and as coefficient vectors on the curves' B-spline
//! basis (the ensemble lives in that span, so the conversion is exact up
//! to roundoff).

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::basis::{BSplineBasis, Curve};
use super::quad::simpson_rule;
use crate::error::{Error, Result};

/// Mean and leading principal components of a curve ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FpcBasis {
    basis: BSplineBasis,
    mean_coeffs: DVector<f64>,
    component_coeffs: Vec<DVector<f64>>,
    /// Descending, clipped at zero; one per retained component.
    eigenvalues: Vec<f64>,
    /// Trace of the discretized covariance: the ensemble's total variance.
    total_variance: f64,
    grid: Vec<f64>,
    weights: Vec<f64>,
    mean_grid: DVector<f64>,
    component_grid: Vec<DVector<f64>>,
}

impl FpcBasis {
    pub fn n_components(&self) -> usize {
        self.component_grid.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    pub fn quad_grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn basis(&self) -> &BSplineBasis {
        &self.basis
    }

    pub fn mean_curve(&self) -> Curve {
        Curve::new(Arc::new(self.basis.clone()), self.mean_coeffs.clone())
            .expect("mean coefficients match the basis")
    }

    pub fn component_curve(&self, r: usize) -> Curve {
        Curve::new(Arc::new(self.basis.clone()), self.component_coeffs[r].clone())
            .expect("component coefficients match the basis")
    }

    /// Grid values of component `r` on the quadrature grid.
    pub fn component_values(&self, r: usize) -> &DVector<f64> {
        &self.component_grid[r]
    }

    /// Scores of a curve: L2 inner products of the mean-centered input
    /// with each component, on the quadrature grid.
    pub fn project(&self, curve: &Curve) -> Result<DVector<f64>> {
        if curve.domain() != self.basis.domain() {
            let (da, db) = (curve.domain(), self.basis.domain());
            return Err(Error::DomainMismatch {
                a_lo: da.t_min(),
                a_hi: da.t_max(),
                b_lo: db.t_min(),
                b_hi: db.t_max(),
            });
        }
        let values = DVector::from_vec(curve.eval_grid(&self.grid)?);
        Ok(self.project_values(&values))
    }

    /// Scores for raw grid values (already on the quadrature grid).
    pub fn project_values(&self, values: &DVector<f64>) -> DVector<f64> {
        let centered = values - &self.mean_grid;
        DVector::from_iterator(
            self.n_components(),
            self.component_grid.iter().map(|phi| {
                centered
                    .iter()
                    .zip(phi.iter())
                    .zip(&self.weights)
                    .map(|((x, p), w)| x * p * w)
                    .sum::<f64>()
            }),
        )
    }

    /// Truncated reconstruction from scores, as a curve on the ensemble basis.
    pub fn reconstruct(&self, scores: &[f64]) -> Curve {
        assert!(scores.len() <= self.n_components());
        let mut coeffs = self.mean_coeffs.clone();
        for (s, c) in scores.iter().zip(&self.component_coeffs) {
            coeffs += c * *s;
        }
        Curve::new(Arc::new(self.basis.clone()), coeffs).expect("coefficients match basis")
    }
}

/// Computes the leading `k` principal components of `curves`.
///
/// All curves must share one basis, and `k <= min(n - 1, grid size)`:
/// centering removes one degree of freedom, so the sample covariance has
/// rank at most n - 1.
pub fn fpca(curves: &[Curve], k: usize) -> Result<FpcBasis> {
    let n = curves.len();
    if n < 2 {
        return Err(Error::Fpca(format!("need at least 2 curves, got {n}")));
    }
    let basis = curves[0].basis();
    if curves.iter().any(|c| c.basis().as_ref() != basis.as_ref()) {
        return Err(Error::Fpca("curves must share one basis".into()));
    }
    let (grid, weights) = simpson_rule(basis.domain());
    let g = grid.len();
    if k == 0 || k > (n - 1).min(g) {
        return Err(Error::Fpca(format!(
            "k = {k} outside [1, min(n - 1, grid)] = [1, {}]",
            (n - 1).min(g)
        )));
    }

    // Evaluate the ensemble on the quadrature grid.
    let b_grid = basis.design_matrix(&grid)?;
    let mut coeff_rows = DMatrix::zeros(n, basis.k());
    for (i, c) in curves.iter().enumerate() {
        coeff_rows.row_mut(i).copy_from(&c.coeffs().transpose());
    }
    let values = &coeff_rows * b_grid.transpose(); // n x g

    let mean_grid = DVector::from_iterator(g, (0..g).map(|j| values.column(j).mean()));
    let mut centered = values;
    for i in 0..n {
        for j in 0..g {
            centered[(i, j)] -= mean_grid[j];
        }
    }

    // Population covariance on the grid, then the weight-symmetrized form.
    let cov = centered.transpose() * &centered / n as f64;
    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let mut m = cov;
    for i in 0..g {
        for j in 0..g {
            m[(i, j)] *= sqrt_w[i] * sqrt_w[j];
        }
    }
    let total_variance = m.trace();

    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("eigenvalues are finite")
    });

    // Coefficient recovery: weighted least squares of each grid component
    // onto the basis. Exact when the component lies in the basis span.
    let mut btw = b_grid.transpose();
    for (j, &w) in weights.iter().enumerate() {
        btw.column_mut(j).scale_mut(w);
    }
    let gram = &btw * &b_grid;
    let chol = Cholesky::new(gram)
        .ok_or_else(|| Error::Fpca("basis Gram matrix is not positive definite".into()))?;
    let mean_coeffs = DVector::from_iterator(
        basis.k(),
        (0..basis.k()).map(|j| coeff_rows.column(j).mean()),
    );

    let mut eigenvalues = Vec::with_capacity(k);
    let mut component_grid = Vec::with_capacity(k);
    let mut component_coeffs = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        eigenvalues.push(eig.eigenvalues[idx].max(0.0));
        let u = eig.eigenvectors.column(idx);
        let mut phi = DVector::from_iterator(g, u.iter().zip(&sqrt_w).map(|(v, s)| v / s));
        let mut coeffs = chol.solve(&(&btw * &phi));
        // Sign convention: the coefficient of largest magnitude is positive.
        let lead = coeffs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).expect("finite"))
            .map(|(i, _)| i)
            .expect("basis is non-empty");
        if coeffs[lead] < 0.0 {
            coeffs.neg_mut();
            phi.neg_mut();
        }
        component_grid.push(phi);
        component_coeffs.push(coeffs);
    }

    Ok(FpcBasis {
        basis: basis.as_ref().clone(),
        mean_coeffs,
        component_coeffs,
        eigenvalues,
        total_variance,
        grid,
        weights,
        mean_grid,
        component_grid,
    })
}
