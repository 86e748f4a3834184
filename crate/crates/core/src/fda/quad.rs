//! Fixed quadrature rule for all L2 integrals.
//!
//! Every integral in the library (inner products, roughness penalties,
//! covariance discretization, error metrics) uses composite Simpson on the
//! same equispaced grid. One rule everywhere keeps quantities computed in
//! different modules exactly comparable, and Simpson is exact for the
//! cubic splines the library works with.

use super::Domain;

/// Number of quadrature points. Odd, so the grid splits into Simpson pairs.
pub const QUAD_POINTS: usize = 201;

/// Returns the quadrature grid and matching weights for `domain`.
///
/// The weights follow the composite Simpson pattern h/3 * [1, 4, 2, ..., 4, 1]
/// and sum to the domain length.
pub fn simpson_rule(domain: &Domain) -> (Vec<f64>, Vec<f64>) {
    let grid = domain.grid(QUAD_POINTS);
    let h = domain.length() / (QUAD_POINTS - 1) as f64;
    let mut weights = vec![0.0; QUAD_POINTS];
    for (i, w) in weights.iter_mut().enumerate() {
        let c = if i == 0 || i == QUAD_POINTS - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        *w = c * h / 3.0;
    }
    (grid, weights)
}

/// Integrates grid values against the Simpson weights.
pub fn integrate(values: &[f64], weights: &[f64]) -> f64 {
    debug_assert_eq!(values.len(), weights.len());
    values.iter().zip(weights).map(|(v, w)| v * w).sum()
}
