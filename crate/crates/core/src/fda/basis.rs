//! Clamped cubic B-spline bases and the curves they span.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::quad::{integrate, simpson_rule};
use super::Domain;
use crate::error::{Error, Result};

/// Spline degree used throughout. Cubic splines are the standard choice
/// for smoothing with a second-derivative roughness penalty.
pub const DEGREE: usize = 3;

/// Clamped cubic B-spline basis with equispaced interior knots.
///
/// The knot vector repeats each boundary `DEGREE + 1` times, so the first
/// basis function is 1 at `t_min` and the last is 1 at `t_max`. With `k`
/// basis functions there are `k - DEGREE - 1` interior knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    domain: Domain,
    k: usize,
    knots: Vec<f64>,
}

impl BSplineBasis {
    pub fn new(domain: Domain, k: usize) -> Result<Self> {
        if k < DEGREE + 1 {
            return Err(Error::Config(format!(
                "basis needs at least {} functions, got {k}",
                DEGREE + 1
            )));
        }
        let n_interior = k - DEGREE - 1;
        let n_intervals = (n_interior + 1) as f64;
        let mut knots = Vec::with_capacity(k + DEGREE + 1);
        knots.extend(std::iter::repeat(domain.t_min()).take(DEGREE + 1));
        for i in 1..=n_interior {
            knots.push(domain.t_min() + domain.length() * i as f64 / n_intervals);
        }
        knots.extend(std::iter::repeat(domain.t_max()).take(DEGREE + 1));
        Ok(Self { domain, k, knots })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.knots[DEGREE + 1..self.k]
    }

    fn check_inside(&self, t: f64) -> Result<()> {
        if !t.is_finite() || !self.domain.contains(t) {
            return Err(Error::OutsideDomain {
                t,
                lo: self.domain.t_min(),
                hi: self.domain.t_max(),
            });
        }
        Ok(())
    }

    /// All B-spline values of degree `d` over this knot vector at `t`.
    ///
    /// Builds the Cox-de Boor triangle from the degree-0 indicators. The
    /// interval convention is half-open, except the last nonempty interval
    /// which closes at `t_max` so the right endpoint is covered.
    fn eval_all_degree(&self, d: usize, t: f64) -> Vec<f64> {
        let knots = &self.knots;
        let m = knots.len() - 1;
        let t_max = self.domain.t_max();
        let mut vals: Vec<f64> = (0..m)
            .map(|j| {
                let closes = t == t_max && knots[j + 1] == t_max && knots[j] < knots[j + 1];
                if (knots[j] <= t && t < knots[j + 1]) || closes {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        for dd in 1..=d {
            let n_funcs = m - dd;
            let mut next = vec![0.0; n_funcs];
            for (j, slot) in next.iter_mut().enumerate() {
                let left_den = knots[j + dd] - knots[j];
                let right_den = knots[j + dd + 1] - knots[j + 1];
                let mut v = 0.0;
                if left_den > 0.0 {
                    v += (t - knots[j]) / left_den * vals[j];
                }
                if right_den > 0.0 {
                    v += (knots[j + dd + 1] - t) / right_den * vals[j + 1];
                }
                *slot = v;
            }
            vals = next;
        }
        vals
    }

    /// Basis function values at `t`. At most `DEGREE + 1` entries are
    /// nonzero and the values sum to one.
    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        self.check_inside(t)?;
        Ok(DVector::from_vec(self.eval_all_degree(DEGREE, t)))
    }

    /// Values, first, and second derivatives of every basis function at `t`.
    ///
    /// Derivatives come from the standard recursion that expresses the
    /// derivative of a degree-d spline through degree-(d-1) values; terms
    /// with a zero knot span are dropped.
    pub fn derivatives(&self, t: f64) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        self.check_inside(t)?;
        let knots = &self.knots;
        let b3 = self.eval_all_degree(DEGREE, t);
        let b2 = self.eval_all_degree(DEGREE - 1, t);
        let b1 = self.eval_all_degree(DEGREE - 2, t);

        let span = |lo: usize, hi: usize| {
            let den = knots[hi] - knots[lo];
            if den > 0.0 {
                1.0 / den
            } else {
                0.0
            }
        };

        // d/dt of the degree-2 functions, needed for the second derivative.
        let db2: Vec<f64> = (0..b2.len())
            .map(|i| 2.0 * (b1[i] * span(i, i + 2) - b1[i + 1] * span(i + 1, i + 3)))
            .collect();

        let mut d1 = DVector::zeros(self.k);
        let mut d2 = DVector::zeros(self.k);
        for i in 0..self.k {
            let left = span(i, i + DEGREE);
            let right = span(i + 1, i + DEGREE + 1);
            d1[i] = DEGREE as f64 * (b2[i] * left - b2[i + 1] * right);
            d2[i] = DEGREE as f64 * (db2[i] * left - db2[i + 1] * right);
        }
        Ok((DVector::from_vec(b3), d1, d2))
    }

    /// Stacks `eval` rows for each time: the design matrix of a smoothing fit.
    pub fn design_matrix(&self, times: &[f64]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(times.len(), self.k);
        for (r, &t) in times.iter().enumerate() {
            let row = self.eval(t)?;
            out.row_mut(r).copy_from(&row.transpose());
        }
        Ok(out)
    }
}

/// A function in the span of a B-spline basis, stored by coefficients.
#[derive(Debug, Clone)]
pub struct Curve {
    basis: Arc<BSplineBasis>,
    coeffs: DVector<f64>,
}

impl Curve {
    pub fn new(basis: Arc<BSplineBasis>, coeffs: DVector<f64>) -> Result<Self> {
        if coeffs.len() != basis.k() {
            return Err(Error::Contract(format!(
                "coefficient length {} does not match basis size {}",
                coeffs.len(),
                basis.k()
            )));
        }
        Ok(Self { basis, coeffs })
    }

    pub fn basis(&self) -> &Arc<BSplineBasis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn domain(&self) -> &Domain {
        self.basis.domain()
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        Ok(self.basis.eval(t)?.dot(&self.coeffs))
    }

    pub fn eval_grid(&self, times: &[f64]) -> Result<Vec<f64>> {
        times.iter().map(|&t| self.eval(t)).collect()
    }
}

/// L2 inner product of two curves over their (shared) domain, computed
/// with the library-wide Simpson rule.
pub fn inner_product(f: &Curve, g: &Curve) -> Result<f64> {
    let (da, db) = (f.domain(), g.domain());
    if da != db {
        return Err(Error::DomainMismatch {
            a_lo: da.t_min(),
            a_hi: da.t_max(),
            b_lo: db.t_min(),
            b_hi: db.t_max(),
        });
    }
    let (grid, weights) = simpson_rule(da);
    let fv = f.eval_grid(&grid)?;
    let gv = g.eval_grid(&grid)?;
    let prod: Vec<f64> = fv.iter().zip(&gv).map(|(a, b)| a * b).collect();
    Ok(integrate(&prod, &weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Textbook Cox-de Boor recursion, written directly from the defining
    /// recurrence. Deliberately independent of the triangular evaluation
    /// in the implementation.
    fn naive_bspline(knots: &[f64], i: usize, d: usize, t: f64, t_max: f64) -> f64 {
        if d == 0 {
            let closes = t == t_max && knots[i + 1] == t_max && knots[i] < knots[i + 1];
            return if (knots[i] <= t && t < knots[i + 1]) || closes {
                1.0
            } else {
                0.0
            };
        }
        let mut v = 0.0;
        if knots[i + d] > knots[i] {
            v += (t - knots[i]) / (knots[i + d] - knots[i])
                * naive_bspline(knots, i, d - 1, t, t_max);
        }
        if knots[i + d + 1] > knots[i + 1] {
            v += (knots[i + d + 1] - t) / (knots[i + d + 1] - knots[i + 1])
                * naive_bspline(knots, i + 1, d - 1, t, t_max);
        }
        v
    }

    fn unit_basis(k: usize) -> BSplineBasis {
        BSplineBasis::new(Domain::unit(), k).unwrap()
    }

    #[test]
    fn knot_layout_k10() {
        let b = unit_basis(10);
        // 6 interior knots split [0,1] into 7 equal intervals.
        let expect: Vec<f64> = (1..=6).map(|i| i as f64 / 7.0).collect();
        assert_eq!(b.interior_knots().len(), 6);
        for (a, e) in b.interior_knots().iter().zip(&expect) {
            assert_abs_diff_eq!(a, e, epsilon = 1e-15);
        }
        assert_eq!(b.knots().len(), 10 + DEGREE + 1);
    }

    #[test]
    fn rejects_too_few_functions() {
        assert!(BSplineBasis::new(Domain::unit(), 3).is_err());
        assert!(BSplineBasis::new(Domain::unit(), 4).is_ok());
    }

    #[test]
    fn eval_matches_naive_recursion() {
        let b = unit_basis(10);
        for &t in &[0.0, 0.1, 0.3, 0.5, 1.0 / 7.0, 0.99, 1.0] {
            let fast = b.eval(t).unwrap();
            for i in 0..10 {
                let slow = naive_bspline(b.knots(), i, DEGREE, t, 1.0);
                assert_abs_diff_eq!(fast[i], slow, epsilon = 1e-12);
            }
            let nonzero = fast.iter().filter(|v| **v != 0.0).count();
            assert!(nonzero <= DEGREE + 1, "t={t}: {nonzero} nonzero entries");
            assert_abs_diff_eq!(fast.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn boundary_values_are_unit_vectors() {
        let b = unit_basis(7);
        let lo = b.eval(0.0).unwrap();
        let hi = b.eval(1.0).unwrap();
        assert_abs_diff_eq!(lo[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(lo.sum(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(hi[6], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(hi.sum(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn eval_outside_domain_errors() {
        let b = unit_basis(6);
        assert!(matches!(
            b.eval(-0.01),
            Err(Error::OutsideDomain { .. })
        ));
        assert!(b.eval(1.0 + 1e-9).is_err());
        assert!(b.eval(f64::NAN).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let b = unit_basis(9);
        let h = 1e-6;
        for &t in &[0.12, 0.34, 0.56, 0.81] {
            let (_, d1, d2) = b.derivatives(t).unwrap();
            let up = b.eval(t + h).unwrap();
            let down = b.eval(t - h).unwrap();
            let mid = b.eval(t).unwrap();
            for i in 0..9 {
                let fd1 = (up[i] - down[i]) / (2.0 * h);
                let fd2 = (up[i] - 2.0 * mid[i] + down[i]) / (h * h);
                assert_abs_diff_eq!(d1[i], fd1, epsilon = 1e-5);
                assert_abs_diff_eq!(d2[i], fd2, epsilon = 1e-3);
            }
        }
    }

    #[test]
    fn second_derivatives_of_partition_sum_to_zero() {
        let b = unit_basis(12);
        for &t in &[0.05, 0.5, 0.95] {
            let (_, d1, d2) = b.derivatives(t).unwrap();
            assert_abs_diff_eq!(d1.sum(), 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(d2.sum(), 0.0, epsilon = 1e-8);
        }
    }

    /// Fits the coefficients that represent a cubic polynomial exactly:
    /// with k = 4 the basis spans the cubics, so interpolation at 4 points
    /// recovers the representation.
    fn cubic_as_curve(basis: &Arc<BSplineBasis>, poly: [f64; 4]) -> Curve {
        let f = |t: f64| poly[0] + poly[1] * t + poly[2] * t * t + poly[3] * t * t * t;
        let pts = [0.0, 0.3, 0.7, 1.0];
        let design = basis.design_matrix(&pts).unwrap();
        let rhs = DVector::from_iterator(4, pts.iter().map(|&t| f(t)));
        let coeffs = design.lu().solve(&rhs).expect("interpolation system");
        Curve::new(basis.clone(), coeffs).unwrap()
    }

    /// Exact integral of the product of two cubics over [0,1], via
    /// coefficient convolution: an independent oracle for inner_product.
    fn exact_product_integral(p: [f64; 4], q: [f64; 4]) -> f64 {
        let mut prod = [0.0; 7];
        for (i, a) in p.iter().enumerate() {
            for (j, b) in q.iter().enumerate() {
                prod[i + j] += a * b;
            }
        }
        prod.iter()
            .enumerate()
            .map(|(d, c)| c / (d as f64 + 1.0))
            .sum()
    }

    #[test]
    fn inner_product_matches_symbolic_integral() {
        let basis = Arc::new(unit_basis(4));
        let p = [0.5, -1.0, 2.0, 0.7];
        let q = [1.5, 0.3, -0.8, 1.1];
        let f = cubic_as_curve(&basis, p);
        let g = cubic_as_curve(&basis, q);
        // The product of two cubics is degree 6, where the composite rule
        // carries an O(h^4) error of about 2e-9 on this grid; 1e-8 reflects
        // the rule's actual accuracy.
        assert_abs_diff_eq!(
            inner_product(&f, &g).unwrap(),
            exact_product_integral(p, q),
            epsilon = 1e-8
        );
        // Products up to degree 3 are integrated exactly.
        let lin_a = cubic_as_curve(&basis, [0.4, -1.2, 0.0, 0.0]);
        let lin_b = cubic_as_curve(&basis, [2.0, 0.9, 0.0, 0.0]);
        assert_abs_diff_eq!(
            inner_product(&lin_a, &lin_b).unwrap(),
            exact_product_integral([0.4, -1.2, 0.0, 0.0], [2.0, 0.9, 0.0, 0.0]),
            epsilon = 1e-13
        );
        assert_abs_diff_eq!(
            inner_product(&f, &g).unwrap(),
            inner_product(&g, &f).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn inner_product_rejects_mismatched_domains() {
        let a = Arc::new(unit_basis(5));
        let b = Arc::new(BSplineBasis::new(Domain::new(0.0, 2.0).unwrap(), 5).unwrap());
        let f = Curve::new(a, DVector::from_element(5, 1.0)).unwrap();
        let g = Curve::new(b, DVector::from_element(5, 1.0)).unwrap();
        assert!(matches!(
            inner_product(&f, &g),
            Err(Error::DomainMismatch { .. })
        ));
    }

    #[test]
    fn constant_coefficients_give_constant_curve() {
        let basis = Arc::new(unit_basis(11));
        let c = Curve::new(basis, DVector::from_element(11, 2.5)).unwrap();
        for &t in &[0.0, 0.2, 0.500001, 0.9, 1.0] {
            assert_abs_diff_eq!(c.eval(t).unwrap(), 2.5, epsilon = 1e-12);
        }
    }
}
