//! Penalized least-squares smoothing of discrete observations.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::basis::{BSplineBasis, Curve, DEGREE};
use super::quad::simpson_rule;
use crate::error::{Error, Result};

/// Discrete observations of one entity's longitudinal feature.
///
/// Times are strictly increasing and there are at least `DEGREE + 2`
/// points, the minimum for a meaningful penalized cubic fit.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSamples {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl DiscreteSamples {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Contract(format!(
                "{} times vs {} values",
                times.len(),
                values.len()
            )));
        }
        if times.len() < DEGREE + 2 {
            return Err(Error::Contract(format!(
                "smoothing needs at least {} samples, got {}",
                DEGREE + 2,
                times.len()
            )));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Contract(
                "sample times must be strictly increasing".into(),
            ));
        }
        if times.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Contract("samples must be finite".into()));
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Default roughness-penalty grid: 20 log-spaced values in [1e-8, 1e2].
pub fn default_penalty_grid() -> Vec<f64> {
    let (lo, hi) = (1e-8f64.ln(), 1e2f64.ln());
    (0..20)
        .map(|i| (lo + (hi - lo) * i as f64 / 19.0).exp())
        .collect()
}

/// Gram matrix of second derivatives: P[i][j] = integral of b_i'' b_j''.
///
/// Uses the shared Simpson rule like every other integral in the library.
/// Constants and linear functions lie in its null space, so the penalty
/// never biases a flat fit.
pub fn second_derivative_penalty(basis: &BSplineBasis) -> DMatrix<f64> {
    let (grid, weights) = simpson_rule(basis.domain());
    let k = basis.k();
    let mut d2 = DMatrix::zeros(grid.len(), k);
    for (r, &t) in grid.iter().enumerate() {
        let (_, _, second) = basis
            .derivatives(t)
            .expect("quadrature grid lies inside the domain");
        d2.row_mut(r).copy_from(&second.transpose());
    }
    let mut weighted = d2.clone();
    for (r, &w) in weights.iter().enumerate() {
        weighted.row_mut(r).scale_mut(w);
    }
    d2.transpose() * weighted
}

/// One smoothing result: the fitted curve plus the selected penalty and
/// its generalized cross-validation diagnostics.
#[derive(Debug, Clone)]
pub struct SmoothFit {
    pub curve: Curve,
    pub penalty: f64,
    pub gcv: f64,
    pub edf: f64,
}

/// Reusable smoothing operator for one basis and one set of observation
/// times. Factorizations per penalty are computed once, so fitting many
/// entities observed on a shared grid costs a back-substitution each.
pub struct PenalizedSmoother {
    basis: Arc<BSplineBasis>,
    design: DMatrix<f64>,
    btb: DMatrix<f64>,
    /// Per penalty: (lambda, factor of BtB + lambda P, trace of hat matrix).
    factors: Vec<(f64, Cholesky<f64, Dyn>, f64)>,
    n_samples: usize,
}

impl PenalizedSmoother {
    pub fn new(basis: Arc<BSplineBasis>, times: &[f64], penalty_grid: &[f64]) -> Result<Self> {
        if times.len() < DEGREE + 2 {
            return Err(Error::Contract(format!(
                "smoothing needs at least {} samples, got {}",
                DEGREE + 2,
                times.len()
            )));
        }
        if penalty_grid.is_empty() || penalty_grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::Config(
                "penalty grid must be non-empty and strictly positive".into(),
            ));
        }
        let design = basis.design_matrix(times)?;
        let btb = design.transpose() * &design;
        let pen = second_derivative_penalty(&basis);
        let m = times.len() as f64;

        let mut factors = Vec::with_capacity(penalty_grid.len());
        for &lambda in penalty_grid {
            let a = &btb + &pen * lambda;
            if let Some(chol) = Cholesky::new(a) {
                // Effective degrees of freedom: trace of the hat matrix
                // B (BtB + lambda P)^-1 Bt = trace of (BtB + lambda P)^-1 BtB.
                let solved = chol.solve(&btb);
                let edf = solved.trace();
                if edf.is_finite() && edf < m {
                    factors.push((lambda, chol, edf));
                }
            }
        }
        if factors.is_empty() {
            return Err(Error::Smoothing(
                "normal equations singular or saturated at every penalty".into(),
            ));
        }
        Ok(Self {
            basis,
            design,
            btb,
            factors,
            n_samples: times.len(),
        })
    }

    pub fn basis(&self) -> &Arc<BSplineBasis> {
        &self.basis
    }

    /// Fits one value vector, selecting the penalty by minimum GCV.
    ///
    /// GCV(lambda) = (RSS / m) / (1 - edf / m)^2. Ties keep the smallest
    /// penalty (the grid is scanned in order).
    pub fn fit(&self, values: &[f64]) -> Result<SmoothFit> {
        if values.len() != self.n_samples {
            return Err(Error::Contract(format!(
                "{} values for {} sample times",
                values.len(),
                self.n_samples
            )));
        }
        let y = DVector::from_column_slice(values);
        let bty = self.design.transpose() * &y;
        let m = self.n_samples as f64;

        let mut best: Option<(f64, DVector<f64>, f64, f64)> = None;
        for (lambda, chol, edf) in &self.factors {
            let coeffs = chol.solve(&bty);
            let resid = &y - &self.design * &coeffs;
            let rss = resid.norm_squared();
            let denom = 1.0 - edf / m;
            let gcv = (rss / m) / (denom * denom);
            if best.as_ref().map_or(true, |(g, ..)| gcv < *g) {
                best = Some((gcv, coeffs, *lambda, *edf));
            }
        }
        let (gcv, coeffs, penalty, edf) = best.expect("factor list is non-empty");
        Ok(SmoothFit {
            curve: Curve::new(self.basis.clone(), coeffs)?,
            penalty,
            gcv,
            edf,
        })
    }

    /// Fits at one fixed penalty, bypassing GCV selection.
    pub fn fit_at(&self, values: &[f64], lambda: f64) -> Result<Curve> {
        let (_, chol, _) = self
            .factors
            .iter()
            .find(|(l, ..)| *l == lambda)
            .ok_or_else(|| Error::Config(format!("penalty {lambda} not on the grid")))?;
        let y = DVector::from_column_slice(values);
        let coeffs = chol.solve(&(self.design.transpose() * &y));
        Curve::new(self.basis.clone(), coeffs)
    }

    /// The self-sensitivity trace per penalty, exposed for diagnostics.
    pub fn penalties(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.factors.iter().map(|(l, _, e)| (*l, *e))
    }

    #[allow(dead_code)]
    pub(crate) fn btb(&self) -> &DMatrix<f64> {
        &self.btb
    }
}

/// Smooths one sample set onto `basis`, selecting the penalty by GCV over
/// `penalty_grid` (or the default grid when `None`).
pub fn smooth_samples(
    samples: &DiscreteSamples,
    basis: Arc<BSplineBasis>,
    penalty_grid: Option<&[f64]>,
) -> Result<SmoothFit> {
    let default;
    let grid = match penalty_grid {
        Some(g) => g,
        None => {
            default = default_penalty_grid();
            &default
        }
    };
    let smoother = PenalizedSmoother::new(basis, samples.times(), grid)?;
    smoother.fit(samples.values())
}
