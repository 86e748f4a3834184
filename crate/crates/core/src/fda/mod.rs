//! Functional data primitives: domains, B-spline bases, quadrature,
//! penalized smoothing, and functional principal components.

mod basis;
mod fpca;
mod quad;
mod smooth;

pub use basis::{inner_product, BSplineBasis, Curve, DEGREE};
pub use fpca::{fpca, FpcBasis};
pub use quad::{integrate, simpson_rule, QUAD_POINTS};
pub use smooth::{
    default_penalty_grid, second_derivative_penalty, smooth_samples, DiscreteSamples,
    PenalizedSmoother, SmoothFit,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Closed observation interval shared by all functional objects of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    t_min: f64,
    t_max: f64,
}

impl Domain {
    pub fn new(t_min: f64, t_max: f64) -> Result<Self> {
        if !t_min.is_finite() || !t_max.is_finite() || t_min >= t_max {
            return Err(Error::Config(format!(
                "domain requires finite t_min < t_max, got [{t_min}, {t_max}]"
            )));
        }
        Ok(Self { t_min, t_max })
    }

    /// The unit interval, the default for generated scenarios.
    pub fn unit() -> Self {
        Self {
            t_min: 0.0,
            t_max: 1.0,
        }
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn length(&self) -> f64 {
        self.t_max - self.t_min
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_min && t <= self.t_max
    }

    /// `n` equispaced points covering the domain, endpoints included.
    /// Accumulated rounding in `t_min + h * i` may overshoot `t_max` by an
    /// ulp, so points are clamped and the last lands exactly on `t_max`.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        assert!(n >= 2, "grid needs at least two points");
        let h = self.length() / (n - 1) as f64;
        (0..n)
            .map(|i| {
                if i == n - 1 {
                    self.t_max
                } else {
                    (self.t_min + h * i as f64).min(self.t_max)
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domain_rejects_degenerate_intervals() {
        assert!(Domain::new(0.0, 0.0).is_err());
        assert!(Domain::new(1.0, 0.0).is_err());
        assert!(Domain::new(f64::NAN, 1.0).is_err());
        assert!(Domain::new(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn grid_covers_endpoints() {
        let d = Domain::new(-1.0, 3.0).unwrap();
        let g = d.grid(5);
        assert_eq!(g, vec![-1.0, 0.0, 1.0, 2.0, 3.0]);
        assert!(d.contains(-1.0) && d.contains(3.0) && !d.contains(3.0001));
    }
}
