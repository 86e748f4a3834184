//! Evaluation metrics: standardized RMSE over curves and accuracy over
//! category levels.

use serde::{Deserialize, Serialize};

use crate::fda::{integrate, simpson_rule, Curve};
use crate::{Error, Result};

/// Standardized root mean-squared error plus the number of entities left
/// out because their true curve was constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StdRmse {
    pub value: f64,
    pub skipped: usize,
}

/// ((1/n) Σ_i (1/sd(y_i)) ∫ (y_i - ŷ_i)² dt)^{1/2}, with sd(y_i) the
/// temporal standard deviation of the true curve over the quadrature grid
/// (denominator the grid size). Entities whose true curve is constant are
/// skipped and counted rather than divided by zero; n is the number of
/// entities actually included.
pub fn std_rmse(truth: &[Curve], pred: &[Curve]) -> Result<StdRmse> {
    if truth.len() != pred.len() {
        return Err(Error::Contract(format!(
            "{} truth curves but {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Degenerate("no curves to compare".into()));
    }
    let domain = *truth[0].domain();
    let (points, weights) = simpson_rule(&domain);
    let mut total = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (y, y_hat) in truth.iter().zip(pred) {
        for c in [y, y_hat] {
            let d = c.domain();
            if *d != domain {
                return Err(Error::DomainMismatch {
                    a_lo: domain.t_min(),
                    a_hi: domain.t_max(),
                    b_lo: d.t_min(),
                    b_hi: d.t_max(),
                });
            }
        }
        let yv = y.eval_grid(&points)?;
        let pv = y_hat.eval_grid(&points)?;
        let n = yv.len() as f64;
        let mean = yv.iter().sum::<f64>() / n;
        let var = yv.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd <= 1e-12 * (1.0 + mean.abs()) {
            skipped += 1;
            continue;
        }
        let sq: Vec<f64> = yv
            .iter()
            .zip(&pv)
            .map(|(a, b)| (a - b) * (a - b))
            .collect();
        total += integrate(&sq, &weights) / sd;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Degenerate(
            "every truth curve is constant; standardized error is undefined".into(),
        ));
    }
    Ok(StdRmse {
        value: (total / used as f64).sqrt(),
        skipped,
    })
}

/// Fraction of positions where `truth` and `pred` agree.
pub fn accuracy(truth: &[usize], pred: &[usize]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::Contract(format!(
            "{} truth levels but {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Degenerate(
            "accuracy of an empty set is undefined".into(),
        ));
    }
    let matches = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    Ok(matches as f64 / truth.len() as f64)
}
