//! Decoding network outputs back to curves, scalars, and category levels.
//!
//! Predictions live in the standardized coefficient space the network was
//! trained in. Decoding destandardizes with the training-time statistics
//! and then inverts the embedding: spline coefficients become curves,
//! codebook vectors snap to their nearest level, replicated constants
//! collapse to a scalar.

use std::sync::Arc;

use nalgebra::DVector;

use crate::embed::{CategoryCodebook, FeatureEmbedding, SlotStats};
use crate::fda::{BSplineBasis, Curve};
use crate::{Error, Result};

/// Destandardizes `coeffs` with `stats` and wraps them on `basis`.
pub fn coeffs_to_curve(
    coeffs: &DVector<f64>,
    basis: &BSplineBasis,
    stats: &SlotStats,
) -> Result<Curve> {
    if stats.means.len() != coeffs.len() || stats.sds.len() != coeffs.len() {
        return Err(Error::Contract(format!(
            "statistics cover {} slots, coefficients have {}",
            stats.means.len(),
            coeffs.len()
        )));
    }
    if basis.k() != coeffs.len() {
        return Err(Error::Contract(format!(
            "basis has {} functions, coefficients have {}",
            basis.k(),
            coeffs.len()
        )));
    }
    Curve::new(Arc::new(basis.clone()), stats.destandardize(coeffs))
}

/// Joins observed history slots with predicted horizon slots and decodes
/// the full coefficient vector. Spline smoothness makes the result
/// continuous across the split by construction.
pub fn assemble_forecast(
    history: &DVector<f64>,
    horizon: &DVector<f64>,
    basis: &BSplineBasis,
    stats: &SlotStats,
) -> Result<Curve> {
    let k = history.len() + horizon.len();
    if basis.k() != k {
        return Err(Error::Contract(format!(
            "basis has {} functions, history + horizon give {k}",
            basis.k()
        )));
    }
    let mut coeffs = DVector::zeros(k);
    coeffs.rows_mut(0, history.len()).copy_from(history);
    coeffs
        .rows_mut(history.len(), horizon.len())
        .copy_from(horizon);
    coeffs_to_curve(&coeffs, basis, stats)
}

/// Nearest level of `codebook` to `pred` in standardized space, measured
/// by Euclidean distance. Ties resolve to the lowest level index.
pub fn decode_categorical(
    pred: &DVector<f64>,
    codebook: &CategoryCodebook,
    stats: &SlotStats,
) -> Result<usize> {
    if codebook.levels() == 0 {
        return Err(Error::Contract("codebook has no levels".into()));
    }
    if pred.len() != codebook.k() || stats.means.len() != pred.len() {
        return Err(Error::Contract(format!(
            "prediction has {} slots, codebook stores {}",
            pred.len(),
            codebook.k()
        )));
    }
    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for level in 0..codebook.levels() {
        let row = stats.standardize(&codebook.vector(level));
        let dist = (row - pred).norm_squared();
        if dist < best_dist {
            best_dist = dist;
            best = level;
        }
    }
    Ok(best)
}

/// One decoded target row.
#[derive(Debug, Clone)]
pub enum DecodedValue {
    Curve(Curve),
    Scalar(f64),
    Level(usize),
}

/// A target's raw network output together with its decoded forms.
#[derive(Debug, Clone)]
pub struct Prediction {
    /// Standardized coefficients as produced by the network.
    pub raw: DVector<f64>,
    /// The same coefficients on the original scale.
    pub destandardized: DVector<f64>,
    pub value: DecodedValue,
}

/// Decodes one full-width coefficient row according to the feature's
/// fitted embedding. Graph-tensor embeddings (principal component scores,
/// single-slot scalars) are not decodable predictions.
pub fn decode_target(
    raw: &DVector<f64>,
    embedding: &FeatureEmbedding,
    stats: &SlotStats,
) -> Result<Prediction> {
    let destandardized = {
        if stats.means.len() != raw.len() {
            return Err(Error::Contract(format!(
                "statistics cover {} slots, prediction has {}",
                stats.means.len(),
                raw.len()
            )));
        }
        stats.destandardize(raw)
    };
    let value = match embedding {
        FeatureEmbedding::Spline(basis) => {
            DecodedValue::Curve(coeffs_to_curve(raw, basis, stats)?)
        }
        FeatureEmbedding::Codebook(cb) => {
            DecodedValue::Level(decode_categorical(raw, cb, stats)?)
        }
        FeatureEmbedding::ScalarConstant => {
            DecodedValue::Scalar(destandardized.sum() / destandardized.len() as f64)
        }
        FeatureEmbedding::Fpc(_) | FeatureEmbedding::ScalarSlot => {
            return Err(Error::Contract(
                "graph-tensor embeddings cannot be decoded as predictions".into(),
            ));
        }
    };
    Ok(Prediction {
        raw: raw.clone(),
        destandardized,
        value,
    })
}
