//! Scenario assembly: interconnected block plus independent fillers.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embed::{Dataset, Feature, FeatureData};
use crate::error::{Error, Result};
use crate::fda::{DiscreteSamples, Domain};
use crate::seeds;
use crate::synth::gp::{cholesky_with_jitter, sample_gp};
use crate::synth::matern::MaternParams;

/// Level counts of the four interconnected categorical features.
const BLOCK_CATEGORY_LEVELS: [usize; 4] = [2, 2, 3, 4];
/// Interconnected block composition: curves feeding it, and what survives.
const BLOCK_SOURCES: usize = 6;
const BLOCK_LONGITUDINAL: usize = 4;
const BLOCK_SCALARS: usize = 2;
const BLOCK_CATEGORICAL: usize = 4;
const BLOCK_SIZE: usize = BLOCK_LONGITUDINAL + BLOCK_SCALARS + BLOCK_CATEGORICAL;

/// Configuration of one synthetic scenario.
///
/// The time domain is fixed to [0, 1]. The first `block_size` features of
/// the generated dataset form the interconnected block, in the order
/// 4 longitudinal, 2 scalar, 4 categorical.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Number of entities.
    pub n: usize,
    /// Total number of features.
    pub p: usize,
    /// Modality mix (longitudinal, categorical, scalar); must sum to 1.
    pub proportions: (f64, f64, f64),
    /// Interconnected feature count; only the fixed 10-feature block
    /// (4 longitudinal, 2 scalar, 4 categorical) is supported.
    pub block_size: usize,
    /// Evaluation grid resolution over [0, 1].
    pub grid_size: usize,
    /// Master seed; all streams derive from it.
    pub seed: u64,
    /// Gaussian-process kernel for longitudinal features.
    pub matern: MaternParams,
    /// Minimum off-diagonal of the shared-noise correlation matrix.
    pub noise_cov_floor: f64,
    /// Standard deviation of the smoothed noise added to block curves.
    pub noise_scale: f64,
    /// Bandwidth of the noise-smoothing kernel, in grid steps.
    pub filter_sigma: f64,
    /// Range of the uniform weights combining curves into categoricals.
    pub weight_range: (f64, f64),
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n: 300,
            p: 20,
            proportions: (0.6, 0.2, 0.2),
            block_size: BLOCK_SIZE,
            grid_size: 100,
            seed: 0,
            matern: MaternParams::default(),
            noise_cov_floor: 0.4,
            noise_scale: 2.0,
            filter_sigma: 3.0,
            weight_range: (-3.0, 3.0),
        }
    }
}

impl ScenarioConfig {
    /// Feature counts per modality implied by `p` and the proportions.
    pub fn modality_counts(&self) -> (usize, usize, usize) {
        let p_long = (self.p as f64 * self.proportions.0).round() as usize;
        let p_cat = (self.p as f64 * self.proportions.1).round() as usize;
        let p_scalar = self.p.saturating_sub(p_long + p_cat);
        (p_long, p_cat, p_scalar)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("need at least 2 entities, got {}", self.n)));
        }
        if self.grid_size < 5 {
            return Err(Error::Config(format!(
                "grid must have at least 5 points, got {}",
                self.grid_size
            )));
        }
        if self.block_size != BLOCK_SIZE {
            return Err(Error::Config(format!(
                "only the fixed {BLOCK_SIZE}-feature interconnected block is supported, got {}",
                self.block_size
            )));
        }
        let (a, b, c) = self.proportions;
        if !(a >= 0.0 && b >= 0.0 && c >= 0.0) || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "modality proportions must be non-negative and sum to 1, got ({a}, {b}, {c})"
            )));
        }
        let (p_long, p_cat, p_scalar) = self.modality_counts();
        if p_long + p_cat > self.p
            || p_long < BLOCK_LONGITUDINAL
            || p_cat < BLOCK_CATEGORICAL
            || p_scalar < BLOCK_SCALARS
        {
            return Err(Error::Config(format!(
                "p = {} with proportions ({a}, {b}, {c}) gives counts ({p_long}, {p_cat}, {p_scalar}), \
                 which cannot hold the interconnected block of {BLOCK_LONGITUDINAL} longitudinal, \
                 {BLOCK_CATEGORICAL} categorical, {BLOCK_SCALARS} scalar features",
                self.p
            )));
        }
        self.matern.validate()?;
        if !(0.0..1.0).contains(&self.noise_cov_floor) {
            return Err(Error::Config(format!(
                "noise covariance floor must lie in [0, 1), got {}",
                self.noise_cov_floor
            )));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::Config(format!(
                "noise scale must be finite and >= 0, got {}",
                self.noise_scale
            )));
        }
        if !(self.filter_sigma > 0.0) || !self.filter_sigma.is_finite() {
            return Err(Error::Config(format!(
                "filter bandwidth must be positive, got {}",
                self.filter_sigma
            )));
        }
        let (lo, hi) = self.weight_range;
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(Error::Config(format!(
                "weight range must be a finite interval, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

/// The interconnected block derived from six shared-noise curves.
#[derive(Debug, Clone)]
pub struct InterconnectedBlock {
    /// Four noisy curves kept as longitudinal features (per entity).
    pub longitudinal: Vec<Vec<DVector<f64>>>,
    /// The two noisy curves that collapse into scalars.
    pub scalar_sources: Vec<Vec<DVector<f64>>>,
    /// Grid means of the scalar sources.
    pub scalars: Vec<Vec<f64>>,
    /// (level count, per-entity level) for the four categorical features.
    pub categoricals: Vec<(usize, Vec<usize>)>,
}

/// Discrete Gaussian kernel with radius 4 sigma, normalized to sum 1.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as i64;
    let mut weights: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    weights
}

/// Index reflection at the sequence edges (half-sample symmetry).
fn reflect(mut idx: i64, len: i64) -> usize {
    loop {
        if idx < 0 {
            idx = -idx - 1;
        } else if idx >= len {
            idx = 2 * len - 1 - idx;
        } else {
            return idx as usize;
        }
    }
}

/// Convolution with reflected boundaries.
fn filter_reflect(values: &DVector<f64>, kernel: &[f64]) -> DVector<f64> {
    let len = values.len() as i64;
    let radius = (kernel.len() / 2) as i64;
    DVector::from_iterator(
        values.len(),
        (0..len).map(|t| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * values[reflect(t + k as i64 - radius, len)])
                .sum::<f64>()
        }),
    )
}

/// Random correlation matrix: a normalized Wishart draw with off-diagonals
/// raised to `floor`, then projected onto the positive semi-definite cone.
fn random_correlation<R: Rng>(rng: &mut R, dim: usize, floor: f64) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let w = &g * g.transpose();
    let mut corr = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            corr[(i, j)] = w[(i, j)] / (w[(i, i)] * w[(j, j)]).sqrt();
            if i != j {
                corr[(i, j)] = corr[(i, j)].max(floor);
            }
        }
    }
    let eig = nalgebra::SymmetricEigen::new(corr);
    let clipped = DVector::from_iterator(dim, eig.eigenvalues.iter().map(|&l| l.max(0.0)));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (&rebuilt + rebuilt.transpose()) * 0.5
}

/// Builds the interconnected block from six base curves per entity.
///
/// Correlated noise (one shared draw per entity and grid point, correlation
/// floored at `noise_cov_floor`) is smoothed along the grid by a Gaussian
/// kernel, rescaled so its pointwise standard deviation is `noise_scale`
/// away from the edges, and added to all six curves. The first four noisy
/// curves stay longitudinal; the last two collapse to their grid means.
/// Categorical features evaluate seeded linear combinations of the four
/// longitudinal curves at one random grid point each, min-max rescale to
/// [1, levels], and round.
pub fn make_interconnected(
    mut base: Vec<Vec<DVector<f64>>>,
    config: &ScenarioConfig,
    seed: u64,
) -> Result<InterconnectedBlock> {
    config.validate()?;
    if base.len() != BLOCK_SOURCES {
        return Err(Error::Contract(format!(
            "interconnected block needs {BLOCK_SOURCES} source features, got {}",
            base.len()
        )));
    }
    let n = base[0].len();
    let grid = base[0].first().map_or(0, |v| v.len());
    if n == 0 || grid < 2 {
        return Err(Error::Contract("source curves must be non-empty".into()));
    }
    for feature in &base {
        if feature.len() != n || feature.iter().any(|v| v.len() != grid) {
            return Err(Error::Contract(
                "source features must share entity count and grid".into(),
            ));
        }
    }

    let corr = random_correlation(
        &mut seeds::rng_for(seed, "noise-correlation", 0),
        BLOCK_SOURCES,
        config.noise_cov_floor,
    );
    let chol = cholesky_with_jitter(&corr)?;
    let l_factor = chol.l();

    // One correlated draw per (entity, grid point), white along the grid.
    let mut rng_noise = seeds::rng_for(seed, "noise", 0);
    let mut noise: Vec<Vec<DVector<f64>>> =
        vec![vec![DVector::zeros(grid); n]; BLOCK_SOURCES];
    let mut z = DVector::zeros(BLOCK_SOURCES);
    for i in 0..n {
        for t in 0..grid {
            for v in z.iter_mut() {
                *v = rng_noise.sample::<f64, _>(StandardNormal);
            }
            let e = &l_factor * &z;
            for (j, noise_j) in noise.iter_mut().enumerate() {
                noise_j[i][t] = e[j];
            }
        }
    }

    // Smooth along the grid; dividing by the kernel's l2 norm restores unit
    // pointwise variance in the interior, so noise_scale is the noise sd.
    let kernel = gaussian_kernel(config.filter_sigma);
    let l2 = kernel.iter().map(|w| w * w).sum::<f64>().sqrt();
    let gain = config.noise_scale / l2;
    for (feature, noise_f) in base.iter_mut().zip(&noise) {
        for (curve, raw) in feature.iter_mut().zip(noise_f) {
            *curve += filter_reflect(raw, &kernel) * gain;
        }
    }

    let scalar_sources: Vec<Vec<DVector<f64>>> = base.split_off(BLOCK_LONGITUDINAL);
    let longitudinal = base;
    let scalars: Vec<Vec<f64>> = scalar_sources
        .iter()
        .map(|feature| {
            feature
                .iter()
                .map(|curve| curve.iter().sum::<f64>() / curve.len() as f64)
                .collect()
        })
        .collect();

    let mut categoricals = Vec::with_capacity(BLOCK_CATEGORICAL);
    let (w_lo, w_hi) = config.weight_range;
    for (c, &levels) in BLOCK_CATEGORY_LEVELS.iter().enumerate() {
        let mut rng = seeds::rng_for(seed, "categorical", c as u64);
        let t_idx = rng.gen_range(0..grid);
        let weights: Vec<f64> = (0..BLOCK_LONGITUDINAL)
            .map(|_| rng.gen_range(w_lo..w_hi))
            .collect();
        let combo: Vec<f64> = (0..n)
            .map(|i| {
                weights
                    .iter()
                    .zip(&longitudinal)
                    .map(|(w, feature)| w * feature[i][t_idx])
                    .sum()
            })
            .collect();
        let lo = combo.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = combo.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let values: Vec<usize> = combo
            .iter()
            .map(|&v| {
                if span <= 1e-12 {
                    0
                } else {
                    let scaled = 1.0 + (levels - 1) as f64 * (v - lo) / span;
                    scaled.round() as usize - 1
                }
            })
            .collect();
        categoricals.push((levels, values));
    }

    Ok(InterconnectedBlock {
        longitudinal,
        scalar_sources,
        scalars,
        categoricals,
    })
}

fn curves_to_feature(name: String, times: &[f64], curves: Vec<DVector<f64>>) -> Result<Feature> {
    let series = curves
        .into_iter()
        .map(|c| DiscreteSamples::new(times.to_vec(), c.iter().cloned().collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Feature {
        name,
        data: FeatureData::Longitudinal(series),
    })
}

/// Generates a full scenario: the interconnected block in the first ten
/// positions (4 longitudinal, 2 scalar, 4 categorical), then independent
/// fillers in the order longitudinal, categorical, scalar. Deterministic
/// per seed.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<Dataset> {
    config.validate()?;
    let domain = Domain::unit();
    let times = domain.grid(config.grid_size);
    let (p_long, p_cat, p_scalar) = config.modality_counts();

    let mut base = Vec::with_capacity(BLOCK_SOURCES);
    for j in 0..BLOCK_SOURCES {
        let mut rng = seeds::rng_for(config.seed, "block-gp", j as u64);
        base.push(sample_gp(config.n, &times, &config.matern, &mut rng)?);
    }
    let block = make_interconnected(base, config, seeds::derive(config.seed, "block", 0))?;

    let mut features = Vec::with_capacity(config.p);
    for (j, curves) in block.longitudinal.into_iter().enumerate() {
        features.push(curves_to_feature(format!("ic_long_{j}"), &times, curves)?);
    }
    for (j, values) in block.scalars.into_iter().enumerate() {
        features.push(Feature {
            name: format!("ic_scalar_{j}"),
            data: FeatureData::Scalar(values),
        });
    }
    for (j, (levels, values)) in block.categoricals.into_iter().enumerate() {
        features.push(Feature {
            name: format!("ic_cat_{j}"),
            data: FeatureData::Categorical { levels, values },
        });
    }

    for j in 0..p_long - BLOCK_LONGITUDINAL {
        let mut rng = seeds::rng_for(config.seed, "filler-gp", j as u64);
        let curves = sample_gp(config.n, &times, &config.matern, &mut rng)?;
        features.push(curves_to_feature(format!("bg_long_{j}"), &times, curves)?);
    }
    for j in 0..p_cat - BLOCK_CATEGORICAL {
        let mut rng = seeds::rng_for(config.seed, "filler-cat", j as u64);
        let levels = rng.gen_range(2..=5usize);
        let mut values: Vec<usize> = (0..config.n).map(|i| i % levels).collect();
        values.shuffle(&mut rng);
        features.push(Feature {
            name: format!("bg_cat_{j}"),
            data: FeatureData::Categorical { levels, values },
        });
    }
    for j in 0..p_scalar - BLOCK_SCALARS {
        let mut rng = seeds::rng_for(config.seed, "filler-scalar", j as u64);
        let values: Vec<f64> = (0..config.n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        features.push(Feature {
            name: format!("bg_scalar_{j}"),
            data: FeatureData::Scalar(values),
        });
    }

    Dataset::new(config.n, domain, features)
}

/// Seeded shuffle split of `0..n` into (train, test) index sets, each
/// sorted ascending.
pub fn train_test_split(n: usize, n_train: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_train == 0 || n_train >= n {
        return Err(Error::Config(format!(
            "train size must lie strictly between 0 and {n}, got {n_train}"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut seeds::rng_for(seed, "split", 0));
    let mut train = indices[..n_train].to_vec();
    let mut test = indices[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
