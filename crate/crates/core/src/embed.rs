//! Embedding of multi-modal features into a common tensor.
//!
//! Each feature becomes an n x k block: functional principal component
//! scores for graph estimation, B-spline coefficients for model training,
//! seeded codebook vectors for categorical features, and replicated or
//! slot-zero placements for scalars. Blocks are standardized per slot as
//! the final step so that every feature enters downstream optimization on
//! the same scale.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fda::{
    fpca, BSplineBasis, Curve, DiscreteSamples, Domain, FpcBasis, PenalizedSmoother, DEGREE,
};
use crate::seeds;

/// Feature modality. Categorical features carry their level count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Longitudinal,
    Categorical { levels: usize },
    Scalar,
}

/// Per-entity observations of one feature.
#[derive(Debug, Clone)]
pub enum FeatureData {
    Longitudinal(Vec<DiscreteSamples>),
    Categorical { levels: usize, values: Vec<usize> },
    Scalar(Vec<f64>),
}

impl FeatureData {
    pub fn modality(&self) -> Modality {
        match self {
            FeatureData::Longitudinal(_) => Modality::Longitudinal,
            FeatureData::Categorical { levels, .. } => Modality::Categorical { levels: *levels },
            FeatureData::Scalar(_) => Modality::Scalar,
        }
    }

    fn len(&self) -> usize {
        match self {
            FeatureData::Longitudinal(v) => v.len(),
            FeatureData::Categorical { values, .. } => values.len(),
            FeatureData::Scalar(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Feature {
    pub name: String,
    pub data: FeatureData,
}

/// A multi-modal dataset: n entities observed over one time domain.
#[derive(Debug, Clone)]
pub struct Dataset {
    n: usize,
    domain: Domain,
    features: Vec<Feature>,
}

impl Dataset {
    pub fn new(n: usize, domain: Domain, features: Vec<Feature>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Contract("dataset needs at least one entity".into()));
        }
        if features.is_empty() {
            return Err(Error::Contract("dataset needs at least one feature".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for f in &features {
            if f.name.is_empty() {
                return Err(Error::Contract("feature names must be non-empty".into()));
            }
            if !seen.insert(f.name.clone()) {
                return Err(Error::Contract(format!("duplicate feature name {}", f.name)));
            }
            if f.data.len() != n {
                return Err(Error::Contract(format!(
                    "feature {} has {} entities, dataset has {n}",
                    f.name,
                    f.data.len()
                )));
            }
            match &f.data {
                FeatureData::Categorical { levels, values } => {
                    if *levels < 2 {
                        return Err(Error::Contract(format!(
                            "feature {} needs at least 2 levels",
                            f.name
                        )));
                    }
                    if values.iter().any(|v| v >= levels) {
                        return Err(Error::Contract(format!(
                            "feature {} has a level index out of range",
                            f.name
                        )));
                    }
                }
                FeatureData::Longitudinal(series) => {
                    for s in series {
                        if s.times().iter().any(|&t| !domain.contains(t)) {
                            return Err(Error::Contract(format!(
                                "feature {} has sample times outside the domain",
                                f.name
                            )));
                        }
                    }
                }
                FeatureData::Scalar(values) => {
                    if values.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Contract(format!(
                            "feature {} has non-finite values",
                            f.name
                        )));
                    }
                }
            }
        }
        Ok(Self { n, domain, features })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn feature(&self, name: &str) -> Option<&Feature> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// New dataset restricted to the given entity indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.iter().any(|&i| i >= self.n) {
            return Err(Error::Contract("entity index out of range".into()));
        }
        let features = self
            .features
            .iter()
            .map(|f| {
                let data = match &f.data {
                    FeatureData::Longitudinal(v) => FeatureData::Longitudinal(
                        indices.iter().map(|&i| v[i].clone()).collect(),
                    ),
                    FeatureData::Categorical { levels, values } => FeatureData::Categorical {
                        levels: *levels,
                        values: indices.iter().map(|&i| values[i]).collect(),
                    },
                    FeatureData::Scalar(v) => {
                        FeatureData::Scalar(indices.iter().map(|&i| v[i]).collect())
                    }
                };
                Feature {
                    name: f.name.clone(),
                    data,
                }
            })
            .collect();
        Dataset::new(indices.len(), self.domain, features)
    }
}

/// Which tensor a block belongs to: graph estimation or model training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Graph,
    Gcn,
}

/// Seeded standard-normal vectors, one per category level.
///
/// Vectors are drawn once from the feature's derived seed and never
/// depend on the data, so train and test entities share one codebook.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryCodebook {
    feature: String,
    seed: u64,
    /// levels x k, row per level.
    vectors: DMatrix<f64>,
}

impl CategoryCodebook {
    pub fn generate(feature: &str, levels: usize, k: usize, seed: u64) -> Self {
        let mut bump = 0u64;
        loop {
            let mut rng = seeds::rng(seed.wrapping_add(bump));
            let vectors = DMatrix::from_fn(levels, k, |_, _| {
                rng.sample::<f64, _>(rand_distr::StandardNormal)
            });
            let mut distinct = true;
            'outer: for a in 0..levels {
                for b in a + 1..levels {
                    if vectors.row(a) == vectors.row(b) {
                        distinct = false;
                        break 'outer;
                    }
                }
            }
            if distinct {
                return Self {
                    feature: feature.to_string(),
                    seed: seed.wrapping_add(bump),
                    vectors,
                };
            }
            bump += 1;
        }
    }

    pub fn feature(&self) -> &str {
        &self.feature
    }

    pub fn levels(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn k(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vector(&self, level: usize) -> DVector<f64> {
        self.vectors.row(level).transpose()
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }
}

/// Per-slot standardization statistics of one feature block.
///
/// Slots that were constant before standardization keep sd = 1 and carry
/// the constant in the mean, so destandardization restores them exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotStats {
    pub means: DVector<f64>,
    pub sds: DVector<f64>,
}

impl SlotStats {
    pub fn destandardize(&self, row: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            row.len(),
            row.iter()
                .enumerate()
                .map(|(s, v)| v * self.sds[s] + self.means[s]),
        )
    }

    pub fn standardize(&self, row: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            row.len(),
            row.iter()
                .enumerate()
                .map(|(s, v)| (v - self.means[s]) / self.sds[s]),
        )
    }
}

/// How one feature was embedded; enough to interpret or invert its block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureEmbedding {
    /// Longitudinal feature, graph tensor: principal component scores.
    Fpc(FpcBasis),
    /// Longitudinal feature, model tensor: B-spline coefficients.
    Spline(BSplineBasis),
    /// Categorical feature: codebook vector of the entity's level.
    Codebook(CategoryCodebook),
    /// Scalar feature, graph tensor: value in slot 0, zeros elsewhere.
    ScalarSlot,
    /// Scalar feature, model tensor: value replicated across slots
    /// (the B-spline representation of a constant curve).
    ScalarConstant,
}

/// Standardized n x p x k tensor stored as per-feature n x k blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddedTensor {
    kind: TensorKind,
    n: usize,
    k: usize,
    feature_names: Vec<String>,
    modalities: Vec<Modality>,
    blocks: Vec<DMatrix<f64>>,
    stats: Vec<SlotStats>,
    embeddings: Vec<FeatureEmbedding>,
}

impl EmbeddedTensor {
    pub fn kind(&self) -> TensorKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.blocks.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn modality(&self, j: usize) -> Modality {
        self.modalities[j]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    /// The standardized n x k block of feature `j`.
    pub fn block(&self, j: usize) -> &DMatrix<f64> {
        &self.blocks[j]
    }

    pub fn stats(&self, j: usize) -> &SlotStats {
        &self.stats[j]
    }

    pub fn embedding(&self, j: usize) -> &FeatureEmbedding {
        &self.embeddings[j]
    }

    /// The p x k slice of entity `i`, row per feature.
    pub fn entity_matrix(&self, i: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.p(), self.k);
        for (j, block) in self.blocks.iter().enumerate() {
            out.row_mut(j).copy_from(&block.row(i));
        }
        out
    }

    /// Standardized row of feature `j` for entity `i`.
    pub fn entity_row(&self, j: usize, i: usize) -> DVector<f64> {
        self.blocks[j].row(i).transpose()
    }

    /// Structural checks after deserialization: shapes and finiteness.
    pub fn validate(&self) -> Result<()> {
        let p = self.blocks.len();
        if self.feature_names.len() != p
            || self.modalities.len() != p
            || self.stats.len() != p
            || self.embeddings.len() != p
        {
            return Err(Error::Contract("tensor metadata lengths disagree".into()));
        }
        for (j, b) in self.blocks.iter().enumerate() {
            if b.nrows() != self.n || b.ncols() != self.k {
                return Err(Error::Contract(format!(
                    "block {j} is {}x{}, expected {}x{}",
                    b.nrows(),
                    b.ncols(),
                    self.n,
                    self.k
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::Contract(format!("block {j} has non-finite entries")));
            }
        }
        Ok(())
    }
}

/// Options for tensor assembly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedOptions {
    /// Slots per feature in the tensor.
    pub k: usize,
    /// Top-level seed; per-feature seeds are derived from it.
    pub seed: u64,
    /// Basis size used to pre-smooth longitudinal features before
    /// principal component analysis (graph tensor only).
    pub work_basis: usize,
    /// Roughness penalty grid; `None` uses the library default.
    pub penalty_grid: Option<Vec<f64>>,
}

impl EmbedOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            work_basis: 20,
            penalty_grid: None,
        }
    }
}

/// Standardizes each column of `block` in place with denominator-n
/// statistics. Constant columns become zero and record sd = 1.
pub fn standardize_block(block: &mut DMatrix<f64>) -> SlotStats {
    let n = block.nrows() as f64;
    let k = block.ncols();
    let mut means = DVector::zeros(k);
    let mut sds = DVector::zeros(k);
    for s in 0..k {
        let mean = block.column(s).sum() / n;
        let var = block.column(s).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        means[s] = mean;
        if sd <= 1e-12 * (1.0 + mean.abs()) {
            sds[s] = 1.0;
            block.column_mut(s).fill(0.0);
        } else {
            sds[s] = sd;
            for v in block.column_mut(s).iter_mut() {
                *v = (*v - mean) / sd;
            }
        }
    }
    SlotStats { means, sds }
}

/// Smooths every entity of a longitudinal feature onto `basis`, reusing
/// factorizations for entities observed at identical times.
fn smooth_feature(
    series: &[DiscreteSamples],
    basis: &Arc<BSplineBasis>,
    penalty_grid: &[f64],
) -> Result<Vec<Curve>> {
    let mut cache: HashMap<Vec<u64>, Arc<PenalizedSmoother>> = HashMap::new();
    let mut curves = Vec::with_capacity(series.len());
    for s in series {
        let key: Vec<u64> = s.times().iter().map(|t| t.to_bits()).collect();
        let smoother = match cache.get(&key) {
            Some(sm) => sm.clone(),
            None => {
                let sm = Arc::new(PenalizedSmoother::new(
                    basis.clone(),
                    s.times(),
                    penalty_grid,
                )?);
                cache.insert(key, sm.clone());
                sm
            }
        };
        curves.push(smoother.fit(s.values())?.curve);
    }
    Ok(curves)
}

/// Embeds one longitudinal feature for the graph tensor: smooth, fit
/// principal components, project. Returns raw (unstandardized) scores.
pub fn embed_longitudinal_kg(
    series: &[DiscreteSamples],
    domain: &Domain,
    opts: &EmbedOptions,
) -> Result<(DMatrix<f64>, FpcBasis)> {
    let basis = Arc::new(BSplineBasis::new(*domain, opts.work_basis)?);
    let grid_storage;
    let grid = match &opts.penalty_grid {
        Some(g) => g.as_slice(),
        None => {
            grid_storage = crate::fda::default_penalty_grid();
            &grid_storage
        }
    };
    let curves = smooth_feature(series, &basis, grid)?;
    let fpc = fpca(&curves, opts.k)?;
    let mut scores = DMatrix::zeros(series.len(), opts.k);
    for (i, c) in curves.iter().enumerate() {
        scores.row_mut(i).copy_from(&fpc.project(c)?.transpose());
    }
    Ok((scores, fpc))
}

/// Embeds one longitudinal feature for the model tensor: per-entity
/// penalized B-spline coefficients on a k-function basis.
pub fn embed_longitudinal_gcn(
    series: &[DiscreteSamples],
    domain: &Domain,
    opts: &EmbedOptions,
) -> Result<(DMatrix<f64>, BSplineBasis)> {
    let basis = Arc::new(BSplineBasis::new(*domain, opts.k)?);
    let grid_storage;
    let grid = match &opts.penalty_grid {
        Some(g) => g.as_slice(),
        None => {
            grid_storage = crate::fda::default_penalty_grid();
            &grid_storage
        }
    };
    let curves = smooth_feature(series, &basis, grid)?;
    let mut coeffs = DMatrix::zeros(series.len(), opts.k);
    for (i, c) in curves.iter().enumerate() {
        coeffs.row_mut(i).copy_from(&c.coeffs().transpose());
    }
    Ok((coeffs, basis.as_ref().clone()))
}

/// Embeds a categorical feature: each entity gets its level's codebook row.
pub fn embed_categorical(
    name: &str,
    levels: usize,
    values: &[usize],
    k: usize,
    seed: u64,
) -> (DMatrix<f64>, CategoryCodebook) {
    let codebook = CategoryCodebook::generate(name, levels, k, seed);
    let mut block = DMatrix::zeros(values.len(), k);
    for (i, &level) in values.iter().enumerate() {
        block.row_mut(i).copy_from(&codebook.vectors().row(level));
    }
    (block, codebook)
}

/// Embeds a scalar feature. Graph tensor: value in slot 0 (a rank-one
/// block matching what principal components of constant curves produce).
/// Model tensor: value in every slot, the coefficients of a constant curve.
pub fn embed_scalar(values: &[f64], kind: TensorKind, k: usize) -> DMatrix<f64> {
    let n = values.len();
    match kind {
        TensorKind::Graph => {
            let mut block = DMatrix::zeros(n, k);
            for (i, &v) in values.iter().enumerate() {
                block[(i, 0)] = v;
            }
            block
        }
        TensorKind::Gcn => DMatrix::from_fn(n, k, |i, _| values[i]),
    }
}

/// Embeds every feature of `dataset` and standardizes the result.
///
/// Feature order is preserved. Failures are collected per feature and
/// reported together rather than stopping at the first.
pub fn assemble(dataset: &Dataset, kind: TensorKind, opts: &EmbedOptions) -> Result<EmbeddedTensor> {
    if opts.k == 0 {
        return Err(Error::Config("tensor needs at least one slot".into()));
    }
    let has_longitudinal = dataset
        .features()
        .iter()
        .any(|f| matches!(f.data, FeatureData::Longitudinal(_)));
    if kind == TensorKind::Gcn && has_longitudinal && opts.k < DEGREE + 1 {
        return Err(Error::Config(format!(
            "model tensors store cubic spline coefficients, so k must be at least {}, got {}",
            DEGREE + 1,
            opts.k
        )));
    }
    let mut blocks = Vec::with_capacity(dataset.features().len());
    let mut embeddings = Vec::with_capacity(dataset.features().len());
    let mut failures: Vec<(String, Box<Error>)> = Vec::new();

    for (j, feature) in dataset.features().iter().enumerate() {
        let feature_seed = seeds::derive(opts.seed, "codebook", j as u64);
        let result: Result<(DMatrix<f64>, FeatureEmbedding)> = match (&feature.data, kind) {
            (FeatureData::Longitudinal(series), TensorKind::Graph) => {
                embed_longitudinal_kg(series, dataset.domain(), opts)
                    .map(|(b, f)| (b, FeatureEmbedding::Fpc(f)))
            }
            (FeatureData::Longitudinal(series), TensorKind::Gcn) => {
                embed_longitudinal_gcn(series, dataset.domain(), opts)
                    .map(|(b, s)| (b, FeatureEmbedding::Spline(s)))
            }
            (FeatureData::Categorical { levels, values }, _) => {
                let (b, cb) = embed_categorical(&feature.name, *levels, values, opts.k, feature_seed);
                Ok((b, FeatureEmbedding::Codebook(cb)))
            }
            (FeatureData::Scalar(values), k_kind) => {
                let marker = match k_kind {
                    TensorKind::Graph => FeatureEmbedding::ScalarSlot,
                    TensorKind::Gcn => FeatureEmbedding::ScalarConstant,
                };
                Ok((embed_scalar(values, k_kind, opts.k), marker))
            }
        };
        match result {
            Ok((block, emb)) => {
                blocks.push(block);
                embeddings.push(emb);
            }
            Err(e) => failures.push((feature.name.clone(), Box::new(e))),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Embedding(failures));
    }

    let stats: Vec<SlotStats> = blocks.iter_mut().map(standardize_block).collect();
    Ok(EmbeddedTensor {
        kind,
        n: dataset.n(),
        k: opts.k,
        feature_names: dataset.features().iter().map(|f| f.name.clone()).collect(),
        modalities: dataset.features().iter().map(|f| f.data.modality()).collect(),
        blocks,
        stats,
        embeddings,
    })
}

/// Embeds `dataset` with the fitted bases, codebooks, and slot statistics
/// of `reference`, placing new entities in the same standardized space.
///
/// Feature names, order, and modalities must match `reference`. Blocks are
/// standardized with the stored statistics rather than recomputed, so rows
/// are directly comparable with reference rows and destandardization uses
/// the original scale. Slot means of the result are generally not zero.
pub fn embed_like(
    reference: &EmbeddedTensor,
    dataset: &Dataset,
    penalty_grid: Option<&[f64]>,
) -> Result<EmbeddedTensor> {
    let names: Vec<String> = dataset.features().iter().map(|f| f.name.clone()).collect();
    if names != reference.feature_names {
        return Err(Error::Contract(
            "dataset features do not match the fitted tensor".into(),
        ));
    }
    let modalities: Vec<Modality> = dataset.features().iter().map(|f| f.data.modality()).collect();
    if modalities != reference.modalities {
        return Err(Error::Contract(
            "dataset modalities do not match the fitted tensor".into(),
        ));
    }
    let grid_storage;
    let grid = match penalty_grid {
        Some(g) => g,
        None => {
            grid_storage = crate::fda::default_penalty_grid();
            &grid_storage
        }
    };
    let k = reference.k;
    let mut blocks = Vec::with_capacity(dataset.features().len());
    let mut failures: Vec<(String, Box<Error>)> = Vec::new();

    for (j, feature) in dataset.features().iter().enumerate() {
        let result: Result<DMatrix<f64>> = match (&feature.data, reference.embedding(j)) {
            (FeatureData::Longitudinal(series), FeatureEmbedding::Fpc(fpc)) => {
                let basis = Arc::new(fpc.basis().clone());
                smooth_feature(series, &basis, grid).and_then(|curves| {
                    let mut scores = DMatrix::zeros(series.len(), k);
                    for (i, c) in curves.iter().enumerate() {
                        scores.row_mut(i).copy_from(&fpc.project(c)?.transpose());
                    }
                    Ok(scores)
                })
            }
            (FeatureData::Longitudinal(series), FeatureEmbedding::Spline(b)) => {
                let basis = Arc::new(b.clone());
                smooth_feature(series, &basis, grid).map(|curves| {
                    let mut coeffs = DMatrix::zeros(series.len(), k);
                    for (i, c) in curves.iter().enumerate() {
                        coeffs.row_mut(i).copy_from(&c.coeffs().transpose());
                    }
                    coeffs
                })
            }
            (FeatureData::Categorical { values, .. }, FeatureEmbedding::Codebook(cb)) => {
                let mut block = DMatrix::zeros(values.len(), k);
                for (i, &level) in values.iter().enumerate() {
                    block.row_mut(i).copy_from(&cb.vectors().row(level));
                }
                Ok(block)
            }
            (FeatureData::Scalar(values), FeatureEmbedding::ScalarSlot) => {
                Ok(embed_scalar(values, TensorKind::Graph, k))
            }
            (FeatureData::Scalar(values), FeatureEmbedding::ScalarConstant) => {
                Ok(embed_scalar(values, TensorKind::Gcn, k))
            }
            _ => Err(Error::Contract(format!(
                "feature '{}' does not match its fitted embedding",
                feature.name
            ))),
        };
        match result {
            Ok(mut block) => {
                let st = &reference.stats[j];
                for s in 0..k {
                    for v in block.column_mut(s).iter_mut() {
                        *v = (*v - st.means[s]) / st.sds[s];
                    }
                }
                blocks.push(block);
            }
            Err(e) => failures.push((feature.name.clone(), Box::new(e))),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Embedding(failures));
    }
    Ok(EmbeddedTensor {
        kind: reference.kind,
        n: dataset.n(),
        k,
        feature_names: names,
        modalities,
        blocks,
        stats: reference.stats.clone(),
        embeddings: reference.embeddings.clone(),
    })
}
