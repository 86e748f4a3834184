//! Two-layer graph convolutional network over embedded feature blocks.
//!
//! Each entity is a p x k_1 matrix (one row per feature). Two graph
//! convolutions with ReLU activations share information along the
//! normalized adjacency, and per-target linear heads read the target
//! rows out as k_2 coefficient vectors. Gradients are coded by hand and
//! checked against finite differences; optimization is Adam with early
//! stopping on a held-out validation split.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddedTensor, Modality, SlotStats, TensorKind};
use crate::graph::KnowledgeGraph;
use crate::seeds;
use crate::{Error, Result};

/// What a target row is trained to reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Coefficient vector of a longitudinal or scalar feature.
    Regression,
    /// Codebook vector of a categorical feature.
    Classification,
}

/// Whether the network reproduces whole coefficient vectors or maps an
/// observed history onto an unseen horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    Static,
    /// `ratio` is the fraction of coefficient slots to forecast.
    Forecast { ratio: f64 },
}

/// Targets and mode for one training run. Multiple targets share a single
/// network and are predicted jointly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub targets: Vec<(usize, TaskKind)>,
    pub mode: TaskMode,
}

impl TaskSpec {
    pub fn new(targets: Vec<(usize, TaskKind)>, mode: TaskMode) -> Self {
        Self { targets, mode }
    }

    /// Checks the task against the tensor it will train on: model-kind
    /// tensor, in-range distinct targets, classification only on
    /// categorical features, forecasting only on longitudinal ones.
    pub fn validate(&self, tensor: &EmbeddedTensor) -> Result<()> {
        if tensor.kind() != TensorKind::Gcn {
            return Err(Error::Contract(
                "training needs a model tensor, not a graph tensor".into(),
            ));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("task needs at least one target".into()));
        }
        let p = tensor.p();
        let mut seen = vec![false; p];
        for &(j, kind) in &self.targets {
            if j >= p {
                return Err(Error::Config(format!(
                    "target {j} out of range for {p} features"
                )));
            }
            if seen[j] {
                return Err(Error::Config(format!("target {j} listed twice")));
            }
            seen[j] = true;
            let modality = tensor.modality(j);
            match kind {
                TaskKind::Classification => {
                    if !matches!(modality, Modality::Categorical { .. }) {
                        return Err(Error::Config(format!(
                            "classification target {j} is not categorical"
                        )));
                    }
                }
                TaskKind::Regression => {
                    if matches!(modality, Modality::Categorical { .. }) {
                        return Err(Error::Config(format!(
                            "regression target {j} is categorical; use classification"
                        )));
                    }
                }
            }
            if matches!(self.mode, TaskMode::Forecast { .. })
                && modality != Modality::Longitudinal
            {
                return Err(Error::Config(format!(
                    "forecast target {j} is not longitudinal"
                )));
            }
        }
        if let TaskMode::Forecast { ratio } = self.mode {
            if !(ratio > 0.0 && ratio < 1.0) {
                return Err(Error::Config(format!(
                    "forecast ratio must lie in (0, 1), got {ratio}"
                )));
            }
        }
        Ok(())
    }
}

/// History and horizon slot counts for a k-slot tensor.
///
/// Static mode keeps everything: k_1 = k_2 = k. Forecast mode rounds
/// `ratio`·k half-up to get the horizon k_2 and leaves k_1 = k - k_2.
/// Because coefficients of a spline basis with local support are ordered
/// left to right in time, the last k_2 slots are the horizon.
pub fn split_sizes(k: usize, mode: &TaskMode) -> Result<(usize, usize)> {
    match *mode {
        TaskMode::Static => Ok((k, k)),
        TaskMode::Forecast { ratio } => {
            if !(ratio > 0.0 && ratio < 1.0) {
                return Err(Error::Config(format!(
                    "forecast ratio must lie in (0, 1), got {ratio}"
                )));
            }
            let k2 = (ratio * k as f64).round() as usize;
            let k1 = k - k2.min(k);
            if k1 < 1 || k2 < 1 {
                return Err(Error::Config(format!(
                    "ratio {ratio} splits {k} slots into history {k1} and horizon {k2}; both need at least one"
                )));
            }
            Ok((k1, k2))
        }
    }
}

/// Per-feature history and horizon blocks of a tensor.
#[derive(Debug, Clone)]
pub struct CoefficientSplit {
    pub k1: usize,
    pub k2: usize,
    /// n x k_1 block per feature.
    pub history: Vec<DMatrix<f64>>,
    /// n x k_2 block per feature.
    pub horizon: Vec<DMatrix<f64>>,
}

/// Splits every feature block into history and horizon columns. In
/// static mode both sides are the full blocks.
pub fn split_history_horizon(x: &EmbeddedTensor, mode: &TaskMode) -> Result<CoefficientSplit> {
    let (k1, k2) = split_sizes(x.k(), mode)?;
    let mut history = Vec::with_capacity(x.p());
    let mut horizon = Vec::with_capacity(x.p());
    for j in 0..x.p() {
        let block = x.block(j);
        match mode {
            TaskMode::Static => {
                history.push(block.clone());
                horizon.push(block.clone());
            }
            TaskMode::Forecast { .. } => {
                history.push(block.columns(0, k1).clone_owned());
                horizon.push(block.columns(k1, k2).clone_owned());
            }
        }
    }
    Ok(CoefficientSplit {
        k1,
        k2,
        history,
        horizon,
    })
}

/// Network weights: two convolution layers plus one linear head per target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnParams {
    /// k_1 x h.
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    /// h x h.
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    /// One (h x k_2, k_2) pair per target.
    pub heads: Vec<(DMatrix<f64>, DVector<f64>)>,
}

impl GcnParams {
    /// Seeded scaled-uniform initialization in ±(6 / (fan_in + fan_out))^{1/2};
    /// biases start at zero.
    pub fn init(k1: usize, k2: usize, hidden: usize, n_targets: usize, rng: &mut impl Rng) -> Self {
        let fill = |rows: usize, cols: usize, rng: &mut dyn rand::RngCore| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let mut m = DMatrix::zeros(rows, cols);
            for v in m.as_mut_slice() {
                *v = rng.gen_range(-limit..limit);
            }
            m
        };
        let w1 = fill(k1, hidden, rng);
        let w2 = fill(hidden, hidden, rng);
        let heads = (0..n_targets)
            .map(|_| (fill(hidden, k2, rng), DVector::zeros(k2)))
            .collect();
        Self {
            w1,
            b1: DVector::zeros(hidden),
            w2,
            b2: DVector::zeros(hidden),
            heads,
        }
    }

    /// Same shapes, all entries zero. Used for gradient accumulators and
    /// optimizer state.
    pub fn zeros_like(&self) -> Self {
        Self {
            w1: DMatrix::zeros(self.w1.nrows(), self.w1.ncols()),
            b1: DVector::zeros(self.b1.len()),
            w2: DMatrix::zeros(self.w2.nrows(), self.w2.ncols()),
            b2: DVector::zeros(self.b2.len()),
            heads: self
                .heads
                .iter()
                .map(|(w, b)| (DMatrix::zeros(w.nrows(), w.ncols()), DVector::zeros(b.len())))
                .collect(),
        }
    }

    pub fn k1(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.ncols()
    }

    pub fn k2(&self) -> usize {
        self.heads.first().map_or(0, |(w, _)| w.ncols())
    }

    pub fn n_targets(&self) -> usize {
        self.heads.len()
    }

    /// Parameter blocks in a fixed order: w1, b1, w2, b2, then each head's
    /// weight and bias. The order is part of the optimizer contract.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = vec![
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
        ];
        for (w, b) in &self.heads {
            out.push(w.as_slice());
            out.push(b.as_slice());
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
        ];
        for (w, b) in &mut self.heads {
            out.push(w.as_mut_slice());
            out.push(b.as_mut_slice());
        }
        out
    }

    /// Adds `other` entry-wise; shapes must match.
    pub fn add_assign(&mut self, other: &Self) {
        let mut mine = self.slices_mut();
        let theirs = other.slices();
        debug_assert_eq!(mine.len(), theirs.len());
        for (m, t) in mine.iter_mut().zip(theirs) {
            debug_assert_eq!(m.len(), t.len());
            for (a, b) in m.iter_mut().zip(t) {
                *a += b;
            }
        }
    }

    /// Internal consistency: matching layer widths, at least one head,
    /// every head the same shape, finite entries.
    pub fn validate(&self) -> Result<()> {
        let h = self.hidden();
        if self.b1.len() != h
            || self.w2.nrows() != h
            || self.w2.ncols() != h
            || self.b2.len() != h
        {
            return Err(Error::Contract("layer widths disagree".into()));
        }
        if self.heads.is_empty() {
            return Err(Error::Contract("network needs at least one head".into()));
        }
        let k2 = self.k2();
        for (w, b) in &self.heads {
            if w.nrows() != h || w.ncols() != k2 || b.len() != k2 {
                return Err(Error::Contract("head shapes disagree".into()));
            }
        }
        if self.slices().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::Contract("parameters contain non-finite entries".into()));
        }
        Ok(())
    }
}

/// Intermediate activations kept for the backward pass.
struct ForwardPass {
    ax: DMatrix<f64>,
    z1: DMatrix<f64>,
    ah1: DMatrix<f64>,
    z2: DMatrix<f64>,
    h2: DMatrix<f64>,
    pred: DMatrix<f64>,
}

fn relu(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| v.max(0.0))
}

fn forward_pass(
    params: &GcnParams,
    a_norm: &DMatrix<f64>,
    x: &DMatrix<f64>,
    targets: &[usize],
) -> ForwardPass {
    let h = params.hidden();
    let ax = a_norm * x;
    let mut z1 = &ax * &params.w1;
    for i in 0..z1.nrows() {
        for q in 0..h {
            z1[(i, q)] += params.b1[q];
        }
    }
    let h1 = relu(&z1);
    let ah1 = a_norm * h1;
    let mut z2 = &ah1 * &params.w2;
    for i in 0..z2.nrows() {
        for q in 0..h {
            z2[(i, q)] += params.b2[q];
        }
    }
    let h2 = relu(&z2);
    let k2 = params.k2();
    let mut pred = DMatrix::zeros(targets.len(), k2);
    for (t, &tau) in targets.iter().enumerate() {
        let (w, b) = &params.heads[t];
        let row = h2.row(tau) * w;
        for c in 0..k2 {
            pred[(t, c)] = row[c] + b[c];
        }
    }
    ForwardPass {
        ax,
        z1,
        ah1,
        z2,
        h2,
        pred,
    }
}

fn check_forward_shapes(
    params: &GcnParams,
    a_norm: &DMatrix<f64>,
    x: &DMatrix<f64>,
    task: &TaskSpec,
) -> Result<()> {
    params.validate()?;
    let p = a_norm.nrows();
    if a_norm.ncols() != p {
        return Err(Error::Contract(format!(
            "adjacency is {}x{}, must be square",
            a_norm.nrows(),
            a_norm.ncols()
        )));
    }
    if x.nrows() != p {
        return Err(Error::Contract(format!(
            "entity has {} feature rows, adjacency has {p}",
            x.nrows()
        )));
    }
    if x.ncols() != params.k1() {
        return Err(Error::Contract(format!(
            "entity has {} slots, first layer expects {}",
            x.ncols(),
            params.k1()
        )));
    }
    if task.targets.len() != params.n_targets() {
        return Err(Error::Contract(format!(
            "{} targets but {} heads",
            task.targets.len(),
            params.n_targets()
        )));
    }
    if let Some(&(j, _)) = task.targets.iter().find(|(j, _)| *j >= p) {
        return Err(Error::Contract(format!(
            "target {j} out of range for {p} features"
        )));
    }
    Ok(())
}

/// Forward pass for one entity: two graph convolutions with ReLU, then a
/// linear head reading each target's row. Returns a p_target x k_2 matrix.
pub fn forward(
    params: &GcnParams,
    a_norm: &DMatrix<f64>,
    x: &DMatrix<f64>,
    task: &TaskSpec,
) -> Result<DMatrix<f64>> {
    check_forward_shapes(params, a_norm, x, task)?;
    let targets: Vec<usize> = task.targets.iter().map(|&(j, _)| j).collect();
    Ok(forward_pass(params, a_norm, x, &targets).pred)
}

/// Mean squared difference over all target rows and slots. Shapes must
/// match; classification rows compare codebook vectors, so every target
/// lives in the same k_2-dimensional space.
pub fn loss(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    assert_eq!(pred.shape(), truth.shape(), "loss needs matching shapes");
    let n = (pred.nrows() * pred.ncols()) as f64;
    (pred - truth).map(|d| d * d).sum() / n
}

/// Gradients of `loss(forward(..), truth)` in parameter shapes, plus the
/// loss itself. The ReLU subgradient at exactly zero is taken as zero.
pub fn backward(
    params: &GcnParams,
    a_norm: &DMatrix<f64>,
    x: &DMatrix<f64>,
    truth: &DMatrix<f64>,
    task: &TaskSpec,
) -> Result<(GcnParams, f64)> {
    check_forward_shapes(params, a_norm, x, task)?;
    let k2 = params.k2();
    if truth.nrows() != task.targets.len() || truth.ncols() != k2 {
        return Err(Error::Contract(format!(
            "truth is {}x{}, expected {}x{k2}",
            truth.nrows(),
            truth.ncols(),
            task.targets.len()
        )));
    }
    let targets: Vec<usize> = task.targets.iter().map(|&(j, _)| j).collect();
    let pass = forward_pass(params, a_norm, x, &targets);
    let value = loss(&pass.pred, truth);

    let p = a_norm.nrows();
    let h = params.hidden();
    let scale = 2.0 / (truth.nrows() * truth.ncols()) as f64;
    let g_pred = (pass.pred.clone() - truth) * scale;

    let mut grads = params.zeros_like();
    let mut g_h2 = DMatrix::zeros(p, h);
    for (t, &tau) in targets.iter().enumerate() {
        let (w, _) = &params.heads[t];
        let gt = g_pred.row(t);
        grads.heads[t].0 = pass.h2.row(tau).transpose() * gt;
        grads.heads[t].1 = gt.transpose();
        let back = gt * w.transpose();
        for q in 0..h {
            g_h2[(tau, q)] += back[q];
        }
    }
    let g_z2 = g_h2.zip_map(&pass.z2, |g, z| if z > 0.0 { g } else { 0.0 });
    grads.w2 = pass.ah1.transpose() * &g_z2;
    for q in 0..h {
        grads.b2[q] = g_z2.column(q).sum();
    }
    let g_h1 = a_norm.transpose() * &g_z2 * params.w2.transpose();
    let g_z1 = g_h1.zip_map(&pass.z1, |g, z| if z > 0.0 { g } else { 0.0 });
    grads.w1 = pass.ax.transpose() * &g_z1;
    for q in 0..h {
        grads.b1[q] = g_z1.column(q).sum();
    }
    Ok((grads, value))
}

/// Adam moment decay rates and denominator offset.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub m: GcnParams,
    pub v: GcnParams,
    pub t: usize,
}

impl AdamState {
    pub fn new(like: &GcnParams) -> Self {
        Self {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut GcnParams,
    grads: &GcnParams,
    state: &mut AdamState,
    learning_rate: f64,
    adam: &AdamConfig,
) {
    state.t += 1;
    let bc1 = 1.0 - adam.beta1.powi(state.t as i32);
    let bc2 = 1.0 - adam.beta2.powi(state.t as i32);
    let mut ps = params.slices_mut();
    let gs = grads.slices();
    let mut ms = state.m.slices_mut();
    let mut vs = state.v.slices_mut();
    debug_assert_eq!(ps.len(), gs.len());
    for b in 0..ps.len() {
        let (p, g, m, v) = (&mut ps[b], gs[b], &mut ms[b], &mut vs[b]);
        debug_assert_eq!(p.len(), g.len());
        for i in 0..p.len() {
            m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * g[i];
            v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= learning_rate * m_hat / (v_hat.sqrt() + adam.epsilon);
        }
    }
}

/// When Adam steps are applied within an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateGranularity {
    /// One step per entity visit, in the epoch's shuffled order. Default:
    /// at the learning rates this model is tuned for, per-entity steps are
    /// what lets 50 epochs move the parameters far enough to fit.
    Entity,
    /// Sum gradients over all training entities (fixed order), then one
    /// step at the epoch boundary.
    Epoch,
}

/// Training hyperparameters. `seed` drives initialization, the validation
/// split, and per-epoch shuffling; everything downstream is deterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without strict validation improvement before stopping.
    pub v_stop: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    pub hidden: usize,
    pub granularity: UpdateGranularity,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            max_epochs: 50,
            v_stop: 5,
            val_fraction: 0.2,
            seed: 0,
            adam: AdamConfig::default(),
            hidden: 32,
            granularity: UpdateGranularity::Entity,
        }
    }
}

impl TrainConfig {
    /// Defaults with the task-calibrated learning rate: 5e-5 for pure
    /// static regression, 1e-4 for classification and forecasting.
    pub fn for_task(task: &TaskSpec, seed: u64) -> Self {
        let pure_regression = matches!(task.mode, TaskMode::Static)
            && task.targets.iter().all(|(_, k)| *k == TaskKind::Regression);
        Self {
            learning_rate: if pure_regression { 5e-5 } else { 1e-4 },
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.v_stop == 0 {
            return Err(Error::Config("patience must be at least 1 epoch".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be at least 1".into()));
        }
        for (name, b) in [("beta1", self.adam.beta1), ("beta2", self.adam.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam.epsilon > 0.0) {
            return Err(Error::Config("adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// A trained network plus everything needed to apply it: the normalized
/// adjacency it was trained with, the task, the slot split, and the
/// training-time standardization statistics for each feature.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    /// Best-validation parameters.
    pub params: GcnParams,
    pub a_norm: DMatrix<f64>,
    pub task: TaskSpec,
    pub k_gcn: usize,
    pub k1: usize,
    pub k2: usize,
    pub hidden: usize,
    pub feature_names: Vec<String>,
    /// Standardization statistics of the training tensor, feature by
    /// feature. Destandardization of predictions must use these exactly.
    pub stats: Vec<SlotStats>,
    /// (train, validation) loss per completed epoch.
    pub loss_history: Vec<(f64, f64)>,
    pub stopped_epoch: usize,
}

impl TrainedModel {
    /// Forward pass with the best parameters for one p x k_1 entity.
    pub fn predict(&self, x_entity: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        forward(&self.params, &self.a_norm, x_entity, &self.task)
    }

    /// Predicts every entity of `x`, which must carry the same features
    /// and the same standardization statistics as the training tensor.
    pub fn predict_tensor(&self, x: &EmbeddedTensor) -> Result<Vec<DMatrix<f64>>> {
        if x.kind() != TensorKind::Gcn {
            return Err(Error::Contract(
                "prediction needs a model tensor, not a graph tensor".into(),
            ));
        }
        if x.feature_names() != self.feature_names.as_slice() {
            return Err(Error::Contract(
                "tensor features do not match the trained model".into(),
            ));
        }
        if x.k() != self.k_gcn {
            return Err(Error::Contract(format!(
                "tensor has {} slots, model was trained with {}",
                x.k(),
                self.k_gcn
            )));
        }
        for j in 0..x.p() {
            if x.stats(j) != &self.stats[j] {
                return Err(Error::Contract(format!(
                    "feature '{}' was standardized with different statistics",
                    self.feature_names[j]
                )));
            }
        }
        let mut out = Vec::with_capacity(x.n());
        for i in 0..x.n() {
            let full = x.entity_matrix(i);
            let hist = full.columns(0, self.k1).clone_owned();
            out.push(self.predict(&hist)?);
        }
        Ok(out)
    }

    /// Structural checks after deserialization.
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.loss_history.len() != self.stopped_epoch {
            return Err(Error::Contract(
                "loss history length disagrees with stopped epoch".into(),
            ));
        }
        if self.params.k1() != self.k1
            || self.params.k2() != self.k2
            || self.params.hidden() != self.hidden
            || self.params.n_targets() != self.task.targets.len()
        {
            return Err(Error::Contract("parameter shapes disagree with the task".into()));
        }
        let expected = match self.task.mode {
            TaskMode::Static => self.k1 == self.k_gcn && self.k2 == self.k_gcn,
            TaskMode::Forecast { .. } => self.k1 + self.k2 == self.k_gcn,
        };
        if !expected {
            return Err(Error::Contract("slot split disagrees with the mode".into()));
        }
        if self.a_norm.nrows() != self.feature_names.len()
            || self.a_norm.ncols() != self.feature_names.len()
            || self.stats.len() != self.feature_names.len()
        {
            return Err(Error::Contract("adjacency or stats sized differently than features".into()));
        }
        Ok(())
    }
}

/// Truth rows for one entity: each target's horizon slots (forecast) or
/// full coefficient row (static; for categorical targets this is the
/// standardized codebook vector).
fn truth_matrix(x: &EmbeddedTensor, task: &TaskSpec, k1: usize, k2: usize, i: usize) -> DMatrix<f64> {
    let mut truth = DMatrix::zeros(task.targets.len(), k2);
    for (t, &(j, _)) in task.targets.iter().enumerate() {
        let row = x.block(j).row(i);
        match task.mode {
            TaskMode::Static => truth.row_mut(t).copy_from(&row),
            TaskMode::Forecast { .. } => {
                truth.row_mut(t).copy_from(&row.columns(k1, k2));
            }
        }
    }
    truth
}

/// Trains the network on every entity of `x` with early stopping.
///
/// Entities are split into training and validation sets (at least one
/// each; the validation count is the floored fraction). The incumbent
/// best is the initial parameter set evaluated on the validation split;
/// an epoch improves only if its validation loss is strictly lower, and
/// `v_stop` consecutive non-improvements stop training. The returned
/// model carries the best-validation parameters, so its recorded best is
/// non-increasing over epochs by construction. Per-entity training losses
/// are averaged as visited; validation loss is evaluated after each epoch.
pub fn train(
    x: &EmbeddedTensor,
    graph: &KnowledgeGraph,
    task: &TaskSpec,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    task.validate(x)?;
    if graph.p() != x.p() {
        return Err(Error::Contract(format!(
            "graph covers {} features, tensor has {}",
            graph.p(),
            x.p()
        )));
    }
    let n = x.n();
    if n < 2 {
        return Err(Error::Contract(format!(
            "training needs at least 2 entities, got {n}"
        )));
    }
    let (k1, k2) = split_sizes(x.k(), &task.mode)?;
    let a_norm = graph.a_norm();

    let inputs: Vec<DMatrix<f64>> = (0..n)
        .map(|i| {
            let full = x.entity_matrix(i);
            full.columns(0, k1).clone_owned()
        })
        .collect();
    let truths: Vec<DMatrix<f64>> = (0..n).map(|i| truth_matrix(x, task, k1, k2, i)).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds::rng_for(config.seed, "validation-split", 0));
    let n_val = ((n as f64 * config.val_fraction).floor() as usize).clamp(1, n - 1);
    let val_idx: Vec<usize> = order[..n_val].to_vec();
    let train_idx: Vec<usize> = order[n_val..].to_vec();

    let mut rng = seeds::rng_for(config.seed, "glorot-init", 0);
    let mut params = GcnParams::init(k1, k2, config.hidden, task.targets.len(), &mut rng);
    let mut state = AdamState::new(&params);

    let val_loss_of = |params: &GcnParams| -> Result<f64> {
        let mut total = 0.0;
        for &i in &val_idx {
            let targets: Vec<usize> = task.targets.iter().map(|&(j, _)| j).collect();
            let pass = forward_pass(params, a_norm, &inputs[i], &targets);
            total += loss(&pass.pred, &truths[i]);
        }
        Ok(total / val_idx.len() as f64)
    };

    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut history: Vec<(f64, f64)> = Vec::new();
    let mut stagnant = 0usize;

    if config.max_epochs > 0 {
        best_val = val_loss_of(&params)?;
        if !best_val.is_finite() {
            return Err(Error::Divergence { epoch: 0 });
        }
    }

    let exploded = |params: &GcnParams| {
        params
            .slices()
            .iter()
            .any(|s| s.iter().any(|v| !v.is_finite()))
    };

    for epoch in 1..=config.max_epochs {
        let mut epoch_order = train_idx.clone();
        epoch_order.shuffle(&mut seeds::rng_for(config.seed, "epoch-order", epoch as u64));
        let mut train_total = 0.0;
        match config.granularity {
            UpdateGranularity::Entity => {
                for &i in &epoch_order {
                    let (grads, l) = backward(&params, a_norm, &inputs[i], &truths[i], task)?;
                    train_total += l;
                    adam_step(&mut params, &grads, &mut state, config.learning_rate, &config.adam);
                    if exploded(&params) {
                        return Err(Error::Divergence { epoch });
                    }
                }
            }
            UpdateGranularity::Epoch => {
                let mut summed = params.zeros_like();
                for &i in &epoch_order {
                    let (grads, l) = backward(&params, a_norm, &inputs[i], &truths[i], task)?;
                    train_total += l;
                    summed.add_assign(&grads);
                }
                adam_step(&mut params, &summed, &mut state, config.learning_rate, &config.adam);
                if exploded(&params) {
                    return Err(Error::Divergence { epoch });
                }
            }
        }
        let train_loss = train_total / epoch_order.len() as f64;
        let val_loss = val_loss_of(&params)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.push((train_loss, val_loss));
        if val_loss < best_val {
            best_val = val_loss;
            best = params.clone();
            stagnant = 0;
        } else {
            stagnant += 1;
            if stagnant >= config.v_stop {
                break;
            }
        }
    }

    let stopped_epoch = history.len();
    Ok(TrainedModel {
        params: best,
        a_norm: a_norm.clone(),
        task: task.clone(),
        k_gcn: x.k(),
        k1,
        k2,
        hidden: config.hidden,
        feature_names: x.feature_names().to_vec(),
        stats: (0..x.p()).map(|j| x.stats(j).clone()).collect(),
        loss_history: history,
        stopped_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{assemble, Dataset, EmbedOptions, Feature, FeatureData};
    use crate::fda::{DiscreteSamples, Domain};
    use crate::graph::finalize;
    use approx::assert_abs_diff_eq;

    fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    /// Forward computed with explicit index loops, no linear algebra.
    fn naive_forward(
        params: &GcnParams,
        a: &DMatrix<f64>,
        x: &DMatrix<f64>,
        targets: &[usize],
    ) -> DMatrix<f64> {
        let p = a.nrows();
        let k1 = x.ncols();
        let h = params.hidden();
        let k2 = params.k2();
        let mut ax = vec![vec![0.0; k1]; p];
        for i in 0..p {
            for s in 0..k1 {
                for j in 0..p {
                    ax[i][s] += a[(i, j)] * x[(j, s)];
                }
            }
        }
        let mut h1 = vec![vec![0.0; h]; p];
        for i in 0..p {
            for q in 0..h {
                let mut z = params.b1[q];
                for s in 0..k1 {
                    z += ax[i][s] * params.w1[(s, q)];
                }
                h1[i][q] = if z > 0.0 { z } else { 0.0 };
            }
        }
        let mut ah1 = vec![vec![0.0; h]; p];
        for i in 0..p {
            for q in 0..h {
                for j in 0..p {
                    ah1[i][q] += a[(i, j)] * h1[j][q];
                }
            }
        }
        let mut h2 = vec![vec![0.0; h]; p];
        for i in 0..p {
            for q in 0..h {
                let mut z = params.b2[q];
                for r in 0..h {
                    z += ah1[i][r] * params.w2[(r, q)];
                }
                h2[i][q] = if z > 0.0 { z } else { 0.0 };
            }
        }
        let mut out = DMatrix::zeros(targets.len(), k2);
        for (t, &tau) in targets.iter().enumerate() {
            let (w, b) = &params.heads[t];
            for c in 0..k2 {
                let mut v = b[c];
                for q in 0..h {
                    v += h2[tau][q] * w[(q, c)];
                }
                out[(t, c)] = v;
            }
        }
        out
    }

    fn static_task(targets: &[usize]) -> TaskSpec {
        TaskSpec::new(
            targets.iter().map(|&j| (j, TaskKind::Regression)).collect(),
            TaskMode::Static,
        )
    }

    #[test]
    fn forward_matches_loop_oracle() {
        let mut rng = seeds::rng_for(3, "fwd-oracle", 0);
        for trial in 0..20 {
            let (p, k1, h, k2) = (5, 4, 6, 3);
            let params = {
                let mut init =
                    GcnParams::init(k1, k2, h, 2, &mut seeds::rng_for(7, "fwd-init", trial));
                // Random biases so the oracle exercises every term.
                for v in init.b1.iter_mut() {
                    *v = rng.gen_range(-0.5..0.5);
                }
                for v in init.b2.iter_mut() {
                    *v = rng.gen_range(-0.5..0.5);
                }
                for (_, b) in init.heads.iter_mut() {
                    for v in b.iter_mut() {
                        *v = rng.gen_range(-0.5..0.5);
                    }
                }
                init
            };
            let a = random_matrix(p, p, &mut rng);
            let x = random_matrix(p, k1, &mut rng);
            let task = static_task(&[1, 3]);
            let got = forward(&params, &a, &x, &task).unwrap();
            let want = naive_forward(&params, &a, &x, &[1, 3]);
            assert!((got - want).abs().max() < 1e-12);
        }
    }

    #[test]
    fn forward_hand_computed_single_node() {
        // One node with identity adjacency reduces to a plain 2-layer MLP.
        let params = GcnParams {
            w1: DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 2.0, 0.0]),
            b1: DVector::from_column_slice(&[0.5, -0.25]),
            w2: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]),
            b2: DVector::from_column_slice(&[0.0, 0.1]),
            heads: vec![(
                DMatrix::from_column_slice(2, 1, &[2.0, -1.0]),
                DVector::from_column_slice(&[0.05]),
            )],
        };
        let a = DMatrix::identity(1, 1);
        let x = DMatrix::from_row_slice(1, 2, &[0.3, -0.2]);
        // z1 = [0.4, -0.55], h1 = [0.4, 0]; z2 = [0.4, 0.5] (both positive);
        // out = 0.4*2 - 0.5*1 + 0.05 = 0.35.
        let out = forward(&params, &a, &x, &static_task(&[0])).unwrap();
        assert_abs_diff_eq!(out[(0, 0)], 0.35, epsilon = 1e-15);
    }

    #[test]
    fn forward_zero_weights_yields_head_biases() {
        let mut rng = seeds::rng_for(4, "zero-w", 0);
        let template = GcnParams::init(3, 2, 4, 2, &mut rng);
        let mut params = template.zeros_like();
        params.heads[0].1 = DVector::from_column_slice(&[1.5, -2.0]);
        params.heads[1].1 = DVector::from_column_slice(&[0.25, 0.75]);
        let a = random_matrix(4, 4, &mut rng);
        let x = random_matrix(4, 3, &mut rng);
        let out = forward(&params, &a, &x, &static_task(&[0, 2])).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[1.5, -2.0, 0.25, 0.75]);
        assert_eq!(out, want);
    }

    #[test]
    fn forward_rejects_shape_mismatches() {
        let mut rng = seeds::rng_for(5, "shapes", 0);
        let params = GcnParams::init(3, 2, 4, 1, &mut rng);
        let a = random_matrix(4, 4, &mut rng);
        let x_bad = random_matrix(4, 5, &mut rng);
        assert!(matches!(
            forward(&params, &a, &x_bad, &static_task(&[0])),
            Err(Error::Contract(_))
        ));
        let x = random_matrix(4, 3, &mut rng);
        assert!(matches!(
            forward(&params, &a, &x, &static_task(&[9])),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            forward(&params, &a, &x, &static_task(&[0, 1])),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn loss_definition() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(loss(&a, &a), 0.0);
        let b = a.map(|v| v + 1.0);
        assert_abs_diff_eq!(loss(&b, &a), 1.0, epsilon = 1e-15);
        // Mean over the concatenated rows, regardless of which target a
        // row belongs to.
        let pred = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let truth = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(loss(&pred, &truth), (1.0 + 4.0) / 4.0, epsilon = 1e-15);
    }

    /// Central finite differences over every parameter entry.
    fn numeric_gradients(
        params: &GcnParams,
        a: &DMatrix<f64>,
        x: &DMatrix<f64>,
        truth: &DMatrix<f64>,
        task: &TaskSpec,
        delta: f64,
    ) -> GcnParams {
        let mut fd = params.zeros_like();
        let n_blocks = params.slices().len();
        for b in 0..n_blocks {
            let len = params.slices()[b].len();
            for i in 0..len {
                let mut plus = params.clone();
                plus.slices_mut()[b][i] += delta;
                let mut minus = params.clone();
                minus.slices_mut()[b][i] -= delta;
                let lp = loss(&forward(&plus, a, x, task).unwrap(), truth);
                let lm = loss(&forward(&minus, a, x, task).unwrap(), truth);
                fd.slices_mut()[b][i] = (lp - lm) / (2.0 * delta);
            }
        }
        fd
    }

    #[test]
    fn backward_matches_finite_differences() {
        for trial in 0..5 {
            let mut rng = seeds::rng_for(11, "fd", trial);
            let (p, k1, h, k2) = (4, 3, 4, 2);
            let params = GcnParams::init(k1, k2, h, 2, &mut seeds::rng_for(12, "fd-init", trial));
            let a = random_matrix(p, p, &mut rng);
            let x = random_matrix(p, k1, &mut rng);
            let truth = random_matrix(2, k2, &mut rng);
            let task = static_task(&[0, 2]);
            let (grads, _) = backward(&params, &a, &x, &truth, &task).unwrap();
            let fd = numeric_gradients(&params, &a, &x, &truth, &task, 1e-5);
            for (g, f) in grads.slices().iter().zip(fd.slices()) {
                for (gv, fv) in g.iter().zip(f.iter()) {
                    let denom = gv.abs().max(fv.abs());
                    if denom < 1e-8 {
                        assert!((gv - fv).abs() < 1e-7, "near-zero gradient mismatch");
                    } else {
                        assert!(
                            ((gv - fv) / denom).abs() < 1e-4,
                            "gradient {gv} vs finite difference {fv}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn backward_dead_network_has_zero_weight_gradients() {
        let mut rng = seeds::rng_for(13, "dead", 0);
        let params = {
            let mut p = GcnParams::init(3, 2, 4, 1, &mut rng);
            p.b1.fill(0.0);
            p.b2.fill(0.0);
            p.heads[0].1.fill(0.0);
            p
        };
        let a = random_matrix(4, 4, &mut rng);
        let x = DMatrix::zeros(4, 3);
        let truth = DMatrix::from_row_slice(1, 2, &[1.0, -2.0]);
        let task = static_task(&[1]);
        let (grads, l) = backward(&params, &a, &x, &truth, &task).unwrap();
        // Zero input and zero biases keep every activation at 0, so no
        // signal reaches the weights; only the head bias sees the error.
        assert!(grads.w1.iter().all(|v| *v == 0.0));
        assert!(grads.w2.iter().all(|v| *v == 0.0));
        assert!(grads.b1.iter().all(|v| *v == 0.0));
        assert!(grads.b2.iter().all(|v| *v == 0.0));
        assert!(grads.heads[0].0.iter().all(|v| *v == 0.0));
        let g = &grads.heads[0].1;
        assert_abs_diff_eq!(g[0], 2.0 * (0.0 - 1.0) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], 2.0 * (0.0 + 2.0) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l, (1.0 + 4.0) / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn backward_is_linear_in_the_residual() {
        let mut rng = seeds::rng_for(14, "linear", 0);
        let (p, k1, h, k2) = (4, 3, 5, 2);
        let params = GcnParams::init(k1, k2, h, 1, &mut rng);
        let a = random_matrix(p, p, &mut rng);
        let x = random_matrix(p, k1, &mut rng);
        let task = static_task(&[2]);
        let pred = forward(&params, &a, &x, &task).unwrap();
        let d = random_matrix(1, k2, &mut rng);
        let single = pred.clone() - &d;
        let double = pred.clone() - d.map(|v| 2.0 * v);
        let (g1, _) = backward(&params, &a, &x, &single, &task).unwrap();
        let (g2, _) = backward(&params, &a, &x, &double, &task).unwrap();
        for (s1, s2) in g1.slices().iter().zip(g2.slices()) {
            for (v1, v2) in s1.iter().zip(s2.iter()) {
                assert_abs_diff_eq!(2.0 * v1, *v2, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters_unchanged() {
        let mut rng = seeds::rng_for(15, "adam0", 0);
        let mut params = GcnParams::init(3, 2, 4, 1, &mut rng);
        let before = params.clone();
        let grads = params.zeros_like();
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 1e-3, &AdamConfig::default());
        assert_eq!(params, before);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut rng = seeds::rng_for(16, "adam1", 0);
        let mut params = GcnParams::init(3, 2, 4, 1, &mut rng);
        let before = params.clone();
        let mut grads = params.zeros_like();
        for s in grads.slices_mut() {
            for v in s.iter_mut() {
                *v = rng.gen_range(-2.0..2.0);
            }
        }
        let mut state = AdamState::new(&params);
        let lr = 1e-3;
        let cfg = AdamConfig::default();
        adam_step(&mut params, &grads, &mut state, lr, &cfg);
        // Bias correction cancels on the first step: update is
        // -lr * g / (|g| + eps).
        for ((p, b), g) in params
            .slices()
            .iter()
            .zip(before.slices())
            .zip(grads.slices())
        {
            for i in 0..p.len() {
                let want = b[i] - lr * g[i] / (g[i].abs() + cfg.epsilon);
                assert_abs_diff_eq!(p[i], want, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn adam_constant_gradient_step_approaches_learning_rate() {
        let mut rng = seeds::rng_for(17, "adam-lim", 0);
        let mut params = GcnParams::init(2, 2, 3, 1, &mut rng);
        let mut grads = params.zeros_like();
        for s in grads.slices_mut() {
            for v in s.iter_mut() {
                *v = 0.5;
            }
        }
        let mut state = AdamState::new(&params);
        let lr = 1e-3;
        let mut prev = params.clone();
        for _ in 0..500 {
            prev = params.clone();
            adam_step(&mut params, &grads, &mut state, lr, &AdamConfig::default());
        }
        for (p, q) in params.slices().iter().zip(prev.slices()) {
            for i in 0..p.len() {
                let step = (p[i] - q[i]).abs();
                assert!((step / lr - 1.0).abs() < 0.01, "step {step} vs lr {lr}");
            }
        }
    }

    #[test]
    fn split_sizes_and_errors() {
        assert_eq!(split_sizes(20, &TaskMode::Forecast { ratio: 0.3 }).unwrap(), (14, 6));
        assert_eq!(split_sizes(10, &TaskMode::Forecast { ratio: 0.5 }).unwrap(), (5, 5));
        assert_eq!(split_sizes(7, &TaskMode::Static).unwrap(), (7, 7));
        assert!(split_sizes(5, &TaskMode::Forecast { ratio: 0.05 }).is_err());
        assert!(split_sizes(5, &TaskMode::Forecast { ratio: 0.97 }).is_err());
        assert!(split_sizes(5, &TaskMode::Forecast { ratio: 1.2 }).is_err());
    }

    fn toy_times() -> Vec<f64> {
        (0..15).map(|i| i as f64 / 14.0).collect()
    }

    /// Dataset where feature "response" is an exact linear transform of
    /// feature "driver" plus small noise, with one random categorical.
    fn toy_dataset(n: usize, seed: u64) -> Dataset {
        let times = toy_times();
        let mut drivers = Vec::with_capacity(n);
        let mut responses = Vec::with_capacity(n);
        let mut cats = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = seeds::rng_for(seed, "toy-entity", i as u64);
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            let noise: f64 = rng.gen_range(-0.05..0.05);
            let d: Vec<f64> = times
                .iter()
                .map(|&t| a * (std::f64::consts::TAU * t).sin() + b * t)
                .collect();
            let r: Vec<f64> = d.iter().map(|v| 2.0 * v + 0.5 + noise).collect();
            drivers.push(DiscreteSamples::new(times.clone(), d).unwrap());
            responses.push(DiscreteSamples::new(times.clone(), r).unwrap());
            cats.push(rng.gen_range(0..3usize));
        }
        Dataset::new(
            n,
            Domain::unit(),
            vec![
                Feature {
                    name: "driver".into(),
                    data: FeatureData::Longitudinal(drivers),
                },
                Feature {
                    name: "response".into(),
                    data: FeatureData::Longitudinal(responses),
                },
                Feature {
                    name: "class".into(),
                    data: FeatureData::Categorical {
                        levels: 3,
                        values: cats,
                    },
                },
            ],
        )
        .unwrap()
    }

    fn toy_setup(n: usize, seed: u64) -> (EmbeddedTensor, KnowledgeGraph) {
        let dataset = toy_dataset(n, seed);
        let tensor = assemble(&dataset, TensorKind::Gcn, &EmbedOptions::new(5, 21)).unwrap();
        let mut a_raw = DMatrix::identity(3, 3);
        a_raw[(0, 1)] = 0.9;
        a_raw[(1, 0)] = 0.9;
        let graph = finalize(a_raw, 0.5, vec![]).unwrap();
        (tensor, graph)
    }

    #[test]
    fn task_validation_rules() {
        let (tensor, _) = toy_setup(12, 30);
        let ok = TaskSpec::new(vec![(1, TaskKind::Regression)], TaskMode::Static);
        ok.validate(&tensor).unwrap();
        let cases = vec![
            TaskSpec::new(vec![], TaskMode::Static),
            TaskSpec::new(vec![(9, TaskKind::Regression)], TaskMode::Static),
            TaskSpec::new(
                vec![(1, TaskKind::Regression), (1, TaskKind::Regression)],
                TaskMode::Static,
            ),
            TaskSpec::new(vec![(0, TaskKind::Classification)], TaskMode::Static),
            TaskSpec::new(vec![(2, TaskKind::Regression)], TaskMode::Static),
            TaskSpec::new(
                vec![(2, TaskKind::Classification)],
                TaskMode::Forecast { ratio: 0.4 },
            ),
            TaskSpec::new(
                vec![(0, TaskKind::Regression)],
                TaskMode::Forecast { ratio: 1.5 },
            ),
        ];
        for task in cases {
            assert!(task.validate(&tensor).is_err(), "accepted {task:?}");
        }
    }

    #[test]
    fn split_history_horizon_slices_blocks() {
        let (tensor, _) = toy_setup(10, 31);
        let split =
            split_history_horizon(&tensor, &TaskMode::Forecast { ratio: 0.4 }).unwrap();
        assert_eq!((split.k1, split.k2), (3, 2));
        for j in 0..tensor.p() {
            assert_eq!(split.history[j], tensor.block(j).columns(0, 3).clone_owned());
            assert_eq!(split.horizon[j], tensor.block(j).columns(3, 2).clone_owned());
        }
        let same = split_history_horizon(&tensor, &TaskMode::Static).unwrap();
        assert_eq!((same.k1, same.k2), (5, 5));
        for j in 0..tensor.p() {
            assert_eq!(&same.history[j], tensor.block(j));
            assert_eq!(&same.horizon[j], tensor.block(j));
        }
    }

    #[test]
    fn train_zero_epochs_returns_initial_parameters() {
        let (tensor, graph) = toy_setup(10, 32);
        let task = static_task(&[1]);
        let config = TrainConfig {
            max_epochs: 0,
            seed: 5,
            hidden: 8,
            ..TrainConfig::default()
        };
        let model = train(&tensor, &graph, &task, &config).unwrap();
        assert!(model.loss_history.is_empty());
        assert_eq!(model.stopped_epoch, 0);
        let mut rng = seeds::rng_for(5, "glorot-init", 0);
        let init = GcnParams::init(5, 5, 8, 1, &mut rng);
        assert_eq!(model.params, init);
        model.validate().unwrap();
    }

    #[test]
    fn train_patience_counts_stagnant_epochs() {
        // A learning rate under the denormal threshold moves nothing, so
        // validation loss is frozen at the initial incumbent and training
        // must stop after exactly v_stop stagnant epochs.
        let (tensor, graph) = toy_setup(10, 33);
        let task = static_task(&[1]);
        let config = TrainConfig {
            learning_rate: 1e-300,
            max_epochs: 25,
            v_stop: 3,
            seed: 2,
            hidden: 6,
            ..TrainConfig::default()
        };
        let model = train(&tensor, &graph, &task, &config).unwrap();
        assert_eq!(model.stopped_epoch, 3);
        assert_eq!(model.loss_history.len(), 3);
        assert_eq!(model.loss_history[0].1, model.loss_history[2].1);
    }

    #[test]
    fn train_is_deterministic_per_seed() {
        let (tensor, graph) = toy_setup(14, 34);
        let task = TaskSpec::new(
            vec![(1, TaskKind::Regression), (2, TaskKind::Classification)],
            TaskMode::Static,
        );
        let config = TrainConfig {
            max_epochs: 8,
            learning_rate: 1e-3,
            seed: 9,
            hidden: 8,
            ..TrainConfig::default()
        };
        let a = train(&tensor, &graph, &task, &config).unwrap();
        let b = train(&tensor, &graph, &task, &config).unwrap();
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(a.params, b.params);
        let other = TrainConfig { seed: 10, ..config };
        let c = train(&tensor, &graph, &task, &other).unwrap();
        assert_ne!(a.loss_history, c.loss_history);
    }

    #[test]
    fn train_diverges_with_absurd_learning_rate() {
        let (tensor, graph) = toy_setup(10, 35);
        let task = static_task(&[1]);
        // Adam step sizes track the learning rate, so 1e80 pushes the
        // parameters far enough that squared predictions overflow.
        let config = TrainConfig {
            learning_rate: 1e80,
            max_epochs: 10,
            seed: 3,
            hidden: 6,
            ..TrainConfig::default()
        };
        match train(&tensor, &graph, &task, &config) {
            Err(Error::Divergence { epoch }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn train_learns_a_linear_relation() {
        let (tensor, graph) = toy_setup(40, 36);
        let task = static_task(&[1]);
        let config = TrainConfig {
            learning_rate: 2e-3,
            max_epochs: 50,
            seed: 4,
            hidden: 16,
            ..TrainConfig::default()
        };
        let model = train(&tensor, &graph, &task, &config).unwrap();
        let first_val = model.loss_history[0].1;
        let best_val = model
            .loss_history
            .iter()
            .map(|(_, v)| *v)
            .fold(f64::INFINITY, f64::min);
        assert!(
            best_val < 0.25 * first_val,
            "no learning: first {first_val}, best {best_val}"
        );
        assert!(best_val < 0.25, "best validation loss {best_val} too high");
    }

    #[test]
    fn train_epoch_granularity_takes_one_step_per_epoch() {
        let (tensor, graph) = toy_setup(14, 37);
        let task = static_task(&[1]);
        let config = TrainConfig {
            granularity: UpdateGranularity::Epoch,
            max_epochs: 1,
            learning_rate: 1e-3,
            seed: 6,
            hidden: 6,
            ..TrainConfig::default()
        };
        let model = train(&tensor, &graph, &task, &config).unwrap();

        // Rebuild the epoch by hand: same split, same initialization, all
        // losses and gradients taken at the initial parameters, one Adam
        // step with the summed gradient at the boundary.
        let n = tensor.n();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seeds::rng_for(6, "validation-split", 0));
        let n_val = ((n as f64 * config.val_fraction).floor() as usize).clamp(1, n - 1);
        let val_idx = order[..n_val].to_vec();
        let mut epoch_order = order[n_val..].to_vec();
        epoch_order.shuffle(&mut seeds::rng_for(6, "epoch-order", 1));

        let truth_of = |i: usize| DMatrix::from_fn(1, 5, |_, c| tensor.block(1)[(i, c)]);
        let mut params = GcnParams::init(5, 5, 6, 1, &mut seeds::rng_for(6, "glorot-init", 0));
        let mut summed = params.zeros_like();
        let mut train_total = 0.0;
        for &i in &epoch_order {
            let x = tensor.entity_matrix(i);
            let (g, l) = backward(&params, graph.a_norm(), &x, &truth_of(i), &task).unwrap();
            train_total += l;
            summed.add_assign(&g);
        }
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &summed, &mut state, 1e-3, &AdamConfig::default());
        let mut val_total = 0.0;
        for &i in &val_idx {
            let x = tensor.entity_matrix(i);
            let pred = forward(&params, graph.a_norm(), &x, &task).unwrap();
            val_total += loss(&pred, &truth_of(i));
        }
        assert_eq!(model.loss_history.len(), 1);
        assert_eq!(model.loss_history[0].0, train_total / epoch_order.len() as f64);
        assert_eq!(model.loss_history[0].1, val_total / val_idx.len() as f64);
    }

    #[test]
    fn best_recorded_validation_loss_is_non_increasing() {
        let (tensor, graph) = toy_setup(20, 38);
        let task = static_task(&[1]);
        let config = TrainConfig {
            learning_rate: 5e-3,
            max_epochs: 30,
            seed: 8,
            hidden: 8,
            ..TrainConfig::default()
        };
        let model = train(&tensor, &graph, &task, &config).unwrap();
        let mut best = f64::INFINITY;
        let mut bests = Vec::new();
        for &(_, v) in &model.loss_history {
            best = best.min(v);
            bests.push(best);
        }
        for w in bests.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn multi_target_prediction_shapes_and_forecast_split() {
        let (tensor, graph) = toy_setup(16, 39);
        let task = TaskSpec::new(
            vec![(0, TaskKind::Regression), (1, TaskKind::Regression)],
            TaskMode::Forecast { ratio: 0.4 },
        );
        let config = TrainConfig {
            max_epochs: 4,
            learning_rate: 1e-3,
            seed: 11,
            hidden: 6,
            ..TrainConfig::default()
        };
        let model = train(&tensor, &graph, &task, &config).unwrap();
        assert_eq!((model.k1, model.k2), (3, 2));
        model.validate().unwrap();
        let preds = model.predict_tensor(&tensor).unwrap();
        assert_eq!(preds.len(), 16);
        for pred in &preds {
            assert_eq!(pred.shape(), (2, 2));
        }
        // Static classification alongside regression: two k-slot rows.
        let mixed = TaskSpec::new(
            vec![(1, TaskKind::Regression), (2, TaskKind::Classification)],
            TaskMode::Static,
        );
        let model = train(&tensor, &graph, &mixed, &config).unwrap();
        let preds = model.predict_tensor(&tensor).unwrap();
        assert_eq!(preds[0].shape(), (2, 5));
    }

    #[test]
    fn predict_tensor_rejects_foreign_tensors() {
        let (tensor, graph) = toy_setup(12, 40);
        let task = static_task(&[1]);
        let config = TrainConfig {
            max_epochs: 2,
            seed: 12,
            hidden: 6,
            ..TrainConfig::default()
        };
        let model = train(&tensor, &graph, &task, &config).unwrap();
        // Same schema, different entities: stats disagree.
        let other = assemble(
            &toy_dataset(12, 99),
            TensorKind::Gcn,
            &EmbedOptions::new(5, 21),
        )
        .unwrap();
        assert!(matches!(
            model.predict_tensor(&other),
            Err(Error::Contract(_))
        ));
        // The training tensor itself passes.
        assert!(model.predict_tensor(&tensor).is_ok());
    }
}
