//! Knowledge-graph estimation by node-wise group-sparse regression.
//!
//! Each feature in turn is the response; all other feature blocks are
//! predictor groups in a multi-response group lasso. Walking a geometric
//! regularization path from the all-zero solution downward, the step at
//! which a group first becomes active scores its association with the
//! target. Scores assemble into an adjacency matrix that is symmetrized,
//! pruned, and degree-normalized for use in graph convolutions.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddedTensor, TensorKind};
use crate::error::{Error, Result};

/// Group-lasso path solver settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Stop a target's path once this many predictors are active.
    pub p_max: usize,
    /// Number of geometric steps from c = 1 down to c_min.
    pub path_length: usize,
    /// Smallest path fraction of lambda_max.
    pub c_min: f64,
    /// Convergence threshold on the scaled KKT violation.
    pub tolerance: f64,
    /// Budget of block updates per solve.
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            p_max: 5,
            path_length: 50,
            c_min: 0.01,
            tolerance: 1e-6,
            max_iters: 400_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p_max == 0 {
            return Err(Error::Config("p_max must be at least 1".into()));
        }
        if self.path_length < 2 {
            return Err(Error::Config(format!(
                "path needs at least 2 steps, got {}",
                self.path_length
            )));
        }
        if !(self.c_min > 0.0 && self.c_min < 1.0) {
            return Err(Error::Config(format!(
                "c_min must lie in (0, 1), got {}",
                self.c_min
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("iteration budget must be positive".into()));
        }
        Ok(())
    }

    /// Geometric path fractions from 1 down to c_min, inclusive.
    pub fn path_c_values(&self) -> Vec<f64> {
        let steps = self.path_length;
        (0..steps)
            .map(|i| self.c_min.powf(i as f64 / (steps - 1) as f64))
            .collect()
    }
}

/// One target's selection record: which predictors entered the active set,
/// and at which path fraction. Fractions are strictly decreasing, lie in
/// (0, 1], and never name the target itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPath {
    pub target: usize,
    pub selections: Vec<(usize, f64)>,
}

impl SelectionPath {
    pub fn validate(&self, p: usize) -> Result<()> {
        if self.target >= p {
            return Err(Error::Contract(format!(
                "target {} out of range for {p} features",
                self.target
            )));
        }
        let mut seen = vec![false; p];
        let mut prev = f64::INFINITY;
        for &(t, c) in &self.selections {
            if t >= p || t == self.target {
                return Err(Error::Contract(format!(
                    "selection {t} invalid for target {}",
                    self.target
                )));
            }
            if seen[t] {
                return Err(Error::Contract(format!("feature {t} selected twice")));
            }
            seen[t] = true;
            if !(c > 0.0 && c <= 1.0) || c >= prev {
                return Err(Error::Contract(format!(
                    "path fractions must strictly decrease within (0, 1], got {c}"
                )));
            }
            prev = c;
        }
        Ok(())
    }
}

/// The estimated graph in raw, symmetric-pruned, and normalized form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    a_raw: DMatrix<f64>,
    a_sym: DMatrix<f64>,
    a_norm: DMatrix<f64>,
    theta: f64,
    paths: Vec<SelectionPath>,
}

impl KnowledgeGraph {
    pub fn p(&self) -> usize {
        self.a_raw.nrows()
    }

    /// Raw adjacency: row j holds target j's selection scores, diagonal 1.
    pub fn a_raw(&self) -> &DMatrix<f64> {
        &self.a_raw
    }

    /// Symmetrized and pruned adjacency.
    pub fn a_sym(&self) -> &DMatrix<f64> {
        &self.a_sym
    }

    /// Degree-normalized adjacency used by graph convolutions.
    pub fn a_norm(&self) -> &DMatrix<f64> {
        &self.a_norm
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn paths(&self) -> &[SelectionPath] {
        &self.paths
    }

    /// Checks every structural invariant: raw range and unit diagonal,
    /// pruned symmetrization, and the normalization identity to 1e-12.
    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        if self.a_raw.ncols() != p || self.a_sym.shape() != (p, p) || self.a_norm.shape() != (p, p)
        {
            return Err(Error::Contract("adjacency matrices must be square and same size".into()));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::Contract(format!("theta must lie in (0, 1), got {}", self.theta)));
        }
        for i in 0..p {
            if (self.a_raw[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::Contract(format!("raw diagonal {i} is not 1")));
            }
            for j in 0..p {
                let v = self.a_raw[(i, j)];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Contract(format!("raw entry ({i}, {j}) = {v} outside [0, 1]")));
                }
            }
        }
        let expected_sym = prune(&symmetrize(&self.a_raw), self.theta);
        let expected_norm = normalize(&expected_sym)?;
        for i in 0..p {
            for j in 0..p {
                let s = self.a_sym[(i, j)];
                if (s - expected_sym[(i, j)]).abs() > 1e-12 {
                    return Err(Error::Contract(format!(
                        "symmetric entry ({i}, {j}) deviates from pruned (A + A')/2"
                    )));
                }
                if s != 0.0 && s < self.theta {
                    return Err(Error::Contract(format!(
                        "pruned entry ({i}, {j}) = {s} below theta"
                    )));
                }
                if (self.a_norm[(i, j)] - expected_norm[(i, j)]).abs() > 1e-12 {
                    return Err(Error::Contract(format!(
                        "normalized entry ({i}, {j}) deviates from D A D"
                    )));
                }
            }
        }
        for path in &self.paths {
            path.validate(p)?;
        }
        Ok(())
    }
}

fn check_problem(y: &DMatrix<f64>, xs: &[&DMatrix<f64>]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Degenerate("no predictor groups".into()));
    }
    let n = y.nrows();
    if n == 0 || y.ncols() == 0 {
        return Err(Error::Contract("response block is empty".into()));
    }
    for (t, x) in xs.iter().enumerate() {
        if x.nrows() != n || x.ncols() == 0 {
            return Err(Error::Contract(format!(
                "predictor group {t} has shape {:?}, expected {n} rows",
                x.shape()
            )));
        }
    }
    Ok(())
}

/// Smallest penalty at which the group-lasso solution is identically zero:
/// the largest Frobenius norm of a group's correlation with the response.
pub fn lambda_max(y: &DMatrix<f64>, xs: &[&DMatrix<f64>]) -> Result<f64> {
    check_problem(y, xs)?;
    if xs.iter().all(|x| x.iter().all(|&v| v == 0.0)) {
        return Err(Error::Degenerate("all predictor groups are zero".into()));
    }
    Ok(xs
        .iter()
        .map(|x| (x.transpose() * y).norm())
        .fold(0.0, f64::max))
}

/// Objective value: squared-error term plus the group penalty.
pub fn group_lasso_objective(
    y: &DMatrix<f64>,
    xs: &[&DMatrix<f64>],
    lambda: f64,
    b: &[DMatrix<f64>],
) -> f64 {
    let mut residual = y.clone();
    for (x, bt) in xs.iter().zip(b) {
        residual -= *x * bt;
    }
    0.5 * residual.norm_squared() + lambda * b.iter().map(|bt| bt.norm()).sum::<f64>()
}

fn kkt_of_residual(
    xs: &[&DMatrix<f64>],
    residual: &DMatrix<f64>,
    lambda: f64,
    b: &[DMatrix<f64>],
    group: usize,
) -> f64 {
    let corr = xs[group].transpose() * residual;
    let bn = b[group].norm();
    if bn == 0.0 {
        (corr.norm() - lambda).max(0.0)
    } else {
        (corr - &b[group] * (lambda / bn)).norm()
    }
}

/// Stationarity violation of a candidate solution, scaled by max(1, lambda):
/// inactive groups must have correlation norm within lambda, active groups
/// must align their correlation with lambda times the coefficient direction.
pub fn kkt_violation(
    y: &DMatrix<f64>,
    xs: &[&DMatrix<f64>],
    lambda: f64,
    b: &[DMatrix<f64>],
) -> f64 {
    let mut residual = y.clone();
    for (x, bt) in xs.iter().zip(b) {
        residual -= *x * bt;
    }
    let scale = lambda.max(1.0);
    (0..xs.len())
        .map(|t| kkt_of_residual(xs, &residual, lambda, b, t))
        .fold(0.0, f64::max)
        / scale
}

/// Block proximal-gradient state shared across one target's path.
struct BlockSolver<'a> {
    y: &'a DMatrix<f64>,
    xs: &'a [&'a DMatrix<f64>],
    /// Largest eigenvalue of each group's Gram matrix (step size 1/L).
    lipschitz: Vec<f64>,
}

impl<'a> BlockSolver<'a> {
    fn new(y: &'a DMatrix<f64>, xs: &'a [&'a DMatrix<f64>]) -> Result<Self> {
        check_problem(y, xs)?;
        let lipschitz = xs
            .iter()
            .map(|x| {
                let gram = x.transpose() * *x;
                nalgebra::SymmetricEigen::new(gram)
                    .eigenvalues
                    .iter()
                    .cloned()
                    .fold(0.0, f64::max)
            })
            .collect();
        Ok(Self { y, xs, lipschitz })
    }

    fn residual(&self, b: &[DMatrix<f64>]) -> DMatrix<f64> {
        let mut r = self.y.clone();
        for (x, bt) in self.xs.iter().zip(b) {
            if bt.iter().any(|&v| v != 0.0) {
                r -= *x * bt;
            }
        }
        r
    }

    /// One proximal step on group `t`; keeps `residual` consistent.
    /// Returns the Frobenius norm of the coefficient change.
    fn update_block(
        &self,
        t: usize,
        lambda: f64,
        b: &mut [DMatrix<f64>],
        residual: &mut DMatrix<f64>,
    ) -> f64 {
        let l = self.lipschitz[t];
        if l <= 0.0 {
            // Zero predictor group: coefficients stay zero.
            return 0.0;
        }
        let z = &b[t] + self.xs[t].transpose() * &*residual / l;
        let zn = z.norm();
        let threshold = lambda / l;
        let fresh = if zn > threshold {
            z * (1.0 - threshold / zn)
        } else {
            DMatrix::zeros(b[t].nrows(), b[t].ncols())
        };
        let delta = &fresh - &b[t];
        let change = delta.norm();
        if change > 0.0 {
            *residual -= self.xs[t] * &delta;
            b[t] = fresh;
        }
        change
    }

    /// Solves at one penalty from the current coefficients, certified by a
    /// full KKT scan. `spent` accumulates block updates against `max_iters`.
    fn solve_at(
        &self,
        lambda: f64,
        b: &mut [DMatrix<f64>],
        config: &SolverConfig,
        spent: &mut usize,
    ) -> Result<()> {
        let p = self.xs.len();
        let scale = lambda.max(1.0);
        let mut residual = self.residual(b);
        let mut working: Vec<usize> = (0..p).filter(|&t| b[t].norm() != 0.0).collect();
        loop {
            // Optimize the working set to tolerance.
            loop {
                for &t in &working {
                    if *spent >= config.max_iters {
                        let kkt = kkt_violation(self.y, self.xs, lambda, b);
                        return Err(Error::Convergence { kkt, iters: *spent });
                    }
                    self.update_block(t, lambda, b, &mut residual);
                    *spent += 1;
                }
                let worst = working
                    .iter()
                    .map(|&t| kkt_of_residual(self.xs, &residual, lambda, b, t))
                    .fold(0.0, f64::max);
                if worst <= config.tolerance * scale || working.is_empty() {
                    break;
                }
            }
            // Full scan: admit every violating group, or stop certified.
            let mut worst = 0.0;
            let mut grew = false;
            for t in 0..p {
                let v = kkt_of_residual(self.xs, &residual, lambda, b, t);
                worst = v.max(worst);
                if v > config.tolerance * scale && !working.contains(&t) {
                    working.push(t);
                    grew = true;
                }
            }
            if worst <= config.tolerance * scale {
                return Ok(());
            }
            if !grew {
                // All violators already in the working set: keep iterating.
                continue;
            }
        }
    }
}

/// Minimizes 0.5 |Y - sum_t X_t B_t|_F^2 + lambda sum_t |B_t|_F by block
/// proximal descent with an active-set strategy, certified by a KKT scan.
pub fn solve_group_lasso(
    y: &DMatrix<f64>,
    xs: &[&DMatrix<f64>],
    lambda: f64,
    warm_start: Option<&[DMatrix<f64>]>,
    config: &SolverConfig,
) -> Result<Vec<DMatrix<f64>>> {
    config.validate()?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Contract(format!("penalty must be finite and >= 0, got {lambda}")));
    }
    let solver = BlockSolver::new(y, xs)?;
    let mut b: Vec<DMatrix<f64>> = match warm_start {
        Some(w) => {
            if w.len() != xs.len()
                || w.iter()
                    .zip(xs)
                    .any(|(bt, x)| bt.nrows() != x.ncols() || bt.ncols() != y.ncols())
            {
                return Err(Error::Contract("warm start shapes do not match the problem".into()));
            }
            w.to_vec()
        }
        None => xs
            .iter()
            .map(|x| DMatrix::zeros(x.ncols(), y.ncols()))
            .collect(),
    };
    let mut spent = 0;
    solver.solve_at(lambda, &mut b, config, &mut spent)?;
    Ok(b)
}

/// Runs target `j`'s regularization path on the graph tensor, recording
/// each predictor's first entry into the active set. Entry fractions are
/// located by bisection between consecutive grid points, so recorded
/// values are grid-free and strictly ordered. Stops once `p_max`
/// predictors are recorded or when the path is exhausted.
pub fn feature_select_path(
    target: usize,
    tensor: &EmbeddedTensor,
    config: &SolverConfig,
) -> Result<SelectionPath> {
    config.validate()?;
    let p = tensor.p();
    if p < 2 {
        return Err(Error::Contract(format!("need at least 2 features, got {p}")));
    }
    if target >= p {
        return Err(Error::Contract(format!("target {target} out of range for {p} features")));
    }
    let y = tensor.block(target);
    let predictors: Vec<usize> = (0..p).filter(|&t| t != target).collect();
    let xs: Vec<&DMatrix<f64>> = predictors.iter().map(|&t| tensor.block(t)).collect();

    let mut path = SelectionPath {
        target,
        selections: Vec::new(),
    };
    let lmax = lambda_max(y, &xs)?;
    if lmax == 0.0 {
        // Response uncorrelated with every predictor: nothing ever enters.
        return Ok(path);
    }

    let solver = BlockSolver::new(y, &xs).map_err(contextualize(target, 0, 1.0))?;
    let mut b: Vec<DMatrix<f64>> = xs
        .iter()
        .map(|x| DMatrix::zeros(x.ncols(), y.ncols()))
        .collect();
    let mut spent = 0;
    let mut recorded = vec![false; p];
    let mut prev_c = 1.0;
    for (step, &c) in config.path_c_values().iter().enumerate() {
        solver
            .solve_at(c * lmax, &mut b, config, &mut spent)
            .map_err(contextualize(target, step, c))?;
        let entered: Vec<usize> = (0..b.len())
            .filter(|&pos| !recorded[predictors[pos]] && b[pos].norm() > 0.0)
            .collect();
        if !entered.is_empty() {
            let mut resolved = Vec::with_capacity(entered.len());
            for pos in entered {
                let c_entry = entry_fraction(&solver, &b, pos, c, prev_c, lmax, config, &mut spent)
                    .map_err(contextualize(target, step, c))?;
                resolved.push((predictors[pos], c_entry));
            }
            resolved.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for (feature, c_entry) in resolved {
                if path.selections.len() >= config.p_max {
                    break;
                }
                // Fractions tying within bisection resolution are pushed
                // just below their predecessor to keep the strict order.
                let c_entry = match path.selections.last() {
                    Some(&(_, prev)) if c_entry >= prev => prev * (1.0 - 1e-12),
                    _ => c_entry,
                };
                recorded[feature] = true;
                path.selections.push((feature, c_entry));
            }
        }
        if path.selections.len() >= config.p_max {
            break;
        }
        prev_c = c;
    }
    Ok(path)
}

/// Bisects for the largest path fraction at which group `pos` is active,
/// given the solved coefficients `b_active` at fraction `lo` (active) and
/// a zero block at fraction `hi`. Each probe re-solves warm-started from
/// the nearest active-side solution, so the located fraction is exact for
/// the solver up to the bisection resolution.
#[allow(clippy::too_many_arguments)]
fn entry_fraction(
    solver: &BlockSolver,
    b_active: &[DMatrix<f64>],
    pos: usize,
    lo: f64,
    hi: f64,
    lmax: f64,
    config: &SolverConfig,
    spent: &mut usize,
) -> Result<f64> {
    debug_assert!(lo < hi);
    let mut lo = lo;
    let mut hi = hi;
    let mut base = b_active.to_vec();
    for _ in 0..ENTRY_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let mut trial = base.clone();
        solver.solve_at(mid * lmax, &mut trial, config, spent)?;
        if trial[pos].norm() > 0.0 {
            lo = mid;
            base = trial;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Bisection iterations per entry; resolves fractions to about 2e-5 on
/// the default grid, far below any pruning threshold granularity.
const ENTRY_BISECTION_STEPS: usize = 12;

fn contextualize(target: usize, step: usize, c: f64) -> impl Fn(Error) -> Error {
    move |e| {
        Error::Graph(format!(
            "target {target}, path step {step} (c = {c:.4}): {e}"
        ))
    }
}

/// Assembles selection paths into the raw adjacency: row j holds target
/// j's recorded path fractions, the diagonal is 1, everything else 0.
pub fn build_adjacency(paths: &[SelectionPath], p: usize) -> Result<DMatrix<f64>> {
    let mut a = DMatrix::identity(p, p);
    let mut taken = vec![false; p];
    for path in paths {
        path.validate(p)?;
        if taken[path.target] {
            return Err(Error::Graph(format!("two paths for target {}", path.target)));
        }
        taken[path.target] = true;
        for &(t, c) in &path.selections {
            a[(path.target, t)] = c;
        }
    }
    Ok(a)
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn prune(a: &DMatrix<f64>, theta: f64) -> DMatrix<f64> {
    a.map(|v| if v < theta { 0.0 } else { v })
}

fn normalize(a_sym: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = a_sym.nrows();
    let mut scale = Vec::with_capacity(p);
    for i in 0..p {
        let row_sum: f64 = a_sym.row(i).iter().sum();
        if row_sum <= 0.0 {
            return Err(Error::Graph(format!("row {i} sums to {row_sum}, cannot normalize")));
        }
        scale.push(row_sum.powf(-0.5));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| scale[i] * a_sym[(i, j)] * scale[j]))
}

/// Symmetrizes the raw adjacency, prunes entries below `theta`, and
/// degree-normalizes. The diagonal survives pruning because theta < 1.
pub fn finalize(a_raw: DMatrix<f64>, theta: f64, paths: Vec<SelectionPath>) -> Result<KnowledgeGraph> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Config(format!("theta must lie in (0, 1), got {theta}")));
    }
    let p = a_raw.nrows();
    if a_raw.ncols() != p {
        return Err(Error::Contract("adjacency must be square".into()));
    }
    for i in 0..p {
        if (a_raw[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(Error::Contract(format!("diagonal entry {i} must be 1")));
        }
        for j in 0..p {
            if !(0.0..=1.0).contains(&a_raw[(i, j)]) {
                return Err(Error::Contract(format!(
                    "entry ({i}, {j}) = {} outside [0, 1]",
                    a_raw[(i, j)]
                )));
            }
        }
    }
    let a_sym = prune(&symmetrize(&a_raw), theta);
    let a_norm = normalize(&a_sym)?;
    Ok(KnowledgeGraph {
        a_raw,
        a_sym,
        a_norm,
        theta,
        paths,
    })
}

/// Full estimation: one selection path per feature (in parallel), assembled
/// and finalized. Depends only on the graph tensor and the configuration,
/// so one graph serves any later training task.
pub fn estimate(tensor: &EmbeddedTensor, config: &SolverConfig, theta: f64) -> Result<KnowledgeGraph> {
    if tensor.kind() != TensorKind::Graph {
        return Err(Error::Contract(
            "graph estimation runs on the graph tensor, not the model tensor".into(),
        ));
    }
    config.validate()?;
    let p = tensor.p();
    let paths: Result<Vec<SelectionPath>> = (0..p)
        .into_par_iter()
        .map(|j| feature_select_path(j, tensor, config))
        .collect();
    let paths = paths?;
    let a_raw = build_adjacency(&paths, p)?;
    finalize(a_raw, theta, paths)
}
