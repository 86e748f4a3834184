//! Scoring. With a predictions file: scores it against its tensor. Without
//! one: runs the replicated protocol end to end for each seed (split,
//! embed, estimate, train one model per target, predict held-out entities)
//! and scores every eligible target. Either way the result is a flat
//! metrics CSV with one row per (task, target, seed, metric).

use std::path::Path;

use fungraph::decode::{assemble_forecast, coeffs_to_curve, decode_categorical};
use fungraph::embed::{
    assemble, embed_like, EmbedOptions, EmbeddedTensor, FeatureEmbedding, Modality, TensorKind,
};
use fungraph::fda::Curve;
use fungraph::gcn::{self, TaskKind, TaskMode, TaskSpec};
use fungraph::metrics::{accuracy, std_rmse};
use fungraph::synth::{generate_scenario, train_test_split, ScenarioConfig};
use nalgebra::DVector;

use crate::config::{EvalTask, RunConfig};
use crate::containers::{load_predictions, load_tensor, write_manifest};
use crate::csvio::{write_metrics, MetricRow};
use crate::error::{CliError, Result};

/// Scores one target's standardized network outputs against the tensor they
/// decode with. Longitudinal targets get std-RMSE plus the population-mean
/// baseline and the skipped-entity count; categorical targets get accuracy
/// plus the majority-class baseline; scalar targets get plain RMSE plus the
/// population-mean baseline.
fn score_target(
    tensor: &EmbeddedTensor,
    j: usize,
    mode: &TaskMode,
    raws: &[DVector<f64>],
) -> Result<Vec<(&'static str, f64)>> {
    let n = tensor.n();
    if raws.len() != n {
        return Err(CliError::Config(format!(
            "{} predictions for {n} entities",
            raws.len()
        )));
    }
    let stats = tensor.stats(j);
    match tensor.embedding(j) {
        FeatureEmbedding::Spline(basis) => {
            let truth: Vec<Curve> = (0..n)
                .map(|i| coeffs_to_curve(&tensor.entity_row(j, i), basis, stats))
                .collect::<fungraph::Result<_>>()?;
            let predicted: Vec<Curve> = match mode {
                TaskMode::Static => raws
                    .iter()
                    .map(|raw| coeffs_to_curve(raw, basis, stats))
                    .collect::<fungraph::Result<_>>()?,
                TaskMode::Forecast { .. } => {
                    let k1 = tensor.k() - raws[0].len();
                    (0..n)
                        .map(|i| {
                            let history =
                                tensor.entity_row(j, i).rows(0, k1).into_owned();
                            assemble_forecast(&history, &raws[i], basis, stats)
                        })
                        .collect::<fungraph::Result<_>>()?
                }
            };
            let score = std_rmse(&truth, &predicted)?;
            let mean_curve = coeffs_to_curve(&DVector::zeros(tensor.k()), basis, stats)?;
            let baseline = std_rmse(&truth, &vec![mean_curve; n])?;
            Ok(vec![
                ("std_rmse", score.value),
                ("mean_predictor_std_rmse", baseline.value),
                ("skipped", score.skipped as f64),
            ])
        }
        FeatureEmbedding::Codebook(codebook) => {
            let truth: Vec<usize> = (0..n)
                .map(|i| decode_categorical(&tensor.entity_row(j, i), codebook, stats))
                .collect::<fungraph::Result<_>>()?;
            let predicted: Vec<usize> = raws
                .iter()
                .map(|raw| decode_categorical(raw, codebook, stats))
                .collect::<fungraph::Result<_>>()?;
            let mut counts = vec![0usize; codebook.levels()];
            for &level in &truth {
                counts[level] += 1;
            }
            let majority = counts.iter().copied().max().unwrap_or(0) as f64 / n as f64;
            Ok(vec![
                ("accuracy", accuracy(&truth, &predicted)?),
                ("majority_accuracy", majority),
            ])
        }
        FeatureEmbedding::ScalarConstant => {
            let value_of = |v: &DVector<f64>| {
                let d = stats.destandardize(v);
                d.sum() / d.len() as f64
            };
            let truth: Vec<f64> = (0..n).map(|i| value_of(&tensor.entity_row(j, i))).collect();
            let rmse = |pred: &dyn Fn(usize) -> f64| {
                (truth
                    .iter()
                    .enumerate()
                    .map(|(i, t)| (t - pred(i)) * (t - pred(i)))
                    .sum::<f64>()
                    / n as f64)
                    .sqrt()
            };
            let predicted: Vec<f64> = raws.iter().map(value_of).collect();
            let mean_value = value_of(&DVector::zeros(tensor.k()));
            Ok(vec![
                ("rmse", rmse(&|i| predicted[i])),
                ("mean_predictor_rmse", rmse(&|_| mean_value)),
            ])
        }
        FeatureEmbedding::Fpc(_) | FeatureEmbedding::ScalarSlot => Err(CliError::Config(
            "graph-tensor embeddings cannot be scored as predictions".into(),
        )),
    }
}

fn family_label(kind: TaskKind, mode: &TaskMode) -> &'static str {
    match (kind, mode) {
        (TaskKind::Classification, _) => "classification",
        (TaskKind::Regression, TaskMode::Static) => "regression",
        (TaskKind::Regression, TaskMode::Forecast { .. }) => "forecast",
    }
}

/// Scores a saved predictions file against the tensor it was decoded with.
fn run_score(config: &RunConfig, predictions_path: &Path) -> Result<Vec<MetricRow>> {
    let predictions = load_predictions(predictions_path)?;
    let tensor = load_tensor(&config.gcn_tensor_path())?;
    let n = tensor.n();
    let mut rows = Vec::new();
    for &(j, kind) in &predictions.task.targets {
        let name = tensor.feature_names().get(j).ok_or_else(|| {
            CliError::Config(format!("prediction target {j} is not in the tensor"))
        })?;
        let mut raws: Vec<Option<DVector<f64>>> = vec![None; n];
        for row in predictions.rows.iter().filter(|r| r.target == *name) {
            let slot = raws.get_mut(row.entity).ok_or_else(|| {
                CliError::Config(format!(
                    "prediction row for '{name}' names entity {} of {n}",
                    row.entity
                ))
            })?;
            if slot.is_some() {
                return Err(CliError::Config(format!(
                    "duplicate prediction for entity {}, target '{name}'",
                    row.entity
                )));
            }
            *slot = Some(DVector::from_vec(row.raw.clone()));
        }
        let raws = raws
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                r.ok_or_else(|| {
                    CliError::Config(format!("no prediction for entity {i}, target '{name}'"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for (metric, value) in score_target(&tensor, j, &predictions.task.mode, &raws)? {
            rows.push(MetricRow {
                task: family_label(kind, &predictions.task.mode).into(),
                target: name.clone(),
                seed: config.seed,
                metric: metric.into(),
                value,
            });
        }
    }
    Ok(rows)
}

/// Targets a task family covers, in tensor order: longitudinal features for
/// regression and forecasting, categorical ones for classification. An
/// explicit target list narrows the set; scalars join the regression family
/// only when named explicitly.
fn eligible_targets(
    tensor: &EmbeddedTensor,
    family: EvalTask,
    only: Option<&[String]>,
) -> Result<Vec<usize>> {
    let wants = |j: usize, explicit: bool| match family {
        EvalTask::Regression => {
            tensor.modality(j) == Modality::Longitudinal
                || (explicit && tensor.modality(j) == Modality::Scalar)
        }
        EvalTask::Forecast => tensor.modality(j) == Modality::Longitudinal,
        EvalTask::Classification => {
            matches!(tensor.modality(j), Modality::Categorical { .. })
        }
    };
    match only {
        None => Ok((0..tensor.p()).filter(|&j| wants(j, false)).collect()),
        Some(names) => {
            let mut out = Vec::new();
            for name in names {
                let j = tensor.index_of(name).ok_or_else(|| {
                    CliError::Config(format!("evaluate target '{name}' is not in the tensor"))
                })?;
                if wants(j, true) {
                    out.push(j);
                }
            }
            Ok(out)
        }
    }
}

/// Spline budget per task family. Forecasting takes the widest basis so
/// the horizon split keeps enough history coefficients; classification
/// reads codebook vectors and gets by with the narrowest.
fn family_k(family: EvalTask) -> usize {
    match family {
        EvalTask::Classification => 5,
        EvalTask::Regression => 10,
        EvalTask::Forecast => 20,
    }
}

/// Runs the full replicated protocol and returns one batch of metric rows
/// per (seed, family, target).
fn run_protocol(config: &RunConfig) -> Result<Vec<MetricRow>> {
    let csv_input = match config.paths.dataset {
        Some(_) => Some(super::embed::load_input(config)?),
        None => None,
    };
    let mut rows = Vec::new();
    for &seed in &config.replication_seeds() {
        let dataset = match &csv_input {
            Some((dataset, _)) => dataset.clone(),
            None => generate_scenario(&ScenarioConfig {
                seed,
                ..config.scenario.clone()
            })?,
        };
        let (train_idx, test_idx) =
            train_test_split(dataset.n(), config.evaluate.n_train, seed)?;
        let train_data = dataset.subset(&train_idx)?;
        let test_data = dataset.subset(&test_idx)?;

        let graph_options = EmbedOptions::new(config.embed.k_graph, seed);
        let train_graph = assemble(&train_data, TensorKind::Graph, &graph_options)?;
        let graph = super::graph::fit(config, &train_graph)?;
        println!(
            "seed {seed}: {} train / {} test entities",
            train_data.n(),
            test_data.n()
        );

        for &family in &config.evaluate.tasks {
            let (kind, mode) = match family {
                EvalTask::Regression => (TaskKind::Regression, TaskMode::Static),
                EvalTask::Forecast => (
                    TaskKind::Regression,
                    TaskMode::Forecast {
                        ratio: config.evaluate.forecast_ratio,
                    },
                ),
                EvalTask::Classification => (TaskKind::Classification, TaskMode::Static),
            };
            let gcn_options = EmbedOptions::new(family_k(family), seed);
            let train_gcn = assemble(&train_data, TensorKind::Gcn, &gcn_options)?;
            let test_gcn = embed_like(&train_gcn, &test_data, None)?;
            let targets =
                eligible_targets(&train_gcn, family, config.evaluate.targets.as_deref())?;
            if targets.is_empty() {
                println!("seed {seed}, {}: no eligible targets", family.label());
                continue;
            }
            for j in targets {
                let task = TaskSpec::new(vec![(j, kind)], mode);
                let train_config = config.train.to_train_config(&task, seed);
                let model = gcn::train(&train_gcn, &graph, &task, &train_config)?;
                let outputs = model.predict_tensor(&test_gcn)?;
                let raws: Vec<DVector<f64>> =
                    outputs.iter().map(|m| m.row(0).transpose()).collect();
                let scores = score_target(&test_gcn, j, &mode, &raws)?;
                let name = &train_gcn.feature_names()[j];
                println!(
                    "seed {seed}, {} '{name}': {} {:.4}",
                    family.label(),
                    scores[0].0,
                    scores[0].1
                );
                for (metric, value) in scores {
                    rows.push(MetricRow {
                        task: family.label().into(),
                        target: name.clone(),
                        seed,
                        metric: metric.into(),
                        value,
                    });
                }
            }
        }
    }
    Ok(rows)
}

fn summarize(rows: &[MetricRow]) {
    for (label, metric) in [
        ("regression", "std_rmse"),
        ("regression", "rmse"),
        ("forecast", "std_rmse"),
        ("classification", "accuracy"),
    ] {
        let values: Vec<f64> = rows
            .iter()
            .filter(|r| r.task == label && r.metric == metric)
            .map(|r| r.value)
            .collect();
        if !values.is_empty() {
            println!(
                "{label}: mean {metric} {:.4} over {} rows",
                values.iter().sum::<f64>() / values.len() as f64,
                values.len()
            );
        }
    }
}

pub fn run(config: &RunConfig) -> Result<()> {
    let rows = match &config.paths.predictions {
        Some(path) => run_score(config, path)?,
        None => run_protocol(config)?,
    };
    let path = config.metrics_path();
    write_metrics(&path, &rows)?;
    write_manifest(&config.out, "evaluate", config, &[&path])?;
    summarize(&rows);
    println!("wrote {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use fungraph::embed::Dataset;
    use fungraph::synth::ScenarioConfig;

    fn tensor() -> EmbeddedTensor {
        let dataset: Dataset = generate_scenario(&ScenarioConfig {
            n: 10,
            p: 10,
            proportions: (0.4, 0.4, 0.2),
            grid_size: 30,
            seed: 3,
            ..ScenarioConfig::default()
        })
        .unwrap();
        assemble(&dataset, TensorKind::Gcn, &EmbedOptions::new(4, 3)).unwrap()
    }

    #[test]
    fn perfect_raw_outputs_score_perfectly() {
        // Feeding each entity's own embedded row back as the prediction is
        // an exact reconstruction: std-RMSE 0 and accuracy 1.
        let tensor = tensor();
        for j in 0..tensor.p() {
            let raws: Vec<DVector<f64>> =
                (0..tensor.n()).map(|i| tensor.entity_row(j, i)).collect();
            let scores = score_target(&tensor, j, &TaskMode::Static, &raws).unwrap();
            match tensor.modality(j) {
                Modality::Longitudinal => {
                    assert_eq!(scores[0].0, "std_rmse");
                    assert!(scores[0].1 < 1e-10, "feature {j}: {}", scores[0].1);
                    assert!(scores[1].1 > 0.5, "mean baseline shouldn't be near 0");
                }
                Modality::Categorical { .. } => {
                    assert_eq!(scores[0], ("accuracy", 1.0));
                    assert!(scores[1].1 <= 1.0);
                }
                Modality::Scalar => {
                    assert_eq!(scores[0].0, "rmse");
                    assert!(scores[0].1 < 1e-10, "feature {j}: {}", scores[0].1);
                }
            }
        }
    }

    #[test]
    fn eligible_targets_follow_modalities() {
        let tensor = tensor();
        let longs = eligible_targets(&tensor, EvalTask::Regression, None).unwrap();
        let cats = eligible_targets(&tensor, EvalTask::Classification, None).unwrap();
        assert!(!longs.is_empty());
        assert!(!cats.is_empty());
        for &j in &longs {
            assert_eq!(tensor.modality(j), Modality::Longitudinal);
        }
        for &j in &cats {
            assert!(matches!(tensor.modality(j), Modality::Categorical { .. }));
        }

        // A scalar feature joins the regression family only when named.
        let scalar = (0..tensor.p())
            .find(|&j| tensor.modality(j) == Modality::Scalar)
            .expect("scenario has scalar features");
        let name = tensor.feature_names()[scalar].clone();
        assert!(!longs.contains(&scalar));
        let named =
            eligible_targets(&tensor, EvalTask::Regression, Some(&[name.clone()])).unwrap();
        assert_eq!(named, vec![scalar]);
        // But never the forecast family.
        let forecast = eligible_targets(&tensor, EvalTask::Forecast, Some(&[name])).unwrap();
        assert!(forecast.is_empty());

        let err = eligible_targets(&tensor, EvalTask::Regression, Some(&["nope".into()]));
        assert!(err.is_err());
    }
}
