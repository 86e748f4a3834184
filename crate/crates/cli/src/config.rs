//! Run configuration: one JSON document covering every subcommand, loaded
//! from `--config`, then patched by `--override key=value` (dotted paths),
//! `--seed`, and `--out`. Unknown keys are rejected after all patches.

use std::fs;
use std::path::{Path, PathBuf};

use fungraph::embed::EmbeddedTensor;
use fungraph::gcn::{TaskKind, TaskMode, TaskSpec, TrainConfig, UpdateGranularity};
use fungraph::graph::SolverConfig;
use fungraph::synth::ScenarioConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{at_path, CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Every random stream in every command derives from it;
    /// it also replaces `scenario.seed` so one knob controls everything.
    pub seed: u64,
    /// Output directory; commands create it on demand.
    pub out: PathBuf,
    /// Input locations. Unset entries fall back to the standard file names
    /// inside `out`, so a full pipeline run needs no path wiring.
    pub paths: Paths,
    pub scenario: ScenarioConfig,
    pub embed: EmbedSection,
    pub solver: SolverConfig,
    /// Pruning threshold for the symmetrized adjacency.
    pub theta: f64,
    pub train: TrainSection,
    pub task: TaskSection,
    pub evaluate: EvaluateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            paths: Paths::default(),
            scenario: ScenarioConfig::default(),
            embed: EmbedSection::default(),
            solver: SolverConfig::default(),
            theta: 0.7,
            train: TrainSection::default(),
            task: TaskSection::default(),
            evaluate: EvaluateSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub graph_tensor: Option<PathBuf>,
    pub gcn_tensor: Option<PathBuf>,
    /// Fitted tensor whose bases, codebooks, and statistics re-embed a new
    /// dataset (the held-out half of a split, typically).
    pub reference_tensor: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedSection {
    /// Component scores per feature in the graph tensor.
    pub k_graph: usize,
    /// Spline coefficients per feature in the model tensor (at least 4,
    /// the cubic order).
    pub k_gcn: usize,
}

impl Default for EmbedSection {
    fn default() -> Self {
        Self {
            k_graph: 3,
            k_gcn: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Unset picks the task-calibrated default: 5e-5 for pure static
    /// regression, 1e-4 otherwise.
    pub learning_rate: Option<f64>,
    pub max_epochs: usize,
    pub v_stop: usize,
    pub val_fraction: f64,
    pub hidden: usize,
    pub granularity: UpdateGranularity,
}

impl Default for TrainSection {
    fn default() -> Self {
        let base = TrainConfig::default();
        Self {
            learning_rate: None,
            max_epochs: base.max_epochs,
            v_stop: base.v_stop,
            val_fraction: base.val_fraction,
            hidden: base.hidden,
            granularity: base.granularity,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, task: &TaskSpec, seed: u64) -> TrainConfig {
        let mut config = TrainConfig::for_task(task, seed);
        if let Some(lr) = self.learning_rate {
            config.learning_rate = lr;
        }
        config.max_epochs = self.max_epochs;
        config.v_stop = self.v_stop;
        config.val_fraction = self.val_fraction;
        config.hidden = self.hidden;
        config.granularity = self.granularity;
        config
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub feature: String,
    pub kind: TaskKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub targets: Vec<TargetSpec>,
    pub mode: ModeName,
    /// Horizon fraction when `mode` is "forecast".
    pub forecast_ratio: f64,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            targets: Vec::new(),
            mode: ModeName::Static,
            forecast_ratio: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Static,
    Forecast,
}

impl TaskSection {
    pub fn mode(&self) -> TaskMode {
        match self.mode {
            ModeName::Static => TaskMode::Static,
            ModeName::Forecast => TaskMode::Forecast {
                ratio: self.forecast_ratio,
            },
        }
    }

    /// Resolves feature names against the tensor. Fails on unknown names
    /// and leaves kind/modality checks to the task validation itself.
    pub fn to_task_spec(&self, tensor: &EmbeddedTensor) -> Result<TaskSpec> {
        if self.targets.is_empty() {
            return Err(CliError::Config(
                "task.targets is empty; name at least one target feature".into(),
            ));
        }
        let mut targets = Vec::with_capacity(self.targets.len());
        for t in &self.targets {
            let j = tensor.index_of(&t.feature).ok_or_else(|| {
                CliError::Config(format!("task target '{}' is not in the tensor", t.feature))
            })?;
            targets.push((j, t.kind));
        }
        Ok(TaskSpec::new(targets, self.mode()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Replication seeds; empty means the single master seed.
    pub seeds: Vec<u64>,
    /// Entities used for fitting; the rest are held out and scored.
    pub n_train: usize,
    /// Which task families the replication runner covers.
    pub tasks: Vec<EvalTask>,
    pub forecast_ratio: f64,
    /// Restrict scoring to these features; unset covers every feature of a
    /// suitable modality (longitudinal for regression and forecasting,
    /// categorical for classification).
    pub targets: Option<Vec<String>>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            seeds: Vec::new(),
            n_train: 240,
            tasks: vec![EvalTask::Regression, EvalTask::Forecast, EvalTask::Classification],
            forecast_ratio: 0.3,
            targets: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTask {
    Regression,
    Forecast,
    Classification,
}

impl EvalTask {
    pub fn label(self) -> &'static str {
        match self {
            EvalTask::Regression => "regression",
            EvalTask::Forecast => "forecast",
            EvalTask::Classification => "classification",
        }
    }
}

impl RunConfig {
    pub fn dataset_path(&self) -> PathBuf {
        self.paths
            .dataset
            .clone()
            .unwrap_or_else(|| self.out.join("dataset.csv"))
    }

    /// Schema defaults to the dataset path with `.schema.json` appended to
    /// its stem, matching what `simulate` writes.
    pub fn schema_path(&self) -> PathBuf {
        self.paths
            .schema
            .clone()
            .unwrap_or_else(|| sibling_schema(&self.dataset_path()))
    }

    pub fn graph_tensor_path(&self) -> PathBuf {
        self.paths
            .graph_tensor
            .clone()
            .unwrap_or_else(|| self.out.join("tensor_graph.json"))
    }

    pub fn gcn_tensor_path(&self) -> PathBuf {
        self.paths
            .gcn_tensor
            .clone()
            .unwrap_or_else(|| self.out.join("tensor_gcn.json"))
    }

    pub fn graph_path(&self) -> PathBuf {
        self.paths
            .graph
            .clone()
            .unwrap_or_else(|| self.out.join("graph.json"))
    }

    pub fn dot_path(&self) -> PathBuf {
        self.out.join("graph.dot")
    }

    pub fn model_path(&self) -> PathBuf {
        self.paths
            .model
            .clone()
            .unwrap_or_else(|| self.out.join("model.json"))
    }

    pub fn loss_path(&self) -> PathBuf {
        self.out.join("loss.csv")
    }

    pub fn predictions_path(&self) -> PathBuf {
        self.paths
            .predictions
            .clone()
            .unwrap_or_else(|| self.out.join("predictions.json"))
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.out.join("metrics.csv")
    }

    pub fn replication_seeds(&self) -> Vec<u64> {
        if self.evaluate.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.evaluate.seeds.clone()
        }
    }
}

pub fn sibling_schema(dataset: &Path) -> PathBuf {
    let stem = dataset
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    dataset.with_file_name(format!("{stem}.schema.json"))
}

/// Loads the configuration document, applies dotted-path overrides, then
/// the `--seed` and `--out` flags, and finally typed validation.
pub fn load(
    path: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
    overrides: &[String],
) -> Result<RunConfig> {
    let mut doc: Value = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| at_path(p, e))?;
            serde_json::from_str(&text).map_err(|e| at_path(p, e))?
        }
        None => Value::Object(Default::default()),
    };
    for spec in overrides {
        apply_override(&mut doc, spec)?;
    }
    let mut config: RunConfig = serde_json::from_value(doc)
        .map_err(|e| CliError::Config(format!("configuration: {e}")))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(o) = out {
        config.out = o.to_path_buf();
    }
    config.scenario.seed = config.seed;
    Ok(config)
}

/// Sets `key=value` in the JSON document. Keys are dot-separated; numeric
/// segments index arrays. The value parses as JSON when possible and falls
/// back to a plain string, so `theta=0.5` and `paths.dataset=d.csv` both
/// read naturally.
fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{spec}' is not key=value")))?;
    if key.is_empty() {
        return Err(CliError::Config(format!("override '{spec}' has an empty key")));
    }
    let leaf: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));

    let segments: Vec<&str> = key.split('.').collect();
    let mut cursor = doc;
    for (i, segment) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        if let Ok(index) = segment.parse::<usize>() {
            let arr = cursor.as_array_mut().ok_or_else(|| {
                CliError::Config(format!("override '{key}': '{segment}' indexes a non-array"))
            })?;
            if index >= arr.len() {
                return Err(CliError::Config(format!(
                    "override '{key}': index {index} out of bounds ({} elements)",
                    arr.len()
                )));
            }
            if last {
                arr[index] = leaf;
                return Ok(());
            }
            cursor = &mut arr[index];
        } else {
            if !cursor.is_object() {
                return Err(CliError::Config(format!(
                    "override '{key}': '{segment}' descends into a non-object"
                )));
            }
            let map = cursor.as_object_mut().expect("checked is_object");
            if last {
                map.insert((*segment).into(), leaf);
                return Ok(());
            }
            cursor = map
                .entry(*segment)
                .or_insert_with(|| Value::Object(Default::default()));
            if !cursor.is_object() && !cursor.is_array() {
                return Err(CliError::Config(format!(
                    "override '{key}': '{segment}' descends into a scalar"
                )));
            }
        }
    }
    unreachable!("loop returns on the last segment");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_stand_alone() {
        let config = load(None, None, None, &[]).unwrap();
        assert_eq!(config.seed, 0);
        assert_eq!(config.embed.k_graph, 3);
        assert_eq!(config.embed.k_gcn, 10);
        assert_eq!(config.theta, 0.7);
        assert_eq!(config.scenario.p, 20);
        assert_eq!(config.replication_seeds(), vec![0]);
    }

    #[test]
    fn overrides_reach_nested_sections() {
        let overrides = vec![
            "scenario.p=12".to_string(),
            "theta=0.5".to_string(),
            "paths.dataset=d.csv".to_string(),
            "task.targets=[{\"feature\":\"a\",\"kind\":\"regression\"}]".to_string(),
            "task.targets.0.feature=b".to_string(),
            "evaluate.seeds=[3,4]".to_string(),
        ];
        let config = load(None, Some(9), Some(Path::new("run1")), &overrides).unwrap();
        assert_eq!(config.scenario.p, 12);
        assert_eq!(config.theta, 0.5);
        assert_eq!(config.paths.dataset, Some(PathBuf::from("d.csv")));
        assert_eq!(config.task.targets[0].feature, "b");
        assert_eq!(config.seed, 9);
        assert_eq!(config.scenario.seed, 9, "master seed replaces scenario.seed");
        assert_eq!(config.out, PathBuf::from("run1"));
        assert_eq!(config.replication_seeds(), vec![3, 4]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = load(None, None, None, &["scenario.q=1".to_string()]).unwrap_err();
        assert!(matches!(err, CliError::Config(_)), "{err}");
        let err = load(None, None, None, &["typo=1".to_string()]).unwrap_err();
        assert!(err.to_string().contains("unknown field"), "{err}");
    }

    #[test]
    fn malformed_overrides_are_rejected() {
        for bad in ["novalue", "=5", "evaluate.seeds.9=1", "seed.deep=1"] {
            let err = load(None, None, None, &[bad.to_string()]).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad} must be a config error");
        }
    }

    #[test]
    fn schema_path_follows_the_dataset() {
        let mut config = RunConfig::default();
        config.paths.dataset = Some(PathBuf::from("data/run.csv"));
        assert_eq!(config.schema_path(), PathBuf::from("data/run.schema.json"));
    }

    #[test]
    fn train_section_keeps_task_defaults_unless_set() {
        let task = TaskSpec::new(vec![(0, TaskKind::Regression)], TaskMode::Static);
        let section = TrainSection::default();
        assert_eq!(section.to_train_config(&task, 7).learning_rate, 5e-5);
        let custom = TrainSection {
            learning_rate: Some(2e-3),
            ..TrainSection::default()
        };
        let config = custom.to_train_config(&task, 7);
        assert_eq!(config.learning_rate, 2e-3);
        assert_eq!(config.seed, 7);
    }
}
