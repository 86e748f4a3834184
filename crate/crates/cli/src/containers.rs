//! Versioned JSON files the subcommands exchange. Every container carries a
//! format version so stale artifacts fail loudly instead of deserializing
//! into garbage. Run metadata (timestamp, config digest) lives only in the
//! manifest, keeping every other artifact reproducible byte for byte.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use fungraph::embed::EmbeddedTensor;
use fungraph::gcn::{TaskSpec, TrainedModel};
use fungraph::graph::KnowledgeGraph;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{at_path, CliError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorFile {
    pub version: u32,
    pub tensor: EmbeddedTensor,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub version: u32,
    pub graph: KnowledgeGraph,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    pub model: TrainedModel,
}

/// Decoded prediction of one target for one entity. `raw` keeps the
/// standardized network output so downstream scoring never re-derives it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRow {
    pub entity: usize,
    pub target: String,
    pub raw: Vec<f64>,
    pub decoded: DecodedJson,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DecodedJson {
    /// Basis coefficients of the curve on the dataset domain.
    Curve { coeffs: Vec<f64> },
    Scalar { value: f64 },
    Level { level: usize },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionsFile {
    pub version: u32,
    /// Path of the tensor the predictions were decoded against.
    pub tensor: String,
    pub task: TaskSpec,
    pub rows: Vec<PredictionRow>,
}

/// Written once per subcommand invocation next to its outputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub unix_time: u64,
    pub outputs: Vec<String>,
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let file = File::create(path).map_err(|e| at_path(path, e))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value).map_err(|e| at_path(path, e))?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| at_path(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| at_path(path, e))
}

pub fn check_version(path: &Path, version: u32) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(CliError::Config(format!(
            "{}: format version {version} (this build reads {FORMAT_VERSION})",
            path.display()
        )));
    }
    Ok(())
}

/// Loads a tensor file and re-checks the library invariants, so a corrupted
/// artifact is a configuration error rather than a latent panic.
pub fn load_tensor(path: &Path) -> Result<EmbeddedTensor> {
    let file: TensorFile = load_json(path)?;
    check_version(path, file.version)?;
    file.tensor
        .validate()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(file.tensor)
}

pub fn load_graph(path: &Path) -> Result<KnowledgeGraph> {
    let file: GraphFile = load_json(path)?;
    check_version(path, file.version)?;
    file.graph
        .validate()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(file.graph)
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let file: ModelFile = load_json(path)?;
    check_version(path, file.version)?;
    file.model
        .validate()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(file.model)
}

pub fn load_predictions(path: &Path) -> Result<PredictionsFile> {
    let file: PredictionsFile = load_json(path)?;
    check_version(path, file.version)?;
    Ok(file)
}

/// Hex SHA-256 of the effective configuration, so a manifest pins down
/// exactly what produced its outputs.
pub fn config_digest(config: &RunConfig) -> Result<String> {
    let canonical = serde_json::to_vec(config)
        .map_err(|e| CliError::Config(format!("configuration digest: {e}")))?;
    let mut hasher = Sha256::new();
    hasher.update(&canonical);
    Ok(format!("{:x}", hasher.finalize()))
}

pub fn write_manifest(
    dir: &Path,
    command: &str,
    config: &RunConfig,
    outputs: &[&Path],
) -> Result<()> {
    let manifest = Manifest {
        version: FORMAT_VERSION,
        command: command.to_string(),
        seed: config.seed,
        config_sha256: config_digest(config)?,
        unix_time: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    save_json(&dir.join(format!("manifest_{command}.json")), &manifest)
}
