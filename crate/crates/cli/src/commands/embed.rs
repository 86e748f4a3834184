//! Embeds a dataset into coefficient tensors: one tuned for graph
//! estimation and one for network training, or a single tensor re-embedded
//! with a reference tensor's fitted bases and statistics.

use std::path::Path;

use fungraph::embed::{assemble, embed_like, Dataset, EmbedOptions, EmbeddedTensor, TensorKind};

use crate::config::RunConfig;
use crate::containers::{load_tensor, save_json, write_manifest, TensorFile, FORMAT_VERSION};
use crate::csvio::read_dataset;
use crate::error::Result;
use crate::schema::DatasetSchema;

fn save_tensor(path: &Path, tensor: EmbeddedTensor) -> Result<()> {
    let shape = format!("{} x {} x {}", tensor.n(), tensor.p(), tensor.k());
    let kind = match tensor.kind() {
        TensorKind::Graph => "graph",
        TensorKind::Gcn => "model",
    };
    save_json(path, &TensorFile { version: FORMAT_VERSION, tensor })?;
    println!("wrote {} ({kind} tensor, {shape})", path.display());
    Ok(())
}

pub fn load_input(config: &RunConfig) -> Result<(Dataset, DatasetSchema)> {
    let schema: DatasetSchema = crate::containers::load_json(&config.schema_path())?;
    schema.validate()?;
    let dataset = read_dataset(&config.dataset_path(), &schema)?;
    Ok((dataset, schema))
}

pub fn run(config: &RunConfig) -> Result<()> {
    let (dataset, _) = load_input(config)?;

    if let Some(reference_path) = &config.paths.reference_tensor {
        let reference = load_tensor(reference_path)?;
        let kind = reference.kind();
        let tensor = embed_like(&reference, &dataset, None)?;
        let path = match kind {
            TensorKind::Graph => config.graph_tensor_path(),
            TensorKind::Gcn => config.gcn_tensor_path(),
        };
        save_tensor(&path, tensor)?;
        write_manifest(&config.out, "embed", config, &[&path])?;
        return Ok(());
    }

    let graph_options = EmbedOptions::new(config.embed.k_graph, config.seed);
    let gcn_options = EmbedOptions::new(config.embed.k_gcn, config.seed);
    let graph_path = config.graph_tensor_path();
    let gcn_path = config.gcn_tensor_path();
    save_tensor(&graph_path, assemble(&dataset, TensorKind::Graph, &graph_options)?)?;
    save_tensor(&gcn_path, assemble(&dataset, TensorKind::Gcn, &gcn_options)?)?;
    write_manifest(&config.out, "embed", config, &[&graph_path, &gcn_path])?;
    Ok(())
}
