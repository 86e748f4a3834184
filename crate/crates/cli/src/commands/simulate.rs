//! Generates a synthetic dataset and writes it as long-format CSV with a
//! sidecar schema.

use fungraph::synth::generate_scenario;

use crate::config::RunConfig;
use crate::containers::write_manifest;
use crate::csvio::write_dataset;
use crate::error::Result;
use crate::schema::{DatasetSchema, ModalityName};

pub fn run(config: &RunConfig) -> Result<()> {
    let dataset = generate_scenario(&config.scenario)?;
    let schema = DatasetSchema::describe(&dataset);

    let dataset_path = config.dataset_path();
    let schema_path = config.schema_path();
    write_dataset(&dataset_path, &dataset, &schema)?;
    crate::containers::save_json(&schema_path, &schema)?;
    write_manifest(&config.out, "simulate", config, &[&dataset_path, &schema_path])?;

    let count = |m: ModalityName| schema.features.iter().filter(|f| f.modality == m).count();
    println!(
        "simulated {} entities, {} features ({} longitudinal, {} categorical, {} scalar), seed {}",
        dataset.n(),
        schema.features.len(),
        count(ModalityName::Longitudinal),
        count(ModalityName::Categorical),
        count(ModalityName::Scalar),
        config.seed
    );
    println!("wrote {}", dataset_path.display());
    println!("wrote {}", schema_path.display());
    Ok(())
}
