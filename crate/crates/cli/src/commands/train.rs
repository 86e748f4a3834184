//! Trains the graph convolutional network on a model tensor and a fitted
//! graph, saving the model and its loss history.

use fungraph::gcn;

use crate::config::RunConfig;
use crate::containers::{
    load_graph, load_tensor, save_json, write_manifest, ModelFile, FORMAT_VERSION,
};
use crate::csvio::write_loss;
use crate::error::Result;

pub fn run(config: &RunConfig) -> Result<()> {
    let tensor = load_tensor(&config.gcn_tensor_path())?;
    let graph = load_graph(&config.graph_path())?;
    let task = config.task.to_task_spec(&tensor)?;
    let train_config = config.train.to_train_config(&task, config.seed);

    let model = gcn::train(&tensor, &graph, &task, &train_config)?;

    let model_path = config.model_path();
    let loss_path = config.loss_path();
    write_loss(&loss_path, &model.loss_history)?;
    let stopped = model.stopped_epoch;
    let best_val = model
        .loss_history
        .iter()
        .map(|&(_, v)| v)
        .fold(f64::INFINITY, f64::min);
    save_json(&model_path, &ModelFile { version: FORMAT_VERSION, model })?;
    write_manifest(&config.out, "train", config, &[&model_path, &loss_path])?;

    println!(
        "trained {} target(s) for {stopped} epoch(s), best validation loss {best_val:.6}",
        task.targets.len()
    );
    println!("wrote {}", model_path.display());
    println!("wrote {}", loss_path.display());
    Ok(())
}
