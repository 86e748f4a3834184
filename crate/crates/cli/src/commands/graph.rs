//! Estimates the knowledge graph from a graph tensor and exports it as JSON
//! plus a Graphviz rendering.

use fungraph::embed::EmbeddedTensor;
use fungraph::graph::{estimate, finalize, KnowledgeGraph};
use nalgebra::DMatrix;

use crate::config::RunConfig;
use crate::containers::{load_tensor, save_json, write_manifest, GraphFile, FORMAT_VERSION};
use crate::dot;
use crate::error::Result;

/// Node-wise selection, or the edgeless fallback: `solver.p_max = 0` skips
/// estimation entirely and yields the diagonal graph, which turns the
/// downstream network into a per-feature baseline.
pub fn fit(config: &RunConfig, tensor: &EmbeddedTensor) -> Result<KnowledgeGraph> {
    if config.solver.p_max == 0 {
        let graph = finalize(DMatrix::identity(tensor.p(), tensor.p()), config.theta, Vec::new())?;
        return Ok(graph);
    }
    Ok(estimate(tensor, &config.solver, config.theta)?)
}

fn surviving_edges(graph: &KnowledgeGraph) -> usize {
    let a = graph.a_sym();
    let mut edges = 0;
    for i in 0..graph.p() {
        for j in (i + 1)..graph.p() {
            if a[(i, j)] > 0.0 {
                edges += 1;
            }
        }
    }
    edges
}

pub fn run(config: &RunConfig) -> Result<()> {
    let tensor = load_tensor(&config.graph_tensor_path())?;
    let graph = fit(config, &tensor)?;

    let graph_path = config.graph_path();
    let dot_path = config.dot_path();
    let edges = surviving_edges(&graph);
    let p = graph.p();
    dot::write(&dot_path, &graph, &dot::tensor_nodes(&tensor))?;
    save_json(&graph_path, &GraphFile { version: FORMAT_VERSION, graph })?;
    write_manifest(&config.out, "graph", config, &[&graph_path, &dot_path])?;

    println!(
        "estimated graph over {p} features: {edges} edges at threshold {}",
        config.theta
    );
    println!("wrote {}", graph_path.display());
    println!("wrote {}", dot_path.display());
    Ok(())
}
