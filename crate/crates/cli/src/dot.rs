//! Graphviz export of the estimated graph. Nodes are features labeled with
//! their modality; edges are the surviving symmetric weights, drawn once per
//! unordered pair with pen width scaled to the weight.

use std::fs;
use std::path::Path;

use fungraph::embed::EmbeddedTensor;
use fungraph::graph::KnowledgeGraph;

use crate::error::{at_path, Result};
use crate::schema::{modality_label, ModalityName};

/// Node labels taken from the tensor the graph was estimated on.
pub fn tensor_nodes(tensor: &EmbeddedTensor) -> Vec<(String, ModalityName)> {
    tensor
        .feature_names()
        .iter()
        .enumerate()
        .map(|(j, name)| (name.clone(), modality_label(tensor.modality(j))))
        .collect()
}

pub fn render(graph: &KnowledgeGraph, nodes: &[(String, ModalityName)]) -> String {
    let mut out = String::from("graph knowledge {\n");
    out.push_str("\tnode [shape=ellipse];\n");
    for (name, modality) in nodes {
        out.push_str(&format!("\t\"{name}\" [label=\"{name}\\n({modality})\"];\n"));
    }
    let a = graph.a_sym();
    for i in 0..graph.p() {
        for j in (i + 1)..graph.p() {
            let w = a[(i, j)];
            if w > 0.0 {
                out.push_str(&format!(
                    "\t\"{}\" -- \"{}\" [weight={w}, penwidth={:.3}];\n",
                    nodes[i].0,
                    nodes[j].0,
                    0.5 + 3.5 * w
                ));
            }
        }
    }
    out.push_str("}\n");
    out
}

pub fn write(path: &Path, graph: &KnowledgeGraph, nodes: &[(String, ModalityName)]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, render(graph, nodes)).map_err(|e| at_path(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use fungraph::graph::finalize;
    use nalgebra::DMatrix;

    fn three_nodes() -> Vec<(String, ModalityName)> {
        vec![
            ("hr".into(), ModalityName::Longitudinal),
            ("grp".into(), ModalityName::Categorical),
            ("age".into(), ModalityName::Scalar),
        ]
    }

    #[test]
    fn renders_surviving_edges_once() {
        // Raw scores strong enough that hr--grp survives theta and age stays
        // isolated.
        let mut a = DMatrix::identity(3, 3);
        a[(0, 1)] = 0.9;
        a[(1, 0)] = 0.7;
        let graph = finalize(a, 0.5, Vec::new()).unwrap();
        let dot = render(&graph, &three_nodes());

        assert!(dot.starts_with("graph knowledge {\n"), "{dot}");
        assert!(dot.ends_with("}\n"), "{dot}");
        assert!(dot.contains("\"hr\" [label=\"hr\\n(longitudinal)\"];"), "{dot}");
        assert!(dot.contains("\"grp\" [label=\"grp\\n(categorical)\"];"), "{dot}");
        assert!(dot.contains("\"age\" [label=\"age\\n(scalar)\"];"), "{dot}");
        // (0.9 + 0.7) / 2 survives; penwidth 0.5 + 3.5 * 0.8 = 3.3.
        assert!(dot.contains("\"hr\" -- \"grp\" [weight=0.8, penwidth=3.300];"), "{dot}");
        assert_eq!(dot.matches(" -- ").count(), 1, "{dot}");
    }

    #[test]
    fn diagonal_graph_renders_no_edges() {
        let graph = finalize(DMatrix::identity(3, 3), 0.5, Vec::new()).unwrap();
        let dot = render(&graph, &three_nodes());
        assert!(!dot.contains(" -- "), "{dot}");
    }
}
