use std::fmt::Write;

use crate::error::{invalid, Result};
use crate::graph::Graph;

/// Renders `g` plus `added_edges` as an undirected DOT graph. Motif nodes are
/// filled green; added edges are red and dashed.
pub fn export_dot(g: &Graph, added_edges: &[(usize, usize)], motif_nodes: Option<&[usize]>) -> Result<String> {
    let n = g.node_count();
    let mut added: Vec<(usize, usize)> = Vec::with_capacity(added_edges.len());
    for &(u, v) in added_edges {
        if u >= n || v >= n || u == v {
            return Err(invalid(format!("added edge ({u},{v}) is not a valid node pair")));
        }
        if g.has_edge(u, v) {
            return Err(invalid(format!("added edge ({u},{v}) already exists")));
        }
        added.push((u.min(v), u.max(v)));
    }
    added.sort_unstable();
    added.dedup();
    let motif = motif_nodes.unwrap_or(g.motif_nodes());
    if let Some(&bad) = motif.iter().find(|&&v| v >= n) {
        return Err(invalid(format!("motif node {bad} out of range")));
    }

    let mut out = String::new();
    // Writing to a String cannot fail.
    let _ = writeln!(out, "graph \"{}\" {{", g.id());
    let _ = writeln!(out, "  node [shape=circle];");
    for v in 0..n {
        if motif.contains(&v) {
            let _ = writeln!(out, "  n{v} [label=\"{v}\", style=filled, fillcolor=green];");
        } else {
            let _ = writeln!(out, "  n{v} [label=\"{v}\"];");
        }
    }
    for (u, v) in g.edges() {
        let _ = writeln!(out, "  n{u} -- n{v};");
    }
    for (u, v) in added {
        let _ = writeln!(out, "  n{u} -- n{v} [color=red, style=dashed];");
    }
    out.push_str("}\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphId;
    use crate::nn::Tensor2;

    fn triangle_plus_leaf() -> Graph {
        Graph::new(GraphId(3), 4, &[(0, 1), (1, 2), (0, 2)], Tensor2::zeros(4, 1), 0).unwrap()
    }

    #[test]
    fn plain_graph_has_no_dashed_edges() {
        let dot = export_dot(&triangle_plus_leaf(), &[], None).unwrap();
        assert!(!dot.contains("dashed"));
        assert_eq!(dot.matches(" -- ").count(), 3);
    }

    #[test]
    fn added_edges_are_dashed_and_motifs_green() {
        let dot = export_dot(&triangle_plus_leaf(), &[(3, 2)], Some(&[0, 1])).unwrap();
        assert_eq!(dot.matches("dashed").count(), 1);
        assert!(dot.contains("n2 -- n3 [color=red, style=dashed]"));
        assert_eq!(dot.matches("fillcolor=green").count(), 2);
    }

    #[test]
    fn existing_edge_cannot_be_added() {
        assert!(export_dot(&triangle_plus_leaf(), &[(1, 0)], None).is_err());
    }
}
