//! Reader for the TU graph-classification text format.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph, GraphId};
use crate::nn::Tensor2;

#[derive(Clone, Debug, PartialEq)]
pub struct TuImport {
    pub dataset: Dataset,
    pub self_loops_dropped: usize,
    /// Graphs skipped by the node-count filter.
    pub filtered_out: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TuOptions {
    /// Keep only graphs with fewer than this many nodes.
    pub max_nodes_exclusive: Option<usize>,
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Non-empty lines of `path` with 1-based line numbers.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| parse_error(path, 0, format!("cannot read file: {e}")))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .collect())
}

fn parse_int(path: &Path, line: usize, token: &str) -> Result<i64> {
    token
        .trim()
        .parse::<i64>()
        .map_err(|_| parse_error(path, line, format!("expected an integer, found {:?}", token.trim())))
}

fn parse_index(path: &Path, line: usize, token: &str, upper: usize, what: &str) -> Result<usize> {
    let v = parse_int(path, line, token)?;
    if v < 1 || v as u64 > upper as u64 {
        return Err(parse_error(path, line, format!("{what} {v} outside 1..={upper}")));
    }
    Ok(v as usize - 1)
}

pub fn ingest_tu_dataset(dir: &Path, name: &str, opts: TuOptions) -> Result<TuImport> {
    let file = |suffix: &str| -> PathBuf { dir.join(format!("{name}_{suffix}.txt")) };
    let (a_path, ind_path, gl_path, nl_path) = (file("A"), file("graph_indicator"), file("graph_labels"), file("node_labels"));

    let label_lines = read_lines(&gl_path)?;
    let raw_labels: Vec<i64> = label_lines
        .iter()
        .map(|(ln, l)| parse_int(&gl_path, *ln, l))
        .collect::<Result<_>>()?;
    let graph_count = raw_labels.len();
    let label_map: BTreeMap<i64, usize> = raw_labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, i))
        .collect();

    let ind_lines = read_lines(&ind_path)?;
    let mut node_graph = Vec::with_capacity(ind_lines.len());
    let mut local = Vec::with_capacity(ind_lines.len());
    let mut sizes = vec![0usize; graph_count];
    for (ln, l) in &ind_lines {
        let gidx = parse_index(&ind_path, *ln, l, graph_count, "graph id")?;
        node_graph.push(gidx);
        local.push(sizes[gidx]);
        sizes[gidx] += 1;
    }
    let node_count = node_graph.len();

    let node_labels = if nl_path.exists() {
        let lines = read_lines(&nl_path)?;
        if lines.len() != node_count {
            let ln = lines.last().map_or(0, |(l, _)| *l);
            return Err(parse_error(
                &nl_path,
                ln,
                format!("{} node labels for {node_count} nodes", lines.len()),
            ));
        }
        let values: Vec<i64> = lines
            .iter()
            .map(|(ln, l)| parse_int(&nl_path, *ln, l.split(',').next().unwrap_or("")))
            .collect::<Result<_>>()?;
        Some(values)
    } else {
        None
    };

    let mut edges: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); graph_count];
    let mut self_loops = 0;
    for (ln, l) in read_lines(&a_path)? {
        let mut parts = l.split(',');
        let (Some(u), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_error(&a_path, ln, "expected two comma-separated node ids"));
        };
        let u = parse_index(&a_path, ln, u, node_count, "node id")?;
        let v = parse_index(&a_path, ln, v, node_count, "node id")?;
        if node_graph[u] != node_graph[v] {
            return Err(parse_error(&a_path, ln, "edge joins nodes of different graphs"));
        }
        if u == v {
            self_loops += 1;
            continue;
        }
        let (a, b) = (local[u].min(local[v]), local[u].max(local[v]));
        edges[node_graph[u]].insert((a, b));
    }

    let (feature_dim, node_label_map) = match &node_labels {
        Some(values) => {
            let map: BTreeMap<i64, usize> = values
                .iter()
                .copied()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .enumerate()
                .map(|(i, v)| (v, i))
                .collect();
            (map.len(), Some(map))
        }
        None => (1, None),
    };
    let mut features: Vec<Tensor2> = sizes.iter().map(|&n| Tensor2::zeros(n, feature_dim)).collect();
    for node in 0..node_count {
        let (g, i) = (node_graph[node], local[node]);
        match (&node_labels, &node_label_map) {
            (Some(values), Some(map)) => features[g][(i, map[&values[node]])] = 1.0,
            _ => features[g][(i, 0)] = 1.0,
        }
    }

    let mut graphs = Vec::new();
    let mut filtered_out = 0;
    for (gidx, (feat, edge_set)) in features.into_iter().zip(edges).enumerate() {
        let n = sizes[gidx];
        if n == 0 {
            return Err(parse_error(&gl_path, label_lines[gidx].0, format!("graph {} has no nodes", gidx + 1)));
        }
        if opts.max_nodes_exclusive.is_some_and(|cap| n >= cap) {
            filtered_out += 1;
            continue;
        }
        let edge_list: Vec<(usize, usize)> = edge_set.into_iter().collect();
        let label = label_map[&raw_labels[gidx]];
        graphs.push(Graph::new(GraphId(gidx as u64), n, &edge_list, feat, label)?);
    }
    Ok(TuImport {
        dataset: Dataset::new(name, graphs, label_map.len())?,
        self_loops_dropped: self_loops,
        filtered_out,
    })
}
