//! Graphs, datasets, the BA-2Motifs generator and deterministic splits.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::Tensor2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GraphId(pub u64);

impl fmt::Display for GraphId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}", self.0)
    }
}

/// Undirected simple graph with node features and a class label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "GraphRecord", try_from = "GraphRecord")]
pub struct Graph {
    id: GraphId,
    node_count: usize,
    adjacency: Vec<bool>,
    features: Tensor2,
    label: usize,
    /// Clean graph this one was derived from, for adversarial samples.
    source: Option<GraphId>,
    motif_nodes: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    id: GraphId,
    node_count: usize,
    edges: Vec<[usize; 2]>,
    features: Tensor2,
    label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<GraphId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    motif_nodes: Vec<usize>,
}

impl From<Graph> for GraphRecord {
    fn from(g: Graph) -> Self {
        GraphRecord {
            id: g.id,
            node_count: g.node_count,
            edges: g.edges().map(|(i, j)| [i, j]).collect(),
            features: g.features,
            label: g.label,
            source: g.source,
            motif_nodes: g.motif_nodes,
        }
    }
}

impl TryFrom<GraphRecord> for Graph {
    type Error = Error;

    fn try_from(r: GraphRecord) -> Result<Self> {
        let edges: Vec<(usize, usize)> = r.edges.iter().map(|e| (e[0], e[1])).collect();
        let mut g = Graph::new(r.id, r.node_count, &edges, r.features, r.label)?;
        g.source = r.source;
        g.set_motif_nodes(r.motif_nodes)?;
        Ok(g)
    }
}

impl Graph {
    pub fn new(
        id: GraphId,
        node_count: usize,
        edges: &[(usize, usize)],
        features: Tensor2,
        label: usize,
    ) -> Result<Self> {
        if node_count == 0 {
            return Err(invalid("graph must have at least one node"));
        }
        if features.rows() != node_count {
            return Err(invalid(format!(
                "features have {} rows for {node_count} nodes",
                features.rows()
            )));
        }
        let mut adjacency = vec![false; node_count * node_count];
        for &(i, j) in edges {
            if i >= node_count || j >= node_count {
                return Err(invalid(format!("edge ({i},{j}) out of range")));
            }
            if i == j {
                return Err(invalid(format!("self-loop at node {i}")));
            }
            adjacency[i * node_count + j] = true;
            adjacency[j * node_count + i] = true;
        }
        Ok(Self {
            id,
            node_count,
            adjacency,
            features,
            label,
            source: None,
            motif_nodes: Vec::new(),
        })
    }

    /// Builds a graph from a dense 0/1 matrix; must be symmetric with zero diagonal.
    pub fn from_dense(id: GraphId, adjacency: &Tensor2, features: Tensor2, label: usize) -> Result<Self> {
        let n = adjacency.rows();
        if adjacency.cols() != n {
            return Err(invalid("adjacency must be square"));
        }
        let mut edges = Vec::new();
        for i in 0..n {
            if adjacency[(i, i)] != 0.0 {
                return Err(invalid("adjacency diagonal must be zero"));
            }
            for j in 0..n {
                let v = adjacency[(i, j)];
                if v != 0.0 && v != 1.0 {
                    return Err(invalid(format!("non-binary adjacency entry {v} at ({i},{j})")));
                }
                if v != adjacency[(j, i)] {
                    return Err(invalid("adjacency must be symmetric"));
                }
                if i < j && v == 1.0 {
                    edges.push((i, j));
                }
            }
        }
        Self::new(id, n, &edges, features, label)
    }

    pub fn id(&self) -> GraphId {
        self.id
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor2 {
        &self.features
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn source(&self) -> Option<GraphId> {
        self.source
    }

    pub(crate) fn set_source(&mut self, source: Option<GraphId>) {
        self.source = source;
    }

    pub fn motif_nodes(&self) -> &[usize] {
        &self.motif_nodes
    }

    pub fn set_motif_nodes(&mut self, nodes: Vec<usize>) -> Result<()> {
        if nodes.iter().any(|&v| v >= self.node_count) {
            return Err(invalid("motif node out of range"));
        }
        self.motif_nodes = nodes;
        Ok(())
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = label;
        self
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.node_count + j]
    }

    /// Edges as `(i, j)` with `i < j`, lexicographic.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.node_count;
        (0..n).flat_map(move |i| ((i + 1)..n).filter(move |&j| self.has_edge(i, j)).map(move |j| (i, j)))
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    pub fn degree(&self, v: usize) -> usize {
        (0..self.node_count).filter(|&u| self.has_edge(v, u)).count()
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count).filter(move |&u| self.has_edge(v, u))
    }

    pub fn adjacency_tensor(&self) -> Tensor2 {
        Tensor2::from_fn(self.node_count, self.node_count, |i, j| {
            if self.has_edge(i, j) {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.node_count];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for u in self.neighbors(v) {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Copy with edges toggled on, recording `self` as its source.
    pub(crate) fn derive_with(&self, adjacency: Vec<bool>) -> Graph {
        Graph {
            id: self.id,
            node_count: self.node_count,
            adjacency,
            features: self.features.clone(),
            label: self.label,
            source: Some(self.source.unwrap_or(self.id)),
            motif_nodes: self.motif_nodes.clone(),
        }
    }

    pub(crate) fn adjacency_flags(&self) -> &[bool] {
        &self.adjacency
    }

    /// Relabels node `v` as `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        let n = self.node_count;
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..n).collect::<Vec<_>>() {
            return Err(invalid("not a permutation"));
        }
        let edges: Vec<_> = self.edges().map(|(i, j)| (perm[i], perm[j])).collect();
        let mut features = Tensor2::zeros(n, self.feature_dim());
        for (v, &p) in perm.iter().enumerate() {
            features.row_mut(p).copy_from_slice(self.features.row(v));
        }
        let mut g = Graph::new(self.id, n, &edges, features, self.label)?;
        g.source = self.source;
        g.motif_nodes = self.motif_nodes.iter().map(|&v| perm[v]).collect();
        Ok(g)
    }
}

/// Unordered non-adjacent pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn candidate_add_edges(g: &Graph) -> Vec<(usize, usize)> {
    let n = g.node_count();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            if !g.has_edge(i, j) {
                out.push((i, j));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<GraphId>,
    pub val: Vec<GraphId>,
    pub test: Vec<GraphId>,
}

impl Split {
    pub fn part(&self, part: SplitPart) -> &[GraphId] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Val => &self.val,
            SplitPart::Test => &self.test,
        }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatasetRecord")]
pub struct Dataset {
    pub name: String,
    graphs: Vec<Graph>,
    class_count: usize,
    split: Split,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetRecord {
    name: String,
    graphs: Vec<Graph>,
    class_count: usize,
    split: Split,
}

impl TryFrom<DatasetRecord> for Dataset {
    type Error = Error;

    fn try_from(r: DatasetRecord) -> Result<Self> {
        Dataset::new(r.name, r.graphs, r.class_count)?.with_split(r.split)
    }
}

impl Dataset {
    /// All graphs start in the training split.
    pub fn new(name: impl Into<String>, graphs: Vec<Graph>, class_count: usize) -> Result<Self> {
        if let Some(g) = graphs.iter().find(|g| g.label() >= class_count) {
            return Err(invalid(format!(
                "graph {} has label {} >= class count {class_count}",
                g.id(),
                g.label()
            )));
        }
        let mut ids: Vec<GraphId> = graphs.iter().map(Graph::id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("duplicate graph ids"));
        }
        Ok(Self {
            name: name.into(),
            split: Split {
                train: ids,
                ..Split::default()
            },
            graphs,
            class_count,
        })
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn get(&self, id: GraphId) -> Option<&Graph> {
        self.graphs.iter().find(|g| g.id() == id)
    }

    pub fn part(&self, part: SplitPart) -> Vec<&Graph> {
        self.select(self.split.part(part))
    }

    pub fn select(&self, ids: &[GraphId]) -> Vec<&Graph> {
        let index: BTreeMap<GraphId, &Graph> = self.graphs.iter().map(|g| (g.id(), g)).collect();
        ids.iter().filter_map(|id| index.get(id).copied()).collect()
    }

    pub fn with_split(mut self, split: Split) -> Result<Self> {
        let mut all: Vec<GraphId> = split
            .train
            .iter()
            .chain(&split.val)
            .chain(&split.test)
            .copied()
            .collect();
        all.sort_unstable();
        let mut ids: Vec<GraphId> = self.graphs.iter().map(Graph::id).collect();
        ids.sort_unstable();
        if all != ids {
            return Err(invalid("split must partition the graph ids"));
        }
        self.split = split;
        Ok(self)
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(0, Graph::feature_dim)
    }

    pub fn mean_edge_count(&self) -> f64 {
        self.graphs.iter().map(|g| g.edge_count() as f64).sum::<f64>() / self.graphs.len().max(1) as f64
    }
}

pub const BA_BASE_NODES: usize = 20;
pub const MOTIF_NODES: usize = 5;
pub const BA_FEATURE_DIM: usize = 10;
pub const BA_FEATURE_VALUE: f64 = 0.1;

/// Motif attached to a BA-2Motifs graph; the discriminant is the class index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Motif {
    Pentagon = 0,
    House = 1,
}

fn barabasi_albert_tree<R: Rng>(n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    // m = 1: every new node attaches one edge with probability proportional to degree.
    let mut edges = vec![(0, 1)];
    let mut endpoints = vec![0, 1];
    for v in 2..n {
        let target = endpoints[rng.random_range(0..endpoints.len())];
        edges.push((target, v));
        endpoints.push(target);
        endpoints.push(v);
    }
    edges
}

fn motif_edges(motif: Motif, offset: usize) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = (0..MOTIF_NODES)
        .map(|i| (offset + i, offset + (i + 1) % MOTIF_NODES))
        .collect();
    if motif == Motif::House {
        // Chord 1-4 closes the roof triangle {0, 1, 4} over the square {1, 2, 3, 4}.
        edges.push((offset + 1, offset + 4));
    }
    edges
}

/// Synthetic two-class dataset: a 20-node BA tree plus a pentagon (class 0)
/// or house (class 1) motif joined by one edge. The first half is class 0.
pub fn generate_ba2motifs(count: usize, seed: u64) -> Result<Dataset> {
    if count < 2 || !count.is_multiple_of(2) {
        return Err(invalid(format!("count must be even and >= 2, got {count}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = BA_BASE_NODES + MOTIF_NODES;
    let mut graphs = Vec::with_capacity(count);
    for idx in 0..count {
        let motif = if idx < count / 2 { Motif::Pentagon } else { Motif::House };
        let mut edges = barabasi_albert_tree(BA_BASE_NODES, &mut rng);
        edges.extend(motif_edges(motif, BA_BASE_NODES));
        let anchor = rng.random_range(0..BA_BASE_NODES);
        let motif_end = BA_BASE_NODES + rng.random_range(0..MOTIF_NODES);
        edges.push((anchor, motif_end));
        let features = Tensor2::filled(n, BA_FEATURE_DIM, BA_FEATURE_VALUE);
        let mut g = Graph::new(GraphId(idx as u64), n, &edges, features, motif as usize)?;
        g.set_motif_nodes((BA_BASE_NODES..n).collect())?;
        graphs.push(g);
    }
    Dataset::new("ba2motifs", graphs, 2)
}

fn part_size(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + 1e-9).floor() as usize
}

/// Seeded shuffled partition. Stratified by label when every present class
/// has at least `1 / min_fraction` members; remainders go to train.
pub fn split_dataset(ds: Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<Dataset> {
    if ds.is_empty() {
        return Err(invalid("cannot split an empty dataset"));
    }
    let (ft, fv, fs) = fractions;
    if ft <= 0.0 || fv <= 0.0 || fs <= 0.0 || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(invalid(format!(
            "fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let min_fraction = ft.min(fv).min(fs);
    let mut by_class: BTreeMap<usize, Vec<GraphId>> = BTreeMap::new();
    for g in ds.graphs() {
        by_class.entry(g.label()).or_default().push(g.id());
    }
    let stratified = by_class
        .values()
        .all(|ids| ids.len() as f64 >= 1.0 / min_fraction - 1e-9);

    let groups: Vec<Vec<GraphId>> = if stratified {
        by_class.into_values().collect()
    } else {
        vec![ds.graphs().iter().map(Graph::id).collect()]
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split::default();
    for mut ids in groups {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let n_val = part_size(fv, ids.len());
        let n_test = part_size(fs, ids.len());
        let n_train = ids.len() - n_val - n_test;
        split.train.extend_from_slice(&ids[..n_train]);
        split.val.extend_from_slice(&ids[n_train..n_train + n_val]);
        split.test.extend_from_slice(&ids[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    ds.with_split(split)
}
