//! Perturbation graphs and the budgeted perturbation space over a clean graph.
//!
//! A [`PerturbationGraph`] stores signed structure and feature deltas
//! against a baseline graph. Its size counts each undirected edge edit once
//! and each feature flip once. `+` clamps entrywise to `[-1, 1]` and `⊙` is
//! the entrywise product, so for deltas over the same baseline
//! `|a + b| = |a| + |b| - |a ⊙ b|`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::{candidate_add_edges, Graph, GraphId};
use crate::nn::Tensor2;

pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationGraph {
    base: GraphId,
    node_count: usize,
    feature_dim: usize,
    structure_delta: Vec<i8>,
    feature_delta: Vec<i8>,
}

/// A single atomic edit: a size-1 element of the perturbation space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    AddEdge(usize, usize),
    RemoveEdge(usize, usize),
    FlipFeature(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllowedOps {
    pub add_edge: bool,
    pub remove_edge: bool,
    pub flip_feature: bool,
}

impl AllowedOps {
    pub const ADD_ONLY: AllowedOps = AllowedOps {
        add_edge: true,
        remove_edge: false,
        flip_feature: false,
    };
    pub const ALL: AllowedOps = AllowedOps {
        add_edge: true,
        remove_edge: true,
        flip_feature: true,
    };
}

/// `T_k(G)`: all perturbations of `base` with size exactly `budget`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetedSpace {
    pub base: GraphId,
    pub budget: usize,
    pub allowed_ops: AllowedOps,
}

fn check_delta(v: i8) -> Result<i8> {
    if (-1..=1).contains(&v) {
        Ok(v)
    } else {
        Err(invalid(format!("delta entry {v} outside [-1, 1]")))
    }
}

impl PerturbationGraph {
    pub fn zero(g: &Graph) -> Self {
        Self::zero_shaped(g.id(), g.node_count(), g.feature_dim())
    }

    pub fn zero_shaped(base: GraphId, node_count: usize, feature_dim: usize) -> Self {
        Self {
            base,
            node_count,
            feature_dim,
            structure_delta: vec![0; node_count * node_count],
            feature_delta: vec![0; node_count * feature_dim],
        }
    }

    /// Raw constructor; entries must be in `{-1, 0, 1}`. Symmetry is checked
    /// lazily by [`size_of`] and [`PerturbationGraph::validate_against`].
    pub fn from_parts(
        base: GraphId,
        node_count: usize,
        feature_dim: usize,
        structure_delta: Vec<i8>,
        feature_delta: Vec<i8>,
    ) -> Result<Self> {
        if structure_delta.len() != node_count * node_count || feature_delta.len() != node_count * feature_dim {
            return Err(invalid("delta lengths do not match the declared shape"));
        }
        for &v in structure_delta.iter().chain(&feature_delta) {
            check_delta(v)?;
        }
        Ok(Self {
            base,
            node_count,
            feature_dim,
            structure_delta,
            feature_delta,
        })
    }

    /// The operation element for `op` over `g`; rejects ops that are illegal on `g`.
    pub fn element(g: &Graph, op: Operation) -> Result<Self> {
        let mut dg = Self::zero(g);
        let n = g.node_count();
        match op {
            Operation::AddEdge(i, j) | Operation::RemoveEdge(i, j) => {
                if i >= n || j >= n || i == j {
                    return Err(invalid(format!("invalid node pair ({i},{j})")));
                }
                let adding = matches!(op, Operation::AddEdge(..));
                if g.has_edge(i, j) == adding {
                    return Err(invalid(format!(
                        "cannot {} edge ({i},{j})",
                        if adding { "add existing" } else { "remove missing" }
                    )));
                }
                let v = if adding { 1 } else { -1 };
                dg.structure_delta[i * n + j] = v;
                dg.structure_delta[j * n + i] = v;
            }
            Operation::FlipFeature(v, f) => {
                if v >= n || f >= g.feature_dim() {
                    return Err(invalid(format!("feature ({v},{f}) out of range")));
                }
                let x = g.features()[(v, f)];
                let delta = if x == 0.0 {
                    1
                } else if x == 1.0 {
                    -1
                } else {
                    return Err(invalid("feature flips need binary features"));
                };
                dg.feature_delta[v * g.feature_dim() + f] = delta;
            }
        }
        Ok(dg)
    }

    /// The perturbation that turns `g` into `g_hat`.
    pub fn between(g: &Graph, g_hat: &Graph) -> Result<Self> {
        check_same_shape(g, g_hat)?;
        let n = g.node_count();
        let d = g.feature_dim();
        let mut dg = Self::zero(g);
        for i in 0..n {
            for j in 0..n {
                dg.structure_delta[i * n + j] = g_hat.has_edge(i, j) as i8 - g.has_edge(i, j) as i8;
            }
            for f in 0..d {
                let diff = g_hat.features()[(i, f)] - g.features()[(i, f)];
                dg.feature_delta[i * d + f] = if diff > 0.0 {
                    1
                } else if diff < 0.0 {
                    -1
                } else {
                    0
                };
            }
        }
        Ok(dg)
    }

    pub fn base(&self) -> GraphId {
        self.base
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn structure(&self, i: usize, j: usize) -> i8 {
        self.structure_delta[i * self.node_count + j]
    }

    pub fn feature(&self, v: usize, f: usize) -> i8 {
        self.feature_delta[v * self.feature_dim + f]
    }

    pub fn is_zero(&self) -> bool {
        self.structure_delta.iter().chain(&self.feature_delta).all(|&v| v == 0)
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.node_count;
        (0..n).all(|i| self.structure(i, i) == 0 && (0..i).all(|j| self.structure(i, j) == self.structure(j, i)))
    }

    /// Edges with a `+1` delta, as `(i, j)` with `i < j`.
    pub fn added_edges(&self) -> Vec<(usize, usize)> {
        self.upper_pairs_with(1)
    }

    pub fn removed_edges(&self) -> Vec<(usize, usize)> {
        self.upper_pairs_with(-1)
    }

    /// Feature entries with a nonzero delta, as `(node, feature)`.
    pub fn flipped_features(&self) -> Vec<(usize, usize)> {
        let d = self.feature_dim;
        (0..self.node_count)
            .flat_map(|v| (0..d).map(move |f| (v, f)))
            .filter(|&(v, f)| self.feature(v, f) != 0)
            .collect()
    }

    fn upper_pairs_with(&self, sign: i8) -> Vec<(usize, usize)> {
        let n = self.node_count;
        (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.structure(i, j) == sign)
            .collect()
    }

    pub fn structure_tensor(&self) -> Tensor2 {
        Tensor2::from_fn(self.node_count, self.node_count, |i, j| self.structure(i, j) as f64)
    }

    /// Checks symmetry, shape and that `g + self` stays binary.
    pub fn validate_against(&self, g: &Graph) -> Result<()> {
        if self.node_count != g.node_count() || self.feature_dim != g.feature_dim() {
            return Err(invalid("perturbation shape does not match graph"));
        }
        if !self.is_symmetric() {
            return Err(invalid("structure delta must be symmetric with zero diagonal"));
        }
        let n = self.node_count;
        for i in 0..n {
            for j in 0..n {
                let v = g.has_edge(i, j) as i8 + self.structure(i, j);
                if !(0..=1).contains(&v) {
                    return Err(invalid(format!("adjacency leaves {{0,1}} at ({i},{j})")));
                }
            }
            for f in 0..self.feature_dim {
                let delta = self.feature(i, f);
                if delta == 0 {
                    continue;
                }
                let v = g.features()[(i, f)] + delta as f64;
                if v != 0.0 && v != 1.0 {
                    return Err(invalid(format!("features leave {{0,1}} at ({i},{f})")));
                }
            }
        }
        Ok(())
    }

    fn expect_compatible(&self, other: &Self) -> Result<()> {
        if self.base != other.base {
            return Err(invalid(format!(
                "perturbations over different base graphs ({} vs {})",
                self.base, other.base
            )));
        }
        if self.node_count != other.node_count || self.feature_dim != other.feature_dim {
            return Err(invalid("perturbation shapes differ"));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, f: impl Fn(i8, i8) -> i8) -> Result<Self> {
        self.expect_compatible(other)?;
        let zip = |a: &[i8], b: &[i8]| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
        Ok(Self {
            base: self.base,
            node_count: self.node_count,
            feature_dim: self.feature_dim,
            structure_delta: zip(&self.structure_delta, &other.structure_delta),
            feature_delta: zip(&self.feature_delta, &other.feature_delta),
        })
    }
}

fn check_same_shape(a: &Graph, b: &Graph) -> Result<()> {
    if a.node_count() != b.node_count() || a.feature_dim() != b.feature_dim() {
        return Err(invalid(format!(
            "graph shapes differ: {}x{} vs {}x{}",
            a.node_count(),
            a.feature_dim(),
            b.node_count(),
            b.feature_dim()
        )));
    }
    Ok(())
}

/// `(1/2)·|m_A|_1 + |m_X|_1` for an undirected structure delta.
pub fn size_of(dg: &PerturbationGraph) -> Result<usize> {
    if !dg.is_symmetric() {
        return Err(invalid("structure delta must be symmetric with zero diagonal"));
    }
    let structure: usize = dg.structure_delta.iter().filter(|&&v| v != 0).count();
    let features: usize = dg.feature_delta.iter().filter(|&&v| v != 0).count();
    Ok(structure / 2 + features)
}

/// The `+` operator: entrywise sum clamped to `[-1, 1]`.
pub fn combine(a: &PerturbationGraph, b: &PerturbationGraph) -> Result<PerturbationGraph> {
    a.zip_with(b, |x, y| (x + y).clamp(-1, 1))
}

/// The `⊙` operator: entrywise product.
pub fn hadamard(a: &PerturbationGraph, b: &PerturbationGraph) -> Result<PerturbationGraph> {
    a.zip_with(b, |x, y| x * y)
}

/// Operation elements (`T_1(G)`) permitted by `allowed`, in a fixed order:
/// additions, removals, then feature flips, each lexicographic.
pub fn operation_elements(g: &Graph, allowed: AllowedOps) -> Vec<Operation> {
    let mut ops = Vec::new();
    if allowed.add_edge {
        ops.extend(candidate_add_edges(g).into_iter().map(|(i, j)| Operation::AddEdge(i, j)));
    }
    if allowed.remove_edge {
        ops.extend(g.edges().map(|(i, j)| Operation::RemoveEdge(i, j)));
    }
    if allowed.flip_feature {
        for v in 0..g.node_count() {
            for f in 0..g.feature_dim() {
                let x = g.features()[(v, f)];
                if x == 0.0 || x == 1.0 {
                    ops.push(Operation::FlipFeature(v, f));
                }
            }
        }
    }
    ops
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// Iterator over `T_k(G)` in lexicographic order of operation-index combinations.
pub struct SpaceIter<'g> {
    graph: &'g Graph,
    ops: Vec<Operation>,
    indices: Vec<usize>,
    done: bool,
}

impl SpaceIter<'_> {
    pub fn operations(&self) -> &[Operation] {
        &self.ops
    }

    fn advance(&mut self) {
        let k = self.indices.len();
        let e = self.ops.len();
        let mut pos = k;
        while pos > 0 {
            pos -= 1;
            if self.indices[pos] < e - k + pos {
                self.indices[pos] += 1;
                for q in pos + 1..k {
                    self.indices[q] = self.indices[q - 1] + 1;
                }
                return;
            }
        }
        self.done = true;
    }
}

impl Iterator for SpaceIter<'_> {
    type Item = (Vec<Operation>, PerturbationGraph);

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let chosen: Vec<Operation> = self.indices.iter().map(|&i| self.ops[i]).collect();
        let mut dg = PerturbationGraph::zero(self.graph);
        for &op in &chosen {
            let el = PerturbationGraph::element(self.graph, op).expect("operation list is legal on its graph");
            dg = combine(&dg, &el).expect("same base graph");
        }
        if self.indices.is_empty() {
            self.done = true;
        } else {
            self.advance();
        }
        Some((chosen, dg))
    }
}

pub fn enumerate_space<'g>(space: &BudgetedSpace, g: &'g Graph) -> Result<SpaceIter<'g>> {
    enumerate_space_with_cap(space, g, DEFAULT_ENUMERATION_CAP)
}

/// Every element of `T_k(G)` as a sum of `k` distinct operation elements.
/// Fails with a resource-limit error when `C(E, k)` exceeds `cap`.
pub fn enumerate_space_with_cap<'g>(space: &BudgetedSpace, g: &'g Graph, cap: u128) -> Result<SpaceIter<'g>> {
    if space.base != g.id() {
        return Err(invalid(format!("space is over {} but graph is {}", space.base, g.id())));
    }
    let ops = operation_elements(g, space.allowed_ops);
    let total = binomial(ops.len(), space.budget);
    if total > cap {
        return Err(Error::ResourceLimit(format!(
            "|T_k(G)| = C({}, {}) = {total} exceeds enumeration cap {cap}",
            ops.len(),
            space.budget
        )));
    }
    let k = space.budget;
    Ok(SpaceIter {
        graph: g,
        done: k > ops.len(),
        indices: (0..k).collect(),
        ops,
    })
}

/// Outcome of projecting continuous scores onto a discrete budget.
#[derive(Clone, Debug, PartialEq)]
pub struct TopK {
    pub perturbation: PerturbationGraph,
    /// Selected pairs in rank order (best first).
    pub selected: Vec<(usize, usize)>,
    pub requested: usize,
}

impl TopK {
    pub fn budget_used(&self) -> usize {
        self.selected.len()
    }

    pub fn shortfall(&self) -> usize {
        self.requested - self.selected.len()
    }
}

/// Candidate pairs ranked by symmetrised score, best first; ties go to the
/// lexicographically smaller pair.
pub fn rank_candidates(scores: &Tensor2, g: &Graph) -> Result<Vec<((usize, usize), f64)>> {
    let n = g.node_count();
    if scores.shape() != (n, n) {
        return Err(invalid(format!(
            "score matrix is {}x{}, graph has {n} nodes",
            scores.rows(),
            scores.cols()
        )));
    }
    let mut ranked: Vec<((usize, usize), f64)> = candidate_add_edges(g)
        .into_iter()
        .map(|(i, j)| ((i, j), 0.5 * (scores[(i, j)] + scores[(j, i)])))
        .collect();
    if ranked.iter().any(|(_, s)| s.is_nan()) {
        return Err(invalid("NaN score"));
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(ranked)
}

/// Add-only top-k projection of a score matrix onto `g`'s candidate edges.
pub fn project_topk(scores: &Tensor2, g: &Graph, k: usize) -> Result<TopK> {
    let ranked = rank_candidates(scores, g)?;
    let selected: Vec<(usize, usize)> = ranked.into_iter().take(k).map(|(p, _)| p).collect();
    let n = g.node_count();
    let mut structure = vec![0i8; n * n];
    for &(i, j) in &selected {
        structure[i * n + j] = 1;
        structure[j * n + i] = 1;
    }
    let perturbation = PerturbationGraph {
        base: g.id(),
        node_count: n,
        feature_dim: g.feature_dim(),
        structure_delta: structure,
        feature_delta: vec![0; n * g.feature_dim()],
    };
    Ok(TopK {
        perturbation,
        selected,
        requested: k,
    })
}

/// `G + ΔG`. The result keeps the label and records `g` as its source.
pub fn apply(g: &Graph, dg: &PerturbationGraph) -> Result<Graph> {
    if dg.base != g.id() {
        return Err(invalid(format!("perturbation is over {}, not {}", dg.base, g.id())));
    }
    dg.validate_against(g)?;
    let n = g.node_count();
    let adjacency: Vec<bool> = g
        .adjacency_flags()
        .iter()
        .zip(&dg.structure_delta)
        .map(|(&a, &d)| (a as i8 + d) == 1)
        .collect();
    let mut out = g.derive_with(adjacency);
    if dg.feature_delta.iter().any(|&v| v != 0) {
        let d = g.feature_dim();
        let features = Tensor2::from_fn(n, d, |v, f| g.features()[(v, f)] + dg.feature(v, f) as f64);
        let edges: Vec<_> = out.edges().collect();
        let mut flipped = Graph::new(out.id(), n, &edges, features, g.label())?;
        flipped.set_source(out.source());
        flipped.set_motif_nodes(g.motif_nodes().to_vec())?;
        out = flipped;
    }
    Ok(out)
}

/// 1 iff `g_hat` is within `k` edits of `g`.
pub fn similarity_check(g_hat: &Graph, g: &Graph, k: usize) -> Result<bool> {
    let dg = PerturbationGraph::between(g, g_hat)?;
    Ok(size_of(&dg)? <= k)
}
