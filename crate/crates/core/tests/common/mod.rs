//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::BTreeSet;

use projrank::perturb::{operation_elements, AllowedOps, Operation, PerturbationGraph};
use projrank::ranking::strategy_loss_and_grads;
use projrank::{combine, hadamard, size_of, Arch, AttackGoal, Graph, GraphId, NodeEmbeddings, ParamStore, ScoringStrategy,
    Tensor2, VictimConfig, VictimModel};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Erdős–Rényi graph with binary node features.
pub fn random_graph(rng: &mut ChaCha8Rng, id: u64, n: usize, p: f64, feature_dim: usize) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    let features = Tensor2::from_fn(n, feature_dim, |_, _| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
    Graph::new(GraphId(id), n, &edges, features, rng.random_range(0..2)).unwrap()
}

/// Sum of a random subset of the legal operation elements of `g`.
pub fn random_perturbation(rng: &mut ChaCha8Rng, g: &Graph, density: f64) -> PerturbationGraph {
    let mut dg = PerturbationGraph::zero(g);
    for op in operation_elements(g, AllowedOps::ALL) {
        if rng.random_bool(density) {
            dg = combine(&dg, &PerturbationGraph::element(g, op).unwrap()).unwrap();
        }
    }
    dg
}

/// Checks the four algebraic laws on one graph and returns the first violation.
pub fn check_properties(rng: &mut ChaCha8Rng, g: &Graph) -> Result<(), String> {
    let zero = PerturbationGraph::zero(g);
    let (da, db) = (rng.random_range(0.0..0.5), rng.random_range(0.0..0.5));
    let a = random_perturbation(rng, g, da);
    let b = random_perturbation(rng, g, db);

    if hadamard(&zero, &a).unwrap() != zero || combine(&zero, &a).unwrap() != a {
        return Err("zero is not absorbing for ⊙ or neutral for +".into());
    }

    let ops = operation_elements(g, AllowedOps::ALL);
    if ops.len() >= 2 {
        let i = rng.random_range(0..ops.len());
        let mut j = rng.random_range(0..ops.len() - 1);
        if j >= i {
            j += 1;
        }
        let ea = PerturbationGraph::element(g, ops[i]).unwrap();
        let eb = PerturbationGraph::element(g, ops[j]).unwrap();
        if size_of(&hadamard(&ea, &ea).unwrap()).unwrap() != 1 {
            return Err(format!("{:?} ⊙ itself is not size 1", ops[i]));
        }
        if size_of(&hadamard(&ea, &eb).unwrap()).unwrap() != 0 {
            return Err(format!("{:?} ⊙ {:?} is not zero", ops[i], ops[j]));
        }

        let kappa = rng.random_range(1..=ops.len().min(6));
        let mut chosen: Vec<Operation> = ops.clone();
        chosen.shuffle(rng);
        let mut partial = PerturbationGraph::zero(g);
        for op in &chosen[..kappa - 1] {
            partial = combine(&partial, &PerturbationGraph::element(g, *op).unwrap()).unwrap();
        }
        let fresh = PerturbationGraph::element(g, chosen[kappa - 1]).unwrap();
        if size_of(&combine(&fresh, &partial).unwrap()).unwrap() != kappa {
            return Err(format!("disjoint element plus size {} is not size {kappa}", kappa - 1));
        }
    }

    let lhs = size_of(&combine(&a, &b).unwrap()).unwrap();
    let rhs = size_of(&a).unwrap() + size_of(&b).unwrap() - size_of(&hadamard(&a, &b).unwrap()).unwrap();
    if lhs != rhs {
        return Err(format!("|a+b| = {lhs} but |a|+|b|-|a⊙b| = {rhs}"));
    }
    Ok(())
}

/// Graphs with every edge count from 0 to 12 over 6 nodes, one per count.
pub fn enumeration_graphs(rng: &mut ChaCha8Rng) -> Vec<Graph> {
    let pairs: Vec<(usize, usize)> = (0..6).flat_map(|i| (i + 1..6).map(move |j| (i, j))).collect();
    (0..=12)
        .map(|e| {
            let mut edges = pairs.clone();
            edges.shuffle(rng);
            edges.truncate(e);
            Graph::new(GraphId(e as u64), 6, &edges, Tensor2::zeros(6, 1), 0).unwrap()
        })
        .collect()
}

/// Norms below this count as zero gradients in [`relative_error`]. Central
/// differences at [`FD_STEP`] carry roundoff near `1e-11 * |L|` per entry, so a
/// vanishing gradient is then held to an absolute error of `1e-8`.
pub const GRADIENT_NORM_FLOOR: f64 = 1e-4;

/// `‖a - b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(GRADIENT_NORM_FLOOR)
}

pub const FD_STEP: f64 = 1e-5;

/// Distance that pre-activations and pooled maxima must keep from a kink.
pub const KINK_MARGIN: f64 = 1e-4;

/// True when a ReLU or attention LeakyReLU input, or a max-pool runner-up, lies within
/// [`KINK_MARGIN`] of switching, where finite differences are meaningless.
pub fn near_kink(g: &Graph, victim: &VictimModel, adj: &Tensor2) -> bool {
    let mut tape = projrank::Tape::new();
    let vars = victim.params().bind(&mut tape, false);
    let adj = tape.constant(adj.clone());
    let out = victim.build_on_tape(&mut tape, &vars, g, adj).unwrap();
    let layers = victim.config().layer_count;
    for (layer, &agg) in out.pre_bias.iter().take(layers).enumerate() {
        let bias = victim.params().get(&format!("conv{layer}.bias")).unwrap();
        let z = tape.value(agg);
        for i in 0..z.rows() {
            if (0..z.cols()).any(|c| (z[(i, c)] + bias[(0, c)]).abs() < KINK_MARGIN) {
                return true;
            }
        }
    }
    let a = tape.value(adj);
    for &e in &out.attention_logits {
        let e = tape.value(e);
        let on_support = |i: usize, j: usize| i == j || a[(i, j)] > 0.0;
        if (0..e.rows()).any(|i| (0..e.cols()).any(|j| on_support(i, j) && e[(i, j)].abs() < KINK_MARGIN)) {
            return true;
        }
    }
    let h = tape.value(out.embeddings);
    (0..h.cols()).any(|c| {
        let mut col: Vec<f64> = (0..h.rows()).map(|i| h[(i, c)]).collect();
        col.sort_by(|a, b| b.total_cmp(a));
        col[0] > 0.0 && col[0] - col[1] < KINK_MARGIN
    })
}

/// Six-node instance with a victim whose units are active on it, resampled
/// until it is clear of kinks.
pub fn gradient_instance(rng: &mut ChaCha8Rng, arch: Arch, id: u64) -> (Graph, VictimModel) {
    loop {
        let graphs: Vec<Graph> = (0..4).map(|k| random_graph(rng, id * 4 + k, 6, 0.5, 3)).collect();
        let g = graphs[0].clone();
        if g.edge_count() < 3 {
            continue;
        }
        let mut config = VictimConfig::new(arch, 3, 2);
        config.hidden_dim = 5;
        let mut victim = VictimModel::new(config, rng.random()).unwrap();
        let refs: Vec<&Graph> = graphs.iter().collect();
        victim.data_dependent_init(&refs, 0.5, rng).unwrap();
        victim.mark_trained();
        if !near_kink(&g, &victim, &g.adjacency_tensor()) {
            return (g, victim);
        }
    }
}

fn with_param(victim: &VictimModel, idx: usize, entry: usize, delta: f64) -> VictimModel {
    let mut params: ParamStore = victim.params().clone();
    params.value_mut(idx).data_mut()[entry] += delta;
    VictimModel::from_parts(*victim.config(), params, true).unwrap()
}

/// Worst relative error between analytic and central-difference parameter gradients.
pub fn victim_param_gradient_error(g: &Graph, victim: &VictimModel) -> f64 {
    let target = g.label();
    let (_, grads) = victim.loss_and_grads(g, target).unwrap();
    let mut worst: f64 = 0.0;
    for (idx, analytic) in grads.iter().enumerate() {
        let numeric: Vec<f64> = (0..analytic.data().len())
            .map(|e| {
                let up = with_param(victim, idx, e, FD_STEP).loss_and_grads(g, target).unwrap().0;
                let down = with_param(victim, idx, e, -FD_STEP).loss_and_grads(g, target).unwrap().0;
                (up - down) / (2.0 * FD_STEP)
            })
            .collect();
        worst = worst.max(relative_error(analytic.data(), &numeric));
    }
    worst
}

/// Worst relative error for `dL/da_uv` over undirected pairs. Pairs whose
/// perturbation would change the support are skipped for GAT, whose
/// attention is defined only on existing edges.
pub fn adjacency_gradient_error(g: &Graph, victim: &VictimModel) -> f64 {
    let n = g.node_count();
    let adj = g.adjacency_tensor();
    let target = g.label();
    let (_, grad) = victim.adjacency_gradient(g, &adj, target).unwrap();
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in i + 1..n {
            if victim.arch() == Arch::Gat && !g.has_edge(i, j) {
                continue;
            }
            let loss_at = |delta: f64| {
                let mut a = adj.clone();
                a[(i, j)] += delta;
                a[(j, i)] += delta;
                victim.adjacency_gradient(g, &a, target).unwrap().0
            };
            analytic.push(grad[(i, j)] + grad[(j, i)]);
            numeric.push((loss_at(FD_STEP) - loss_at(-FD_STEP)) / (2.0 * FD_STEP));
        }
    }
    relative_error(&analytic, &numeric)
}

/// True when a hidden unit of the scoring module, or the victim on the
/// relaxed graph, sits near a kink.
fn scorer_near_kink(strategy: &ScoringStrategy, victim: &VictimModel, emb: &NodeEmbeddings, g: &Graph) -> bool {
    let (w0, b0) = (strategy.params().value(0), strategy.params().value(1));
    let h = &emb.0;
    let n = g.node_count();
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i && !g.has_edge(i, j)) {
            let pair: Vec<f64> = h.row(i).iter().chain(h.row(j)).copied().collect();
            for u in 0..w0.cols() {
                let z: f64 = pair.iter().enumerate().map(|(r, x)| x * w0[(r, u)]).sum::<f64>() + b0[(0, u)];
                if z.abs() < KINK_MARGIN {
                    return true;
                }
            }
        }
    }
    let relaxed = strategy.score_pairs(emb, g).unwrap();
    let mut adj = g.adjacency_tensor();
    adj.add_assign(relaxed.matrix()).unwrap();
    near_kink(g, victim, &adj)
}

/// Instance for the scoring-module check, clear of kinks in both the scorer
/// and the victim on the relaxed graph.
pub fn scorer_instance(rng: &mut ChaCha8Rng, id: u64) -> (Graph, VictimModel, ScoringStrategy) {
    loop {
        let (g, victim) = gradient_instance(rng, Arch::Gcn, id);
        let emb = victim.node_embeddings(&g).unwrap();
        let strategy = ScoringStrategy::new(victim.embed_dim(), victim.arch(), rng.random()).unwrap();
        if !scorer_near_kink(&strategy, &victim, &emb, &g) {
            return (g, victim, strategy);
        }
    }
}

/// Worst relative error for the scoring module's parameters through the attack loss.
pub fn scorer_gradient_error(g: &Graph, victim: &VictimModel, strategy: &ScoringStrategy) -> f64 {
    let emb = victim.node_embeddings(g).unwrap();
    let goal = AttackGoal::Untargeted;
    let (_, grads) = strategy_loss_and_grads(strategy, victim, &emb, g, goal).unwrap();
    let mut worst: f64 = 0.0;
    for (idx, analytic) in grads.iter().enumerate() {
        let numeric: Vec<f64> = (0..analytic.data().len())
            .map(|e| {
                let loss_at = |delta: f64| {
                    let mut params = strategy.params().clone();
                    params.value_mut(idx).data_mut()[e] += delta;
                    let s = ScoringStrategy::from_parts(strategy.embed_dim(), strategy.victim_arch(), 0, params, false)
                        .unwrap();
                    strategy_loss_and_grads(&s, victim, &emb, g, goal).unwrap().0
                };
                (loss_at(FD_STEP) - loss_at(-FD_STEP)) / (2.0 * FD_STEP)
            })
            .collect();
        worst = worst.max(relative_error(analytic.data(), &numeric));
    }
    worst
}

/// Indices of the `k` largest scores by full sort, ties to the smaller pair.
pub fn sorted_topk(scores: &Tensor2, g: &Graph, k: usize) -> BTreeSet<(usize, usize)> {
    let mut pairs: Vec<((usize, usize), f64)> = projrank::candidate_add_edges(g)
        .into_iter()
        .map(|(i, j)| ((i, j), (scores[(i, j)] + scores[(j, i)]) / 2.0))
        .collect();
    pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    pairs.into_iter().take(k).map(|(p, _)| p).collect()
}
