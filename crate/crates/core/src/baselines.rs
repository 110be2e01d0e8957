//! Baseline attackers: uniform random edits, gradient-argmax edits and an
//! exhaustive oracle over small perturbation spaces.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::Graph;
use crate::nn::Tensor2;
use crate::perturb::{
    apply, combine, enumerate_space, operation_elements, AllowedOps, BudgetedSpace, Operation, PerturbationGraph,
};
use crate::ranking::AttackGoal;
use crate::victim::VictimModel;

#[derive(Clone, Debug, PartialEq)]
pub struct AttackOutcome {
    pub graph: Graph,
    pub perturbation: PerturbationGraph,
}

/// Adds `min(k, |T_1|)` distinct operation elements drawn uniformly from the
/// operations `allowed` on `g`.
pub fn random_attack(g: &Graph, k: usize, allowed: AllowedOps, seed: u64) -> Result<AttackOutcome> {
    let ops = operation_elements(g, allowed);
    let amount = k.min(ops.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, ops.len(), amount).into_vec();
    picked.sort_unstable();
    let mut dg = PerturbationGraph::zero(g);
    for i in picked {
        dg = combine(&dg, &PerturbationGraph::element(g, ops[i])?)?;
    }
    Ok(AttackOutcome {
        graph: apply(g, &dg)?,
        perturbation: dg,
    })
}

/// One step of the gradient-argmax attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradDiagnostics {
    pub step: usize,
    /// Symmetrised loss gradient `g_uv = dL/dA_uv + dL/dA_vu` on the graph of this step.
    pub gradient: Tensor2,
    /// Every legal move has an exactly zero gradient.
    pub all_candidate_grads_zero: bool,
    /// No legal move increases the loss to first order: additions have
    /// `g <= 0` and removals have `g >= 0`.
    pub all_candidate_grads_nonpositive: bool,
    pub chosen: Option<Operation>,
}

impl GradDiagnostics {
    pub fn is_noop(&self) -> bool {
        self.chosen.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradArgmaxOutcome {
    pub graph: Graph,
    pub perturbation: PerturbationGraph,
    pub trail: Vec<GradDiagnostics>,
}

/// Greedy edge edits following the cross-entropy gradient with respect to the
/// adjacency, recomputed on the current graph at every step. Each step adds
/// the non-edge with the largest positive gradient or removes the edge with
/// the most negative one, whichever gains more; a node pair is edited at most
/// once. A step with no loss-increasing move is recorded and changes nothing.
pub fn gradargmax_attack(
    victim: &VictimModel,
    g: &Graph,
    k: usize,
    allow_add: bool,
    allow_remove: bool,
) -> Result<GradArgmaxOutcome> {
    let n = g.node_count();
    let mut current = g.clone();
    let mut touched = vec![false; n * n];
    let mut trail = Vec::with_capacity(k);
    for step in 0..k {
        let (_, raw) = victim.adjacency_gradient(&current, &current.adjacency_tensor(), g.label())?;
        let grad = Tensor2::from_fn(n, n, |i, j| if i == j { 0.0 } else { raw[(i, j)] + raw[(j, i)] });
        let mut best: Option<(f64, Operation)> = None;
        let mut any_nonzero = false;
        let mut any_positive = false;
        for i in 0..n {
            for j in i + 1..n {
                if touched[i * n + j] {
                    continue;
                }
                let edge = current.has_edge(i, j);
                let (gain, op) = match (edge, allow_add, allow_remove) {
                    (false, true, _) => (grad[(i, j)], Operation::AddEdge(i, j)),
                    (true, _, true) => (-grad[(i, j)], Operation::RemoveEdge(i, j)),
                    _ => continue,
                };
                any_nonzero |= gain != 0.0;
                any_positive |= gain > 0.0;
                if gain > 0.0 && best.is_none_or(|(b, _)| gain > b) {
                    best = Some((gain, op));
                }
            }
        }
        let chosen = best.map(|(_, op)| op);
        if let Some(op) = chosen {
            let (i, j) = match op {
                Operation::AddEdge(i, j) | Operation::RemoveEdge(i, j) => (i, j),
                Operation::FlipFeature(..) => unreachable!("only structural moves are scored"),
            };
            touched[i * n + j] = true;
            current = apply(&current, &PerturbationGraph::element(&current, op)?)?;
        }
        trail.push(GradDiagnostics {
            step,
            gradient: grad,
            all_candidate_grads_zero: !any_nonzero,
            all_candidate_grads_nonpositive: !any_positive,
            chosen,
        });
    }
    let perturbation = PerturbationGraph::between(g, &current)?;
    let graph = apply(g, &perturbation)?;
    Ok(GradArgmaxOutcome {
        graph,
        perturbation,
        trail,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleOutcome {
    pub graph: Graph,
    pub perturbation: PerturbationGraph,
    pub operations: Vec<Operation>,
    /// `p(y_G | Ĝ)` when untargeted (lower is better), `p(y_t | Ĝ)` when
    /// targeted (higher is better).
    pub objective: f64,
}

/// Probability the attacker optimises on `g_hat`, for the graph's true label.
pub fn attack_objective(victim: &VictimModel, g_hat: &Graph, label: usize, goal: AttackGoal) -> Result<f64> {
    let proba = victim.predict_proba(g_hat)?;
    let class = match goal {
        AttackGoal::Untargeted => label,
        AttackGoal::Targeted(t) => t,
    };
    proba
        .get(class)
        .copied()
        .ok_or_else(|| invalid(format!("class {class} out of range")))
}

fn better(goal: AttackGoal, candidate: f64, incumbent: f64) -> bool {
    match goal {
        AttackGoal::Untargeted => candidate < incumbent,
        AttackGoal::Targeted(_) => candidate > incumbent,
    }
}

const ORACLE_CHUNK: usize = 4096;

/// Evaluates the victim on every perturbation of size `min(k, |T_1|)` and
/// keeps the best; ties go to the earliest in enumeration order.
pub fn oracle_attack(
    victim: &VictimModel,
    g: &Graph,
    k: usize,
    allowed: AllowedOps,
    goal: AttackGoal,
) -> Result<OracleOutcome> {
    goal.favoured_classes(g.label(), victim.class_count())?;
    let budget = k.min(operation_elements(g, allowed).len());
    let space = BudgetedSpace {
        base: g.id(),
        budget,
        allowed_ops: allowed,
    };
    let mut iter = enumerate_space(&space, g)?;
    let mut best: Option<(f64, Vec<Operation>, PerturbationGraph)> = None;
    loop {
        let chunk: Vec<(Vec<Operation>, PerturbationGraph)> = iter.by_ref().take(ORACLE_CHUNK).collect();
        if chunk.is_empty() {
            break;
        }
        let scores: Vec<f64> = chunk
            .par_iter()
            .map(|(_, dg)| attack_objective(victim, &apply(g, dg)?, g.label(), goal))
            .collect::<Result<_>>()?;
        for ((ops, dg), score) in chunk.into_iter().zip(scores) {
            if best.as_ref().is_none_or(|(b, _, _)| better(goal, score, *b)) {
                best = Some((score, ops, dg));
            }
        }
    }
    let (objective, operations, perturbation) =
        best.ok_or_else(|| Error::Precondition("perturbation space is empty".into()))?;
    Ok(OracleOutcome {
        graph: apply(g, &perturbation)?,
        perturbation,
        operations,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphId;
    use crate::perturb::similarity_check;
    use crate::victim::{Arch, VictimConfig};

    fn path(n: usize) -> Graph {
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::new(GraphId(7), n, &edges, Tensor2::filled(n, 2, 0.5), 1).unwrap()
    }

    fn victim(arch: Arch) -> VictimModel {
        let mut v = VictimModel::new(VictimConfig::new(arch, 2, 2), 11).unwrap();
        v.mark_trained();
        v
    }

    #[test]
    fn random_attack_respects_budget() {
        let g = path(6);
        for k in 0..4 {
            let out = random_attack(&g, k, AllowedOps::ADD_ONLY, 3).unwrap();
            assert_eq!(out.perturbation.added_edges().len(), k);
            assert!(similarity_check(&out.graph, &g, k).unwrap());
        }
        assert_eq!(
            random_attack(&g, 2, AllowedOps::ADD_ONLY, 5).unwrap(),
            random_attack(&g, 2, AllowedOps::ADD_ONLY, 5).unwrap()
        );
    }

    #[test]
    fn random_attack_on_complete_graph_is_identity() {
        let edges: Vec<(usize, usize)> = (0..4).flat_map(|i| (i + 1..4).map(move |j| (i, j))).collect();
        let g = Graph::new(GraphId(0), 4, &edges, Tensor2::zeros(4, 1), 0).unwrap();
        let out = random_attack(&g, 3, AllowedOps::ADD_ONLY, 0).unwrap();
        assert!(out.perturbation.is_zero());
    }

    #[test]
    fn gradargmax_trail_has_one_entry_per_step() {
        let g = path(5);
        let out = gradargmax_attack(&victim(Arch::Gcn), &g, 2, true, true).unwrap();
        assert_eq!(out.trail.len(), 2);
        for d in &out.trail {
            assert!(d.gradient.is_symmetric(0.0));
            assert_eq!(d.is_noop(), d.all_candidate_grads_nonpositive);
        }
        assert!(similarity_check(&out.graph, &g, 2).unwrap());
    }

    #[test]
    fn gradargmax_add_only_never_touches_existing_edges() {
        let g = path(6);
        let out = gradargmax_attack(&victim(Arch::Gcn), &g, 3, true, false).unwrap();
        assert!(out.perturbation.removed_edges().is_empty());
        for d in &out.trail {
            if let Some(Operation::AddEdge(i, j)) = d.chosen {
                assert!(!g.has_edge(i, j));
            }
        }
    }

    #[test]
    fn oracle_budget_zero_returns_clean_probability() {
        let v = victim(Arch::Gcn);
        let g = path(5);
        let out = oracle_attack(&v, &g, 0, AllowedOps::ADD_ONLY, AttackGoal::Untargeted).unwrap();
        assert!(out.perturbation.is_zero());
        assert_eq!(out.objective, v.predict_proba(&g).unwrap()[1]);
    }

    #[test]
    fn oracle_beats_every_single_edge() {
        let v = victim(Arch::Gcn);
        let g = path(5);
        let out = oracle_attack(&v, &g, 1, AllowedOps::ADD_ONLY, AttackGoal::Untargeted).unwrap();
        for (i, j) in crate::graph::candidate_add_edges(&g) {
            let dg = PerturbationGraph::element(&g, Operation::AddEdge(i, j)).unwrap();
            let p = attack_objective(&v, &apply(&g, &dg).unwrap(), 1, AttackGoal::Untargeted).unwrap();
            assert!(out.objective <= p);
        }
    }
}
