//! Projective-ranking attacker: a pairwise scoring MLP over victim node
//! embeddings, trained through a continuous edge-addition relaxation and
//! projected to discrete perturbations with top-k.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::Graph;
use crate::nn::{AdamConfig, ParamStore, Tape, Tensor2, Var};
use crate::perturb::{apply, project_topk, PerturbationGraph};
use crate::victim::{Arch, NodeEmbeddings, VictimModel};

pub const SCORER_HIDDEN_DIM: usize = 32;
/// Initial perturb probability of every pair, so the relaxed graph starts
/// close to the clean one.
pub const INIT_PERTURB_PROB: f64 = 0.01;
/// Probability floor inside the attack loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "target_class", rename_all = "lowercase")]
pub enum AttackGoal {
    Untargeted,
    Targeted(usize),
}

impl AttackGoal {
    /// Whether a graph with this true label takes part in the attack.
    pub fn applies_to(self, label: usize) -> bool {
        match self {
            AttackGoal::Untargeted => true,
            AttackGoal::Targeted(t) => label != t,
        }
    }

    pub fn is_success(self, label: usize, predicted: usize) -> bool {
        match self {
            AttackGoal::Untargeted => predicted != label,
            AttackGoal::Targeted(t) => predicted == t,
        }
    }

    /// Classes whose probability mass the attacker wants to increase.
    pub fn favoured_classes(self, label: usize, class_count: usize) -> Result<Vec<usize>> {
        if label >= class_count {
            return Err(invalid(format!("label {label} out of range for {class_count} classes")));
        }
        match self {
            AttackGoal::Untargeted => {
                if class_count < 2 {
                    return Err(invalid("untargeted attack needs at least two classes"));
                }
                Ok((0..class_count).filter(|&c| c != label).collect())
            }
            AttackGoal::Targeted(t) if t >= class_count => {
                Err(invalid(format!("target class {t} out of range for {class_count} classes")))
            }
            AttackGoal::Targeted(t) if t == label => Err(invalid(format!("graph already has target label {t}"))),
            AttackGoal::Targeted(t) => Ok(vec![t]),
        }
    }
}

/// Continuous edge-addition scores, zero on existing edges and the diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxedPerturbation {
    matrix: Tensor2,
}

impl RelaxedPerturbation {
    pub fn zero(g: &Graph) -> Self {
        let n = g.node_count();
        Self {
            matrix: Tensor2::zeros(n, n),
        }
    }

    /// Checks range, support and symmetry against `g`.
    pub fn from_matrix(matrix: Tensor2, g: &Graph) -> Result<Self> {
        let n = g.node_count();
        if matrix.shape() != (n, n) {
            return Err(invalid("relaxed perturbation shape does not match the graph"));
        }
        for i in 0..n {
            for j in 0..n {
                let v = matrix[(i, j)];
                if !(0.0..=1.0).contains(&v) {
                    return Err(invalid(format!("relaxed entry ({i}, {j}) = {v} outside [0, 1]")));
                }
                if (i == j || g.has_edge(i, j)) && v != 0.0 {
                    return Err(invalid(format!("relaxed entry ({i}, {j}) is not a candidate")));
                }
            }
        }
        if !matrix.is_symmetric(0.0) {
            return Err(invalid("relaxed perturbation must be symmetric"));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Tensor2 {
        &self.matrix
    }
}

/// Pairwise scoring module `s(h_i, h_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoringStrategy {
    params: ParamStore,
    embed_dim: usize,
    victim_arch: Arch,
    seed: u64,
    trained: bool,
}

const PARAM_NAMES: [&str; 4] = ["mlp0.weight", "mlp0.bias", "mlp1.weight", "mlp1.bias"];

impl ScoringStrategy {
    pub fn new(embed_dim: usize, victim_arch: Arch, seed: u64) -> Result<Self> {
        if embed_dim == 0 {
            return Err(invalid("embedding dimension must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        params.insert(PARAM_NAMES[0], Tensor2::glorot(2 * embed_dim, SCORER_HIDDEN_DIM, &mut rng));
        params.insert(PARAM_NAMES[1], Tensor2::zeros(1, SCORER_HIDDEN_DIM));
        params.insert(PARAM_NAMES[2], Tensor2::glorot(SCORER_HIDDEN_DIM, 2, &mut rng));
        let perturb_bias = (INIT_PERTURB_PROB / (1.0 - INIT_PERTURB_PROB)).ln();
        params.insert(PARAM_NAMES[3], Tensor2::from_vec(1, 2, vec![0.0, perturb_bias])?);
        Ok(Self {
            params,
            embed_dim,
            victim_arch,
            seed,
            trained: false,
        })
    }

    /// Rebuilds a strategy from stored parameters, checking names and shapes.
    pub fn from_parts(embed_dim: usize, victim_arch: Arch, seed: u64, params: ParamStore, trained: bool) -> Result<Self> {
        let template = Self::new(embed_dim, victim_arch, seed)?;
        if template.params.names() != params.names() {
            return Err(invalid("parameter names do not match the scoring module"));
        }
        for (a, b) in template.params.values().iter().zip(params.values()) {
            if a.shape() != b.shape() {
                return Err(invalid("parameter shapes do not match the scoring module"));
            }
        }
        Ok(Self {
            params,
            embed_dim,
            victim_arch,
            seed,
            trained,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn victim_arch(&self) -> Arch {
        self.victim_arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    fn check_embeddings(&self, emb: &NodeEmbeddings, g: &Graph) -> Result<()> {
        if emb.dim() != self.embed_dim {
            return Err(invalid(format!(
                "embedding dimension {} does not match strategy dimension {}",
                emb.dim(),
                self.embed_dim
            )));
        }
        if emb.node_count() != g.node_count() {
            return Err(invalid(format!(
                "{} embeddings for a graph with {} nodes",
                emb.node_count(),
                g.node_count()
            )));
        }
        Ok(())
    }

    /// Builds `ΔA_c` on `tape`; `vars` come from binding this strategy's parameters.
    pub fn build_on_tape(&self, tape: &mut Tape, vars: &[Var], emb: &NodeEmbeddings, g: &Graph) -> Result<Var> {
        self.check_embeddings(emb, g)?;
        if vars.len() != PARAM_NAMES.len() {
            return Err(invalid("wrong number of scoring parameter variables"));
        }
        let n = g.node_count();
        let d = self.embed_dim;
        let h = &emb.0;
        let pairs = Tensor2::from_fn(n * n, 2 * d, |r, c| {
            let (i, j) = (r / n, r % n);
            if c < d {
                h[(i, c)]
            } else {
                h[(j, c - d)]
            }
        });
        let p = tape.constant(pairs);
        let hidden = tape.matmul(p, vars[0])?;
        let hidden = tape.add_bias(hidden, vars[1])?;
        let hidden = tape.relu(hidden)?;
        let logits = tape.matmul(hidden, vars[2])?;
        let logits = tape.add_bias(logits, vars[3])?;
        let proba = tape.softmax_rows(logits)?;
        let perturb = tape.column(proba, 1)?;
        let scores = tape.reshape(perturb, n, n)?;
        let transposed = tape.transpose(scores)?;
        let sum = tape.add(scores, transposed)?;
        let sym = tape.scale(sum, 0.5)?;
        let mask = Tensor2::from_fn(n, n, |i, j| if i != j && !g.has_edge(i, j) { 1.0 } else { 0.0 });
        tape.mul_const(sym, mask)
    }

    /// Symmetrised, candidate-masked perturb probabilities for every pair.
    pub fn score_pairs(&self, emb: &NodeEmbeddings, g: &Graph) -> Result<RelaxedPerturbation> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let out = self.build_on_tape(&mut tape, &vars, emb, g)?;
        Ok(RelaxedPerturbation {
            matrix: tape.value(out).clone(),
        })
    }
}

fn attack_loss_on_tape(
    tape: &mut Tape,
    victim: &VictimModel,
    victim_vars: &[Var],
    g: &Graph,
    delta: Var,
    goal: AttackGoal,
) -> Result<Var> {
    let classes = goal.favoured_classes(g.label(), victim.class_count())?;
    let a = tape.constant(g.adjacency_tensor());
    let adj = tape.add(a, delta)?;
    let out = victim.build_on_tape(tape, victim_vars, g, adj)?;
    tape.neg_log_mass(out.logits, &classes, Some(PROB_FLOOR))
}

/// Victim loss on `A + ΔA_c`: `-log` of the favoured probability mass.
pub fn attack_loss(victim: &VictimModel, g: &Graph, relaxed: &RelaxedPerturbation, goal: AttackGoal) -> Result<f64> {
    if !victim.is_trained() {
        return Err(Error::Precondition("victim model is not trained".into()));
    }
    let mut tape = Tape::new();
    let vars = victim.params().bind(&mut tape, false);
    let delta = tape.constant(relaxed.matrix().clone());
    let loss = attack_loss_on_tape(&mut tape, victim, &vars, g, delta, goal)?;
    Ok(tape.value(loss)[(0, 0)])
}

/// Attack loss and its gradient with respect to every scoring parameter.
pub fn strategy_loss_and_grads(
    strategy: &ScoringStrategy,
    victim: &VictimModel,
    emb: &NodeEmbeddings,
    g: &Graph,
    goal: AttackGoal,
) -> Result<(f64, Vec<Tensor2>)> {
    let mut tape = Tape::new();
    let s_vars = strategy.params.bind(&mut tape, true);
    let v_vars = victim.params().bind(&mut tape, false);
    let delta = strategy.build_on_tape(&mut tape, &s_vars, emb, g)?;
    let loss = attack_loss_on_tape(&mut tape, victim, &v_vars, g, delta, goal)?;
    let grads = tape.backward(loss)?;
    let per_param = s_vars
        .iter()
        .zip(strategy.params.values())
        .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
        .collect();
    Ok((tape.value(loss)[(0, 0)], per_param))
}

/// Scores pairs from embeddings alone, keeps the top `k` candidates and applies them.
pub fn generate_adversarial(
    strategy: &ScoringStrategy,
    emb: &NodeEmbeddings,
    g: &Graph,
    k: usize,
) -> Result<(Graph, PerturbationGraph)> {
    let relaxed = strategy.score_pairs(emb, g)?;
    let top = project_topk(relaxed.matrix(), g, k)?;
    let g_hat = apply(g, &top.perturbation)?;
    Ok((g_hat, top.perturbation))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub patience: usize,
    /// Budget used by the evaluation pass of every epoch.
    pub eval_budget: usize,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 0.003,
            seed: 0,
            patience: 30,
            eval_budget: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub asr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StrategyLog {
    pub epochs: Vec<StrategyEpoch>,
    pub best_epoch: usize,
    pub best_asr: f64,
}

impl StrategyLog {
    pub fn best(&self) -> Option<&StrategyEpoch> {
        self.epochs.get(self.best_epoch)
    }
}

/// Fraction of `graphs` for which the attack succeeds at budget `k`.
pub fn attack_success_rate(
    strategy: &ScoringStrategy,
    victim: &VictimModel,
    graphs: &[&Graph],
    embeddings: &[NodeEmbeddings],
    goal: AttackGoal,
    k: usize,
) -> Result<f64> {
    if graphs.len() != embeddings.len() {
        return Err(invalid("one embedding matrix is needed per graph"));
    }
    if graphs.is_empty() {
        return Ok(0.0);
    }
    let hits: Vec<bool> = graphs
        .par_iter()
        .zip(embeddings.par_iter())
        .map(|(g, emb)| {
            let (g_hat, _) = generate_adversarial(strategy, emb, g, k)?;
            let (pred, _) = victim.predict(&g_hat, None)?;
            Ok(goal.is_success(g.label(), pred))
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|h| **h).count() as f64 / graphs.len() as f64)
}

/// Trains a scoring strategy against `victim` on `graphs`. Each epoch records
/// the mean relaxed loss and the success rate of the projected attack at the
/// current parameters, then takes one Adam step. The returned strategy holds
/// the parameters of the epoch with the best success rate (lower loss breaks
/// ties); training stops after `patience` epochs without a better rate.
pub fn train_strategy(
    victim: &VictimModel,
    graphs: &[&Graph],
    goal: AttackGoal,
    cfg: &StrategyConfig,
) -> Result<(ScoringStrategy, StrategyLog)> {
    if !victim.is_trained() {
        return Err(Error::Precondition("victim model is not trained".into()));
    }
    let graphs: Vec<&Graph> = graphs.iter().copied().filter(|g| goal.applies_to(g.label())).collect();
    if graphs.is_empty() {
        return Err(Error::Precondition("no graphs eligible for the attack goal".into()));
    }
    let embeddings: Vec<NodeEmbeddings> = graphs
        .par_iter()
        .map(|g| victim.node_embeddings(g))
        .collect::<Result<_>>()?;
    let mut strategy = ScoringStrategy::new(victim.embed_dim(), victim.arch(), cfg.seed)?;
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut log = StrategyLog::default();
    let mut best: Option<(f64, f64, ParamStore)> = None;
    let mut since_best = 0;

    for epoch in 0..cfg.epochs {
        let results: Vec<(f64, Vec<Tensor2>)> = graphs
            .par_iter()
            .zip(embeddings.par_iter())
            .map(|(g, emb)| strategy_loss_and_grads(&strategy, victim, emb, g, goal))
            .collect::<Result<_>>()
            .map_err(|e| match e {
                Error::NumericOverflow(m) => Error::Divergence { epoch, message: m },
                other => other,
            })?;
        let scale = 1.0 / graphs.len() as f64;
        let loss = results.iter().map(|(l, _)| l).sum::<f64>() * scale;
        let asr = attack_success_rate(&strategy, victim, &graphs, &embeddings, goal, cfg.eval_budget)?;
        log.epochs.push(StrategyEpoch { epoch, loss, asr });

        let (improved, better_rate) = match &best {
            None => (true, true),
            Some((a, l, _)) => (asr > *a || (asr == *a && loss < *l), asr > *a),
        };
        if improved {
            best = Some((asr, loss, strategy.params.snapshot()));
            log.best_epoch = epoch;
            log.best_asr = asr;
        }
        if better_rate {
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }

        strategy.params.zero_grad();
        for (_, grads) in &results {
            strategy.params.accumulate(grads, scale)?;
        }
        strategy.params.adam_step(&adam);
    }
    if let Some((_, _, params)) = best {
        strategy.params = params;
    }
    strategy.trained = true;
    Ok((strategy, log))
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    if dist.is_empty() {
        return Err(invalid("empty distribution"));
    }
    if dist.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(invalid("distribution entries must be finite and non-negative"));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("distribution sums to {total}")));
    }
    Ok(-dist.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphId;
    use crate::victim::VictimConfig;

    fn path(n: usize) -> Graph {
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::new(GraphId(0), n, &edges, Tensor2::filled(n, 2, 0.5), 0).unwrap()
    }

    fn random_emb(n: usize, d: usize, seed: u64) -> NodeEmbeddings {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NodeEmbeddings(Tensor2::glorot(n, d, &mut rng))
    }

    fn trained_victim() -> VictimModel {
        let mut v = VictimModel::new(VictimConfig::new(Arch::Gcn, 2, 2), 3).unwrap();
        v.mark_trained();
        v
    }

    #[test]
    fn complete_graph_has_no_candidates() {
        let edges: Vec<(usize, usize)> = (0..4).flat_map(|i| (i + 1..4).map(move |j| (i, j))).collect();
        let g = Graph::new(GraphId(0), 4, &edges, Tensor2::zeros(4, 1), 0).unwrap();
        let s = ScoringStrategy::new(3, Arch::Gcn, 0).unwrap();
        let r = s.score_pairs(&random_emb(4, 3, 1), &g).unwrap();
        assert!(r.matrix().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn untrained_scores_lie_in_open_unit_interval_on_candidates() {
        let g = path(6);
        let s = ScoringStrategy::new(4, Arch::Gat, 9).unwrap();
        let r = s.score_pairs(&random_emb(6, 4, 2), &g).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let v = r.matrix()[(i, j)];
                if i == j || g.has_edge(i, j) {
                    assert_eq!(v, 0.0);
                } else {
                    assert!(v > 0.0 && v < 1.0);
                }
            }
        }
        assert!(RelaxedPerturbation::from_matrix(r.matrix().clone(), &g).is_ok());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let g = path(4);
        let s = ScoringStrategy::new(4, Arch::Gcn, 0).unwrap();
        assert!(matches!(s.score_pairs(&random_emb(4, 3, 0), &g), Err(Error::InvalidArgument(_))));
        assert!(matches!(s.score_pairs(&random_emb(5, 4, 0), &g), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_relaxation_gives_clean_loss() {
        let v = trained_victim();
        let g = path(5);
        let loss = attack_loss(&v, &g, &RelaxedPerturbation::zero(&g), AttackGoal::Untargeted).unwrap();
        let p = v.predict_proba(&g).unwrap();
        assert!((loss - -(p[1].ln())).abs() < 1e-12);
    }

    #[test]
    fn targeted_goal_rules() {
        assert_eq!(AttackGoal::Targeted(1).favoured_classes(0, 3).unwrap(), vec![1]);
        assert!(AttackGoal::Targeted(1).favoured_classes(1, 3).is_err());
        assert!(AttackGoal::Targeted(5).favoured_classes(0, 3).is_err());
        assert_eq!(AttackGoal::Untargeted.favoured_classes(1, 3).unwrap(), vec![0, 2]);
        assert!(!AttackGoal::Targeted(1).applies_to(1));
    }

    #[test]
    fn untrained_victim_is_a_precondition_error() {
        let v = VictimModel::new(VictimConfig::new(Arch::Gcn, 2, 2), 0).unwrap();
        let g = path(4);
        assert!(matches!(
            train_strategy(&v, &[&g], AttackGoal::Untargeted, &StrategyConfig::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn budget_zero_returns_input() {
        let g = path(5);
        let s = ScoringStrategy::new(3, Arch::Gcn, 0).unwrap();
        let (g_hat, dg) = generate_adversarial(&s, &random_emb(5, 3, 4), &g, 0).unwrap();
        assert!(dg.is_zero());
        assert_eq!(g_hat.edges().collect::<Vec<_>>(), g.edges().collect::<Vec<_>>());
    }

    #[test]
    fn entropy_values() {
        assert!((entropy(&[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&[0.0, 1.0]).unwrap(), 0.0);
        assert!(entropy(&[0.5, 0.6]).is_err());
        assert!(entropy(&[-0.1, 1.1]).is_err());
    }
}
