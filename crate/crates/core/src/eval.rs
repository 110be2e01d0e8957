//! Attack evaluation, transfer experiments, randomized smoothing and the
//! per-method principle checklist.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{attack_objective, gradargmax_attack, oracle_attack, random_attack};
use crate::error::{invalid, Result};
use crate::graph::{Graph, GraphId};
use crate::io::checkpoint::{strategy_to_bytes, victim_to_bytes};
use crate::io::files::sha256_hex;
use crate::nn::Tensor2;
use crate::perturb::{apply, combine, AllowedOps, Operation, PerturbationGraph};
use crate::ranking::{generate_adversarial, AttackGoal, ScoringStrategy};
use crate::victim::{argmax_lowest, Arch, VictimModel};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Which evaluation principles a method satisfies.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrincipleReport {
    pub method: String,
    pub benefit_decomposition: bool,
    pub baseline_graph: bool,
    pub operation_ranking: bool,
}

pub fn framework_checklist(method: &str) -> Result<PrincipleReport> {
    let (b, g, r) = match method {
        "random" => (false, true, false),
        "gradargmax" => (false, false, false),
        "projective_ranking" => (true, true, true),
        // Exhaustive search scores whole perturbations against the clean
        // graph but never orders single operations.
        "oracle" => (true, true, false),
        other => return Err(invalid(format!("unknown method tag {other:?}"))),
    };
    Ok(PrincipleReport {
        method: method.to_string(),
        benefit_decomposition: b,
        baseline_graph: g,
        operation_ranking: r,
    })
}

/// An attack method together with whatever it needs to run.
#[derive(Clone, Copy, Debug)]
pub enum Attacker<'a> {
    Random {
        seed: u64,
        allowed: AllowedOps,
    },
    GradArgmax {
        allow_add: bool,
        allow_remove: bool,
    },
    /// `embedder` supplies node embeddings; it is usually the victim itself.
    Ranking {
        strategy: &'a ScoringStrategy,
        embedder: &'a VictimModel,
    },
    Oracle {
        allowed: AllowedOps,
    },
}

impl Attacker<'_> {
    pub fn tag(&self) -> &'static str {
        match self {
            Attacker::Random { .. } => "random",
            Attacker::GradArgmax { .. } => "gradargmax",
            Attacker::Ranking { .. } => "projective_ranking",
            Attacker::Oracle { .. } => "oracle",
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Attacker::Random { seed, .. } => Some(*seed),
            Attacker::Ranking { strategy, .. } => Some(strategy.seed()),
            _ => None,
        }
    }
}

/// Mixes a run seed with a graph id so per-graph draws do not depend on order.
pub fn graph_seed(seed: u64, id: GraphId) -> u64 {
    let mut z = seed ^ id.0.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialSample {
    pub graph: Graph,
    pub perturbation: PerturbationGraph,
    /// Steps that changed nothing (gradient attacks only).
    pub noop_steps: usize,
}

/// Runs `attacker` against `victim` on one graph.
pub fn attack_graph(
    attacker: &Attacker,
    victim: &VictimModel,
    g: &Graph,
    k: usize,
    goal: AttackGoal,
) -> Result<AdversarialSample> {
    let (graph, perturbation, noop_steps) = match *attacker {
        Attacker::Random { seed, allowed } => {
            let out = random_attack(g, k, allowed, graph_seed(seed, g.id()))?;
            (out.graph, out.perturbation, 0)
        }
        Attacker::GradArgmax {
            allow_add,
            allow_remove,
        } => {
            if goal != AttackGoal::Untargeted {
                return Err(invalid("the gradient attack only supports the untargeted goal"));
            }
            let out = gradargmax_attack(victim, g, k, allow_add, allow_remove)?;
            let noops = out.trail.iter().filter(|d| d.is_noop()).count();
            (out.graph, out.perturbation, noops)
        }
        Attacker::Ranking { strategy, embedder } => {
            let emb = embedder.node_embeddings(g)?;
            let (graph, dg) = generate_adversarial(strategy, &emb, g, k)?;
            (graph, dg, 0)
        }
        Attacker::Oracle { allowed } => {
            let out = oracle_attack(victim, g, k, allowed, goal)?;
            (out.graph, out.perturbation, 0)
        }
    };
    Ok(AdversarialSample {
        graph,
        perturbation,
        noop_steps,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackRecord {
    pub graph_id: GraphId,
    pub true_label: usize,
    pub clean_pred: usize,
    pub adv_pred: usize,
    pub budget_used: usize,
    pub added_edges: Vec<[usize; 2]>,
    pub removed_edges: Vec<[usize; 2]>,
    /// `(node, feature)` entries flipped by the attack.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flipped_features: Vec<[usize; 2]>,
    pub success: bool,
    /// Probability the attacker optimises (true class when untargeted,
    /// target class when targeted) before and after the attack.
    pub clean_objective: f64,
    pub adv_objective: f64,
    pub noop_steps: usize,
}

impl AttackRecord {
    /// Rebuilds the adversarial graph from the clean graph this record refers to.
    pub fn adversarial_graph(&self, g: &Graph) -> Result<Graph> {
        if g.id() != self.graph_id {
            return Err(invalid(format!("record is for {}, not {}", self.graph_id, g.id())));
        }
        let mut dg = PerturbationGraph::zero(g);
        for &[i, j] in &self.added_edges {
            dg = combine(&dg, &PerturbationGraph::element(g, Operation::AddEdge(i, j))?)?;
        }
        for &[i, j] in &self.removed_edges {
            dg = combine(&dg, &PerturbationGraph::element(g, Operation::RemoveEdge(i, j))?)?;
        }
        for &[v, f] in &self.flipped_features {
            dg = combine(&dg, &PerturbationGraph::element(g, Operation::FlipFeature(v, f))?)?;
        }
        apply(g, &dg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aggregates {
    pub graph_count: usize,
    pub clean_accuracy: f64,
    pub adversarial_accuracy: f64,
    pub attack_success_rate: f64,
}

impl Aggregates {
    pub fn from_records(records: &[AttackRecord]) -> Self {
        let n = records.len();
        let frac = |count: usize| if n == 0 { 0.0 } else { count as f64 / n as f64 };
        Self {
            graph_count: n,
            clean_accuracy: frac(records.iter().filter(|r| r.clean_pred == r.true_label).count()),
            adversarial_accuracy: frac(records.iter().filter(|r| r.adv_pred == r.true_label).count()),
            attack_success_rate: frac(records.iter().filter(|r| r.success).count()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub victim_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_victim_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy_sha256: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    pub config: serde_json::Value,
    pub config_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportHeader {
    pub schema_version: u32,
    pub tool_version: String,
    pub method: String,
    pub framework: PrincipleReport,
    pub goal: AttackGoal,
    pub budget: usize,
    pub split: String,
    pub source_arch: Arch,
    pub target_arch: Arch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackReport {
    pub header: ReportHeader,
    pub provenance: Provenance,
    pub aggregates: Aggregates,
    pub records: Vec<AttackRecord>,
}

impl AttackReport {
    /// Stored aggregates equal the ones recomputed from the records.
    pub fn is_consistent(&self) -> bool {
        self.aggregates == Aggregates::from_records(&self.records)
    }
}

/// Caller-supplied context stored in every report.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunInfo {
    pub split: String,
    pub seeds: BTreeMap<String, u64>,
    pub config: serde_json::Value,
}

impl RunInfo {
    pub fn new(split: impl Into<String>) -> Self {
        Self {
            split: split.into(),
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, name: impl Into<String>, seed: u64) -> Self {
        self.seeds.insert(name.into(), seed);
        self
    }

    pub fn with_config(mut self, config: serde_json::Value) -> Self {
        self.config = config;
        self
    }
}

pub fn config_hash(config: &serde_json::Value) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(config)?))
}

fn edge_pairs(edges: Vec<(usize, usize)>) -> Vec<[usize; 2]> {
    edges.into_iter().map(|(i, j)| [i, j]).collect()
}

fn record_for(
    target: &VictimModel,
    g: &Graph,
    sample: &AdversarialSample,
    goal: AttackGoal,
) -> Result<AttackRecord> {
    let (clean_pred, _) = target.predict(g, None)?;
    let (adv_pred, _) = target.predict(&sample.graph, None)?;
    let added = sample.perturbation.added_edges();
    let removed = sample.perturbation.removed_edges();
    let flipped = sample.perturbation.flipped_features();
    Ok(AttackRecord {
        graph_id: g.id(),
        true_label: g.label(),
        clean_pred,
        adv_pred,
        budget_used: added.len() + removed.len() + flipped.len(),
        added_edges: edge_pairs(added),
        removed_edges: edge_pairs(removed),
        flipped_features: edge_pairs(flipped),
        success: goal.is_success(g.label(), adv_pred),
        clean_objective: attack_objective(target, g, g.label(), goal)?,
        adv_objective: attack_objective(target, &sample.graph, g.label(), goal)?,
        noop_steps: sample.noop_steps,
    })
}

fn build_report(
    attacker: &Attacker,
    source: &VictimModel,
    target: &VictimModel,
    k: usize,
    goal: AttackGoal,
    run: &RunInfo,
    mut records: Vec<AttackRecord>,
) -> Result<AttackReport> {
    records.sort_by_key(|r| r.graph_id);
    let mut seeds = run.seeds.clone();
    if let Some(s) = attacker.seed() {
        seeds.entry("attacker".into()).or_insert(s);
    }
    let victim_sha256 = sha256_hex(&victim_to_bytes(source)?);
    let target_sha256 = sha256_hex(&victim_to_bytes(target)?);
    let strategy_sha256 = match attacker {
        Attacker::Ranking { strategy, .. } => Some(sha256_hex(&strategy_to_bytes(strategy)?)),
        _ => None,
    };
    Ok(AttackReport {
        header: ReportHeader {
            schema_version: REPORT_SCHEMA_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            method: attacker.tag().to_string(),
            framework: framework_checklist(attacker.tag())?,
            goal,
            budget: k,
            split: run.split.clone(),
            source_arch: source.arch(),
            target_arch: target.arch(),
        },
        provenance: Provenance {
            target_victim_sha256: (target_sha256 != victim_sha256).then_some(target_sha256),
            victim_sha256,
            strategy_sha256,
            seeds,
            config_sha256: config_hash(&run.config)?,
            config: run.config.clone(),
        },
        aggregates: Aggregates::from_records(&records),
        records,
    })
}

fn eligible<'g>(graphs: &[&'g Graph], goal: AttackGoal) -> Vec<&'g Graph> {
    graphs.iter().copied().filter(|g| goal.applies_to(g.label())).collect()
}

/// Attacks every eligible graph and records the outcome. Targeted runs skip
/// graphs whose label already equals the target class.
pub fn evaluate_attack(
    victim: &VictimModel,
    attacker: &Attacker,
    graphs: &[&Graph],
    k: usize,
    goal: AttackGoal,
    run: &RunInfo,
) -> Result<AttackReport> {
    cross_model_experiment(victim, victim, attacker, graphs, k, goal, run)
}

/// Generates adversarial samples against `source` and evaluates them on `target`.
pub fn cross_model_experiment(
    source: &VictimModel,
    target: &VictimModel,
    attacker: &Attacker,
    graphs: &[&Graph],
    k: usize,
    goal: AttackGoal,
    run: &RunInfo,
) -> Result<AttackReport> {
    if source.class_count() != target.class_count() {
        return Err(invalid("source and target victims disagree on the class count"));
    }
    let graphs = eligible(graphs, goal);
    let records: Vec<AttackRecord> = graphs
        .par_iter()
        .map(|g| {
            let sample = attack_graph(attacker, source, g, k, goal)?;
            record_for(target, g, &sample, goal)
        })
        .collect::<Result<_>>()?;
    build_report(attacker, source, target, k, goal, run, records)
}

/// Evaluates pre-built adversarial samples (keyed by their clean graph) on `target`.
pub fn evaluate_samples(
    target: &VictimModel,
    pairs: &[(&Graph, &AdversarialSample)],
    goal: AttackGoal,
) -> Result<Vec<AttackRecord>> {
    let mut records: Vec<AttackRecord> = pairs
        .par_iter()
        .filter(|(g, _)| goal.applies_to(g.label()))
        .map(|(g, s)| record_for(target, g, s, goal))
        .collect::<Result<_>>()?;
    records.sort_by_key(|r| r.graph_id);
    Ok(records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSeries {
    pub split: String,
    pub budgets: Vec<usize>,
    pub adversarial_accuracy: Vec<f64>,
    pub non_increasing: bool,
    pub reports: Vec<AttackReport>,
}

impl BudgetSeries {
    fn from_reports(split: &str, reports: Vec<AttackReport>) -> Self {
        let budgets: Vec<usize> = reports.iter().map(|r| r.header.budget).collect();
        let acc: Vec<f64> = reports.iter().map(|r| r.aggregates.adversarial_accuracy).collect();
        Self {
            split: split.to_string(),
            non_increasing: acc.windows(2).all(|w| w[1] <= w[0]),
            budgets,
            adversarial_accuracy: acc,
            reports,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferReport {
    pub seen: BudgetSeries,
    pub unseen: BudgetSeries,
}

/// Projects one trained strategy at every budget on both splits, without retraining.
pub fn transfer_experiment(
    strategy: &ScoringStrategy,
    victim: &VictimModel,
    seen: &[&Graph],
    unseen: &[&Graph],
    budgets: &[usize],
    goal: AttackGoal,
    run: &RunInfo,
) -> Result<TransferReport> {
    if strategy.embed_dim() != victim.embed_dim() {
        return Err(invalid(format!(
            "strategy expects {}-dimensional embeddings, victim produces {}",
            strategy.embed_dim(),
            victim.embed_dim()
        )));
    }
    let attacker = Attacker::Ranking {
        strategy,
        embedder: victim,
    };
    let series = |name: &str, graphs: &[&Graph]| -> Result<BudgetSeries> {
        let info = RunInfo {
            split: name.to_string(),
            ..run.clone()
        };
        let reports = budgets
            .iter()
            .map(|&k| evaluate_attack(victim, &attacker, graphs, k, goal, &info))
            .collect::<Result<Vec<_>>>()?;
        Ok(BudgetSeries::from_reports(name, reports))
    };
    Ok(TransferReport {
        seen: series("seen", seen)?,
        unseen: series("unseen", unseen)?,
    })
}

/// Splits `ids` into halves with a seeded shuffle; both halves come back sorted.
pub fn seen_unseen_split(ids: &[GraphId], seed: u64) -> (Vec<GraphId>, Vec<GraphId>) {
    let mut shuffled = ids.to_vec();
    shuffled.sort_unstable();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let half = shuffled.len().div_ceil(2);
    let mut seen = shuffled[..half].to_vec();
    let mut unseen = shuffled[half..].to_vec();
    seen.sort_unstable();
    unseen.sort_unstable();
    (seen, unseen)
}

/// Adjacency of `g` with every off-diagonal pair kept with probability `beta`
/// and flipped otherwise.
pub fn flip_adjacency(g: &Graph, beta: f64, rng: &mut impl Rng) -> Tensor2 {
    let n = g.node_count();
    let mut a = g.adjacency_tensor();
    for i in 0..n {
        for j in i + 1..n {
            if !rng.random_bool(beta) {
                let v = 1.0 - a[(i, j)];
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
    }
    a
}

/// Majority vote of `victim` over `d` randomly edge-flipped copies of `g`
/// (lowest class wins ties), with the vote histogram.
pub fn smoothed_predict(victim: &VictimModel, g: &Graph, beta: f64, d: usize, seed: u64) -> Result<(usize, Vec<usize>)> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(invalid(format!("keep probability {beta} outside (0, 1]")));
    }
    if d == 0 {
        return Err(invalid("sample count must be positive"));
    }
    let votes: Vec<usize> = (0..d)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let a = flip_adjacency(g, beta, &mut rng);
            Ok(victim.predict(g, Some(&a))?.0)
        })
        .collect::<Result<_>>()?;
    let mut hist = vec![0usize; victim.class_count()];
    for v in votes {
        hist[v] += 1;
    }
    let counts: Vec<f64> = hist.iter().map(|&c| c as f64).collect();
    Ok((argmax_lowest(&counts), hist))
}

/// Accuracy of the smoothed classifier on `graphs`.
pub fn smoothed_accuracy(victim: &VictimModel, graphs: &[&Graph], beta: f64, d: usize, seed: u64) -> Result<f64> {
    if graphs.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for g in graphs {
        let seed = graph_seed(seed, g.source().unwrap_or(g.id()));
        if smoothed_predict(victim, g, beta, d, seed)?.0 == g.label() {
            correct += 1;
        }
    }
    Ok(correct as f64 / graphs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::victim::VictimConfig;

    fn path(id: u64, n: usize, label: usize) -> Graph {
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::new(GraphId(id), n, &edges, Tensor2::filled(n, 2, 0.5), label).unwrap()
    }

    fn victim() -> VictimModel {
        let mut v = VictimModel::new(VictimConfig::new(Arch::Gcn, 2, 2), 2).unwrap();
        v.mark_trained();
        v
    }

    #[test]
    fn checklist_rows() {
        let row = |m| {
            let r = framework_checklist(m).unwrap();
            (r.benefit_decomposition, r.baseline_graph, r.operation_ranking)
        };
        assert_eq!(row("random"), (false, true, false));
        assert_eq!(row("gradargmax"), (false, false, false));
        assert_eq!(row("projective_ranking"), (true, true, true));
        assert_eq!(row("oracle"), (true, true, false));
        assert!(framework_checklist("rl-s2v").is_err());
    }

    #[test]
    fn zero_budget_keeps_clean_accuracy() {
        let v = victim();
        let graphs: Vec<Graph> = (0..6).map(|i| path(i, 4 + i as usize, (i % 2) as usize)).collect();
        let refs: Vec<&Graph> = graphs.iter().collect();
        let attacker = Attacker::Random {
            seed: 1,
            allowed: AllowedOps::ADD_ONLY,
        };
        let r = evaluate_attack(&v, &attacker, &refs, 0, AttackGoal::Untargeted, &RunInfo::new("test")).unwrap();
        assert_eq!(r.aggregates.clean_accuracy, r.aggregates.adversarial_accuracy);
        assert!(r.is_consistent());
        assert_eq!(r.header.framework.method, "random");
    }

    #[test]
    fn targeted_runs_skip_graphs_already_in_the_target_class() {
        let v = victim();
        let graphs = [path(0, 4, 0), path(1, 5, 1), path(2, 6, 1)];
        let refs: Vec<&Graph> = graphs.iter().collect();
        let attacker = Attacker::Random {
            seed: 0,
            allowed: AllowedOps::ADD_ONLY,
        };
        let r = evaluate_attack(&v, &attacker, &refs, 1, AttackGoal::Targeted(1), &RunInfo::new("t")).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.records[0].graph_id, GraphId(0));
        assert_eq!(r.records[0].success, r.records[0].adv_pred == 1);
    }

    #[test]
    fn smoothing_without_noise_is_the_base_classifier() {
        let v = victim();
        let g = path(0, 6, 0);
        let (class, hist) = smoothed_predict(&v, &g, 1.0, 25, 3).unwrap();
        assert_eq!(class, v.predict(&g, None).unwrap().0);
        assert_eq!(hist.iter().sum::<usize>(), 25);
        assert_eq!(hist[class], 25);
        assert!(smoothed_predict(&v, &g, 0.0, 5, 0).is_err());
        assert!(smoothed_predict(&v, &g, 0.5, 0, 0).is_err());
    }

    #[test]
    fn smoothing_is_deterministic() {
        let v = victim();
        let g = path(0, 6, 0);
        assert_eq!(
            smoothed_predict(&v, &g, 0.7, 50, 9).unwrap(),
            smoothed_predict(&v, &g, 0.7, 50, 9).unwrap()
        );
    }

    #[test]
    fn seen_unseen_halves_partition_the_ids() {
        let ids: Vec<GraphId> = (0..11).map(GraphId).collect();
        let (a, b) = seen_unseen_split(&ids, 4);
        assert_eq!(a.len(), 6);
        assert_eq!(b.len(), 5);
        let mut all = [a.clone(), b].concat();
        all.sort_unstable();
        assert_eq!(all, ids);
        assert_eq!(seen_unseen_split(&ids, 4).0, a);
    }
}
