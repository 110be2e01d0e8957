//! Graph-classification victims, the perturbation-space algebra and
//! projective-ranking evasion attacks with baselines and evaluation tooling.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod nn;
pub mod perturb;
pub mod ranking;
pub mod victim;

pub use error::{Error, Result};
pub use graph::{candidate_add_edges, generate_ba2motifs, split_dataset, Dataset, Graph, GraphId, Split, SplitPart};
pub use nn::{AdamConfig, ParamStore, Tape, Tensor2, Var};
pub use perturb::{
    apply, combine, enumerate_space, hadamard, project_topk, similarity_check, size_of, AllowedOps, BudgetedSpace,
    Operation, PerturbationGraph, TopK,
};
pub use victim::{Arch, NodeEmbeddings, TrainConfig, TrainLog, VictimConfig, VictimModel};
pub use ranking::{
    attack_loss, entropy, generate_adversarial, train_strategy, AttackGoal, RelaxedPerturbation, ScoringStrategy,
    StrategyConfig, StrategyLog,
};
pub use baselines::{gradargmax_attack, oracle_attack, random_attack, GradDiagnostics};
pub use eval::{
    attack_graph, cross_model_experiment, evaluate_attack, evaluate_samples, framework_checklist, seen_unseen_split,
    smoothed_accuracy, smoothed_predict, transfer_experiment, AdversarialSample, AttackRecord, AttackReport, Attacker,
    BudgetSeries, RunInfo, TransferReport,
};
