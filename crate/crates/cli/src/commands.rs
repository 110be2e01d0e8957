use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use projrank::io::{
    export_dot, ingest_tu_dataset, load_json, load_strategy, load_victim, save_json, save_strategy, save_victim,
    write_atomic, RunMeta, TuOptions,
};
use projrank::{
    cross_model_experiment, generate_ba2motifs, seen_unseen_split, smoothed_accuracy, split_dataset, train_strategy,
    transfer_experiment, Arch, AttackGoal, AttackReport, Attacker, Dataset, Graph, GraphId, RunInfo, SplitPart,
    StrategyConfig, TrainConfig, TransferReport, VictimConfig, VictimModel,
};
use projrank::perturb::AllowedOps;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{required, resolve, seeds_of, Resolved};
use crate::error::CliError;

/// Flags shared by every subcommand.
pub struct Common<'a> {
    pub config: Option<&'a Path>,
    pub force: bool,
}

fn meta(command: &str, config: &Value) -> Result<RunMeta, CliError> {
    Ok(RunMeta::new(command, config.clone(), seeds_of(config))?)
}

fn run_info(split: &str, config: &Value) -> RunInfo {
    let mut run = RunInfo::new(split).with_config(config.clone());
    for (name, seed) in seeds_of(config) {
        run = run.with_seed(name, seed);
    }
    run
}

/// Prints one JSON summary line on stdout.
fn summary(value: Value) {
    println!("{value}");
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub meta: RunMeta,
    pub dataset: Dataset,
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    Ok(load_json::<DatasetFile>(path)?.dataset)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Ba2motifs,
    Tu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchArg {
    Gcn,
    Gat,
}

impl From<ArchArg> for Arch {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Gcn => Arch::Gcn,
            ArchArg::Gat => Arch::Gat,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Victim,
    Strategy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackerKind {
    Ranking,
    Random,
    Gradargmax,
    Oracle,
}

/// Which graphs of a dataset a command works on. `seen` and `unseen` are the
/// two halves of the test split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitArg {
    Train,
    Val,
    Test,
    Seen,
    Unseen,
    All,
}

impl SplitArg {
    fn name(self) -> &'static str {
        match self {
            SplitArg::Train => "train",
            SplitArg::Val => "val",
            SplitArg::Test => "test",
            SplitArg::Seen => "seen",
            SplitArg::Unseen => "unseen",
            SplitArg::All => "all",
        }
    }
}

fn select(ds: &Dataset, split: SplitArg, split_seed: u64) -> Vec<&Graph> {
    match split {
        SplitArg::Train => ds.part(SplitPart::Train),
        SplitArg::Val => ds.part(SplitPart::Val),
        SplitArg::Test => ds.part(SplitPart::Test),
        SplitArg::All => ds.graphs().iter().collect(),
        SplitArg::Seen | SplitArg::Unseen => {
            let (seen, unseen) = seen_unseen_split(ds.split().part(SplitPart::Test), split_seed);
            ds.select(if split == SplitArg::Seen { &seen } else { &unseen })
        }
    }
}

fn goal_of(target: Option<usize>) -> AttackGoal {
    target.map_or(AttackGoal::Untargeted, AttackGoal::Targeted)
}

#[derive(Args, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct GenDataArgs {
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetKind>,
    /// Number of synthetic graphs.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory holding the TU text files.
    #[arg(long)]
    pub tu_dir: Option<PathBuf>,
    /// TU dataset name, the prefix of its files.
    #[arg(long)]
    pub tu_name: Option<String>,
    /// Keep only TU graphs with fewer nodes than this.
    #[arg(long)]
    pub max_nodes: Option<usize>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub val_frac: Option<f64>,
    #[arg(long)]
    pub test_frac: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn gen_data(flags: &GenDataArgs, common: &Common) -> Result<(), CliError> {
    let Resolved { settings: a, config } = resolve(flags, common.config, |_| {
        json!({ "dataset": "ba2motifs", "count": 1000, "seed": 0, "train-frac": 0.8, "val-frac": 0.1,
                "test-frac": 0.1, "split-seed": 0 })
    })?;
    let out = required(&a.out, "out")?;
    let ds = match required(&a.dataset, "dataset")? {
        DatasetKind::Ba2motifs => generate_ba2motifs(required(&a.count, "count")?, required(&a.seed, "seed")?)?,
        DatasetKind::Tu => {
            let dir = required(&a.tu_dir, "tu-dir")?;
            let name = required(&a.tu_name, "tu-name")?;
            let import = ingest_tu_dataset(&dir, &name, TuOptions { max_nodes_exclusive: a.max_nodes })?;
            if import.self_loops_dropped > 0 {
                eprintln!("warning: dropped {} self loops", import.self_loops_dropped);
            }
            import.dataset
        }
    };
    let fractions = (
        required(&a.train_frac, "train-frac")?,
        required(&a.val_frac, "val-frac")?,
        required(&a.test_frac, "test-frac")?,
    );
    let ds = split_dataset(ds, fractions, required(&a.split_seed, "split-seed")?)?;
    let (train, val, test) = ds.split().sizes();
    let file = DatasetFile { meta: meta("gen-data", &config)?, dataset: ds };
    save_json(&file, &out, common.force)?;
    summary(json!({ "out": out, "graphs": file.dataset.len(), "train": train, "val": val, "test": test }));
    Ok(())
}

#[derive(Args, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainArgs {
    /// What to train: a victim classifier or an attack strategy against one.
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub arch: Option<ArchArg>,
    /// Victim checkpoint attacked while training a strategy.
    #[arg(long)]
    pub victim: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Graphs the strategy trains on.
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Target class; untargeted when absent.
    #[arg(long)]
    pub target: Option<usize>,
    /// Budget of the per-epoch success-rate evaluation.
    #[arg(long)]
    pub eval_budget: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn train(flags: &TrainArgs, common: &Common) -> Result<(), CliError> {
    let Resolved { settings: a, config } = resolve(flags, common.config, |user| {
        if user.get("model").and_then(Value::as_str) == Some("strategy") {
            let d = StrategyConfig::default();
            json!({ "seed": d.seed, "epochs": d.epochs, "lr": d.lr, "patience": d.patience, "split": "seen",
                    "split-seed": 0, "eval-budget": d.eval_budget })
        } else {
            let d = TrainConfig::default();
            json!({ "arch": "gcn", "seed": d.seed, "epochs": d.epochs, "lr": d.lr, "patience": d.patience,
                    "batch-size": d.batch_size })
        }
    })?;
    let out = required(&a.out, "out")?;
    let ds = load_dataset(&required(&a.dataset, "dataset")?)?;
    let run_meta = meta("train", &config)?;
    match required(&a.model, "model")? {
        ModelKind::Victim => {
            let arch: Arch = required(&a.arch, "arch")?.into();
            let seed = required(&a.seed, "seed")?;
            let mut victim = VictimModel::new(VictimConfig::new(arch, ds.feature_dim(), ds.class_count()), seed)?;
            let cfg = TrainConfig {
                epochs: required(&a.epochs, "epochs")?,
                lr: required(&a.lr, "lr")?,
                seed,
                patience: required(&a.patience, "patience")?,
                batch_size: required(&a.batch_size, "batch-size")?,
                ..TrainConfig::default()
            };
            let log = victim.train(&ds, &cfg)?;
            let test_accuracy = victim.accuracy(&ds.part(SplitPart::Test))?;
            save_victim(&victim, Some(&run_meta), &out, common.force)?;
            summary(json!({ "out": out, "best_epoch": log.best_epoch, "val_accuracy": log.best_val_accuracy,
                            "test_accuracy": test_accuracy }));
        }
        ModelKind::Strategy => {
            let victim = load_victim(&required(&a.victim, "victim")?)?;
            let graphs = select(&ds, required(&a.split, "split")?, required(&a.split_seed, "split-seed")?);
            let cfg = StrategyConfig {
                epochs: required(&a.epochs, "epochs")?,
                lr: required(&a.lr, "lr")?,
                seed: required(&a.seed, "seed")?,
                patience: required(&a.patience, "patience")?,
                eval_budget: required(&a.eval_budget, "eval-budget")?,
            };
            let (strategy, log) = train_strategy(&victim, &graphs, goal_of(a.target), &cfg)?;
            save_strategy(&strategy, Some(&run_meta), &out, common.force)?;
            summary(json!({ "out": out, "best_epoch": log.best_epoch, "success_rate": log.best_asr }));
        }
    }
    Ok(())
}

#[derive(Args, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct AttackArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub victim: Option<PathBuf>,
    /// Evaluate the samples on this victim instead of the attacked one.
    #[arg(long)]
    pub target_victim: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub attacker: Option<AttackerKind>,
    /// Strategy checkpoint for the ranking attacker.
    #[arg(long)]
    pub strategy: Option<PathBuf>,
    /// Perturbation budget.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Seed of the random attacker.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Let the baselines remove edges as well as add them.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub allow_remove: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn attack(flags: &AttackArgs, common: &Common) -> Result<(), CliError> {
    let Resolved { settings: a, config } = resolve(flags, common.config, |_| {
        json!({ "attacker": "ranking", "k": 1, "split": "test", "split-seed": 0, "seed": 0, "allow-remove": false })
    })?;
    let out = required(&a.out, "out")?;
    let ds = load_dataset(&required(&a.dataset, "dataset")?)?;
    let victim = load_victim(&required(&a.victim, "victim")?)?;
    let target_victim = a.target_victim.as_deref().map(load_victim).transpose()?;
    let split = required(&a.split, "split")?;
    let graphs = select(&ds, split, required(&a.split_seed, "split-seed")?);
    let allowed = AllowedOps { remove_edge: required(&a.allow_remove, "allow-remove")?, ..AllowedOps::ADD_ONLY };
    let strategy = match a.attacker {
        Some(AttackerKind::Ranking) => Some(load_strategy(&required(&a.strategy, "strategy")?)?),
        _ => None,
    };
    let attacker = match required(&a.attacker, "attacker")? {
        AttackerKind::Ranking => Attacker::Ranking { strategy: strategy.as_ref().expect("loaded above"), embedder: &victim },
        AttackerKind::Random => Attacker::Random { seed: required(&a.seed, "seed")?, allowed },
        AttackerKind::Gradargmax => Attacker::GradArgmax { allow_add: true, allow_remove: allowed.remove_edge },
        AttackerKind::Oracle => Attacker::Oracle { allowed },
    };
    let report = cross_model_experiment(
        &victim,
        target_victim.as_ref().unwrap_or(&victim),
        &attacker,
        &graphs,
        required(&a.k, "k")?,
        goal_of(a.target),
        &run_info(split.name(), &config),
    )?;
    save_json(&report, &out, common.force)?;
    summary(json!({ "out": out, "aggregates": report.aggregates }));
    Ok(())
}

#[derive(Args, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvalArgs {
    /// Report files, or directories whose `*.json` files are all reports.
    #[arg(long, num_args = 1..)]
    pub reports: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRow {
    pub file: PathBuf,
    pub method: String,
    pub budget: usize,
    pub split: String,
    pub graph_count: usize,
    pub clean_accuracy: f64,
    pub adversarial_accuracy: f64,
    pub attack_success_rate: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalFile {
    pub meta: RunMeta,
    pub rows: Vec<EvalRow>,
}

fn report_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)?
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<_, _>>()?;
            found.retain(|p| p.extension().is_some_and(|e| e == "json"));
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    Ok(files)
}

pub fn eval(flags: &EvalArgs, common: &Common) -> Result<(), CliError> {
    let Resolved { settings: a, config } = resolve(flags, common.config, |_| json!({}))?;
    let files = report_files(&required(&a.reports, "reports")?)?;
    let mut rows = Vec::with_capacity(files.len());
    for file in files {
        let report: AttackReport = load_json(&file)?;
        if !report.is_consistent() {
            return Err(projrank::Error::Precondition(format!(
                "{}: stored aggregates differ from the per-graph records",
                file.display()
            ))
            .into());
        }
        let ag = &report.aggregates;
        rows.push(EvalRow {
            method: report.header.method.clone(),
            budget: report.header.budget,
            split: report.header.split.clone(),
            graph_count: ag.graph_count,
            clean_accuracy: ag.clean_accuracy,
            adversarial_accuracy: ag.adversarial_accuracy,
            attack_success_rate: ag.attack_success_rate,
            file,
        });
    }
    println!("{:<20} {:>3} {:<8} {:>6} {:>7} {:>7} {:>7}", "method", "k", "split", "graphs", "clean", "adv", "asr");
    for r in &rows {
        println!(
            "{:<20} {:>3} {:<8} {:>6} {:>7.4} {:>7.4} {:>7.4}",
            r.method, r.budget, r.split, r.graph_count, r.clean_accuracy, r.adversarial_accuracy, r.attack_success_rate
        );
    }
    if let Some(out) = &a.out {
        save_json(&EvalFile { meta: meta("eval", &config)?, rows }, out, common.force)?;
    }
    Ok(())
}

#[derive(Args, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TransferArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub victim: Option<PathBuf>,
    #[arg(long)]
    pub strategy: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<usize>>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferFile {
    pub meta: RunMeta,
    pub transfer: TransferReport,
}

pub fn transfer(flags: &TransferArgs, common: &Common) -> Result<(), CliError> {
    let Resolved { settings: a, config } =
        resolve(flags, common.config, |_| json!({ "budgets": [1, 2, 3], "split-seed": 0 }))?;
    let out = required(&a.out, "out")?;
    let ds = load_dataset(&required(&a.dataset, "dataset")?)?;
    let victim = load_victim(&required(&a.victim, "victim")?)?;
    let strategy = load_strategy(&required(&a.strategy, "strategy")?)?;
    let split_seed = required(&a.split_seed, "split-seed")?;
    let seen = select(&ds, SplitArg::Seen, split_seed);
    let unseen = select(&ds, SplitArg::Unseen, split_seed);
    let budgets = required(&a.budgets, "budgets")?;
    let report =
        transfer_experiment(&strategy, &victim, &seen, &unseen, &budgets, goal_of(a.target), &run_info("seen", &config))?;
    let file = TransferFile { meta: meta("transfer", &config)?, transfer: report };
    save_json(&file, &out, common.force)?;
    let t = &file.transfer;
    summary(json!({ "out": out, "budgets": budgets, "seen": t.seen.adversarial_accuracy,
                    "unseen": t.unseen.adversarial_accuracy }));
    Ok(())
}

#[derive(Args, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SmoothEvalArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub victim: Option<PathBuf>,
    /// Keep probability of each adjacency entry.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Noisy copies per graph.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Attack report whose adversarial samples are evaluated as well.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Accuracies {
    pub vanilla: f64,
    pub smoothed: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothFile {
    pub meta: RunMeta,
    pub graph_count: usize,
    pub clean: Accuracies,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversarial: Option<Accuracies>,
}

pub fn smooth_eval(flags: &SmoothEvalArgs, common: &Common) -> Result<(), CliError> {
    let Resolved { settings: a, config } = resolve(flags, common.config, |_| {
        json!({ "beta": 0.7, "samples": 1000, "seed": 0, "split": "test", "split-seed": 0 })
    })?;
    let out = required(&a.out, "out")?;
    let ds = load_dataset(&required(&a.dataset, "dataset")?)?;
    let victim = load_victim(&required(&a.victim, "victim")?)?;
    let graphs = select(&ds, required(&a.split, "split")?, required(&a.split_seed, "split-seed")?);
    let (beta, d, seed) = (required(&a.beta, "beta")?, required(&a.samples, "samples")?, required(&a.seed, "seed")?);
    let measure = |graphs: &[&Graph]| -> Result<Accuracies, CliError> {
        Ok(Accuracies { vanilla: victim.accuracy(graphs)?, smoothed: smoothed_accuracy(&victim, graphs, beta, d, seed)? })
    };
    let clean = measure(&graphs)?;
    let adversarial = match &a.report {
        Some(path) => {
            let report: AttackReport = load_json(path)?;
            let samples = adversarial_samples(&ds, &report)?;
            let refs: Vec<&Graph> = samples.iter().collect();
            Some(measure(&refs)?)
        }
        None => None,
    };
    let file = SmoothFile { meta: meta("smooth-eval", &config)?, graph_count: graphs.len(), clean, adversarial };
    save_json(&file, &out, common.force)?;
    summary(json!({ "out": out, "clean": file.clean, "adversarial": file.adversarial }));
    Ok(())
}

fn adversarial_samples(ds: &Dataset, report: &AttackReport) -> Result<Vec<Graph>, CliError> {
    report
        .records
        .iter()
        .map(|r| {
            let g = ds
                .get(r.graph_id)
                .ok_or_else(|| projrank::Error::InvalidArgument(format!("report names {}, absent from the dataset", r.graph_id)))?;
            Ok(r.adversarial_graph(g)?)
        })
        .collect()
}

#[derive(Args, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExportArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Graph ids to export; every record when absent.
    #[arg(long, value_delimiter = ',')]
    pub graphs: Option<Vec<u64>>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn export(flags: &ExportArgs, common: &Common) -> Result<(), CliError> {
    let Resolved { settings: a, config } = resolve(flags, common.config, |_| json!({}))?;
    let out_dir = required(&a.out_dir, "out-dir")?;
    let ds = load_dataset(&required(&a.dataset, "dataset")?)?;
    let report: AttackReport = load_json(&required(&a.report, "report")?)?;
    let wanted: Option<Vec<GraphId>> = a.graphs.map(|ids| ids.into_iter().map(GraphId).collect());
    let run_meta = meta("export", &config)?;
    let header = format!(
        "/* tool_version {} config_sha256 {} seeds {} */\n",
        run_meta.tool_version,
        run_meta.config_sha256,
        serde_json::to_string(&run_meta.seeds).map_err(projrank::Error::from)?
    );
    fs::create_dir_all(&out_dir)?;
    let mut written = Vec::new();
    for r in &report.records {
        if wanted.as_ref().is_some_and(|w| !w.contains(&r.graph_id)) {
            continue;
        }
        let g = ds
            .get(r.graph_id)
            .ok_or_else(|| projrank::Error::InvalidArgument(format!("report names {}, absent from the dataset", r.graph_id)))?;
        if !r.removed_edges.is_empty() || !r.flipped_features.is_empty() {
            return Err(projrank::Error::InvalidArgument(format!("{}: only added edges can be drawn", r.graph_id)).into());
        }
        let added: Vec<(usize, usize)> = r.added_edges.iter().map(|&[i, j]| (i, j)).collect();
        let dot = export_dot(g, &added, None)?;
        let path = out_dir.join(format!("{}.dot", r.graph_id));
        write_atomic(&path, format!("{header}{dot}").as_bytes(), common.force)?;
        written.push(path);
    }
    if let Some(w) = &wanted {
        if written.len() != w.len() {
            return Err(projrank::Error::InvalidArgument("some requested graphs are not in the report".into()).into());
        }
    }
    summary(json!({ "out_dir": out_dir, "files": written.len() }));
    Ok(())
}
