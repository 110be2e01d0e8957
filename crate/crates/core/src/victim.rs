//! GCN and GAT graph classifiers.
//!
//! Three message-passing layers of width 20 produce node embeddings, the
//! readout concatenates max- and sum-pooling, and a linear head yields class
//! logits. Every forward pass can take a real-valued symmetric adjacency in
//! place of the graph's own: entries act as per-edge message coefficients,
//! which is what gradient attacks differentiate and what relaxed
//! perturbations feed in.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::{Dataset, Graph, GraphId, SplitPart};
use crate::nn::{AdamConfig, ParamStore, Tape, Tensor2, Var};

pub const HIDDEN_DIM: usize = 20;
pub const LAYER_COUNT: usize = 3;
pub const GAT_NEGATIVE_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Gcn,
    Gat,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Gcn => "gcn",
            Arch::Gat => "gat",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Arch::Gcn),
            "gat" => Ok(Arch::Gat),
            other => Err(invalid(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VictimConfig {
    pub arch: Arch,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub layer_count: usize,
    pub class_count: usize,
}

impl VictimConfig {
    pub fn new(arch: Arch, feature_dim: usize, class_count: usize) -> Self {
        Self {
            arch,
            feature_dim,
            hidden_dim: HIDDEN_DIM,
            layer_count: LAYER_COUNT,
            class_count,
        }
    }
}

/// Final-layer node representations of one graph (`n x hidden_dim`).
#[derive(Clone, Debug, PartialEq)]
pub struct NodeEmbeddings(pub Tensor2);

impl NodeEmbeddings {
    pub fn node_count(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub proba: Vec<f64>,
    pub embeddings: NodeEmbeddings,
}

/// Variables produced by building the network on a tape.
#[derive(Clone, Debug)]
pub struct TapeForward {
    pub logits: Var,
    pub embeddings: Var,
    /// Per layer (convolutions, then the head), the output before its bias.
    pub pre_bias: Vec<Var>,
    /// GAT only: per convolution, the attention logits before the LeakyReLU.
    pub attention_logits: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VictimModel {
    config: VictimConfig,
    params: ParamStore,
    trained: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub patience: usize,
    pub batch_size: usize,
    /// Under-sample every class down to the smallest one in the training split.
    pub balance_classes: bool,
    /// Run [`VictimModel::data_dependent_init`] on the training graphs first.
    pub data_init: bool,
    pub init_jitter: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 0.01,
            seed: 0,
            patience: 50,
            batch_size: 32,
            balance_classes: false,
            data_init: true,
            init_jitter: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

impl VictimModel {
    pub fn new(config: VictimConfig, seed: u64) -> Result<Self> {
        if config.feature_dim == 0 || config.hidden_dim == 0 || config.layer_count == 0 || config.class_count == 0 {
            return Err(invalid("victim dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let h = config.hidden_dim;
        for layer in 0..config.layer_count {
            let fan_in = if layer == 0 { config.feature_dim } else { h };
            params.insert(format!("conv{layer}.weight"), Tensor2::glorot(fan_in, h, &mut rng));
            params.insert(format!("conv{layer}.bias"), Tensor2::zeros(1, h));
            if config.arch == Arch::Gat {
                params.insert(format!("conv{layer}.att_src"), Tensor2::glorot(h, 1, &mut rng));
                params.insert(format!("conv{layer}.att_dst"), Tensor2::glorot(h, 1, &mut rng));
            }
        }
        params.insert("head.weight", Tensor2::glorot(2 * h, config.class_count, &mut rng));
        params.insert("head.bias", Tensor2::zeros(1, config.class_count));
        Ok(Self {
            config,
            params,
            trained: false,
        })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_parts(config: VictimConfig, params: ParamStore, trained: bool) -> Result<Self> {
        let template = Self::new(config, 0)?;
        if template.params.names() != params.names() {
            return Err(invalid("parameter names do not match the architecture"));
        }
        for (a, b) in template.params.values().iter().zip(params.values()) {
            if a.shape() != b.shape() {
                return Err(invalid("parameter shapes do not match the architecture"));
            }
        }
        Ok(Self {
            config,
            params,
            trained,
        })
    }

    pub fn config(&self) -> &VictimConfig {
        &self.config
    }

    pub fn arch(&self) -> Arch {
        self.config.arch
    }

    pub fn class_count(&self) -> usize {
        self.config.class_count
    }

    pub fn embed_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    fn check_graph(&self, g: &Graph) -> Result<()> {
        if g.feature_dim() != self.config.feature_dim {
            return Err(invalid(format!(
                "graph has {} features, model expects {}",
                g.feature_dim(),
                self.config.feature_dim
            )));
        }
        Ok(())
    }

    fn check_override(g: &Graph, adj: &Tensor2) -> Result<()> {
        let n = g.node_count();
        if adj.shape() != (n, n) {
            return Err(invalid(format!(
                "adjacency override is {}x{}, graph has {n} nodes",
                adj.rows(),
                adj.cols()
            )));
        }
        if !adj.is_symmetric(1e-12) {
            return Err(invalid("adjacency override must be symmetric"));
        }
        Ok(())
    }

    /// Builds the network on `tape` with the effective adjacency `adj`.
    /// `param_vars` must come from binding this model's parameters.
    pub fn build_on_tape(&self, tape: &mut Tape, param_vars: &[Var], g: &Graph, adj: Var) -> Result<TapeForward> {
        self.check_graph(g)?;
        Self::check_override(g, tape.value(adj))?;
        let n = g.node_count();
        let mut h = tape.constant(g.features().clone());
        let mut p = param_vars.iter().copied();
        let mut next = || p.next().ok_or_else(|| invalid("too few parameter variables"));
        let mut pre_bias = Vec::with_capacity(self.config.layer_count + 1);
        let mut attention_logits = Vec::new();

        match self.config.arch {
            Arch::Gcn => {
                let norm = tape.gcn_normalize(adj)?;
                for _ in 0..self.config.layer_count {
                    let (w, b) = (next()?, next()?);
                    let hw = tape.matmul(h, w)?;
                    let agg = tape.matmul(norm, hw)?;
                    let biased = tape.add_bias(agg, b)?;
                    pre_bias.push(agg);
                    h = tape.relu(biased)?;
                }
            }
            Arch::Gat => {
                // Attention runs over the support of the effective adjacency plus
                // self loops. Off-support coefficients are treated as absent, so
                // they receive no gradient.
                let a = tape.value(adj);
                let mask = Tensor2::from_fn(n, n, |i, j| if i == j || a[(i, j)] > 0.0 { 1.0 } else { 0.0 });
                let off_mask = Tensor2::from_fn(n, n, |i, j| if i != j && a[(i, j)] > 0.0 { 1.0 } else { 0.0 });
                let masked = tape.mul_const(adj, off_mask)?;
                let eye = tape.constant(Tensor2::identity(n));
                let coeff = tape.add(masked, eye)?;
                // Attention weights are rescaled by the coefficient mass of each
                // neighbourhood so aggregation stays sensitive to degree.
                let mass = tape.row_sums(coeff)?;
                for _ in 0..self.config.layer_count {
                    let (w, b, att_src, att_dst) = (next()?, next()?, next()?, next()?);
                    let hw = tape.matmul(h, w)?;
                    let s = tape.matmul(hw, att_dst)?;
                    let t = tape.matmul(hw, att_src)?;
                    let e = tape.outer_sum(s, t)?;
                    attention_logits.push(e);
                    let e = tape.leaky_relu(e, GAT_NEGATIVE_SLOPE)?;
                    let alpha = tape.masked_softmax_rows(e, &mask)?;
                    let weighted = tape.mul(coeff, alpha)?;
                    let weighted = tape.scale_rows(weighted, mass)?;
                    let agg = tape.matmul(weighted, hw)?;
                    let biased = tape.add_bias(agg, b)?;
                    pre_bias.push(agg);
                    h = tape.relu(biased)?;
                }
            }
        }
        let max_pool = tape.row_max_pool(h)?;
        let sum_pool = tape.row_sum_pool(h)?;
        let pooled = tape.concat_cols(max_pool, sum_pool)?;
        let (w, b) = (next()?, next()?);
        let logits_raw = tape.matmul(pooled, w)?;
        let logits = tape.add_bias(logits_raw, b)?;
        pre_bias.push(logits_raw);
        Ok(TapeForward {
            logits,
            embeddings: h,
            pre_bias,
            attention_logits,
        })
    }

    pub fn forward(&self, g: &Graph, adjacency_override: Option<&Tensor2>) -> Result<ForwardOutput> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let adj = tape.constant(match adjacency_override {
            Some(a) => a.clone(),
            None => g.adjacency_tensor(),
        });
        let out = self.build_on_tape(&mut tape, &vars, g, adj)?;
        let logits = tape.value(out.logits).row(0).to_vec();
        Ok(ForwardOutput {
            proba: softmax(&logits),
            logits,
            embeddings: NodeEmbeddings(tape.value(out.embeddings).clone()),
        })
    }

    pub fn predict_proba(&self, g: &Graph) -> Result<Vec<f64>> {
        Ok(self.forward(g, None)?.proba)
    }

    /// Argmax class (lowest index on ties) and the class distribution.
    pub fn predict(&self, g: &Graph, adjacency_override: Option<&Tensor2>) -> Result<(usize, Vec<f64>)> {
        let out = self.forward(g, adjacency_override)?;
        Ok((argmax_lowest(&out.proba), out.proba))
    }

    /// Cross-entropy against `target` and its gradient for every parameter.
    pub fn loss_and_grads(&self, g: &Graph, target: usize) -> Result<(f64, Vec<Tensor2>)> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, true);
        let adj = tape.constant(g.adjacency_tensor());
        let out = self.build_on_tape(&mut tape, &vars, g, adj)?;
        let loss = tape.cross_entropy(out.logits, target)?;
        let grads = tape.backward(loss)?;
        let per_param = vars
            .iter()
            .zip(self.params.values())
            .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
            .collect();
        Ok((tape.value(loss)[(0, 0)], per_param))
    }

    /// Cross-entropy against `target` at adjacency `adj`, and `dL/dA` as an
    /// ordered (not symmetrised) `n x n` matrix.
    pub fn adjacency_gradient(&self, g: &Graph, adj: &Tensor2, target: usize) -> Result<(f64, Tensor2)> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let a = tape.param(adj.clone());
        let out = self.build_on_tape(&mut tape, &vars, g, a)?;
        let loss = tape.cross_entropy(out.logits, target)?;
        let grads = tape.backward(loss)?;
        let n = g.node_count();
        Ok((tape.value(loss)[(0, 0)], grads.get_or_zeros(a, (n, n))))
    }

    pub fn node_embeddings(&self, g: &Graph) -> Result<NodeEmbeddings> {
        Ok(self.forward(g, None)?.embeddings)
    }

    /// Final-layer embeddings for every graph in the dataset.
    pub fn node_embed(&self, ds: &Dataset) -> Result<BTreeMap<GraphId, NodeEmbeddings>> {
        ds.graphs()
            .par_iter()
            .map(|g| Ok((g.id(), self.node_embeddings(g)?)))
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().collect())
    }

    /// Fraction of `graphs` whose prediction matches their label, and their mean loss.
    pub fn evaluate(&self, graphs: &[&Graph]) -> Result<(f64, f64)> {
        if graphs.is_empty() {
            return Ok((0.0, 0.0));
        }
        let outcomes: Vec<(bool, f64)> = graphs
            .par_iter()
            .map(|g| {
                let (class, proba) = self.predict(g, None)?;
                Ok((class == g.label(), -proba[g.label()].max(1e-300).ln()))
            })
            .collect::<Result<_>>()?;
        let correct = outcomes.iter().filter(|(c, _)| *c).count();
        let loss: f64 = outcomes.iter().map(|(_, l)| l).sum();
        Ok((correct as f64 / graphs.len() as f64, loss / graphs.len() as f64))
    }

    pub fn accuracy(&self, graphs: &[&Graph]) -> Result<f64> {
        Ok(self.evaluate(graphs)?.0)
    }

    fn param_index(&self, name: &str) -> Result<usize> {
        self.params
            .names()
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| invalid(format!("missing parameter {name}")))
    }

    /// Data-dependent initialisation. Layer by layer, rescales each unit so its
    /// pre-activation over all nodes of `graphs` has zero mean and unit
    /// variance, then shifts convolution biases by uniform noise in
    /// `[-jitter, jitter]` so ReLU thresholds spread over that range. The head
    /// is standardised over graphs without noise. GAT attention vectors are
    /// rescaled so attention logits are unchanged.
    pub fn data_dependent_init(&mut self, graphs: &[&Graph], jitter: f64, rng: &mut ChaCha8Rng) -> Result<()> {
        if graphs.is_empty() {
            return Err(invalid("data-dependent initialisation needs at least one graph"));
        }
        let conv_layers = self.config.layer_count;
        for layer in 0..=conv_layers {
            let outputs: Vec<Tensor2> = graphs
                .par_iter()
                .map(|g| {
                    let mut tape = Tape::new();
                    let vars = self.params.bind(&mut tape, false);
                    let adj = tape.constant(g.adjacency_tensor());
                    let out = self.build_on_tape(&mut tape, &vars, g, adj)?;
                    Ok(tape.value(out.pre_bias[layer]).clone())
                })
                .collect::<Result<_>>()?;
            let cols = outputs[0].cols();
            let rows: usize = outputs.iter().map(Tensor2::rows).sum();
            let mut mean = vec![0.0; cols];
            for t in &outputs {
                for r in 0..t.rows() {
                    for (m, v) in mean.iter_mut().zip(t.row(r)) {
                        *m += v;
                    }
                }
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            let mut var = vec![0.0; cols];
            for t in &outputs {
                for r in 0..t.rows() {
                    for ((s, v), m) in var.iter_mut().zip(t.row(r)).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
            }
            let scales: Vec<f64> = var
                .iter()
                .map(|s| {
                    let sd = (s / rows as f64).sqrt();
                    if sd > 1e-12 {
                        1.0 / sd
                    } else {
                        1.0
                    }
                })
                .collect();

            let (prefix, noisy) = if layer < conv_layers {
                (format!("conv{layer}"), true)
            } else {
                ("head".to_string(), false)
            };
            let wi = self.param_index(&format!("{prefix}.weight"))?;
            let bi = self.param_index(&format!("{prefix}.bias"))?;
            let w = self.params.value_mut(wi);
            for r in 0..w.rows() {
                for (v, sc) in w.row_mut(r).iter_mut().zip(&scales) {
                    *v *= sc;
                }
            }
            let b = self.params.value_mut(bi);
            for (j, v) in b.row_mut(0).iter_mut().enumerate() {
                let shift = if noisy && jitter > 0.0 {
                    rng.random_range(-jitter..=jitter)
                } else {
                    0.0
                };
                *v = -mean[j] * scales[j] + shift;
            }
            if self.config.arch == Arch::Gat && layer < conv_layers {
                for name in ["att_src", "att_dst"] {
                    let ai = self.param_index(&format!("{prefix}.{name}"))?;
                    let a = self.params.value_mut(ai);
                    for (j, sc) in scales.iter().enumerate() {
                        a[(j, 0)] /= sc;
                    }
                }
            }
        }
        Ok(())
    }

    /// Minimises mean cross-entropy on the training split with Adam and keeps
    /// the parameters from the first epoch reaching the best validation
    /// accuracy. Stops after `patience` epochs without an improvement.
    pub fn train(&mut self, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainLog> {
        let mut train_ids: Vec<GraphId> = ds.split().train.clone();
        let val = ds.part(SplitPart::Val);
        if train_ids.is_empty() || val.is_empty() {
            return Err(Error::Precondition("train and validation splits must be non-empty".into()));
        }
        if cfg.batch_size == 0 {
            return Err(invalid("batch size must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        if cfg.balance_classes {
            train_ids = undersample(ds, &train_ids, &mut rng);
        }
        let train_graphs = ds.select(&train_ids);
        if cfg.data_init {
            self.data_dependent_init(&train_graphs, cfg.init_jitter, &mut rng)?;
        }
        let adam = AdamConfig::with_lr(cfg.lr);

        let mut log = TrainLog::default();
        let mut best: Option<(f64, ParamStore)> = None;
        let mut since_best = 0;
        let mut order: Vec<usize> = (0..train_graphs.len()).collect();

        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let results: Vec<(f64, Vec<Tensor2>)> = batch
                    .par_iter()
                    .map(|&i| {
                        let g = train_graphs[i];
                        self.loss_and_grads(g, g.label())
                    })
                    .collect::<Result<_>>()
                    .map_err(|e| match e {
                        Error::NumericOverflow(m) => Error::Divergence { epoch, message: m },
                        other => other,
                    })?;
                self.params.zero_grad();
                let scale = 1.0 / batch.len() as f64;
                for (loss, grads) in &results {
                    loss_sum += loss;
                    self.params.accumulate(grads, scale)?;
                }
                self.params.adam_step(&adam);
            }
            let loss = loss_sum / train_graphs.len() as f64;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    message: "non-finite training loss".into(),
                });
            }
            let train_accuracy = self.accuracy(&train_graphs)?;
            let (val_accuracy, val_loss) = self.evaluate(&val)?;
            log.epochs.push(EpochRecord {
                epoch,
                loss,
                train_accuracy,
                val_accuracy,
                val_loss,
            });
            let improved = match &best {
                None => true,
                Some((acc, _)) => val_accuracy > *acc,
            };
            if improved {
                best = Some((val_accuracy, self.params.snapshot()));
                log.best_epoch = epoch;
                log.best_val_accuracy = val_accuracy;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }
        if let Some((_, params)) = best {
            self.params = params;
        }
        self.trained = true;
        Ok(log)
    }
}

fn undersample(ds: &Dataset, ids: &[GraphId], rng: &mut ChaCha8Rng) -> Vec<GraphId> {
    let mut by_class: BTreeMap<usize, Vec<GraphId>> = BTreeMap::new();
    for g in ds.select(ids) {
        by_class.entry(g.label()).or_default().push(g.id());
    }
    let keep = by_class.values().map(Vec::len).min().unwrap_or(0);
    let mut out = Vec::new();
    for mut group in by_class.into_values() {
        group.shuffle(rng);
        out.extend(group.into_iter().take(keep));
    }
    out.sort_unstable();
    out
}
