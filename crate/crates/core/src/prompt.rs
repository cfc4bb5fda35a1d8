//! Prompting a frozen backbone.
//!
//! Two mechanisms:
//!
//! * **Manual prompts** pick a graph pattern and per-type deletion weights;
//!   [`adjust`] thins each region subgraph before it is encoded.
//! * **Learnable prompts** compare each region subgraph with `m` small
//!   trainable attributed graphs through a `P`-step random-walk kernel. The
//!   resulting `m` kernel values are concatenated with `h_r` and mapped back
//!   to `d` dimensions by an affine layer, followed by a regression head.
//!
//! The kernel between graphs `g1 = (X1, A1)` and `g2 = (X2, A2)` is
//! `K = Σ_p λ_p sᵀ A_×^p s` where `s = vec(X1 X2ᵀ)` and `A_× = A1 ⊗ A2` is
//! the direct-product adjacency. It is evaluated without materializing
//! `A_×`: with `S_0 = X1 X2ᵀ` and `S_p = A1 S_{p-1} A2ᵀ`,
//! `K = Σ_p λ_p ⟨S_0, S_p⟩`.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::encoder::{encode_region_on, uniform_f32, Affine};
use crate::error::{check_dim, Error, Result};
use crate::graph::UrbanGraph;
use crate::harness::{ridge, Labels};
use crate::pretrain::{stack_rows, ModelState};
use crate::schema::NodeType;
use crate::subgraph::{extract_index, subsample, GraphPattern, RegionSubgraph, PRESET_SOURCES};
use crate::tape::{Adam, Mat, ParamId, ParamStore, Tape, Var};

/// Names accepted by [`TaskWeights::preset`].
pub const PROMPT_PRESETS: [&str; 4] = ["P1", "P2", "P3", "P4"];

/// Per-type deletion proportions plus an optional pattern override.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskWeights {
    weights: BTreeMap<NodeType, f64>,
    pub pattern: Option<GraphPattern>,
    /// Delete each node independently with probability `w` instead of
    /// exactly `⌊w·n⌋` nodes.
    pub probabilistic: bool,
}

#[derive(Debug, Deserialize)]
struct PresetDoc {
    #[serde(default)]
    weights: BTreeMap<String, f64>,
}

impl TaskWeights {
    /// No deletions and no pattern override.
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(weights: impl IntoIterator<Item = (NodeType, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (ty, w) in weights {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::InvalidArgument(format!(
                    "deletion weight for {ty} must lie in [0, 1], got {w}"
                )));
            }
            if ty == NodeType::Region && w != 0.0 {
                return Err(Error::InvalidArgument(
                    "the region type cannot carry a deletion weight".into(),
                ));
            }
            if w > 0.0 {
                map.insert(ty, w);
            }
        }
        Ok(Self {
            weights: map,
            pattern: None,
            probabilistic: false,
        })
    }

    pub fn with_pattern(mut self, pattern: GraphPattern) -> Self {
        self.pattern = Some(pattern);
        self
    }

    pub fn weight(&self, ty: NodeType) -> f64 {
        self.weights.get(&ty).copied().unwrap_or(0.0)
    }

    pub fn weights(&self) -> &BTreeMap<NodeType, f64> {
        &self.weights
    }

    /// Parses a preset document: a graph pattern plus a `[weights]` table of
    /// deletion proportions keyed by node type.
    pub fn parse(text: &str) -> Result<Self> {
        let pattern = GraphPattern::parse(text)?;
        let doc: PresetDoc = toml::from_str(text).map_err(|e| Error::InvalidPattern(e.to_string()))?;
        let weights = doc
            .weights
            .iter()
            .map(|(k, &w)| Ok((k.parse::<NodeType>()?, w)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(weights)?.with_pattern(pattern))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// One of the shipped presets `P1`..`P4` (case-insensitive).
    pub fn preset(name: &str) -> Result<Self> {
        if !PROMPT_PRESETS.iter().any(|p| p.eq_ignore_ascii_case(name)) {
            return Err(Error::InvalidArgument(format!(
                "unknown prompt preset `{name}` (expected P1, P2, P3 or P4)"
            )));
        }
        let (_, src) = PRESET_SOURCES
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .expect("shipped preset");
        Self::parse(src)
    }
}

/// Number of nodes deleted from `n` under weight `w`.
pub fn deletion_count(w: f64, n: usize) -> usize {
    ((w * n as f64) + 1e-9).floor() as usize
}

/// Deletes nodes per type according to `weights` (never the root), drops
/// their edges, then drops nodes no longer connected to the root.
pub fn adjust(sub: &RegionSubgraph, weights: &TaskWeights, seed: u64) -> RegionSubgraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![true; sub.len()];
    for (&ty, &w) in &weights.weights {
        let mut members: Vec<usize> = (0..sub.len())
            .filter(|&i| i != sub.root && sub.types[i] == ty)
            .collect();
        if weights.probabilistic {
            for i in members {
                if rng.random_bool(w) {
                    keep[i] = false;
                }
            }
        } else {
            let k = deletion_count(w, members.len());
            members.shuffle(&mut rng);
            for &i in &members[..k] {
                keep[i] = false;
            }
        }
    }
    sub.retain(&keep)
}

/// Region subgraphs for a manual prompt: extraction under the prompt's
/// pattern (or the model's), deletion, then the node cap. Node features come
/// from the model.
pub fn manual_subgraphs(
    model: &ModelState,
    graph: &UrbanGraph,
    weights: &TaskWeights,
    seed: u64,
) -> Result<Vec<RegionSubgraph>> {
    let pattern = weights.pattern.clone().unwrap_or_else(|| model.pattern());
    let table = model.feature_table(graph)?;
    graph
        .regions()
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let sub = extract_index(graph, r, &pattern);
            let sub = adjust(&sub, weights, seed.wrapping_add(k as u64));
            let mut sub = subsample(&sub, model.config.subgraph_cap, model.seed.wrapping_add(k as u64))?;
            sub.attach_features(&table)?;
            Ok(sub)
        })
        .collect()
}

/// Frozen-backbone embeddings of manually prompted subgraphs.
pub fn manual_embeddings(model: &ModelState, graph: &UrbanGraph, weights: &TaskWeights, seed: u64) -> Result<Mat> {
    model.embed_subgraphs(&manual_subgraphs(model, graph, weights, seed)?)
}

/// Node attributes and a (possibly soft) adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributedGraph {
    pub attributes: Mat,
    pub adjacency: Mat,
}

impl AttributedGraph {
    pub fn new(attributes: Mat, adjacency: Mat) -> Result<Self> {
        let n = attributes.nrows();
        if adjacency.dim() != (n, n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: adjacency.nrows(),
            });
        }
        Ok(Self {
            attributes,
            adjacency,
        })
    }

    /// Features and binary symmetric adjacency of a region subgraph.
    pub fn from_subgraph(sub: &RegionSubgraph) -> Result<Self> {
        if !sub.has_features() {
            return Err(Error::InvalidArgument(format!(
                "subgraph of `{}` has no node features",
                sub.root_id()
            )));
        }
        Self::new(sub.features.clone(), sub.adjacency())
    }

    pub fn len(&self) -> usize {
        self.attributes.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.nrows() == 0
    }
}

/// Row-major `vec(X1 X2ᵀ)` and the direct-product adjacency, whose entry
/// `((v1, v2), (u1, u2))` is `A1[v1, u1] · A2[v2, u2]`.
pub fn product_similarity(g1: &AttributedGraph, g2: &AttributedGraph) -> Result<(Array1<f64>, Mat)> {
    check_dim(g1.attributes.ncols(), g2.attributes.ncols())?;
    let s = g1.attributes.dot(&g2.attributes.t());
    let (n1, n2) = s.dim();
    let mut a = Mat::zeros((n1 * n2, n1 * n2));
    for v1 in 0..n1 {
        for v2 in 0..n2 {
            for u1 in 0..n1 {
                for u2 in 0..n2 {
                    a[[v1 * n2 + v2, u1 * n2 + u2]] = g1.adjacency[[v1, u1]] * g2.adjacency[[v2, u2]];
                }
            }
        }
    }
    Ok((s.iter().copied().collect(), a))
}

fn check_lambda(steps: usize, lambda: &[f64]) -> Result<()> {
    if lambda.len() != steps + 1 {
        return Err(Error::InvalidArgument(format!(
            "need {} walk weights for {steps} steps, got {}",
            steps + 1,
            lambda.len()
        )));
    }
    Ok(())
}

/// `P`-step random-walk kernel `Σ_{p=0}^{P} λ_p sᵀ A_×^p s`.
pub fn rw_kernel(g1: &AttributedGraph, g2: &AttributedGraph, steps: usize, lambda: &[f64]) -> Result<f64> {
    check_dim(g1.attributes.ncols(), g2.attributes.ncols())?;
    check_lambda(steps, lambda)?;
    let s0 = g1.attributes.dot(&g2.attributes.t());
    let mut k = lambda[0] * (&s0 * &s0).sum();
    let mut s = s0.clone();
    let a2t = g2.adjacency.t();
    for &l in &lambda[1..] {
        s = g1.adjacency.dot(&s).dot(&a2t);
        k += l * (&s0 * &s).sum();
    }
    Ok(k)
}

/// Symmetric soft adjacency `σ((L + Lᵀ)/2)` with a zero diagonal.
pub fn soft_adjacency(logits: &Mat) -> Mat {
    let n = logits.nrows();
    Mat::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            let z = 0.5 * (logits[[i, j]] + logits[[j, i]]);
            1.0 / (1.0 + (-z).exp())
        }
    })
}

/// Binary variant: an edge wherever the symmetrized logit is positive.
pub fn binary_adjacency(logits: &Mat) -> Mat {
    soft_adjacency(logits).mapv(|a| if a > 0.5 { 1.0 } else { 0.0 })
}

fn off_diagonal(n: usize) -> Mat {
    Mat::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { 1.0 })
}

/// Kernel between a constant region graph `(xr, ar)` and a prompt graph on
/// the tape; `ap` must be symmetric.
pub fn kernel_on(tape: &mut Tape, xr: Var, ar: Var, xp: Var, ap: Var, lambda: &[f64]) -> Var {
    let xpt = tape.transpose(xp);
    let s0 = tape.matmul(xr, xpt);
    let sq = tape.mul(s0, s0);
    let sum = tape.sum(sq);
    let mut k = tape.scale(sum, lambda[0]);
    let mut s = s0;
    for &l in &lambda[1..] {
        let left = tape.matmul(ar, s);
        s = tape.matmul(left, ap);
        let prod = tape.mul(s0, s);
        let term = tape.sum(prod);
        let term = tape.scale(term, l);
        k = tape.add(k, term);
    }
    k
}

/// Soft adjacency of a logit parameter on the tape.
pub fn soft_adjacency_on(tape: &mut Tape, logits: Var) -> Var {
    let n = tape.value(logits).nrows();
    let lt = tape.transpose(logits);
    let sym = tape.add(logits, lt);
    let sym = tape.scale(sym, 0.5);
    let sig = tape.sigmoid(sym);
    let mask = tape.constant(off_diagonal(n));
    tape.mul(sig, mask)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    /// Node count of each prompt graph; `m` is the number of entries.
    pub sizes: Vec<usize>,
    /// Walk steps `P`.
    pub steps: usize,
    /// Walk weights `λ_0..λ_P`; empty means all ones.
    pub lambda: Vec<f64>,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Fixed 0/1 prompt adjacency instead of trainable soft edges.
    pub binary: bool,
    /// Bound of the uniform prompt-attribute initialization.
    pub init_scale: f64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            sizes: vec![6, 8],
            steps: 2,
            lambda: Vec::new(),
            epochs: 200,
            lr: 1e-2,
            weight_decay: 0.0,
            binary: false,
            init_scale: 0.1,
        }
    }
}

impl PromptConfig {
    pub fn check(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(Error::Config(
                "prompt.sizes needs at least one positive graph size".into(),
            ));
        }
        if !self.lambda.is_empty() {
            check_lambda(self.steps, &self.lambda).map_err(|e| Error::Config(e.to_string()))?;
        }
        if !(self.lr > 0.0) || self.init_scale < 0.0 {
            return Err(Error::Config("prompt.lr must be positive".into()));
        }
        Ok(())
    }

    pub fn lambdas(&self) -> Vec<f64> {
        if self.lambda.is_empty() {
            vec![1.0; self.steps + 1]
        } else {
            self.lambda.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptGraphParams {
    pub attributes: ParamId,
    pub logits: ParamId,
}

/// Trainable prompt graphs, prompting affine map and regression head.
#[derive(Debug, Clone)]
pub struct PromptState {
    pub config: PromptConfig,
    pub dim: usize,
    pub store: ParamStore,
    pub graphs: Vec<PromptGraphParams>,
    /// `(m + d) → d`, applied to `h_𝒫 ‖ h_r`.
    pub affine: Affine,
    /// `d → 1`.
    pub head: Affine,
}

impl PromptState {
    /// Random prompt graphs, the prompt-off affine map (zero on `h_𝒫`,
    /// identity on `h_r`) and a zero head.
    pub fn init(dim: usize, config: &PromptConfig, seed: u64) -> Result<Self> {
        config.check()?;
        if dim == 0 {
            return Err(Error::Config("prompt dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e0_3a11);
        let mut store = ParamStore::new();
        let graphs = config
            .sizes
            .iter()
            .enumerate()
            .map(|(k, &n)| PromptGraphParams {
                attributes: store.add(
                    format!("prompt.g{k}.attributes"),
                    uniform_f32(&mut rng, n, dim, config.init_scale),
                ),
                logits: store.add(format!("prompt.g{k}.logits"), uniform_f32(&mut rng, n, n, 1.0)),
            })
            .collect();
        let m = config.sizes.len();
        let mut w = Mat::zeros((m + dim, dim));
        for j in 0..dim {
            w[[m + j, j]] = 1.0;
        }
        let affine = Affine {
            weight: store.add("prompt.affine.w", w),
            bias: store.add("prompt.affine.b", Mat::zeros((1, dim))),
        };
        let head = Affine {
            weight: store.add("prompt.head.w", Mat::zeros((dim, 1))),
            bias: store.add("prompt.head.b", Mat::zeros((1, 1))),
        };
        Ok(Self {
            config: config.clone(),
            dim,
            store,
            graphs,
            affine,
            head,
        })
    }

    /// Number of prompt graphs `m`.
    pub fn m(&self) -> usize {
        self.graphs.len()
    }

    pub fn adjacency(&self, k: usize) -> Mat {
        let logits = self.store.get(self.graphs[k].logits);
        if self.config.binary {
            binary_adjacency(logits)
        } else {
            soft_adjacency(logits)
        }
    }

    pub fn graph(&self, k: usize) -> AttributedGraph {
        AttributedGraph {
            attributes: self.store.get(self.graphs[k].attributes).clone(),
            adjacency: self.adjacency(k),
        }
    }

    /// Prompt-graph attributes and adjacencies as tape variables.
    fn graph_vars(&self, tape: &mut Tape) -> Vec<(Var, Var)> {
        (0..self.m())
            .map(|k| {
                let x = tape.param(self.graphs[k].attributes);
                let a = if self.config.binary {
                    tape.constant(self.adjacency(k))
                } else {
                    let l = tape.param(self.graphs[k].logits);
                    soft_adjacency_on(tape, l)
                };
                (x, a)
            })
            .collect()
    }

    pub fn to_checkpoint(&self, config_hash: &str) -> Result<Checkpoint> {
        let meta = serde_json::json!({
            "dim": self.dim,
            "config_hash": config_hash,
            "prompt": self.config,
        });
        let mut ck = Checkpoint::new(meta);
        ck.insert_store(&self.store)?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let dim = ck.meta["dim"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("prompt checkpoint lacks `dim`".into()))? as usize;
        let config: PromptConfig = serde_json::from_value(ck.meta["prompt"].clone())
            .map_err(|e| Error::Checkpoint(format!("prompt config: {e}")))?;
        let mut state = Self::init(dim, &config, 0)?;
        ck.fill_store(&mut state.store)?;
        Ok(state)
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        self.to_checkpoint(config_hash)?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Kernel values of a region subgraph against every prompt graph.
pub fn prompt_vector(sub: &RegionSubgraph, state: &PromptState) -> Result<Array1<f64>> {
    let g = AttributedGraph::from_subgraph(sub)?;
    let lambda = state.config.lambdas();
    (0..state.m())
        .map(|k| rw_kernel(&g, &state.graph(k), state.config.steps, &lambda))
        .collect()
}

/// Affine map of `h_𝒫 ‖ h_r`.
pub fn prompted_embedding(hp: &Array1<f64>, hr: &Array1<f64>, state: &PromptState) -> Result<Array1<f64>> {
    check_dim(state.m(), hp.len())?;
    check_dim(state.dim, hr.len())?;
    let mut x = Mat::zeros((1, hp.len() + hr.len()));
    x.slice_mut(ndarray::s![0, ..hp.len()]).assign(hp);
    x.slice_mut(ndarray::s![0, hp.len()..]).assign(hr);
    Ok(state.affine.apply_plain(&state.store, &x).row(0).to_owned())
}

/// Frozen inputs of prompt tuning: region subgraphs with node features,
/// their backbone embeddings and the targets.
#[derive(Debug, Clone)]
pub struct PromptTask {
    pub ids: Vec<String>,
    pub subgraphs: Vec<RegionSubgraph>,
    pub embeddings: Mat,
    pub targets: Array1<f64>,
}

impl PromptTask {
    pub fn new(subgraphs: Vec<RegionSubgraph>, embeddings: Mat, targets: Array1<f64>) -> Result<Self> {
        check_dim(subgraphs.len(), embeddings.nrows())?;
        check_dim(subgraphs.len(), targets.len())?;
        if subgraphs.is_empty() {
            return Err(Error::TooFewRows("prompt tuning needs at least one labeled region".into()));
        }
        Ok(Self {
            ids: subgraphs.iter().map(|s| s.root_id().to_string()).collect(),
            subgraphs,
            embeddings,
            targets,
        })
    }

    /// Every labeled region of `graph`, embedded by the frozen backbone.
    pub fn from_backbone(backbone: &ModelState, graph: &UrbanGraph, labels: &Labels) -> Result<Self> {
        let subs: Vec<RegionSubgraph> = backbone
            .subgraphs(graph)?
            .into_iter()
            .filter(|s| labels.values.contains_key(s.root_id()))
            .collect();
        let h = backbone.embed_subgraphs(&subs)?;
        let ids: Vec<String> = subs.iter().map(|s| s.root_id().to_string()).collect();
        let y = labels.aligned(&ids)?;
        Self::new(subs, h, y)
    }

    pub fn len(&self) -> usize {
        self.subgraphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subgraphs.is_empty()
    }
}

/// Predictions `head(prompted_embedding)` for every task row, as an `N × 1`
/// tape variable.
fn predict_on(tape: &mut Tape, state: &PromptState, graphs: &[AttributedGraph], h: &Mat) -> Var {
    let lambda = state.config.lambdas();
    let prompts = state.graph_vars(tape);
    let rows: Vec<Var> = graphs
        .iter()
        .map(|g| {
            let xr = tape.constant(g.attributes.clone());
            let ar = tape.constant(g.adjacency.clone());
            let ks: Vec<Var> = prompts
                .iter()
                .map(|&(xp, ap)| kernel_on(tape, xr, ar, xp, ap, &lambda))
                .collect();
            tape.concat_cols(&ks)
        })
        .collect();
    let hp = tape.concat_rows(&rows);
    let hr = tape.constant(h.clone());
    let x = tape.concat_cols(&[hp, hr]);
    let z = state.affine.apply(tape, x);
    state.head.apply(tape, z)
}

fn mse_on(tape: &mut Tape, pred: Var, y: &Array1<f64>) -> Var {
    let target = tape.constant(y.clone().insert_axis(Axis(1)));
    let r = tape.sub(pred, target);
    let sq = tape.mul(r, r);
    let s = tape.sum(sq);
    tape.scale(s, 1.0 / y.len() as f64)
}

/// Training MSE of the best affine head on the frozen embeddings alone
/// (ordinary least squares, minimum norm).
pub fn frozen_head_mse(h: &Mat, y: &Array1<f64>) -> Result<f64> {
    let model = ridge(h, y, 0.0)?;
    let r = model.predict(h) - y;
    Ok(r.dot(&r) / y.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneLog {
    /// Training MSE before each update, then after the last one.
    pub mse: Vec<f64>,
    /// Index into `mse` of the returned parameters.
    pub best: usize,
}

impl TuneLog {
    pub fn best_mse(&self) -> f64 {
        self.mse[self.best]
    }
}

/// Training MSE of `state` on `task`.
pub fn task_mse(state: &PromptState, task: &PromptTask) -> Result<f64> {
    let graphs = task
        .subgraphs
        .iter()
        .map(AttributedGraph::from_subgraph)
        .collect::<Result<Vec<_>>>()?;
    let mut tape = Tape::new(&state.store);
    let pred = predict_on(&mut tape, state, &graphs, &task.embeddings);
    let loss = mse_on(&mut tape, pred, &task.targets);
    Ok(tape.scalar(loss))
}

/// Trains prompt graphs, prompting affine map and head jointly by full-batch
/// Adam on the MSE. The head starts at the least-squares fit on the frozen
/// embeddings and the affine map at the prompt-off identity, so the first
/// iterate reproduces that baseline; the iterate with the lowest training
/// MSE is returned.
pub fn tune_prompt(task: &PromptTask, config: &PromptConfig, seed: u64) -> Result<(PromptState, TuneLog)> {
    let dim = task.embeddings.ncols();
    let mut state = PromptState::init(dim, config, seed)?;
    let ols = ridge(&task.embeddings, &task.targets, 0.0)?;
    state
        .store
        .get_mut(state.head.weight)
        .assign(&ols.coef.clone().insert_axis(Axis(1)));
    state.store.get_mut(state.head.bias)[[0, 0]] = ols.intercept;

    let graphs = task
        .subgraphs
        .iter()
        .map(AttributedGraph::from_subgraph)
        .collect::<Result<Vec<_>>>()?;
    for g in &graphs {
        check_dim(dim, g.attributes.ncols())?;
    }
    let mut adam = Adam::new(config.lr, config.weight_decay);
    let mut best = state.store.clone();
    let mut log = TuneLog {
        mse: Vec::with_capacity(config.epochs + 1),
        best: 0,
    };
    for epoch in 0..=config.epochs {
        let (loss, grads) = {
            let mut tape = Tape::new(&state.store);
            let pred = predict_on(&mut tape, &state, &graphs, &task.embeddings);
            let loss = mse_on(&mut tape, pred, &task.targets);
            let value = tape.scalar(loss);
            let grads = (epoch < config.epochs).then(|| tape.backward(loss).into_params());
            (value, grads)
        };
        if !loss.is_finite() {
            break;
        }
        if loss < log.mse.get(log.best).copied().unwrap_or(f64::INFINITY) {
            log.best = log.mse.len();
            best = state.store.clone();
        }
        log.mse.push(loss);
        if let Some(mut grads) = grads {
            if config.binary {
                for g in &state.graphs {
                    grads.remove(&g.logits);
                }
            }
            adam.step(&mut state.store, &grads);
        }
    }
    state.store = best;
    Ok((state, log))
}

/// Prompted embeddings of every region of `graph` under a tuned prompt.
pub fn learnable_embeddings(model: &ModelState, graph: &UrbanGraph, state: &PromptState) -> Result<Mat> {
    check_dim(model.dim(), state.dim)?;
    let subs = model.subgraphs(graph)?;
    let rows: Vec<Array1<f64>> = subs
        .par_iter()
        .map(|s| {
            let mut tape = Tape::new(&model.store);
            let h = encode_region_on(&mut tape, s, &model.encoder, &model.readout)?;
            let hr = tape.value(h).row(0).to_owned();
            prompted_embedding(&prompt_vector(s, state)?, &hr, state)
        })
        .collect::<Result<_>>()?;
    stack_rows(&rows, state.dim)
}

/// Row-wise regression-head predictions on prompted embeddings.
pub fn predict(state: &PromptState, prompted: &Mat) -> Array1<f64> {
    state.head.apply_plain(&state.store, prompted).column(0).to_owned()
}
