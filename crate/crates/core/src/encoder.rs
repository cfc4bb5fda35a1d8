//! Heterogeneous graph transformer over a region subgraph, plus the
//! type-sum readout that produces the region embedding.
//!
//! Messages travel along 12 relations: `NearBy` (already stored in both
//! directions), each of the other five edge types forward and reversed, and
//! a self-loop on every node. Every node therefore has at least one
//! neighbor to attend over.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::schema::{EdgeType, NodeType};
use crate::subgraph::RegionSubgraph;
use crate::tape::{Mat, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub layer_norm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 144,
            heads: 4,
            layers: 2,
            layer_norm: false,
        }
    }
}

impl EncoderConfig {
    pub fn check(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "encoder dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    Forward(EdgeType),
    Reverse(EdgeType),
    SelfLoop,
}

impl Relation {
    pub const COUNT: usize = 12;

    pub fn all() -> Vec<Relation> {
        let mut out = vec![Relation::Forward(EdgeType::NearBy)];
        for t in EdgeType::ALL.into_iter().skip(1) {
            out.push(Relation::Forward(t));
            out.push(Relation::Reverse(t));
        }
        out.push(Relation::SelfLoop);
        out
    }

    pub fn name(self) -> String {
        match self {
            Relation::Forward(t) => t.as_str().to_string(),
            Relation::Reverse(t) => format!("rev_{}", t.as_str()),
            Relation::SelfLoop => "self".to_string(),
        }
    }
}

/// Weight and bias of an affine map `x W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Affine {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            weight: store.add(format!("{name}.w"), uniform_f32(rng, inputs, outputs, bound)),
            bias: store.add(format!("{name}.b"), Mat::zeros((1, outputs))),
        }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }

    pub fn apply_plain(&self, store: &ParamStore, x: &Mat) -> Mat {
        x.dot(store.get(self.weight)) + &store.get(self.bias).row(0)
    }
}

/// Uniform entries in `[-bound, bound]`, rounded to `f32` so checkpoints
/// reproduce them exactly.
pub fn uniform_f32<R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| {
        rng.random_range(-bound..=bound) as f32 as f64
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// Indexed by `NodeType::index()`.
    pub query: Vec<Affine>,
    pub key: Vec<Affine>,
    pub value: Vec<Affine>,
    pub output: Vec<Affine>,
    /// `[relation][head]`, each `dk × dk`.
    pub attention: Vec<Vec<ParamId>>,
    pub message: Vec<Vec<ParamId>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        config: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.check()?;
        let d = config.dim;
        let dk = config.head_dim();
        let relations = Relation::all();
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let mut maps = |kind: &str, rng: &mut R| -> Vec<Affine> {
                NodeType::ALL
                    .iter()
                    .map(|t| Affine::register(store, &format!("encoder.l{l}.{kind}.{t}"), d, d, rng))
                    .collect()
            };
            let query = maps("query", rng);
            let key = maps("key", rng);
            let value = maps("value", rng);
            let output = maps("output", rng);
            let bound = (3.0 / dk as f64).sqrt();
            let mut per_relation = |kind: &str, rng: &mut R| -> Vec<Vec<ParamId>> {
                relations
                    .iter()
                    .map(|r| {
                        (0..config.heads)
                            .map(|h| {
                                let name = format!("encoder.l{l}.{kind}.{}.h{h}", r.name());
                                let noise = uniform_f32(rng, dk, dk, bound * 0.1);
                                let init = (Mat::eye(dk) + noise).mapv(|x| x as f32 as f64);
                                store.add(name, init)
                            })
                            .collect()
                    })
                    .collect()
            };
            let attention = per_relation("att", rng);
            let message = per_relation("msg", rng);
            layers.push(LayerParams {
                query,
                key,
                value,
                output,
                attention,
                message,
            });
        }
        Ok(Self {
            config: config.clone(),
            layers,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadoutParams {
    pub map: Affine,
}

impl ReadoutParams {
    pub fn register<R: Rng>(store: &mut ParamStore, dim: usize, rng: &mut R) -> Self {
        Self {
            map: Affine::register(store, "readout.map", NodeType::COUNT * dim, dim, rng),
        }
    }
}

/// Per-subgraph structure reused across layers and heads.
struct Structure {
    n: usize,
    /// Local rows of each node type, indexed by `NodeType::index()`.
    rows_by_type: Vec<Vec<usize>>,
    /// Relations with at least one edge, with their `target × source` masks.
    active: Vec<usize>,
    mask: Array2<bool>,
}

impl Structure {
    fn new(sub: &RegionSubgraph) -> Self {
        let n = sub.len();
        let relations = Relation::all();
        let mut masks = vec![Array2::from_elem((n, n), false); relations.len()];
        let index = |r: Relation| relations.iter().position(|&x| x == r).unwrap();
        for &(s, t, ety) in &sub.edges {
            masks[index(Relation::Forward(ety))][[t, s]] = true;
            if ety != EdgeType::NearBy {
                masks[index(Relation::Reverse(ety))][[s, t]] = true;
            }
        }
        for i in 0..n {
            masks[index(Relation::SelfLoop)][[i, i]] = true;
        }
        let active: Vec<usize> = (0..relations.len())
            .filter(|&r| masks[r].iter().any(|&m| m))
            .collect();
        let views: Vec<_> = active.iter().map(|&r| masks[r].view()).collect();
        let mask = ndarray::concatenate(ndarray::Axis(1), &views).expect("mask blocks");
        let mut rows_by_type = vec![Vec::new(); NodeType::COUNT];
        for (i, t) in sub.types.iter().enumerate() {
            rows_by_type[t.index()].push(i);
        }
        Self {
            n,
            rows_by_type,
            active,
            mask,
        }
    }

    fn typed_affine(&self, tape: &mut Tape, x: Var, maps: &[Affine]) -> Var {
        let mut parts = Vec::new();
        for (t, rows) in self.rows_by_type.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let xt = tape.gather_rows(x, rows);
            let yt = maps[t].apply(tape, xt);
            parts.push(tape.scatter_add_rows(yt, rows, self.n));
        }
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = tape.add(acc, p);
        }
        acc
    }
}

fn check_features(sub: &RegionSubgraph, dim: usize) -> Result<()> {
    if !sub.has_features() {
        return Err(Error::InvalidArgument(format!(
            "subgraph of `{}` has no feature vectors attached",
            sub.root_id()
        )));
    }
    check_dim(dim, sub.features.ncols())
}

/// Node encodings on `tape`, one row per subgraph node.
pub fn encode_nodes_on(
    tape: &mut Tape,
    sub: &RegionSubgraph,
    params: &EncoderParams,
) -> Result<Var> {
    let cfg = &params.config;
    check_features(sub, cfg.dim)?;
    let x0 = tape.constant(sub.features.clone());
    Ok(encode_var(tape, x0, sub, params))
}

/// Same as [`encode_nodes_on`] but starting from an arbitrary `n × d` input.
pub fn encode_var(tape: &mut Tape, x0: Var, sub: &RegionSubgraph, params: &EncoderParams) -> Var {
    if params.layers.is_empty() {
        return x0;
    }
    let cfg = &params.config;
    let dk = cfg.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();
    let st = Structure::new(sub);
    let mut x = x0;
    for layer in &params.layers {
        let q = st.typed_affine(tape, x, &layer.query);
        let k = st.typed_affine(tape, x, &layer.key);
        let v = st.typed_affine(tape, x, &layer.value);
        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let qh = tape.slice_cols(q, h * dk, (h + 1) * dk);
            let kh = tape.slice_cols(k, h * dk, (h + 1) * dk);
            let vh = tape.slice_cols(v, h * dk, (h + 1) * dk);
            let mut scores = Vec::with_capacity(st.active.len());
            let mut messages = Vec::with_capacity(st.active.len());
            for &r in &st.active {
                let watt = tape.param(layer.attention[r][h]);
                let wmsg = tape.param(layer.message[r][h]);
                let kr = tape.matmul(kh, watt);
                let krt = tape.transpose(kr);
                let sc = tape.matmul(qh, krt);
                scores.push(tape.scale(sc, scale));
                messages.push(tape.matmul(vh, wmsg));
            }
            let sc = tape.concat_cols(&scores);
            let att = tape.masked_softmax_rows(sc, &st.mask);
            let msg = tape.concat_rows(&messages);
            heads.push(tape.matmul(att, msg));
        }
        let agg = tape.concat_cols(&heads);
        let out = st.typed_affine(tape, agg, &layer.output);
        let res = tape.add(out, x);
        x = tape.gelu(res);
        if cfg.layer_norm {
            x = tape.layer_norm_rows(x, 1e-5);
        }
    }
    x
}

/// Sums node rows per type into 8 slots (canonical order), concatenates,
/// and applies the readout affine map; returns a `1 × d` row.
pub fn readout_var(tape: &mut Tape, nodes: Var, sub: &RegionSubgraph, params: &ReadoutParams) -> Var {
    let d = tape.value(nodes).ncols();
    let slots: Vec<usize> = sub.types.iter().map(|t| t.index()).collect();
    let sums = tape.scatter_add_rows(nodes, &slots, NodeType::COUNT);
    let flat = tape.reshape(sums, 1, NodeType::COUNT * d);
    params.map.apply(tape, flat)
}

/// Region embedding `h_r` on `tape`.
pub fn encode_region_on(
    tape: &mut Tape,
    sub: &RegionSubgraph,
    encoder: &EncoderParams,
    readout: &ReadoutParams,
) -> Result<Var> {
    let nodes = encode_nodes_on(tape, sub, encoder)?;
    Ok(readout_var(tape, nodes, sub, readout))
}

/// Node encodings as `(id, vector)` pairs in subgraph order.
pub fn encode_nodes(
    store: &ParamStore,
    sub: &RegionSubgraph,
    params: &EncoderParams,
) -> Result<Vec<(String, Array1<f64>)>> {
    let mut tape = Tape::new(store);
    let x = encode_nodes_on(&mut tape, sub, params)?;
    let m = tape.value(x);
    Ok(sub
        .ids
        .iter()
        .cloned()
        .zip(m.rows().into_iter().map(|r| r.to_owned()))
        .collect())
}

/// Readout over precomputed node embeddings (`n × d`, subgraph order).
pub fn readout(
    store: &ParamStore,
    node_embs: &Mat,
    sub: &RegionSubgraph,
    params: &ReadoutParams,
) -> Result<Array1<f64>> {
    check_dim(sub.len(), node_embs.nrows())?;
    let d = node_embs.ncols();
    let mut sums = Mat::zeros((NodeType::COUNT, d));
    for (row, t) in node_embs.rows().into_iter().zip(&sub.types) {
        let mut slot = sums.row_mut(t.index());
        slot += &row;
    }
    let flat = sums
        .into_shape_with_order((1, NodeType::COUNT * d))
        .expect("contiguous");
    check_dim(store.get(params.map.weight).nrows(), flat.ncols())?;
    Ok(params.map.apply_plain(store, &flat).row(0).to_owned())
}

pub fn encode_region(
    store: &ParamStore,
    sub: &RegionSubgraph,
    encoder: &EncoderParams,
    readout: &ReadoutParams,
) -> Result<Array1<f64>> {
    let mut tape = Tape::new(store);
    let h = encode_region_on(&mut tape, sub, encoder, readout)?;
    Ok(tape.value(h).row(0).to_owned())
}
