//! TransR initialization of node and relation representations.
//!
//! A triple `(h, r, t)` scores `‖M_r h + r − M_r t‖²`; lower is more
//! plausible. Training minimizes a margin ranking loss against filtered
//! corrupted triples with plain SGD, projecting entity vectors back into the
//! unit ball after every step.

use std::collections::HashSet;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::graph::{Edge, UrbanGraph};
use crate::schema::EdgeType;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransRConfig {
    pub dim: usize,
    pub margin: f64,
    pub epochs: usize,
    pub lr: f64,
    pub negatives: usize,
    /// Half-width of the uniform noise added to identity projections.
    pub projection_noise: f64,
}

impl Default for TransRConfig {
    fn default() -> Self {
        Self {
            dim: 144,
            margin: 1.0,
            epochs: 50,
            lr: 0.01,
            negatives: 1,
            projection_noise: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransRState {
    pub dim: usize,
    /// Node ids in graph order; row `i` of `entities` belongs to `node_ids[i]`.
    pub node_ids: Vec<String>,
    pub entities: Array2<f64>,
    /// One row per edge type, in `EdgeType::ALL` order.
    pub relations: Array2<f64>,
    pub projections: Vec<Array2<f64>>,
}

impl TransRState {
    /// Uniform `[−6/√d, 6/√d]` vectors (entities projected into the unit
    /// ball) and identity-plus-noise projections.
    pub fn init(graph: &UrbanGraph, config: &TransRConfig, seed: u64) -> Self {
        let d = config.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 6.0 / (d as f64).sqrt();
        let mut uniform = |rows: usize| {
            Array2::from_shape_fn((rows, d), |_| rng.random_range(-bound..bound))
        };
        let mut entities = uniform(graph.node_count());
        let relations = uniform(EdgeType::COUNT);
        for mut row in entities.rows_mut() {
            project_unit_ball(row.as_slice_mut().expect("contiguous"));
        }
        let noise = config.projection_noise;
        let projections = (0..EdgeType::COUNT)
            .map(|_| {
                Array2::from_shape_fn((d, d), |(i, j)| {
                    let eye = if i == j { 1.0 } else { 0.0 };
                    if noise > 0.0 {
                        eye + rng.random_range(-noise..noise)
                    } else {
                        eye
                    }
                })
            })
            .collect();
        Self {
            dim: d,
            node_ids: graph.nodes().iter().map(|n| n.id.clone()).collect(),
            entities,
            relations,
            projections,
        }
    }

    pub fn entity(&self, id: &str) -> Option<ArrayView1<'_, f64>> {
        self.node_ids
            .binary_search_by(|n| n.as_str().cmp(id))
            .ok()
            .map(|i| self.entities.row(i))
    }

    pub fn relation(&self, ty: EdgeType) -> ArrayView1<'_, f64> {
        self.relations.row(ty.index())
    }

    pub fn projection(&self, ty: EdgeType) -> ArrayView2<'_, f64> {
        self.projections[ty.index()].view()
    }

    pub fn max_entity_norm(&self) -> f64 {
        self.entities
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .fold(0.0, f64::max)
    }
}

fn project_unit_ball(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 1.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// `‖M h + r − M t‖²` for explicit vectors.
pub fn score_parts(
    head: ArrayView1<f64>,
    relation: ArrayView1<f64>,
    projection: ArrayView2<f64>,
    tail: ArrayView1<f64>,
) -> Result<f64> {
    let d = relation.len();
    check_dim(d, head.len())?;
    check_dim(d, tail.len())?;
    check_dim(d, projection.nrows())?;
    check_dim(d, projection.ncols())?;
    let diff = &head - &tail;
    let u = projection.dot(&diff) + relation;
    Ok(u.dot(&u))
}

/// Score of a triple under the state's relation vector and projection.
pub fn transr_score(
    head: ArrayView1<f64>,
    relation: EdgeType,
    tail: ArrayView1<f64>,
    state: &TransRState,
) -> Result<f64> {
    score_parts(
        head,
        state.relation(relation),
        state.projection(relation),
        tail,
    )
}

/// Analytic gradient of [`score_parts`].
#[derive(Debug, Clone)]
pub struct ScoreGrad {
    pub head: Array1<f64>,
    pub tail: Array1<f64>,
    pub relation: Array1<f64>,
    pub projection: Array2<f64>,
}

pub fn score_grad(
    head: ArrayView1<f64>,
    relation: ArrayView1<f64>,
    projection: ArrayView2<f64>,
    tail: ArrayView1<f64>,
) -> ScoreGrad {
    let diff = &head - &tail;
    let u = projection.dot(&diff) + relation;
    let two_u = &u * 2.0;
    let dh = projection.t().dot(&two_u);
    let du = two_u.view().insert_axis(ndarray::Axis(1));
    let dd = diff.view().insert_axis(ndarray::Axis(0));
    ScoreGrad {
        tail: -&dh,
        head: dh,
        relation: two_u.clone(),
        projection: du.dot(&dd),
    }
}

/// A positive edge paired with one corrupted counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Corruption {
    pub positive: Edge,
    pub negative: Edge,
}

/// Replaces the head or the tail (coin flip) with a uniformly drawn node of
/// the same type such that the corrupted triple is not an edge. Returns
/// `None` when no such node is found.
pub fn corrupt(
    graph: &UrbanGraph,
    by_type: &[Vec<usize>],
    edge_set: &HashSet<Edge>,
    edge: Edge,
    rng: &mut ChaCha8Rng,
) -> Option<Edge> {
    let replace_head = rng.random_bool(0.5);
    for side in [replace_head, !replace_head] {
        let fixed_ty = graph.node_type(if side { edge.src } else { edge.dst });
        let pool = &by_type[fixed_ty.index()];
        if pool.len() < 2 {
            continue;
        }
        for _ in 0..16 {
            let pick = pool[rng.random_range(0..pool.len())];
            let cand = if side {
                Edge { src: pick, ..edge }
            } else {
                Edge { dst: pick, ..edge }
            };
            if cand != edge && !edge_set.contains(&cand) {
                return Some(cand);
            }
        }
    }
    None
}

fn nodes_by_type(graph: &UrbanGraph) -> Vec<Vec<usize>> {
    let mut by_type = vec![Vec::new(); crate::schema::NodeType::COUNT];
    for (i, n) in graph.nodes().iter().enumerate() {
        by_type[n.ty.index()].push(i);
    }
    by_type
}

/// A fixed set of corruptions, `per_edge` per positive, for loss evaluation.
pub fn sample_corruptions(graph: &UrbanGraph, per_edge: usize, seed: u64) -> Vec<Corruption> {
    let by_type = nodes_by_type(graph);
    let edge_set: HashSet<Edge> = graph.edges().iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &e in graph.edges() {
        for _ in 0..per_edge {
            if let Some(neg) = corrupt(graph, &by_type, &edge_set, e, &mut rng) {
                out.push(Corruption {
                    positive: e,
                    negative: neg,
                });
            }
        }
    }
    out
}

fn edge_score(state: &TransRState, e: Edge) -> f64 {
    score_parts(
        state.entities.row(e.src),
        state.relation(e.ty),
        state.projection(e.ty),
        state.entities.row(e.dst),
    )
    .expect("state dimensions are consistent")
}

/// Mean of `max(0, γ + f(pos) − f(neg))` over the given corruptions.
pub fn mean_margin_loss(state: &TransRState, corruptions: &[Corruption], margin: f64) -> f64 {
    if corruptions.is_empty() {
        return 0.0;
    }
    let total: f64 = corruptions
        .iter()
        .map(|c| (margin + edge_score(state, c.positive) - edge_score(state, c.negative)).max(0.0))
        .sum();
    total / corruptions.len() as f64
}

/// Trains TransR on every edge of the graph.
pub fn train_transr(graph: &UrbanGraph, config: &TransRConfig, seed: u64) -> Result<TransRState> {
    train_transr_logged(graph, config, seed).map(|(s, _)| s)
}

/// Like [`train_transr`], also returning the mean margin loss of each epoch.
pub fn train_transr_logged(
    graph: &UrbanGraph,
    config: &TransRConfig,
    seed: u64,
) -> Result<(TransRState, Vec<f64>)> {
    if graph.edge_count() == 0 {
        return Err(Error::Untrainable("graph has no edges".into()));
    }
    if config.dim == 0 {
        return Err(Error::Config("transr.dim must be positive".into()));
    }
    let mut state = TransRState::init(graph, config, seed);
    let by_type = nodes_by_type(graph);
    let edge_set: HashSet<Edge> = graph.edges().iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7a45);
    let mut order: Vec<Edge> = graph.edges().to_vec();
    let mut log = Vec::with_capacity(config.epochs);
    let lr = config.lr;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for &pos in &order {
            for _ in 0..config.negatives {
                let Some(neg) = corrupt(graph, &by_type, &edge_set, pos, &mut rng) else {
                    continue;
                };
                let loss = config.margin + edge_score(&state, pos) - edge_score(&state, neg);
                count += 1;
                if loss <= 0.0 {
                    continue;
                }
                total += loss;
                sgd_update(&mut state, pos, lr);
                sgd_update(&mut state, neg, -lr);
            }
        }
        log.push(if count == 0 { 0.0 } else { total / count as f64 });
    }
    Ok((state, log))
}

/// Moves one triple's parameters by `−lr · ∇f` and renormalizes its entities.
fn sgd_update(state: &mut TransRState, e: Edge, lr: f64) {
    let r = e.ty.index();
    let g = score_grad(
        state.entities.row(e.src),
        state.relations.row(r),
        state.projections[r].view(),
        state.entities.row(e.dst),
    );
    state.entities.row_mut(e.src).scaled_add(-lr, &g.head);
    state.entities.row_mut(e.dst).scaled_add(-lr, &g.tail);
    state.relations.row_mut(r).scaled_add(-lr, &g.relation);
    state.projections[r].scaled_add(-lr, &g.projection);
    for idx in [e.src, e.dst] {
        let mut row = state.entities.row_mut(idx);
        project_unit_ball(row.as_slice_mut().expect("contiguous"));
    }
    let mut row = state.relations.row_mut(r);
    project_unit_ball(row.as_slice_mut().expect("contiguous"));
    // keep ‖M‖_F at most that of the identity
    let m = &mut state.projections[r];
    let norm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cap = (m.nrows() as f64).sqrt();
    if norm > cap {
        *m *= cap / norm;
    }
}
