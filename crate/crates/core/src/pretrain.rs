//! Multi-view self-supervised pretraining of the subgraph encoder.
//!
//! Four objectives share the region embeddings `h_r`: a spatial triplet
//! loss over `NearBy` neighbors, an image contrastive loss, an
//! origin-destination flow reconstruction loss, and a fusion reconstruction
//! loss over all active view embeddings. The joint objective is
//! `L_sp + L_img + L_flow + μ·L_fuse`.
//!
//! Each epoch is one full pass: region embeddings are computed on one tape
//! per region (in parallel), the losses on a separate head tape whose input
//! is the stacked embedding matrix, and the head's gradient with respect to
//! that matrix is pushed back through every region tape.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::{Array1, Axis};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    encode_region_on, encode_var, readout_var, Affine, EncoderConfig, EncoderParams, ReadoutParams,
};
use crate::error::{check_dim, Error, Result};
use crate::graph::{csv_writer, flush, read_csv, write_comment, write_row, UrbanGraph};
use crate::kg::{train_transr, TransRConfig, TransRState};
use crate::subgraph::{extract_index, subsample, FeatureTable, GraphPattern, RegionSubgraph};
use crate::tape::{log_softmax_rows, Adam, GradAccumulator, Mat, ParamId, ParamStore, Tape, Var};

/// Which self-supervised views take part in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewSet {
    pub spatial: bool,
    pub imagery: bool,
    pub flow: bool,
    pub fusion: bool,
}

impl Default for ViewSet {
    fn default() -> Self {
        Self::all()
    }
}

impl ViewSet {
    pub fn all() -> Self {
        Self {
            spatial: true,
            imagery: true,
            flow: true,
            fusion: true,
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.spatial || self.imagery || self.flow || self.fusion) {
            return Err(Error::Config("every pretraining view is disabled".into()));
        }
        Ok(())
    }

    /// Number of embeddings entering the fusion layer: `h_r`, plus `h_img`
    /// with imagery, plus `h_src` and `h_dst` with flows.
    pub fn fusion_arity(&self) -> usize {
        1 + usize::from(self.imagery) + 2 * usize::from(self.flow)
    }

    /// Compact label such as `S+I+F+M`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        for (on, tag) in [
            (self.spatial, "S"),
            (self.imagery, "I"),
            (self.flow, "F"),
            (self.fusion, "M"),
        ] {
            if on {
                parts.push(tag);
            }
        }
        parts.join("+")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Transr,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub margin: f64,
    pub fusion_weight: f64,
    pub temperature: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub views: ViewSet,
    pub init: InitMode,
    /// L2-normalize `h_r` and `h_img` before the contrastive dot products.
    pub normalize_contrastive: bool,
    /// Draw fresh triplets every epoch; otherwise the first epoch's are kept.
    pub resample_triplets: bool,
    pub subgraph_cap: usize,
    /// Preset name (`full`, `P1`..`P4`) used for extraction.
    pub pattern: String,
    pub encoder: EncoderConfig,
    pub transr: TransRConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            margin: 2.0,
            fusion_weight: 0.01,
            temperature: 0.1,
            lr: 1e-3,
            weight_decay: 1e-6,
            epochs: 50,
            views: ViewSet::all(),
            init: InitMode::Transr,
            normalize_contrastive: false,
            resample_triplets: true,
            subgraph_cap: 50,
            pattern: "full".into(),
            encoder: EncoderConfig::default(),
            transr: TransRConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn check(&self) -> Result<()> {
        self.views.check()?;
        self.encoder.check()?;
        if self.margin <= 0.0 || self.temperature <= 0.0 || self.fusion_weight < 0.0 {
            return Err(Error::Config(
                "need margin > 0, temperature > 0 and fusion_weight >= 0".into(),
            ));
        }
        if self.transr.dim != self.encoder.dim {
            return Err(Error::Config(format!(
                "transr.dim ({}) must equal encoder.dim ({})",
                self.transr.dim, self.encoder.dim
            )));
        }
        if self.subgraph_cap == 0 {
            return Err(Error::Config("subgraph_cap must be positive".into()));
        }
        GraphPattern::preset(&self.pattern)?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim
    }
}

/// Precomputed image feature vectors; a region may have several.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageSet {
    pub dim: usize,
    pub features: BTreeMap<String, Vec<Array1<f64>>>,
}

impl ImageSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            features: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, region: impl Into<String>, feature: Array1<f64>) -> Result<()> {
        check_dim(self.dim, feature.len())?;
        self.features.entry(region.into()).or_default().push(feature);
        Ok(())
    }

    pub fn mean(&self, region: &str) -> Option<Array1<f64>> {
        let rows = self.features.get(region)?;
        let mut acc = Array1::zeros(self.dim);
        for r in rows {
            acc += r;
        }
        Some(acc / rows.len() as f64)
    }

    /// Reads `region_id,f0,...,f{D-1}`; repeated region ids add images.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let header = text
            .lines()
            .find(|l| !l.starts_with('#'))
            .ok_or_else(|| Error::Parse {
                file: path.display().to_string(),
                line: 1,
                message: "missing header".into(),
            })?;
        let dim = header.split(',').count().saturating_sub(1);
        let names: Vec<String> = std::iter::once("region_id".to_string())
            .chain((0..dim).map(|i| format!("f{i}")))
            .collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut set = ImageSet::new(dim);
        for (line, fields) in read_csv(path, &refs)? {
            let values = fields[1..]
                .iter()
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|e| Error::Parse {
                        file: path.display().to_string(),
                        line,
                        message: format!("bad feature value `{s}`: {e}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            set.push(fields[0].clone(), Array1::from(values))?;
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let mut w = csv_writer(path)?;
        if let Some(c) = comment {
            write_comment(&mut w, path, c)?;
        }
        let header: Vec<String> = std::iter::once("region_id".to_string())
            .chain((0..self.dim).map(|i| format!("f{i}")))
            .collect();
        write_row(&mut w, path, header)?;
        for (region, rows) in &self.features {
            for r in rows {
                let row: Vec<String> = std::iter::once(region.clone())
                    .chain(r.iter().map(|v| format!("{v:.6}")))
                    .collect();
                write_row(&mut w, path, row)?;
            }
        }
        flush(w, path)
    }
}

/// Interval counts and the trip matrix, all in region order.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowFeatures {
    pub outflow: Mat,
    pub inflow: Mat,
    pub trips: Mat,
}

impl FlowFeatures {
    pub fn from_graph(graph: &UrbanGraph) -> Self {
        let (outflow, inflow) = graph.interval_flows();
        Self {
            outflow,
            inflow,
            trips: graph.trip_matrix(),
        }
    }
}

/// Empirical origin and destination distributions of a trip matrix.
/// `dest[[i, j]] = m_ij / Σ_k m_ik`; `origin[[i, j]] = m_ij / Σ_k m_kj`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowDistributions {
    pub dest: Mat,
    pub origin: Mat,
    pub active_rows: Vec<bool>,
    pub active_cols: Vec<bool>,
}

pub fn flow_distributions(m: &Mat) -> FlowDistributions {
    let rows = m.sum_axis(Axis(1));
    let cols = m.sum_axis(Axis(0));
    let mut dest = Mat::zeros(m.raw_dim());
    let mut origin = Mat::zeros(m.raw_dim());
    for ((i, j), &v) in m.indexed_iter() {
        if rows[i] > 0.0 {
            dest[[i, j]] = v / rows[i];
        }
        if cols[j] > 0.0 {
            origin[[i, j]] = v / cols[j];
        }
    }
    FlowDistributions {
        dest,
        origin,
        active_rows: rows.iter().map(|&s| s > 0.0).collect(),
        active_cols: cols.iter().map(|&s| s > 0.0).collect(),
    }
}

/// Entropy lower bound `H(P_sc) + H(P_dt)` of the flow loss.
pub fn flow_entropy(dist: &FlowDistributions) -> f64 {
    let h = |m: &Mat| -> f64 {
        m.iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    };
    h(&dist.dest) + h(&dist.origin)
}

fn check_len(a: usize, b: usize) -> Result<()> {
    check_dim(a, b)
}

pub fn triplet_loss(h: &Array1<f64>, pos: &Array1<f64>, neg: &Array1<f64>, margin: f64) -> Result<f64> {
    check_len(h.len(), pos.len())?;
    check_len(h.len(), neg.len())?;
    let dist = |a: &Array1<f64>, b: &Array1<f64>| (a - b).mapv(|x| x * x).sum().sqrt();
    Ok((dist(h, pos) - dist(h, neg) + margin).max(0.0))
}

/// Row-based sampler used by the training loop: NearBy rows per region row.
#[derive(Debug, Clone)]
pub struct TripletSampler {
    nearby: Vec<BTreeSet<usize>>,
}

impl TripletSampler {
    pub fn new(graph: &UrbanGraph) -> Self {
        let row_of: BTreeMap<usize, usize> = graph
            .regions()
            .iter()
            .enumerate()
            .map(|(k, &g)| (g, k))
            .collect();
        let nearby = graph
            .regions()
            .iter()
            .map(|&r| {
                graph
                    .nearby_regions(r)
                    .into_iter()
                    .filter_map(|n| row_of.get(&n).copied())
                    .collect()
            })
            .collect();
        Self { nearby }
    }

    /// `(positive, negative)` rows for `anchor`, or `None` when it lacks a
    /// neighbor or a non-neighbor.
    pub fn sample<R: Rng>(&self, anchor: usize, rng: &mut R) -> Option<(usize, usize)> {
        let adj = &self.nearby[anchor];
        let pos: Vec<usize> = adj.iter().copied().filter(|&p| p != anchor).collect();
        let neg: Vec<usize> = (0..self.nearby.len())
            .filter(|&j| j != anchor && !adj.contains(&j))
            .collect();
        let p = *pos.choose(rng)?;
        let n = *neg.choose(rng)?;
        Some((p, n))
    }

    /// One triplet per anchor that admits one, in anchor order.
    pub fn epoch<R: Rng>(&self, rng: &mut R) -> Vec<(usize, usize, usize)> {
        (0..self.nearby.len())
            .filter_map(|a| self.sample(a, rng).map(|(p, n)| (a, p, n)))
            .collect()
    }
}

/// Samples a `(positive, negative)` pair for a region; `Ok(None)` signals
/// that the anchor must be skipped.
pub fn sample_triplet<R: Rng>(
    graph: &UrbanGraph,
    anchor: &str,
    rng: &mut R,
) -> Result<Option<(String, String)>> {
    let idx = graph.require_region(anchor)?;
    let row = graph.regions().iter().position(|&r| r == idx).expect("region row");
    let ids = graph.region_ids();
    Ok(TripletSampler::new(graph)
        .sample(row, rng)
        .map(|(p, n)| (ids[p].clone(), ids[n].clone())))
}

/// Projected mean of a region's image feature vectors.
pub fn image_embed(store: &ParamStore, features: &[Array1<f64>], proj: &Affine) -> Result<Array1<f64>> {
    let first = features
        .first()
        .ok_or_else(|| Error::MissingView("region has no image features".into()))?;
    let mut mean = Array1::zeros(first.len());
    for f in features {
        check_len(first.len(), f.len())?;
        mean += f;
    }
    mean /= features.len() as f64;
    check_len(store.get(proj.weight).nrows(), mean.len())?;
    let x = mean.insert_axis(Axis(0));
    Ok(proj.apply_plain(store, &x).row(0).to_owned())
}

fn normalize(m: &Mat) -> Mat {
    let mut out = m.clone();
    for mut r in out.rows_mut() {
        let n = r.dot(&r).sqrt();
        if n > 0.0 {
            r /= n;
        }
    }
    out
}

/// In-batch contrastive loss; row `r` of `h` pairs with row `r` of `img`.
pub fn contrastive_loss(h: &Mat, img: &Mat, temperature: f64, normalized: bool) -> Result<f64> {
    check_len(h.nrows(), img.nrows())?;
    check_len(h.ncols(), img.ncols())?;
    if h.nrows() == 0 {
        return Err(Error::InvalidArgument("empty contrastive batch".into()));
    }
    let (h, img) = if normalized {
        (normalize(h), normalize(img))
    } else {
        (h.clone(), img.clone())
    };
    let logits = h.dot(&img.t()) / temperature;
    let ls = log_softmax_rows(&logits);
    Ok(-(0..ls.nrows()).map(|i| ls[[i, i]]).sum::<f64>())
}

/// Cross-entropy of the reconstructed destination/origin distributions
/// against the empirical ones; pairs with zero empirical mass add nothing.
pub fn flow_loss(src: &Mat, dst: &Mat, dist: &FlowDistributions) -> Result<f64> {
    let n = src.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument("flow loss needs at least two regions".into()));
    }
    check_len(n, dst.nrows())?;
    check_len(src.ncols(), dst.ncols())?;
    check_len(n, dist.dest.nrows())?;
    let logits = src.dot(&dst.t());
    let dest_hat = log_softmax_rows(&logits);
    let origin_hat = log_softmax_rows(&logits.t().to_owned());
    let mut loss = 0.0;
    for i in 0..n {
        for j in 0..n {
            let p = dist.dest[[i, j]];
            if p > 0.0 {
                loss -= p * dest_hat[[i, j]];
            }
            let q = dist.origin[[i, j]];
            if q > 0.0 {
                loss -= q * origin_hat[[j, i]];
            }
        }
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub map: Affine,
    pub decoders: Vec<Affine>,
}

impl FusionParams {
    pub fn register<R: Rng>(store: &mut ParamStore, arity: usize, dim: usize, rng: &mut R) -> Self {
        let map = Affine::register(store, "fusion.map", arity * dim, dim, rng);
        let decoders = (0..arity)
            .map(|k| Affine::register(store, &format!("decoders.k{k}"), dim, dim, rng))
            .collect();
        Self { map, decoders }
    }

    pub fn arity(&self) -> usize {
        self.decoders.len()
    }
}

/// `ReLU(W [v_1 ‖ … ‖ v_k] + b)`.
pub fn fuse(store: &ParamStore, views: &[Array1<f64>], params: &FusionParams) -> Result<Array1<f64>> {
    check_len(params.arity(), views.len())?;
    let parts: Vec<_> = views.iter().map(|v| v.view()).collect();
    let cat = ndarray::concatenate(Axis(0), &parts)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    check_len(store.get(params.map.weight).nrows(), cat.len())?;
    let out = params.map.apply_plain(store, &cat.insert_axis(Axis(0)));
    Ok(out.row(0).mapv(|x| x.max(0.0)))
}

/// `Σ_k ‖v_k − dec_k(ĥ)‖²`.
pub fn fusion_loss(
    store: &ParamStore,
    fused: &Array1<f64>,
    views: &[Array1<f64>],
    params: &FusionParams,
) -> Result<f64> {
    check_len(params.arity(), views.len())?;
    let x = fused.clone().insert_axis(Axis(0));
    let mut loss = 0.0;
    for (v, dec) in views.iter().zip(&params.decoders) {
        let rec = dec.apply_plain(store, &x);
        check_len(v.len(), rec.ncols())?;
        loss += (v - &rec.row(0)).mapv(|r| r * r).sum();
    }
    Ok(loss)
}

/// Shared two-layer perceptron applied to `log1p` interval counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowEncoder {
    pub hidden: Affine,
    pub output: Affine,
}

impl FlowEncoder {
    pub fn register<R: Rng>(store: &mut ParamStore, intervals: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            hidden: Affine::register(store, "flow_encoder.hidden", intervals, dim, rng),
            output: Affine::register(store, "flow_encoder.output", dim, dim, rng),
        }
    }

    /// Encodes raw counts (one row per region).
    pub fn apply(&self, tape: &mut Tape, counts: &Mat) -> Var {
        let x = tape.constant(counts.mapv(f64::ln_1p));
        self.apply_var(tape, x)
    }

    /// Encodes already transformed inputs.
    pub fn apply_var(&self, tape: &mut Tape, x: Var) -> Var {
        let h = self.hidden.apply(tape, x);
        let h = tape.gelu(h);
        self.output.apply(tape, h)
    }
}

pub fn triplet_loss_on(tape: &mut Tape, h: Var, triplets: &[(usize, usize, usize)], margin: f64) -> Var {
    let mut terms = Vec::with_capacity(triplets.len());
    for &(a, p, n) in triplets {
        let ha = tape.gather_rows(h, &[a]);
        let hp = tape.gather_rows(h, &[p]);
        let hn = tape.gather_rows(h, &[n]);
        let dp = tape.sub(ha, hp);
        let dn = tape.sub(ha, hn);
        let np = tape.norm(dp);
        let nn = tape.norm(dn);
        let diff = tape.sub(np, nn);
        let shifted = tape.add_scalar(diff, margin);
        terms.push(tape.relu(shifted));
    }
    sum_terms(tape, &terms)
}

fn sum_terms(tape: &mut Tape, terms: &[Var]) -> Var {
    match terms.split_first() {
        None => tape.constant(Mat::zeros((1, 1))),
        Some((&first, rest)) => rest.iter().fold(first, |acc, &t| tape.add(acc, t)),
    }
}

pub fn contrastive_loss_on(tape: &mut Tape, h: Var, img: Var, temperature: f64, normalized: bool) -> Var {
    let (h, img) = if normalized {
        (tape.normalize_rows(h), tape.normalize_rows(img))
    } else {
        (h, img)
    };
    let b = tape.value(h).nrows();
    let it = tape.transpose(img);
    let logits = tape.matmul(h, it);
    let logits = tape.scale(logits, 1.0 / temperature);
    let ls = tape.log_softmax_rows(logits);
    let eye = tape.constant(Mat::eye(b));
    let diag = tape.mul(ls, eye);
    let s = tape.sum(diag);
    tape.scale(s, -1.0)
}

pub fn flow_loss_on(tape: &mut Tape, src: Var, dst: Var, dist: &FlowDistributions) -> Var {
    let dt = tape.transpose(dst);
    let logits = tape.matmul(src, dt);
    let dest_hat = tape.log_softmax_rows(logits);
    let lt = tape.transpose(logits);
    let origin_hat = tape.log_softmax_rows(lt);
    let p = tape.constant(dist.dest.clone());
    let q = tape.constant(dist.origin.t().to_owned());
    let a = tape.mul(dest_hat, p);
    let b = tape.mul(origin_hat, q);
    let sa = tape.sum(a);
    let sb = tape.sum(b);
    let s = tape.add(sa, sb);
    tape.scale(s, -1.0)
}

/// Fusion loss summed over rows; each view is an `N × d` matrix.
pub fn fusion_loss_on(tape: &mut Tape, views: &[Var], params: &FusionParams) -> Var {
    let cat = tape.concat_cols(views);
    let pre = params.map.apply(tape, cat);
    let fused = tape.relu(pre);
    let mut terms = Vec::with_capacity(views.len());
    for (&v, dec) in views.iter().zip(&params.decoders) {
        let rec = dec.apply(tape, fused);
        let r = tape.sub(v, rec);
        let sq = tape.mul(r, r);
        terms.push(tape.sum(sq));
    }
    sum_terms(tape, &terms)
}

/// Per-epoch loss values; disabled terms are zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub spatial: f64,
    pub imagery: f64,
    pub flow: f64,
    pub fusion: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(spatial: f64, imagery: f64, flow: f64, fusion: f64, mu: f64) -> Self {
        Self {
            spatial,
            imagery,
            flow,
            fusion,
            total: spatial + imagery + flow + mu * fusion,
        }
    }
}

/// Every trainable parameter plus the frozen node features.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub config: PretrainConfig,
    pub seed: u64,
    pub store: ParamStore,
    /// Initial node features: trained TransR tables, or untrained random
    /// ones under the random init mode.
    pub features: TransRState,
    pub encoder: EncoderParams,
    pub readout: ReadoutParams,
    pub flow_encoder: Option<FlowEncoder>,
    pub image_proj: Option<Affine>,
    pub fusion: Option<FusionParams>,
    pub intervals: usize,
    pub image_dim: usize,
}

/// Checks that every enabled view has data; returns the image dimension
/// (0 without imagery).
fn checked_views(graph: &UrbanGraph, images: Option<&ImageSet>, config: &PretrainConfig) -> Result<usize> {
    config.check()?;
    if config.views.flow && graph.flows().is_empty() {
        return Err(Error::MissingView("flow view enabled but the city has no flows".into()));
    }
    match (config.views.imagery, images) {
        (true, None) => Err(Error::MissingView(
            "imagery view enabled but no image features were given".into(),
        )),
        (true, Some(set)) if set.features.is_empty() => {
            Err(Error::MissingView("image feature file is empty".into()))
        }
        (true, Some(set)) => Ok(set.dim),
        (false, _) => Ok(0),
    }
}

fn round_f32(m: &mut Mat) {
    m.mapv_inplace(|x| x as f32 as f64);
}

impl ModelState {
    /// Builds node features and registers all parameters for `config`.
    pub fn init(
        graph: &UrbanGraph,
        images: Option<&ImageSet>,
        config: &PretrainConfig,
        seed: u64,
    ) -> Result<Self> {
        let image_dim = checked_views(graph, images, config)?;
        let features = match config.init {
            InitMode::Transr => train_transr(graph, &config.transr, seed)?,
            InitMode::Random => TransRState::init(graph, &config.transr, seed),
        };
        Self::assemble(config, seed, features, graph.intervals(), image_dim)
    }

    /// Like [`ModelState::init`] but with precomputed node features (for
    /// example TransR tables loaded from disk).
    pub fn init_with_features(
        graph: &UrbanGraph,
        images: Option<&ImageSet>,
        config: &PretrainConfig,
        seed: u64,
        features: TransRState,
    ) -> Result<Self> {
        let image_dim = checked_views(graph, images, config)?;
        let ids_match = features.node_ids.len() == graph.node_count()
            && graph.nodes().iter().zip(&features.node_ids).all(|(n, id)| &n.id == id);
        if !ids_match {
            return Err(Error::InvalidArgument(
                "node features were built for a different graph".into(),
            ));
        }
        Self::assemble(config, seed, features, graph.intervals(), image_dim)
    }

    /// Registers every parameter for `config` around the given node
    /// features. Deterministic in `seed`.
    pub fn assemble(
        config: &PretrainConfig,
        seed: u64,
        mut features: TransRState,
        intervals: usize,
        image_dim: usize,
    ) -> Result<Self> {
        config.check()?;
        check_dim(config.dim(), features.dim)?;
        round_f32(&mut features.entities);
        round_f32(&mut features.relations);
        features.projections.iter_mut().for_each(round_f32);

        let d = config.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0e4c_0de5);
        let mut store = ParamStore::new();
        let encoder = EncoderParams::register(&mut store, &config.encoder, &mut rng)?;
        let readout = ReadoutParams::register(&mut store, d, &mut rng);
        let flow_encoder = config
            .views
            .flow
            .then(|| FlowEncoder::register(&mut store, intervals, d, &mut rng));
        let image_proj = config
            .views
            .imagery
            .then(|| Affine::register(&mut store, "image_proj", image_dim, d, &mut rng));
        let fusion = config
            .views
            .fusion
            .then(|| FusionParams::register(&mut store, config.views.fusion_arity(), d, &mut rng));
        Ok(Self {
            config: config.clone(),
            seed,
            store,
            features,
            encoder,
            readout,
            flow_encoder,
            image_proj,
            fusion,
            intervals,
            image_dim,
        })
    }

    /// Rounds every parameter to `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        let ids: Vec<_> = self.store.ids().collect();
        for id in ids {
            round_f32(self.store.get_mut(id));
        }
    }

    pub fn dim(&self) -> usize {
        self.config.dim()
    }

    pub fn pattern(&self) -> GraphPattern {
        GraphPattern::preset(&self.config.pattern).expect("checked preset")
    }

    /// Region subgraphs in region order under the model's pattern, capped
    /// and carrying node features.
    pub fn subgraphs(&self, graph: &UrbanGraph) -> Result<Vec<RegionSubgraph>> {
        self.subgraphs_with(graph, &self.pattern())
    }

    pub fn subgraphs_with(&self, graph: &UrbanGraph, pattern: &GraphPattern) -> Result<Vec<RegionSubgraph>> {
        let table = self.feature_table(graph)?;
        graph
            .regions()
            .iter()
            .enumerate()
            .map(|(k, &r)| {
                let sub = extract_index(graph, r, pattern);
                let mut sub = subsample(&sub, self.config.subgraph_cap, self.seed.wrapping_add(k as u64))?;
                sub.attach_features(&table)?;
                Ok(sub)
            })
            .collect()
    }

    /// Feature rows keyed by node id; a graph other than the training one
    /// gets its own deterministic TransR tables.
    pub fn feature_table(&self, graph: &UrbanGraph) -> Result<FeatureTable> {
        let ids: Vec<&str> = graph.nodes().iter().map(|n| n.id.as_str()).collect();
        let same = ids.len() == self.features.node_ids.len()
            && ids.iter().zip(&self.features.node_ids).all(|(a, b)| *a == b);
        if same {
            return Ok(FeatureTable::from_transr(&self.features));
        }
        let mut state = match self.config.init {
            InitMode::Transr => train_transr(graph, &self.config.transr, self.seed)?,
            InitMode::Random => TransRState::init(graph, &self.config.transr, self.seed),
        };
        round_f32(&mut state.entities);
        Ok(FeatureTable::from_transr(&state))
    }

    /// Region embeddings `h_r` (`N × d`, region order).
    pub fn embed_subgraphs(&self, subs: &[RegionSubgraph]) -> Result<Mat> {
        let rows: Vec<Array1<f64>> = subs
            .par_iter()
            .map(|s| {
                let mut tape = Tape::new(&self.store);
                let h = encode_region_on(&mut tape, s, &self.encoder, &self.readout)?;
                Ok(tape.value(h).row(0).to_owned())
            })
            .collect::<Result<_>>()?;
        stack_rows(&rows, self.dim())
    }

    pub fn embed(&self, graph: &UrbanGraph) -> Result<Mat> {
        self.embed_subgraphs(&self.subgraphs(graph)?)
    }
}

pub(crate) fn stack_rows(rows: &[Array1<f64>], dim: usize) -> Result<Mat> {
    let mut m = Mat::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        check_dim(dim, r.len())?;
        m.row_mut(i).assign(r);
    }
    Ok(m)
}

/// Everything the losses need besides the parameters.
#[derive(Debug, Clone)]
pub struct PretrainContext {
    pub subgraphs: Vec<RegionSubgraph>,
    pub sampler: TripletSampler,
    pub flows: Option<(FlowFeatures, FlowDistributions)>,
    /// Region rows with images and their mean feature vectors.
    pub image_rows: Vec<usize>,
    pub image_means: Mat,
}

impl PretrainContext {
    pub fn new(model: &ModelState, graph: &UrbanGraph, images: Option<&ImageSet>) -> Result<Self> {
        let subgraphs = model.subgraphs(graph)?;
        let flows = model.config.views.flow.then(|| {
            let f = FlowFeatures::from_graph(graph);
            let d = flow_distributions(&f.trips);
            (f, d)
        });
        let mut image_rows = Vec::new();
        let mut means = Vec::new();
        if let (true, Some(set)) = (model.config.views.imagery, images) {
            for (k, id) in graph.region_ids().iter().enumerate() {
                if let Some(m) = set.mean(id) {
                    image_rows.push(k);
                    means.push(m);
                }
            }
            if image_rows.is_empty() {
                return Err(Error::MissingView("no region has image features".into()));
            }
        }
        let image_means = stack_rows(&means, model.image_dim)?;
        Ok(Self {
            subgraphs,
            sampler: TripletSampler::new(graph),
            flows,
            image_rows,
            image_means,
        })
    }

    pub fn regions(&self) -> usize {
        self.subgraphs.len()
    }

    pub fn triplets(&self, seed: u64, epoch: usize) -> Vec<(usize, usize, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        self.sampler.epoch(&mut rng)
    }
}

/// Builds all active loss terms on `tape` from the stacked embeddings `h`.
fn head_losses(
    tape: &mut Tape,
    model: &ModelState,
    ctx: &PretrainContext,
    h: Var,
    triplets: &[(usize, usize, usize)],
) -> (Option<Var>, Option<Var>, Option<Var>, Option<Var>, Var) {
    let cfg = &model.config;
    let views = cfg.views;
    let n = ctx.regions();
    let spatial = views
        .spatial
        .then(|| triplet_loss_on(tape, h, triplets, cfg.margin));
    let img_full = model.image_proj.map(|proj| {
        let x = tape.constant(ctx.image_means.clone());
        let img = proj.apply(tape, x);
        (img, tape.scatter_add_rows(img, &ctx.image_rows, n))
    });
    let imagery = img_full.map(|(img, _)| {
        let hp = tape.gather_rows(h, &ctx.image_rows);
        contrastive_loss_on(tape, hp, img, cfg.temperature, cfg.normalize_contrastive)
    });
    let flow_views = match (&model.flow_encoder, &ctx.flows) {
        (Some(enc), Some((f, _))) => Some((enc.apply(tape, &f.outflow), enc.apply(tape, &f.inflow))),
        _ => None,
    };
    let flow = match (flow_views, &ctx.flows) {
        (Some((s, d)), Some((_, dist))) => Some(flow_loss_on(tape, s, d, dist)),
        _ => None,
    };
    let fusion = model.fusion.as_ref().map(|fp| {
        let mut vs = vec![h];
        if let Some((_, full)) = img_full {
            vs.push(full);
        }
        if let Some((s, d)) = flow_views {
            vs.push(s);
            vs.push(d);
        }
        fusion_loss_on(tape, &vs, fp)
    });
    let mut terms: Vec<Var> = [spatial, imagery, flow].into_iter().flatten().collect();
    if let Some(f) = fusion {
        terms.push(tape.scale(f, cfg.fusion_weight));
    }
    let total = sum_terms(tape, &terms);
    (spatial, imagery, flow, fusion, total)
}

fn breakdown(tape: &Tape, parts: (Option<Var>, Option<Var>, Option<Var>, Option<Var>, Var)) -> LossBreakdown {
    let v = |x: Option<Var>| x.map_or(0.0, |x| tape.scalar(x));
    LossBreakdown {
        spatial: v(parts.0),
        imagery: v(parts.1),
        flow: v(parts.2),
        fusion: v(parts.3),
        total: tape.scalar(parts.4),
    }
}

/// Loss values at the current parameters.
pub fn evaluate_losses(
    model: &ModelState,
    ctx: &PretrainContext,
    triplets: &[(usize, usize, usize)],
) -> Result<LossBreakdown> {
    let h = model.embed_subgraphs(&ctx.subgraphs)?;
    let mut tape = Tape::new(&model.store);
    let hv = tape.constant(h);
    let parts = head_losses(&mut tape, model, ctx, hv, triplets);
    Ok(breakdown(&tape, parts))
}

/// Loss values and the full parameter gradient of the joint objective.
pub fn loss_and_gradient(
    model: &ModelState,
    ctx: &PretrainContext,
    triplets: &[(usize, usize, usize)],
) -> Result<(LossBreakdown, BTreeMap<ParamId, Mat>)> {
    let h = model.embed_subgraphs(&ctx.subgraphs)?;
    let mut tape = Tape::new(&model.store);
    let hv = tape.input(h);
    let parts = head_losses(&mut tape, model, ctx, hv, triplets);
    let losses = breakdown(&tape, parts);
    let grads = tape.backward(parts.4);
    let dh = grads
        .wrt(hv)
        .cloned()
        .unwrap_or_else(|| Mat::zeros((ctx.regions(), model.dim())));
    let mut acc = GradAccumulator::new();
    acc.add(grads.params());
    let per_region: Vec<BTreeMap<ParamId, Mat>> = ctx
        .subgraphs
        .par_iter()
        .enumerate()
        .map(|(k, sub)| {
            let seed = dh.row(k).to_owned().insert_axis(Axis(0));
            let mut t = Tape::new(&model.store);
            let x = t.constant(sub.features.clone());
            let nodes = encode_var(&mut t, x, sub, &model.encoder);
            let hr = readout_var(&mut t, nodes, sub, &model.readout);
            t.backward_with(hr, seed).into_params()
        })
        .collect();
    for g in &per_region {
        acc.add(g);
    }
    Ok((losses, acc.into_inner()))
}

/// Runs `epochs` full-batch Adam steps, returning the loss of each epoch
/// measured before its update.
pub fn train(
    model: &mut ModelState,
    ctx: &PretrainContext,
    epochs: usize,
) -> Result<Vec<LossBreakdown>> {
    let mut adam = Adam::new(model.config.lr, model.config.weight_decay);
    let mut log = Vec::with_capacity(epochs);
    let fixed = ctx.triplets(model.seed, 0);
    for epoch in 0..epochs {
        let triplets = if model.config.resample_triplets {
            ctx.triplets(model.seed, epoch)
        } else {
            fixed.clone()
        };
        let (losses, grads) = loss_and_gradient(model, ctx, &triplets)?;
        if !losses.total.is_finite() {
            return Err(Error::Untrainable(format!("loss became non-finite at epoch {epoch}")));
        }
        adam.step(&mut model.store, &grads);
        log.push(losses);
    }
    Ok(log)
}

/// Initializes a model and trains it for `config.epochs` epochs.
pub fn pretrain(
    graph: &UrbanGraph,
    images: Option<&ImageSet>,
    config: &PretrainConfig,
    seed: u64,
) -> Result<(ModelState, Vec<LossBreakdown>)> {
    let mut model = ModelState::init(graph, images, config, seed)?;
    let ctx = PretrainContext::new(&model, graph, images)?;
    let log = train(&mut model, &ctx, config.epochs)?;
    model.round_to_f32();
    Ok((model, log))
}

/// Trains a fresh fusion layer and decoders on fixed view embeddings
/// (each `N × d`), returning the fusion loss of every step.
pub fn fit_fusion(views: &[Mat], steps: usize, lr: f64, seed: u64) -> Result<(ParamStore, FusionParams, Vec<f64>)> {
    let first = views
        .first()
        .ok_or_else(|| Error::InvalidArgument("no views to fuse".into()))?;
    let d = first.ncols();
    for v in views {
        check_dim(first.nrows(), v.nrows())?;
        check_dim(d, v.ncols())?;
    }
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = FusionParams::register(&mut store, views.len(), d, &mut rng);
    let mut adam = Adam::new(lr, 0.0);
    let mut log = Vec::with_capacity(steps);
    for _ in 0..steps {
        let grads = {
            let mut tape = Tape::new(&store);
            let vs: Vec<Var> = views.iter().map(|v| tape.constant(v.clone())).collect();
            let loss = fusion_loss_on(&mut tape, &vs, &params);
            log.push(tape.scalar(loss));
            tape.backward(loss).into_params()
        };
        adam.step(&mut store, &grads);
    }
    Ok((store, params, log))
}

pub fn write_loss_log(path: &Path, log: &[LossBreakdown], config_hash: &str) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_comment(&mut w, path, &format!("config_hash={config_hash}"))?;
    write_row(&mut w, path, ["epoch", "L_sp", "L_img", "L_flow", "L_fuse", "total"])?;
    for (e, l) in log.iter().enumerate() {
        write_row(
            &mut w,
            path,
            [
                e.to_string(),
                format!("{:.9}", l.spatial),
                format!("{:.9}", l.imagery),
                format!("{:.9}", l.flow),
                format!("{:.9}", l.fusion),
                format!("{:.9}", l.total),
            ],
        )?;
    }
    flush(w, path)
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossBreakdown>> {
    read_csv(path, &["epoch", "L_sp", "L_img", "L_flow", "L_fuse", "total"])?
        .into_iter()
        .map(|(line, f)| {
            let p = |s: &str| {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    file: path.display().to_string(),
                    line,
                    message: e.to_string(),
                })
            };
            Ok(LossBreakdown {
                spatial: p(&f[1])?,
                imagery: p(&f[2])?,
                flow: p(&f[3])?,
                fusion: p(&f[4])?,
                total: p(&f[5])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn triplet_examples() {
        let z = array![0.0, 0.0];
        assert_eq!(triplet_loss(&z, &array![1.0, 0.0], &array![4.0, 0.0], 2.0).unwrap(), 0.0);
        assert_eq!(triplet_loss(&z, &z, &array![0.0, 1.0], 2.0).unwrap(), 1.0);
        assert_eq!(triplet_loss(&z, &z, &z, 2.0).unwrap(), 2.0);
        assert!(triplet_loss(&z, &array![1.0], &z, 2.0).is_err());
    }

    #[test]
    fn image_embed_examples() {
        let mut store = ParamStore::new();
        let proj = Affine {
            weight: store.add("w", Mat::eye(2)),
            bias: store.add("b", Mat::zeros((1, 2))),
        };
        let a = array![1.0, 0.0];
        let b = array![0.0, 1.0];
        assert_eq!(image_embed(&store, &[a.clone()], &proj).unwrap(), a);
        assert_eq!(image_embed(&store, &[a.clone(), -&a], &proj).unwrap(), array![0.0, 0.0]);
        assert_eq!(image_embed(&store, &[a, b], &proj).unwrap(), array![0.5, 0.5]);
        assert!(matches!(image_embed(&store, &[], &proj), Err(Error::MissingView(_))));
    }

    #[test]
    fn contrastive_examples() {
        let h = array![[1.0, 2.0]];
        assert_eq!(contrastive_loss(&h, &array![[3.0, -1.0]], 0.1, false).unwrap(), 0.0);
        let ones = Mat::from_elem((2, 2), 1.0);
        assert_abs_diff_eq!(
            contrastive_loss(&ones, &ones, 0.1, false).unwrap(),
            2.0 * 2f64.ln(),
            epsilon = 1e-12
        );
        // h1·img1/τ = 2, h1·img2/τ = 0, symmetric
        let h = array![[0.2, 0.0], [0.0, 0.2]];
        let img = Mat::eye(2);
        let expect = 2.0 * (-2.0 + (2f64.exp() + 1.0).ln());
        assert_abs_diff_eq!(contrastive_loss(&h, &img, 0.1, false).unwrap(), expect, epsilon = 1e-12);
        assert!(contrastive_loss(&h, &img.slice(ndarray::s![0..1, ..]).to_owned(), 0.1, false).is_err());
    }

    #[test]
    fn flow_distribution_examples() {
        let m = array![[0.0, 2.0, 2.0], [1.0, 0.0, 3.0], [4.0, 0.0, 0.0]];
        let d = flow_distributions(&m);
        assert_eq!(d.dest.row(0).to_vec(), vec![0.0, 0.5, 0.5]);
        assert_abs_diff_eq!(d.origin[[0, 2]], 0.4, epsilon = 1e-15);
        let u = array![[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]];
        let du = flow_distributions(&u);
        assert_eq!(du.dest[[0, 1]], 0.5);
        let z = array![[0.0, 1.0], [0.0, 0.0]];
        let dz = flow_distributions(&z);
        assert_eq!(dz.active_rows, vec![true, false]);
        assert_eq!(dz.active_cols, vec![false, true]);
    }

    #[test]
    fn flow_loss_examples() {
        let m = array![[0.0, 2.0, 2.0], [1.0, 0.0, 3.0], [4.0, 0.0, 0.0]];
        let d = flow_distributions(&m);
        let same = Mat::from_elem((3, 2), 0.3);
        let loss = flow_loss(&same, &same, &d).unwrap();
        // 3 active rows and 3 active columns, each contributing log 3
        assert_abs_diff_eq!(loss, 6.0 * 3f64.ln(), epsilon = 1e-12);
        assert!(loss >= flow_entropy(&d));
        let d2 = flow_distributions(&(&m * 2.0));
        assert_eq!(flow_loss(&same, &same, &d2).unwrap(), loss);
        assert!(flow_loss(&same.slice(ndarray::s![0..1, ..]).to_owned(), &same, &d).is_err());
    }

    #[test]
    fn fuse_and_fusion_loss_examples() {
        let mut store = ParamStore::new();
        let params = FusionParams {
            map: Affine {
                weight: store.add("fusion.map.w", array![[1.0], [1.0]]),
                bias: store.add("fusion.map.b", array![[0.0]]),
            },
            decoders: vec![],
        };
        let mut p2 = params.clone();
        p2.decoders = vec![params.map, params.map];
        let out = fuse(&store, &[array![2.0], array![3.0]], &p2).unwrap();
        assert_eq!(out, array![5.0]);
        *store.get_mut(params.map.bias) = array![[-10.0]];
        assert_eq!(fuse(&store, &[array![2.0], array![3.0]], &p2).unwrap(), array![0.0]);
        assert!(fuse(&store, &[array![2.0]], &p2).is_err());

        let mut s = ParamStore::new();
        let dec = Affine {
            weight: s.add("d.w", array![[0.0]]),
            bias: s.add("d.b", array![[1.0]]),
        };
        let fp = FusionParams {
            map: dec,
            decoders: vec![dec],
        };
        assert_eq!(fusion_loss(&s, &array![7.0], &[array![3.0]], &fp).unwrap(), 4.0);
        assert_eq!(fusion_loss(&s, &array![7.0], &[array![1.0]], &fp).unwrap(), 0.0);
    }

    #[test]
    fn views_label_and_arity() {
        let mut v = ViewSet::all();
        assert_eq!(v.fusion_arity(), 4);
        v.imagery = false;
        assert_eq!(v.fusion_arity(), 3);
        assert_eq!(v.label(), "S+F+M");
        let none = ViewSet {
            spatial: false,
            imagery: false,
            flow: false,
            fusion: false,
        };
        assert!(matches!(none.check(), Err(Error::Config(_))));
    }
}
