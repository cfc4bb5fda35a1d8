//! A small reverse-mode automatic differentiation tape over dense `f64`
//! matrices.
//!
//! Trainable parameters live in a [`ParamStore`] and are referenced by the
//! tape rather than copied, so many tapes (one per region subgraph) can share
//! one store. Vectors are represented as `1 × n` matrices.

use std::collections::BTreeMap;

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable matrices in insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Gelu(Var),
    Relu(Var),
    Sigmoid(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    Reshape(Var),
    MaskedSoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Sum(Var),
    SumRows(Var),
    Norm(Var),
    LayerNormRows(Var, Mat),
    NormalizeRows(Var, Mat),
}

struct Node {
    op: Op,
    value: Option<Mat>,
    requires_grad: bool,
}

pub struct Tape<'s> {
    store: Option<&'s ParamStore>,
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// GELU (tanh form) applied elementwise outside a tape.
pub fn gelu_scalar(x: f64) -> f64 {
    gelu(x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

fn masked_softmax(x: &Mat, mask: &Array2<bool>) -> Mat {
    let mut out = Mat::zeros(x.raw_dim());
    for ((xr, mr), mut or) in x.rows().into_iter().zip(mask.rows()).zip(out.rows_mut()) {
        let max = xr
            .iter()
            .zip(mr)
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut total = 0.0;
        for ((o, v), &m) in or.iter_mut().zip(xr).zip(mr) {
            if m {
                *o = (v - max).exp();
                total += *o;
            }
        }
        or.mapv_inplace(|v| v / total);
    }
    out
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
        }
    }

    /// A tape with no parameter store; only inputs and constants.
    pub fn detached() -> Tape<'static> {
        Tape {
            store: None,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, value: Mat, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.store.expect("tape without store").get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(Op::Leaf, value, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        assert!(self.store.is_some(), "tape without parameter store");
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MatMul(a, b), v, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Add(a, b), v, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Sub(a, b), v, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Mul(a, b), v, rg)
    }

    /// `a + bias` with a `1 × m` bias broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.nrows(), 1, "bias must be a row vector");
        let v = self.value(a) + &b.row(0);
        let rg = self.rg(a) || self.rg(bias);
        self.push(Op::AddRow(a, bias), v, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        let rg = self.rg(a);
        self.push(Op::Scale(a, c), v, rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        let rg = self.rg(a);
        self.push(Op::AddScalar(a), v, rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        let rg = self.rg(a);
        self.push(Op::Gelu(a), v, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(Op::Relu(a), v, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        let rg = self.rg(a);
        self.push(Op::Sigmoid(a), v, rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        let rg = self.rg(a);
        self.push(Op::Transpose(a), v, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts differ");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Op::ConcatCols(parts.to_vec()), v, rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column counts differ");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Op::ConcatRows(parts.to_vec()), v, rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        let rg = self.rg(a);
        self.push(Op::SliceCols(a, start, end), v, rg)
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), rows);
        let rg = self.rg(a);
        self.push(Op::GatherRows(a, rows.to_vec()), v, rg)
    }

    /// Output has `n` rows; row `rows[i]` accumulates input row `i`.
    pub fn scatter_add_rows(&mut self, a: Var, rows: &[usize], n: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.nrows(), rows.len());
        let mut v = Mat::zeros((n, src.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            let mut dst = v.row_mut(r);
            dst += &src.row(i);
        }
        let rg = self.rg(a);
        self.push(Op::ScatterAddRows(a, rows.to_vec()), v, rg)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let src = self.value(a);
        let flat: Vec<f64> = src.iter().cloned().collect();
        let v = Mat::from_shape_vec((rows, cols), flat).expect("reshape size mismatch");
        let rg = self.rg(a);
        self.push(Op::Reshape(a), v, rg)
    }

    /// Softmax over the entries of each row where `mask` is true; masked-out
    /// entries are exactly zero, and fully masked rows are all zero.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: &Array2<bool>) -> Var {
        let v = masked_softmax(self.value(a), mask);
        let rg = self.rg(a);
        self.push(Op::MaskedSoftmaxRows(a), v, rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let v = log_softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(Op::LogSoftmaxRows(a), v, rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(Op::Sum(a), v, rg)
    }

    /// Column sums as a `1 × m` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        let rg = self.rg(a);
        self.push(Op::SumRows(a), v, rg)
    }

    /// Frobenius norm; the gradient at zero is taken as zero.
    pub fn norm(&mut self, a: Var) -> Var {
        let n = self.value(a).iter().map(|x| x * x).sum::<f64>().sqrt();
        let rg = self.rg(a);
        self.push(Op::Norm(a), Mat::from_elem((1, 1), n), rg)
    }

    /// Per-row standardization without affine parameters.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let m = x.ncols() as f64;
        let mut y = x.clone();
        let mut inv_std = Mat::zeros((x.nrows(), 1));
        for (i, mut row) in y.rows_mut().into_iter().enumerate() {
            let mean = row.sum() / m;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[[i, 0]] = inv;
            row.mapv_inplace(|v| (v - mean) * inv);
        }
        let rg = self.rg(a);
        self.push(Op::LayerNormRows(a, inv_std), y, rg)
    }

    /// Scales each row to unit L2 norm; all-zero rows stay zero.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut y = x.clone();
        let mut inv = Mat::zeros((x.nrows(), 1));
        for (i, mut row) in y.rows_mut().into_iter().enumerate() {
            let n = row.dot(&row).sqrt();
            if n > 0.0 {
                inv[[i, 0]] = 1.0 / n;
                row.mapv_inplace(|v| v / n);
            }
        }
        let rg = self.rg(a);
        self.push(Op::NormalizeRows(a, inv), y, rg)
    }

    /// Reverse pass from a `1 × 1` output with seed 1.
    pub fn backward(&self, out: Var) -> Gradients {
        let shape = self.value(out).raw_dim();
        assert_eq!(shape[0] * shape[1], 1, "backward() needs a scalar output");
        self.backward_with(out, Mat::ones((1, 1)))
    }

    /// Reverse pass from `out` with an explicit seed gradient.
    pub fn backward_with(&self, out: Var, seed: Mat) -> Gradients {
        assert_eq!(seed.raw_dim(), self.value(out).raw_dim(), "seed shape");
        let mut grads: Vec<Option<Mat>> = vec![None; out.0 + 1];
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut params: BTreeMap<ParamId, Mat> = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate().take(out.0 + 1) {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads[i]) {
                match params.get_mut(id) {
                    Some(acc) => *acc += g,
                    None => {
                        params.insert(*id, g.clone());
                    }
                }
            }
        }
        Gradients { nodes: grads, params }
    }

    fn acc(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let out = self.nodes[i].value.as_ref();
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.acc(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.rg(*b) {
                    self.acc(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.acc(grads, *a, g * self.value(*b));
                }
                if self.rg(*b) {
                    self.acc(grads, *b, g * self.value(*a));
                }
            }
            Op::AddRow(a, b) => {
                self.acc(grads, *a, g.clone());
                if self.rg(*b) {
                    self.acc(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Scale(a, c) => self.acc(grads, *a, g * *c),
            Op::AddScalar(a) => self.acc(grads, *a, g.clone()),
            Op::Gelu(a) => {
                let mut d = self.value(*a).mapv(gelu_grad);
                d *= g;
                self.acc(grads, *a, d);
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                self.acc(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let y = out.unwrap();
                let d = g * &y.mapv(|y| y * (1.0 - y));
                self.acc(grads, *a, d);
            }
            Op::Transpose(a) => self.acc(grads, *a, g.t().to_owned()),
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    if self.rg(*p) {
                        self.acc(grads, *p, g.slice(s![.., start..start + w]).to_owned());
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let h = self.value(*p).nrows();
                    if self.rg(*p) {
                        self.acc(grads, *p, g.slice(s![start..start + h, ..]).to_owned());
                    }
                    start += h;
                }
            }
            Op::SliceCols(a, start, end) => {
                let mut d = Mat::zeros(self.value(*a).raw_dim());
                d.slice_mut(s![.., *start..*end]).assign(g);
                self.acc(grads, *a, d);
            }
            Op::GatherRows(a, rows) => {
                let mut d = Mat::zeros(self.value(*a).raw_dim());
                for (k, &r) in rows.iter().enumerate() {
                    let mut dst = d.row_mut(r);
                    dst += &g.row(k);
                }
                self.acc(grads, *a, d);
            }
            Op::ScatterAddRows(a, rows) => {
                self.acc(grads, *a, g.select(Axis(0), rows));
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).raw_dim();
                let flat: Vec<f64> = g.iter().cloned().collect();
                self.acc(
                    grads,
                    *a,
                    Mat::from_shape_vec(shape, flat).expect("reshape grad"),
                );
            }
            Op::MaskedSoftmaxRows(a) => {
                let y = out.unwrap();
                let mut d = Mat::zeros(y.raw_dim());
                for ((yr, gr), mut dr) in y.rows().into_iter().zip(g.rows()).zip(d.rows_mut()) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for ((dv, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *dv = yv * (gv - dot);
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::LogSoftmaxRows(a) => {
                let y = out.unwrap();
                let mut d = g.clone();
                for ((yr, gr), mut dr) in y.rows().into_iter().zip(g.rows()).zip(d.rows_mut()) {
                    let gs: f64 = gr.sum();
                    for (dv, &yv) in dr.iter_mut().zip(yr) {
                        *dv -= yv.exp() * gs;
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::Sum(a) => {
                let d = Mat::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                self.acc(grads, *a, d);
            }
            Op::SumRows(a) => {
                let n = self.value(*a).nrows();
                let d = g
                    .broadcast((n, g.ncols()))
                    .expect("sum_rows broadcast")
                    .to_owned();
                self.acc(grads, *a, d);
            }
            Op::Norm(a) => {
                let n = out.unwrap()[[0, 0]];
                if n > 0.0 {
                    self.acc(grads, *a, self.value(*a) * (g[[0, 0]] / n));
                }
            }
            Op::LayerNormRows(a, inv_std) => {
                let y = out.unwrap();
                let m = y.ncols() as f64;
                let mut d = Mat::zeros(y.raw_dim());
                for (r, ((yr, gr), mut dr)) in
                    y.rows().into_iter().zip(g.rows()).zip(d.rows_mut()).enumerate()
                {
                    let mg = gr.sum() / m;
                    let mgy = yr.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>() / m;
                    let inv = inv_std[[r, 0]];
                    for ((dv, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *dv = inv * (gv - mg - yv * mgy);
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::NormalizeRows(a, inv) => {
                let y = out.unwrap();
                let mut d = Mat::zeros(y.raw_dim());
                for (r, ((yr, gr), mut dr)) in
                    y.rows().into_iter().zip(g.rows()).zip(d.rows_mut()).enumerate()
                {
                    let gy = yr.dot(&gr);
                    let k = inv[[r, 0]];
                    for ((dv, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *dv = k * (gv - yv * gy);
                    }
                }
                self.acc(grads, *a, d);
            }
        }
    }
}

/// Result of a reverse pass.
pub struct Gradients {
    nodes: Vec<Option<Mat>>,
    params: BTreeMap<ParamId, Mat>,
}

impl Gradients {
    /// Gradient with respect to an input leaf (or any node), if it received one.
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Mat> {
        self.params.get(&id)
    }

    pub fn params(&self) -> &BTreeMap<ParamId, Mat> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<ParamId, Mat> {
        self.params
    }
}

/// Accumulated parameter gradients, summed in a fixed order.
#[derive(Debug, Clone, Default)]
pub struct GradAccumulator {
    grads: BTreeMap<ParamId, Mat>,
}

impl GradAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, grads: &BTreeMap<ParamId, Mat>) {
        for (id, g) in grads {
            match self.grads.get_mut(id) {
                Some(acc) => *acc += g,
                None => {
                    self.grads.insert(*id, g.clone());
                }
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.grads.get(&id)
    }

    pub fn into_inner(self) -> BTreeMap<ParamId, Mat> {
        self.grads
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Mat)> {
        self.grads.iter()
    }
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: BTreeMap<ParamId, Mat>,
    v: BTreeMap<ParamId, Mat>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Updates every parameter that has a gradient. Parameters listed in
    /// `frozen` are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<ParamId, Mat>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (&id, g) in grads {
            let p = store.get_mut(id);
            let mut g = g.clone();
            if self.weight_decay != 0.0 {
                g.scaled_add(self.weight_decay, p);
            }
            let m = self.m.entry(id).or_insert_with(|| Mat::zeros(g.raw_dim()));
            let v = self.v.entry(id).or_insert_with(|| Mat::zeros(g.raw_dim()));
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            Zip::from(p)
                .and(m)
                .and(v)
                .and(&g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *p -= lr * mh / (vh.sqrt() + eps);
                });
        }
    }
}

/// Plain gradient descent step.
pub fn sgd_step(store: &mut ParamStore, grads: &BTreeMap<ParamId, Mat>, lr: f64) {
    for (&id, g) in grads {
        store.get_mut(id).scaled_add(-lr, g);
    }
}

/// Builds a `1 × n` row from a slice.
pub fn row(values: &[f64]) -> Mat {
    Mat::from_shape_vec((1, values.len()), values.to_vec()).expect("row")
}

/// Checks that a matrix has the given shape.
pub fn expect_shape(m: &Mat, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::DimensionMismatch {
            expected: rows * cols,
            actual: m.len(),
        });
    }
    Ok(())
}
