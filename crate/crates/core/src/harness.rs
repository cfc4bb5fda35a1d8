//! Downstream evaluation of frozen region embeddings: ridge regression,
//! error metrics, and the k-fold, few-shot and zero-shot protocols.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use ndarray::{Array1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::graph::{csv_writer, flush, read_csv, write_comment, write_row};
use crate::tape::Mat;

/// Where an embedding matrix came from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EmbeddingSource {
    /// `h_r` of the pretrained encoder.
    Pretrained,
    /// Pretrained encoder on subgraphs adjusted by a manual preset.
    Manual(String),
    /// Prompted embeddings from a tuned prompt.
    Learnable,
    /// The region's own TransR entity vector.
    TransrNode,
    /// Mean TransR vector over the region subgraph.
    TransrGraph,
    Random,
}

impl fmt::Display for EmbeddingSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbeddingSource::Pretrained => f.write_str("pretrained"),
            EmbeddingSource::Manual(p) => write!(f, "manual:{p}"),
            EmbeddingSource::Learnable => f.write_str("learnable"),
            EmbeddingSource::TransrNode => f.write_str("transr-node"),
            EmbeddingSource::TransrGraph => f.write_str("transr-graph"),
            EmbeddingSource::Random => f.write_str("random"),
        }
    }
}

impl FromStr for EmbeddingSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pretrained" => EmbeddingSource::Pretrained,
            "learnable" => EmbeddingSource::Learnable,
            "transr-node" => EmbeddingSource::TransrNode,
            "transr-graph" => EmbeddingSource::TransrGraph,
            "random" => EmbeddingSource::Random,
            _ => match s.strip_prefix("manual:") {
                Some(p) if !p.is_empty() => EmbeddingSource::Manual(p.to_string()),
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown embedding source `{s}` (expected pretrained, manual:<preset>, \
                         learnable, transr-node, transr-graph or random)"
                    )))
                }
            },
        })
    }
}

/// Region embeddings with row order matching `ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub ids: Vec<String>,
    pub values: Mat,
    pub source: EmbeddingSource,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, values: Mat, source: EmbeddingSource) -> Result<Self> {
        check_dim(ids.len(), values.nrows())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("embedding has non-finite entries".into()));
        }
        Ok(Self { ids, values, source })
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Uniform `[-1, 1]` embeddings.
    pub fn random(ids: Vec<String>, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = Mat::from_shape_fn((ids.len(), dim), |_| rng.random_range(-1.0..1.0));
        Self {
            ids,
            values,
            source: EmbeddingSource::Random,
        }
    }

    /// Writes `region_id,e0,...,e{d-1}` preceded by a source/provenance
    /// comment.
    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        let mut w = csv_writer(path)?;
        write_comment(&mut w, path, &format!("source={} config_hash={config_hash}", self.source))?;
        let header: Vec<String> = std::iter::once("region_id".to_string())
            .chain((0..self.dim()).map(|i| format!("e{i}")))
            .collect();
        write_row(&mut w, path, header)?;
        for (id, row) in self.ids.iter().zip(self.values.rows()) {
            let fields: Vec<String> = std::iter::once(id.clone())
                .chain(row.iter().map(|v| format!("{v:.9e}")))
                .collect();
            write_row(&mut w, path, fields)?;
        }
        flush(w, path)
    }

    /// Reads the CSV written by [`EmbeddingMatrix::save`]; the source tag is
    /// taken from the comment line when present.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut source = EmbeddingSource::Pretrained;
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            for tok in line.trim_start_matches('#').split_whitespace() {
                if let Some(s) = tok.strip_prefix("source=") {
                    source = s.parse()?;
                }
            }
        }
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
            .chain((0..dim).map(|i| format!("e{i}")))
            .collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let rows = read_csv(path, &refs)?;
        let mut ids = Vec::with_capacity(rows.len());
        let mut values = Mat::zeros((rows.len(), dim));
        for (k, (line, fields)) in rows.into_iter().enumerate() {
            if fields.len() != dim + 1 {
                return Err(Error::Parse {
                    file: path.display().to_string(),
                    line,
                    message: format!("expected {} fields, found {}", dim + 1, fields.len()),
                });
            }
            for (j, s) in fields[1..].iter().enumerate() {
                values[[k, j]] = s.parse().map_err(|_| Error::Parse {
                    file: path.display().to_string(),
                    line,
                    message: format!("invalid number `{s}`"),
                })?;
            }
            ids.push(fields[0].clone());
        }
        Self::new(ids, values, source)
    }
}

/// Per-region regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub name: String,
    pub values: BTreeMap<String, f64>,
}

impl Labels {
    pub fn new(name: impl Into<String>, values: BTreeMap<String, f64>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }

    /// Reads `region_id,value`; the task name is the file stem.
    pub fn load(path: &Path) -> Result<Self> {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut values = BTreeMap::new();
        for (line, f) in read_csv(path, &["region_id", "value"])? {
            let v = f.get(1).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| Error::Parse {
                file: path.display().to_string(),
                line,
                message: "expected `region_id,value` with a numeric value".into(),
            })?;
            values.insert(f[0].clone(), v);
        }
        Ok(Self { name, values })
    }

    pub fn save(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let mut w = csv_writer(path)?;
        if let Some(c) = comment {
            write_comment(&mut w, path, c)?;
        }
        write_row(&mut w, path, ["region_id", "value"])?;
        for (id, v) in &self.values {
            write_row(&mut w, path, [id.clone(), format!("{v:.6}")])?;
        }
        flush(w, path)
    }

    /// Targets aligned with `ids`; every id needs a label.
    pub fn aligned(&self, ids: &[String]) -> Result<Array1<f64>> {
        ids.iter()
            .map(|id| {
                self.values.get(id).copied().ok_or_else(|| {
                    Error::UnknownRegion(format!("task `{}` has no label for `{id}`", self.name))
                })
            })
            .collect()
    }
}

/// Label access that counts every read, used to prove the zero-shot
/// protocol never consults target-city labels while fitting.
#[derive(Debug)]
pub struct ProbedLabels<'a> {
    labels: &'a Labels,
    reads: Cell<usize>,
}

impl<'a> ProbedLabels<'a> {
    pub fn new(labels: &'a Labels) -> Self {
        Self {
            labels,
            reads: Cell::new(0),
        }
    }

    pub fn aligned(&self, ids: &[String]) -> Result<Array1<f64>> {
        self.reads.set(self.reads.get() + ids.len());
        self.labels.aligned(ids)
    }

    pub fn reads(&self) -> usize {
        self.reads.get()
    }

    pub fn name(&self) -> &str {
        &self.labels.name
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub coef: Array1<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict(&self, x: &Mat) -> Array1<f64> {
        x.dot(&self.coef) + self.intercept
    }
}

/// Ridge regression with an unpenalized intercept, solved on centered data
/// through the SVD. With `alpha = 0` this is the minimum-norm least-squares
/// solution.
pub fn ridge(x: &Mat, y: &Array1<f64>, alpha: f64) -> Result<LinearModel> {
    if x.nrows() == 0 {
        return Err(Error::TooFewRows("ridge needs at least one row".into()));
    }
    check_dim(x.nrows(), y.len())?;
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge alpha must be >= 0, got {alpha}")));
    }
    let (n, p) = x.dim();
    let xm = x.mean_axis(Axis(0)).expect("rows");
    let ym = y.mean().expect("rows");
    let xc = x - &xm;
    let yc = y - ym;
    let a = DMatrix::from_fn(n, p, |i, j| xc[[i, j]]);
    let svd = a.svd(true, true);
    let u = svd.u.expect("u");
    let vt = svd.v_t.expect("v_t");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = smax * n.max(p) as f64 * f64::EPSILON;
    let mut coef = Array1::zeros(p);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s <= tol {
            continue;
        }
        let uy: f64 = (0..n).map(|i| u[(i, k)] * yc[i]).sum();
        let w = s / (s * s + alpha) * uy;
        for j in 0..p {
            coef[j] += w * vt[(k, j)];
        }
    }
    let intercept = ym - xm.dot(&coef);
    Ok(LinearModel { coef, intercept })
}

/// Column standardization fitted on training rows; constant columns keep
/// scale 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: &Mat) -> Self {
        let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()));
        let scale = x
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 1e-12 { s } else { 1.0 });
        Self { mean, scale }
    }

    pub fn transform(&self, x: &Mat) -> Mat {
        (x - &self.mean) / &self.scale
    }
}

/// Standardize-then-ridge regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    pub scaler: Standardizer,
    pub model: LinearModel,
}

impl Regressor {
    pub fn fit(x: &Mat, y: &Array1<f64>, alpha: f64) -> Result<Self> {
        let scaler = Standardizer::fit(x);
        let model = ridge(&scaler.transform(x), y, alpha)?;
        Ok(Self { scaler, model })
    }

    pub fn predict(&self, x: &Mat) -> Array1<f64> {
        self.model.predict(&self.scaler.transform(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// `None` when the targets are constant.
    pub r2: Option<f64>,
}

pub fn metrics(y: &Array1<f64>, pred: &Array1<f64>) -> Result<Metrics> {
    check_dim(y.len(), pred.len())?;
    if y.is_empty() {
        return Err(Error::TooFewRows("metrics need at least one row".into()));
    }
    let n = y.len() as f64;
    let res = y - pred;
    let mae = res.mapv(f64::abs).sum() / n;
    let ss_res = res.mapv(|r| r * r).sum();
    let rmse = (ss_res / n).sqrt();
    let mean = y.sum() / n;
    let ss_tot = y.mapv(|v| (v - mean).powi(2)).sum();
    let r2 = (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot);
    Ok(Metrics { mae, rmse, r2 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub task: String,
    pub source: String,
    pub seed: u64,
    pub alpha: f64,
    /// Protocol parameters such as `k`, `ratio` or `repeats`.
    pub meta: BTreeMap<String, String>,
    pub folds: Vec<FoldResult>,
    pub mean: Metrics,
    pub std: Metrics,
    pub flags: Vec<String>,
}

fn summarize(folds: &[FoldResult]) -> (Metrics, Metrics) {
    let stats = |vals: Vec<f64>| -> Option<(f64, f64)> {
        if vals.is_empty() {
            return None;
        }
        let n = vals.len() as f64;
        let m = vals.iter().sum::<f64>() / n;
        let s = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        Some((m, s))
    };
    let mae = stats(folds.iter().map(|f| f.metrics.mae).collect()).unwrap_or((0.0, 0.0));
    let rmse = stats(folds.iter().map(|f| f.metrics.rmse).collect()).unwrap_or((0.0, 0.0));
    let r2 = stats(folds.iter().filter_map(|f| f.metrics.r2).collect());
    (
        Metrics {
            mae: mae.0,
            rmse: rmse.0,
            r2: r2.map(|r| r.0),
        },
        Metrics {
            mae: mae.1,
            rmse: rmse.1,
            r2: r2.map(|r| r.1),
        },
    )
}

impl EvalReport {
    pub const CSV_HEADER: [&'static str; 9] =
        ["protocol", "task", "source", "fold", "n_train", "n_test", "mae", "rmse", "r2"];

    fn rows(&self) -> Vec<[String; 9]> {
        let fmt_r2 = |r: Option<f64>| r.map_or("undefined".to_string(), |v| format!("{v:.6}"));
        let mut rows = Vec::new();
        let mut push = |label: String, n_train: String, n_test: String, m: &Metrics| {
            rows.push([
                self.protocol.clone(),
                self.task.clone(),
                self.source.clone(),
                label,
                n_train,
                n_test,
                format!("{:.6}", m.mae),
                format!("{:.6}", m.rmse),
                fmt_r2(m.r2),
            ]);
        };
        for (i, f) in self.folds.iter().enumerate() {
            push(i.to_string(), f.n_train.to_string(), f.n_test.to_string(), &f.metrics);
        }
        push("mean".into(), String::new(), String::new(), &self.mean);
        push("std".into(), String::new(), String::new(), &self.std);
        rows
    }

    /// Appends this report's rows to a CSV writer (header not included).
    pub fn write_rows(&self, w: &mut csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
        for r in self.rows() {
            write_row(w, path, r)?;
        }
        Ok(())
    }

    /// Writes one or more reports into a single CSV with a provenance
    /// comment line.
    pub fn save_all(reports: &[EvalReport], path: &Path, config_hash: &str) -> Result<()> {
        let mut w = csv_writer(path)?;
        write_comment(&mut w, path, &format!("config_hash={config_hash}"))?;
        write_row(&mut w, path, Self::CSV_HEADER)?;
        for r in reports {
            r.write_rows(&mut w, path)?;
        }
        flush(w, path)
    }

    /// Fixed-width table of the aggregate rows.
    pub fn table(reports: &[EvalReport]) -> String {
        let mut out = format!(
            "{:<10} {:<16} {:<16} {:>12} {:>12} {:>16}\n",
            "protocol", "task", "source", "MAE", "RMSE", "R2"
        );
        for r in reports {
            let r2 = match (r.mean.r2, r.std.r2) {
                (Some(m), Some(s)) => format!("{m:.4}±{s:.4}"),
                _ => "undefined".to_string(),
            };
            out.push_str(&format!(
                "{:<10} {:<16} {:<16} {:>12.4} {:>12.4} {:>16}\n",
                r.protocol, r.task, r.source, r.mean.mae, r.mean.rmse, r2
            ));
            for f in &r.flags {
                out.push_str(&format!("  note: {f}\n"));
            }
        }
        out
    }
}

/// Deterministically shuffled partition of `0..n` into `k` folds whose
/// sizes differ by at most one.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k-fold needs 2 <= k <= N, got k={k}, N={n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = n / k + usize::from(f < n % k);
        folds.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

fn fit_score(x: &Mat, y: &Array1<f64>, train: &[usize], test: &[usize], alpha: f64) -> Result<FoldResult> {
    let xtr = x.select(Axis(0), train);
    let ytr = y.select(Axis(0), train);
    let reg = Regressor::fit(&xtr, &ytr, alpha)?;
    let xte = x.select(Axis(0), test);
    let yte = y.select(Axis(0), test);
    Ok(FoldResult {
        n_train: train.len(),
        n_test: test.len(),
        metrics: metrics(&yte, &reg.predict(&xte))?,
    })
}

fn base_report(protocol: &str, emb: &EmbeddingMatrix, task: &str, seed: u64, alpha: f64) -> EvalReport {
    let zero = Metrics {
        mae: 0.0,
        rmse: 0.0,
        r2: None,
    };
    EvalReport {
        protocol: protocol.into(),
        task: task.into(),
        source: emb.source.to_string(),
        seed,
        alpha,
        meta: BTreeMap::new(),
        folds: Vec::new(),
        mean: zero,
        std: zero,
        flags: Vec::new(),
    }
}

pub fn kfold_eval(emb: &EmbeddingMatrix, labels: &Labels, k: usize, seed: u64, alpha: f64) -> Result<EvalReport> {
    let y = labels.aligned(&emb.ids)?;
    let folds = kfold_indices(emb.len(), k, seed)?;
    let mut report = base_report("kfold", emb, &labels.name, seed, alpha);
    report.meta.insert("k".into(), k.to_string());
    for (f, test) in folds.iter().enumerate() {
        let train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        report.folds.push(fit_score(&emb.values, &y, &train, test, alpha)?);
    }
    (report.mean, report.std) = summarize(&report.folds);
    Ok(report)
}

/// Train-set size for a few-shot ratio.
pub fn few_shot_size(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).round() as usize).min(n)
}

/// Per-repeat `(train, test)` splits; `ratio = 1` tests on the training rows.
pub fn few_shot_splits(n: usize, ratio: f64, repeats: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("few-shot ratio must be in (0, 1], got {ratio}")));
    }
    let m = few_shot_size(n, ratio);
    if m < 2 {
        return Err(Error::TooFewRows(format!(
            "ratio {ratio} of {n} regions leaves {m} training rows (need 2)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let train = order[..m].to_vec();
        let test = if m == n { train.clone() } else { order[m..].to_vec() };
        out.push((train, test));
    }
    Ok(out)
}

pub fn few_shot_eval(
    emb: &EmbeddingMatrix,
    labels: &Labels,
    ratio: f64,
    repeats: usize,
    seed: u64,
    alpha: f64,
) -> Result<EvalReport> {
    let y = labels.aligned(&emb.ids)?;
    let splits = few_shot_splits(emb.len(), ratio, repeats.max(1), seed)?;
    let mut report = base_report("few-shot", emb, &labels.name, seed, alpha);
    report.meta.insert("ratio".into(), ratio.to_string());
    report.meta.insert("repeats".into(), splits.len().to_string());
    if few_shot_size(emb.len(), ratio) == emb.len() {
        report
            .flags
            .push("resubstitution: every region is used for both training and testing".into());
    }
    for (train, test) in &splits {
        report.folds.push(fit_score(&emb.values, &y, train, test, alpha)?);
    }
    (report.mean, report.std) = summarize(&report.folds);
    Ok(report)
}

/// Fits on every source-city row and scores on every target-city row.
/// `meta["target_label_reads_during_fit"]` records how many target labels
/// were read before the model was frozen.
pub fn zero_shot_eval(
    src: (&EmbeddingMatrix, &Labels),
    dst_emb: &EmbeddingMatrix,
    dst_labels: &ProbedLabels,
    alpha: f64,
) -> Result<EvalReport> {
    let (src_emb, src_labels) = src;
    check_dim(src_emb.dim(), dst_emb.dim())?;
    let y = src_labels.aligned(&src_emb.ids)?;
    let reg = Regressor::fit(&src_emb.values, &y, alpha)?;
    let reads_during_fit = dst_labels.reads();
    let pred = reg.predict(&dst_emb.values);
    let yd = dst_labels.aligned(&dst_emb.ids)?;
    let m = metrics(&yd, &pred)?;
    let mut report = base_report("zero-shot", dst_emb, dst_labels.name(), 0, alpha);
    report.meta.insert("source_regions".into(), src_emb.len().to_string());
    report
        .meta
        .insert("target_label_reads_during_fit".into(), reads_during_fit.to_string());
    if m.r2.is_none() {
        report.flags.push("target labels are constant: R2 undefined".into());
    }
    report.folds.push(FoldResult {
        n_train: src_emb.len(),
        n_test: dst_emb.len(),
        metrics: m,
    });
    (report.mean, report.std) = summarize(&report.folds);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn ridge_examples() {
        let m = ridge(&array![[0.0], [1.0]], &array![0.0, 1.0], 0.0).unwrap();
        assert_abs_diff_eq!(m.coef[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.intercept, 0.0, epsilon = 1e-12);
        let m = ridge(&array![[-1.0], [1.0]], &array![-1.0, 1.0], 1.0).unwrap();
        assert_abs_diff_eq!(m.coef[0], 2.0 / 3.0, epsilon = 1e-12);
        for alpha in [0.0, 1.0, 10.0] {
            let m = ridge(&array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.0]], &array![4.0, 4.0, 4.0], alpha).unwrap();
            assert!(m.coef.iter().all(|c| c.abs() < 1e-12));
            assert_abs_diff_eq!(m.intercept, 4.0, epsilon = 1e-12);
        }
        assert!(ridge(&Mat::zeros((0, 2)), &array![], 1.0).is_err());
    }

    #[test]
    fn ridge_min_norm_on_duplicate_columns() {
        // two identical columns: minimum-norm solution splits the slope
        let x = array![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        let m = ridge(&x, &array![0.0, 2.0, 4.0], 0.0).unwrap();
        assert_abs_diff_eq!(m.coef[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(m.coef[1], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn metric_examples() {
        let y = array![1.0, 2.0, 3.0];
        let m = metrics(&y, &y).unwrap();
        assert_eq!((m.mae, m.rmse, m.r2), (0.0, 0.0, Some(1.0)));
        let m = metrics(&y, &array![2.0, 2.0, 2.0]).unwrap();
        assert_abs_diff_eq!(m.mae, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.rmse, (2.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_eq!(m.r2, Some(0.0));
        assert_eq!(metrics(&array![5.0, 5.0], &array![4.0, 6.0]).unwrap().r2, None);
        assert!(metrics(&y, &array![1.0]).is_err());
    }

    #[test]
    fn folds_partition() {
        let folds = kfold_indices(23, 5, 3).unwrap();
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(folds.iter().all(|f| f.len() == 4 || f.len() == 5));
        assert_eq!(folds, kfold_indices(23, 5, 3).unwrap());
        assert!(kfold_indices(3, 5, 0).is_err());
    }

    #[test]
    fn few_shot_split_sizes() {
        let s = few_shot_splits(180, 0.1, 3, 9).unwrap();
        for (tr, te) in &s {
            assert_eq!((tr.len(), te.len()), (18, 162));
        }
        let r = few_shot_splits(10, 1.0, 1, 0).unwrap();
        assert_eq!(r[0].0, r[0].1);
        assert!(matches!(few_shot_splits(10, 0.1, 1, 0), Err(Error::TooFewRows(_))));
    }

    #[test]
    fn source_tags_round_trip() {
        for s in ["pretrained", "manual:P2", "learnable", "transr-node", "transr-graph", "random"] {
            assert_eq!(s.parse::<EmbeddingSource>().unwrap().to_string(), s);
        }
        assert!("manual:".parse::<EmbeddingSource>().is_err());
        assert!("gurp".parse::<EmbeddingSource>().is_err());
    }
}
