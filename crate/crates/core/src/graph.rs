//! The heterogeneous urban region graph.
//!
//! Nodes are keyed by opaque string ids and kept sorted, so node indices,
//! the region order and every derived iteration order are deterministic.
//! `NearBy` is stored as two directed edges.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{EdgeType, NodeType};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub ty: NodeType,
    pub label: String,
    /// lon/lat in degrees.
    pub position: Option<(f64, f64)>,
}

impl Node {
    pub fn new(id: impl Into<String>, ty: NodeType, label: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            ty,
            label: label.into(),
            position: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub ty: EdgeType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub origin: String,
    pub destination: String,
    pub interval: usize,
    pub trips: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    /// Number of time intervals `l` a day is divided into.
    pub intervals: usize,
    pub symmetrize_nearby: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            intervals: 24,
            symmetrize_nearby: true,
        }
    }
}

/// A single invariant violation found by [`UrbanGraph::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NoRegions,
    EdgeSignature {
        src: String,
        dst: String,
        ty: EdgeType,
    },
    AsymmetricNearBy {
        a: String,
        b: String,
    },
    ContainsCount {
        node: String,
        count: usize,
    },
    CategoryCount {
        node: String,
        count: usize,
    },
    FlowEndpoint {
        origin: String,
        destination: String,
    },
    FlowInterval {
        origin: String,
        destination: String,
        interval: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoRegions => write!(f, "graph has no region nodes"),
            Violation::EdgeSignature { src, dst, ty } => {
                write!(f, "edge {src} -[{ty}]-> {dst} violates the type signature")
            }
            Violation::AsymmetricNearBy { a, b } => {
                write!(f, "NearBy {a} -> {b} has no reverse edge")
            }
            Violation::ContainsCount { node, count } => {
                write!(f, "{node} is contained by {count} regions (expected 1)")
            }
            Violation::CategoryCount { node, count } => {
                write!(f, "{node} has {count} category parents (expected 1)")
            }
            Violation::FlowEndpoint {
                origin,
                destination,
            } => write!(f, "flow {origin} -> {destination} has a non-region endpoint"),
            Violation::FlowInterval {
                origin,
                destination,
                interval,
            } => write!(
                f,
                "flow {origin} -> {destination} interval {interval} is out of range"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "ok: 0 violations");
        }
        writeln!(f, "{} violation(s)", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct UrbanGraph {
    nodes: Vec<Node>,
    index: HashMap<String, usize>,
    edges: Vec<Edge>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
    regions: Vec<usize>,
    flows: Vec<FlowRecord>,
    intervals: usize,
}

/// Accumulates nodes, edges and flows before a graph is assembled.
#[derive(Debug, Clone, Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    edges: Vec<(String, String, EdgeType)>,
    flows: Vec<FlowRecord>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&mut self, id: impl Into<String>, ty: NodeType) -> &mut Self {
        let id = id.into();
        self.nodes.push(Node {
            label: id.clone(),
            id,
            ty,
            position: None,
        });
        self
    }

    pub fn push_node(&mut self, node: Node) -> &mut Self {
        self.nodes.push(node);
        self
    }

    pub fn edge(
        &mut self,
        src: impl Into<String>,
        dst: impl Into<String>,
        ty: EdgeType,
    ) -> &mut Self {
        self.edges.push((src.into(), dst.into(), ty));
        self
    }

    pub fn flow(&mut self, record: FlowRecord) -> &mut Self {
        self.flows.push(record);
        self
    }

    /// Builds and checks the graph: unknown endpoints are referential errors,
    /// signature violations are schema errors, and any remaining invariant
    /// violation rejects the graph.
    pub fn build(&self, config: &GraphConfig) -> Result<UrbanGraph> {
        let mut graph = self.assemble(config, true)?;
        if config.symmetrize_nearby {
            graph.symmetrize_nearby();
        }
        let report = graph.validate();
        if let Some(first) = report.violations.first() {
            return Err(Error::InvalidGraph(report.len(), first.to_string()));
        }
        Ok(graph)
    }

    /// Builds the graph checking only that edge endpoints exist.
    pub fn build_unchecked(&self, config: &GraphConfig) -> Result<UrbanGraph> {
        self.assemble(config, false)
    }

    fn assemble(&self, config: &GraphConfig, check_schema: bool) -> Result<UrbanGraph> {
        let mut nodes = self.nodes.clone();
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        for w in nodes.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::Referential(format!("duplicate node id `{}`", w[0].id)));
            }
        }
        let index: HashMap<String, usize> = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.clone(), i))
            .collect();
        let mut edges = BTreeSet::new();
        for (src, dst, ty) in &self.edges {
            let s = *index
                .get(src)
                .ok_or_else(|| Error::Referential(format!("edge source `{src}` is not a node")))?;
            let d = *index
                .get(dst)
                .ok_or_else(|| Error::Referential(format!("edge target `{dst}` is not a node")))?;
            if check_schema && !ty.accepts(nodes[s].ty, nodes[d].ty) {
                return Err(Error::Schema(format!(
                    "edge {src} -[{ty}]-> {dst} connects {} -> {}",
                    nodes[s].ty, nodes[d].ty
                )));
            }
            edges.insert(Edge { src: s, dst: d, ty: *ty });
        }
        let mut graph = UrbanGraph {
            index,
            edges: edges.into_iter().collect(),
            out_edges: Vec::new(),
            in_edges: Vec::new(),
            regions: Vec::new(),
            nodes,
            flows: self.flows.clone(),
            intervals: config.intervals,
        };
        graph.reindex();
        Ok(graph)
    }
}

impl UrbanGraph {
    fn reindex(&mut self) {
        self.edges.sort();
        self.edges.dedup();
        let n = self.nodes.len();
        self.out_edges = vec![Vec::new(); n];
        self.in_edges = vec![Vec::new(); n];
        for (i, e) in self.edges.iter().enumerate() {
            self.out_edges[e.src].push(i);
            self.in_edges[e.dst].push(i);
        }
        self.regions = (0..n)
            .filter(|&i| self.nodes[i].ty == NodeType::Region)
            .collect();
    }

    fn symmetrize_nearby(&mut self) {
        let present: BTreeSet<Edge> = self.edges.iter().copied().collect();
        let missing: Vec<Edge> = self
            .edges
            .iter()
            .filter(|e| e.ty == EdgeType::NearBy)
            .map(|e| Edge {
                src: e.dst,
                dst: e.src,
                ty: EdgeType::NearBy,
            })
            .filter(|e| !present.contains(e))
            .collect();
        if !missing.is_empty() {
            self.edges.extend(missing);
            self.reindex();
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> &Node {
        &self.nodes[idx]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn flows(&self) -> &[FlowRecord] {
        &self.flows
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn require(&self, id: &str) -> Result<usize> {
        self.index_of(id)
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub fn require_region(&self, id: &str) -> Result<usize> {
        match self.index_of(id) {
            Some(i) if self.nodes[i].ty == NodeType::Region => Ok(i),
            _ => Err(Error::UnknownRegion(id.to_string())),
        }
    }

    pub fn node_type(&self, idx: usize) -> NodeType {
        self.nodes[idx].ty
    }

    /// Region node indices, in lexicographic id order.
    pub fn regions(&self) -> &[usize] {
        &self.regions
    }

    pub fn region_ids(&self) -> Vec<String> {
        self.regions.iter().map(|&r| self.nodes[r].id.clone()).collect()
    }

    pub fn out_edges(&self, idx: usize) -> impl Iterator<Item = &Edge> {
        self.out_edges[idx].iter().map(move |&e| &self.edges[e])
    }

    pub fn in_edges(&self, idx: usize) -> impl Iterator<Item = &Edge> {
        self.in_edges[idx].iter().map(move |&e| &self.edges[e])
    }

    /// Every (neighbor, edge type) pair incident to `idx`, in either direction.
    pub fn incident(&self, idx: usize) -> impl Iterator<Item = (usize, EdgeType)> + '_ {
        self.out_edges(idx)
            .map(|e| (e.dst, e.ty))
            .chain(self.in_edges(idx).map(|e| (e.src, e.ty)))
    }

    /// Ids of nodes one edge away (either direction) whose edge type passes
    /// the filter, sorted by id. `None` or an empty filter admits every type.
    pub fn neighbors(&self, node: &str, edge_types: Option<&[EdgeType]>) -> Result<Vec<String>> {
        let idx = self.require(node)?;
        Ok(self
            .neighbor_indices(idx, edge_types)
            .into_iter()
            .map(|i| self.nodes[i].id.clone())
            .collect())
    }

    pub fn neighbor_indices(&self, idx: usize, edge_types: Option<&[EdgeType]>) -> Vec<usize> {
        let filter = edge_types.filter(|f| !f.is_empty());
        let set: BTreeSet<usize> = self
            .incident(idx)
            .filter(|(_, ty)| filter.is_none_or(|f| f.contains(ty)))
            .map(|(n, _)| n)
            .collect();
        // node indices follow id order, so index order is id order
        set.into_iter().collect()
    }

    /// Regions adjacent to `region` through `NearBy`.
    pub fn nearby_regions(&self, region: usize) -> Vec<usize> {
        self.neighbor_indices(region, Some(&[EdgeType::NearBy]))
    }

    /// The region containing an entity, if any.
    pub fn container_of(&self, entity: usize) -> Option<usize> {
        self.in_edges(entity)
            .find(|e| e.ty == EdgeType::Contains)
            .map(|e| e.src)
    }

    /// Entities contained in a region.
    pub fn contained(&self, region: usize) -> Vec<usize> {
        self.out_edges(region)
            .filter(|e| e.ty == EdgeType::Contains)
            .map(|e| e.dst)
            .collect()
    }

    /// Category node of an entity, if any.
    pub fn category_of(&self, entity: usize) -> Option<usize> {
        let want = self.nodes[entity].ty.category_of()?;
        self.in_edges(entity)
            .find(|e| self.nodes[e.src].ty == want)
            .map(|e| e.src)
    }

    /// Checks every invariant and lists each violation once.
    ///
    /// Containment and category cardinalities are counted by the type of the
    /// source node, so an edge carrying the wrong type label surfaces only
    /// as a signature violation.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if self.regions.is_empty() {
            violations.push(Violation::NoRegions);
        }
        for e in &self.edges {
            if !e.ty.accepts(self.nodes[e.src].ty, self.nodes[e.dst].ty) {
                violations.push(Violation::EdgeSignature {
                    src: self.nodes[e.src].id.clone(),
                    dst: self.nodes[e.dst].id.clone(),
                    ty: e.ty,
                });
            }
        }
        let region_pairs: BTreeSet<(usize, usize)> = self
            .edges
            .iter()
            .filter(|e| {
                self.nodes[e.src].ty == NodeType::Region && self.nodes[e.dst].ty == NodeType::Region
            })
            .map(|e| (e.src, e.dst))
            .collect();
        for &(a, b) in &region_pairs {
            if !region_pairs.contains(&(b, a)) {
                violations.push(Violation::AsymmetricNearBy {
                    a: self.nodes[a].id.clone(),
                    b: self.nodes[b].id.clone(),
                });
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            let Some(cat) = node.ty.category_of() else {
                continue;
            };
            let parents: BTreeSet<(usize, EdgeType)> =
                self.in_edges(i).map(|e| (e.src, e.ty)).collect();
            let contains = parents
                .iter()
                .filter(|(s, _)| self.nodes[*s].ty == NodeType::Region)
                .count();
            if contains != 1 {
                violations.push(Violation::ContainsCount {
                    node: node.id.clone(),
                    count: contains,
                });
            }
            let cats = parents
                .iter()
                .filter(|(s, _)| self.nodes[*s].ty == cat)
                .count();
            if cats != 1 {
                violations.push(Violation::CategoryCount {
                    node: node.id.clone(),
                    count: cats,
                });
            }
        }
        for f in &self.flows {
            let is_region = |id: &str| {
                self.index_of(id)
                    .is_some_and(|i| self.nodes[i].ty == NodeType::Region)
            };
            if !is_region(&f.origin) || !is_region(&f.destination) {
                violations.push(Violation::FlowEndpoint {
                    origin: f.origin.clone(),
                    destination: f.destination.clone(),
                });
            }
            if f.interval >= self.intervals {
                violations.push(Violation::FlowInterval {
                    origin: f.origin.clone(),
                    destination: f.destination.clone(),
                    interval: f.interval,
                });
            }
        }
        ValidationReport { violations }
    }

    /// Returns a copy with one edge's type replaced. Used to probe validation.
    pub fn with_edge_type(&self, edge: usize, ty: EdgeType) -> UrbanGraph {
        let mut g = self.clone();
        g.edges[edge].ty = ty;
        g.reindex();
        g
    }

    /// Returns a copy with the edge list replaced (node set unchanged).
    pub fn with_edges(&self, edges: Vec<Edge>) -> UrbanGraph {
        let mut g = self.clone();
        g.edges = edges;
        g.reindex();
        g
    }

    /// Number of entities of each category node contained in `region`,
    /// keyed by category node index.
    pub fn category_counts(&self, region: usize) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for e in self.contained(region) {
            if let Some(c) = self.category_of(e) {
                *counts.entry(c).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Trip matrix `m` over regions (summed over intervals) in region order.
    pub fn trip_matrix(&self) -> ndarray::Array2<f64> {
        let n = self.regions.len();
        let pos: HashMap<usize, usize> = self
            .regions
            .iter()
            .enumerate()
            .map(|(k, &r)| (r, k))
            .collect();
        let mut m = ndarray::Array2::zeros((n, n));
        for f in &self.flows {
            let (Some(o), Some(d)) = (self.index_of(&f.origin), self.index_of(&f.destination)) else {
                continue;
            };
            if let (Some(&i), Some(&j)) = (pos.get(&o), pos.get(&d)) {
                m[[i, j]] += f.trips as f64;
            }
        }
        m
    }

    /// Per-region outflow and inflow counts per interval, each `N × l`.
    pub fn interval_flows(&self) -> (ndarray::Array2<f64>, ndarray::Array2<f64>) {
        let n = self.regions.len();
        let l = self.intervals;
        let pos: HashMap<usize, usize> = self
            .regions
            .iter()
            .enumerate()
            .map(|(k, &r)| (r, k))
            .collect();
        let mut out = ndarray::Array2::zeros((n, l));
        let mut inn = ndarray::Array2::zeros((n, l));
        for f in &self.flows {
            let (Some(o), Some(d)) = (self.index_of(&f.origin), self.index_of(&f.destination)) else {
                continue;
            };
            if f.interval >= l {
                continue;
            }
            if let Some(&i) = pos.get(&o) {
                out[[i, f.interval]] += f.trips as f64;
            }
            if let Some(&j) = pos.get(&d) {
                inn[[j, f.interval]] += f.trips as f64;
            }
        }
        (out, inn)
    }

    /// Writes `nodes.csv`, `edges.csv` and `flows.csv` into `dir`.
    /// Writes `nodes.csv`, `edges.csv` and `flows.csv`, each optionally
    /// starting with a `# comment` line.
    pub fn save(&self, dir: &Path, comment: Option<&str>) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut w = csv_writer(&dir.join("nodes.csv"))?;
        if let Some(c) = comment {
            write_comment(&mut w, &dir.join("nodes.csv"), c)?;
        }
        write_row(&mut w, &dir.join("nodes.csv"), ["id", "type", "label", "lon", "lat"])?;
        for n in &self.nodes {
            let (lon, lat) = match n.position {
                Some((lon, lat)) => (lon.to_string(), lat.to_string()),
                None => (String::new(), String::new()),
            };
            write_row(
                &mut w,
                &dir.join("nodes.csv"),
                [n.id.as_str(), n.ty.as_str(), n.label.as_str(), &lon, &lat],
            )?;
        }
        flush(w, &dir.join("nodes.csv"))?;

        let path = dir.join("edges.csv");
        let mut w = csv_writer(&path)?;
        if let Some(c) = comment {
            write_comment(&mut w, &path, c)?;
        }
        write_row(&mut w, &path, ["src", "dst", "type"])?;
        for e in &self.edges {
            write_row(
                &mut w,
                &path,
                [
                    self.nodes[e.src].id.as_str(),
                    self.nodes[e.dst].id.as_str(),
                    e.ty.as_str(),
                ],
            )?;
        }
        flush(w, &path)?;

        write_flows(&dir.join("flows.csv"), &self.flows, comment)
    }
}

pub(crate) fn write_flows(path: &Path, flows: &[FlowRecord], comment: Option<&str>) -> Result<()> {
    let mut w = csv_writer(path)?;
    if let Some(c) = comment {
        write_comment(&mut w, path, c)?;
    }
    write_row(&mut w, path, ["origin", "destination", "interval", "trips"])?;
    for f in flows {
        write_row(
            &mut w,
            path,
            [
                f.origin.as_str(),
                f.destination.as_str(),
                &f.interval.to_string(),
                &f.trips.to_string(),
            ],
        )?;
    }
    flush(w, path)
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().flexible(true).from_writer(f))
}

pub(crate) fn write_row<I, T>(w: &mut csv::Writer<File>, path: &Path, row: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(row)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

/// Writes a `# text` line; readers skip it.
pub(crate) fn write_comment(w: &mut csv::Writer<File>, path: &Path, text: &str) -> Result<()> {
    write_row(w, path, [format!("# {text}")])
}

pub(crate) fn flush(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))?;
    let mut inner = w
        .into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

/// Reads a headered CSV, skipping `#` comment lines. Yields (line number,
/// fields) pairs; line numbers are 1-based and count the header.
pub(crate) fn read_csv(path: &Path, expected_header: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(file);
    let name = path.display().to_string();
    let mut rows = Vec::new();
    let mut header_seen = false;
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            file: name.clone(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let fields: Vec<String> = rec.iter().map(|s| s.trim().to_string()).collect();
        if !header_seen {
            header_seen = true;
            let ok = fields.len() >= expected_header.len()
                && expected_header
                    .iter()
                    .zip(&fields)
                    .all(|(a, b)| a.eq_ignore_ascii_case(b));
            if !ok {
                return Err(Error::Parse {
                    file: name,
                    line,
                    message: format!("expected header `{}`", expected_header.join(",")),
                });
            }
            continue;
        }
        rows.push((line, fields));
    }
    if !header_seen {
        return Err(Error::Parse {
            file: name,
            line: 1,
            message: "missing header row".into(),
        });
    }
    Ok(rows)
}

fn parse_field<T: std::str::FromStr>(file: &Path, line: usize, what: &str, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        file: file.display().to_string(),
        line,
        message: format!("invalid {what} `{s}`"),
    })
}

fn expect_arity(file: &Path, line: usize, fields: &[String], n: usize) -> Result<()> {
    if fields.len() != n {
        return Err(Error::Parse {
            file: file.display().to_string(),
            line,
            message: format!("expected {n} fields, found {}", fields.len()),
        });
    }
    Ok(())
}

/// Loads a graph from the CSV formats `nodes.csv`, `edges.csv` and an
/// optional `flows.csv`.
pub fn load_graph(
    nodes_file: &Path,
    edges_file: &Path,
    flows_file: Option<&Path>,
    config: &GraphConfig,
) -> Result<UrbanGraph> {
    builder_from_files(nodes_file, edges_file, flows_file)?.build(config)
}

/// Parses the CSV files into a builder without checking graph invariants.
pub fn builder_from_files(
    nodes_file: &Path,
    edges_file: &Path,
    flows_file: Option<&Path>,
) -> Result<GraphBuilder> {
    let mut b = GraphBuilder::new();
    for (line, f) in read_csv(nodes_file, &["id", "type", "label", "lon", "lat"])? {
        expect_arity(nodes_file, line, &f, 5)?;
        let ty: NodeType = f[1].parse().map_err(|e: Error| Error::Parse {
            file: nodes_file.display().to_string(),
            line,
            message: e.to_string(),
        })?;
        let position = match (f[3].is_empty(), f[4].is_empty()) {
            (true, true) => None,
            (false, false) => Some((
                parse_field(nodes_file, line, "lon", &f[3])?,
                parse_field(nodes_file, line, "lat", &f[4])?,
            )),
            _ => {
                return Err(Error::Parse {
                    file: nodes_file.display().to_string(),
                    line,
                    message: "lon and lat must both be present or both blank".into(),
                })
            }
        };
        if f[0].is_empty() {
            return Err(Error::Parse {
                file: nodes_file.display().to_string(),
                line,
                message: "empty node id".into(),
            });
        }
        b.push_node(Node {
            id: f[0].clone(),
            ty,
            label: f[2].clone(),
            position,
        });
    }
    for (line, f) in read_csv(edges_file, &["src", "dst", "type"])? {
        expect_arity(edges_file, line, &f, 3)?;
        let ty: EdgeType = f[2].parse().map_err(|e: Error| Error::Parse {
            file: edges_file.display().to_string(),
            line,
            message: e.to_string(),
        })?;
        b.edge(f[0].clone(), f[1].clone(), ty);
    }
    if let Some(path) = flows_file {
        for (line, f) in read_csv(path, &["origin", "destination", "interval", "trips"])? {
            expect_arity(path, line, &f, 4)?;
            b.flow(FlowRecord {
                origin: f[0].clone(),
                destination: f[1].clone(),
                interval: parse_field(path, line, "interval", &f[2])?,
                trips: parse_field(path, line, "trips", &f[3])?,
            });
        }
    }
    Ok(b)
}

/// Loads `nodes.csv`, `edges.csv` and (if present) `flows.csv` from a directory.
pub fn load_graph_dir(dir: &Path, config: &GraphConfig) -> Result<UrbanGraph> {
    let flows = dir.join("flows.csv");
    load_graph(
        &dir.join("nodes.csv"),
        &dir.join("edges.csv"),
        flows.exists().then_some(flows.as_path()),
        config,
    )
}
