//! Region-induced subgraph extraction.
//!
//! Starting from a region node, the subgraph grows along edges whose type is
//! in the pattern, admitting nodes whose type is in the pattern, up to two
//! hops (an edge traversed in either direction is one hop). Terminal-typed
//! nodes are admitted but not expanded; the root itself is always expanded.
//! The edge set is every pattern-typed graph edge between admitted nodes.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::UrbanGraph;
use crate::kg::TransRState;
use crate::schema::{EdgeType, NodeType};

pub const MAX_HOPS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphPattern {
    pub node_types: BTreeSet<NodeType>,
    pub edge_types: BTreeSet<EdgeType>,
    pub terminals: BTreeSet<NodeType>,
}

/// On-disk pattern document; prompt presets add a `[weights]` table.
#[derive(Debug, Clone, Deserialize)]
struct PatternDoc {
    node_types: Vec<String>,
    edge_types: Vec<String>,
    #[serde(default)]
    terminals: Vec<String>,
}

pub(crate) const PRESET_SOURCES: [(&str, &str); 5] = [
    ("full", include_str!("../presets/full.toml")),
    ("P1", include_str!("../presets/P1.toml")),
    ("P2", include_str!("../presets/P2.toml")),
    ("P3", include_str!("../presets/P3.toml")),
    ("P4", include_str!("../presets/P4.toml")),
];

impl GraphPattern {
    pub fn new(
        node_types: impl IntoIterator<Item = NodeType>,
        edge_types: impl IntoIterator<Item = EdgeType>,
        terminals: impl IntoIterator<Item = NodeType>,
    ) -> Result<Self> {
        let p = Self {
            node_types: node_types.into_iter().collect(),
            edge_types: edge_types.into_iter().collect(),
            terminals: terminals.into_iter().collect(),
        };
        p.check()?;
        Ok(p)
    }

    /// Every type, with neighbor regions and category/brand leaves as terminals.
    pub fn full() -> Self {
        Self::preset("full").expect("shipped preset")
    }

    pub fn check(&self) -> Result<()> {
        if !self.node_types.contains(&NodeType::Region) {
            return Err(Error::InvalidPattern(
                "pattern must include the region node type".into(),
            ));
        }
        if let Some(t) = self.terminals.iter().find(|t| !self.node_types.contains(t)) {
            return Err(Error::InvalidPattern(format!(
                "terminal type {t} is not among the pattern's node types"
            )));
        }
        Ok(())
    }

    /// Parses the key-value pattern format (`node_types`, `edge_types`,
    /// `terminals` lists).
    pub fn parse(text: &str) -> Result<Self> {
        let doc: PatternDoc =
            toml::from_str(text).map_err(|e| Error::InvalidPattern(e.to_string()))?;
        let node_types = doc
            .node_types
            .iter()
            .map(|s| s.parse())
            .collect::<Result<BTreeSet<NodeType>>>()?;
        let edge_types = doc
            .edge_types
            .iter()
            .map(|s| s.parse())
            .collect::<Result<BTreeSet<EdgeType>>>()?;
        let terminals = doc
            .terminals
            .iter()
            .map(|s| s.parse())
            .collect::<Result<BTreeSet<NodeType>>>()?;
        Self::new(node_types, edge_types, terminals)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// One of the shipped presets: `full`, `P1`, `P2`, `P3`, `P4`.
    pub fn preset(name: &str) -> Result<Self> {
        let (_, src) = PRESET_SOURCES
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::InvalidPattern(format!("unknown preset `{name}`")))?;
        Self::parse(src)
    }

    pub fn to_toml(&self) -> String {
        let list = |items: Vec<&str>| {
            items
                .iter()
                .map(|s| format!("\"{s}\""))
                .collect::<Vec<_>>()
                .join(", ")
        };
        format!(
            "node_types = [{}]\nedge_types = [{}]\nterminals = [{}]\n",
            list(self.node_types.iter().map(|t| t.as_str()).collect()),
            list(self.edge_types.iter().map(|t| t.as_str()).collect()),
            list(self.terminals.iter().map(|t| t.as_str()).collect()),
        )
    }
}

/// Per-node input features keyed by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    ids: Vec<String>,
    values: Array2<f64>,
}

impl FeatureTable {
    /// `ids` must be sorted and unique, one row of `values` per id.
    pub fn new(ids: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if ids.len() != values.nrows() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                actual: values.nrows(),
            });
        }
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "feature ids must be sorted and unique".into(),
            ));
        }
        Ok(Self { ids, values })
    }

    pub fn from_transr(state: &TransRState) -> Self {
        Self {
            ids: state.node_ids.clone(),
            values: state.entities.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn get(&self, id: &str) -> Option<ArrayView1<'_, f64>> {
        self.ids
            .binary_search_by(|n| n.as_str().cmp(id))
            .ok()
            .map(|i| self.values.row(i))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionSubgraph {
    /// Local index of the root region.
    pub root: usize,
    /// Node ids, sorted; local index `i` refers to `ids[i]`.
    pub ids: Vec<String>,
    pub types: Vec<NodeType>,
    /// Directed typed edges over local indices, sorted.
    pub edges: Vec<(usize, usize, EdgeType)>,
    /// `n × d` node features; zero columns until attached.
    pub features: Array2<f64>,
}

impl RegionSubgraph {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn root_id(&self) -> &str {
        &self.ids[self.root]
    }

    pub fn has_features(&self) -> bool {
        self.features.ncols() > 0 && self.features.nrows() == self.len()
    }

    pub fn count_of(&self, ty: NodeType) -> usize {
        self.types.iter().filter(|&&t| t == ty).count()
    }

    pub fn type_counts(&self) -> BTreeMap<NodeType, usize> {
        let mut m = BTreeMap::new();
        for &t in &self.types {
            *m.entry(t).or_insert(0) += 1;
        }
        m
    }

    /// Fills `features` from the table; every node needs a row.
    pub fn attach_features(&mut self, table: &FeatureTable) -> Result<()> {
        let mut f = Array2::zeros((self.len(), table.dim()));
        for (i, id) in self.ids.iter().enumerate() {
            let row = table
                .get(id)
                .ok_or_else(|| Error::UnknownNode(format!("no feature vector for `{id}`")))?;
            f.row_mut(i).assign(&row);
        }
        self.features = f;
        Ok(())
    }

    /// Symmetric 0/1 adjacency with zero diagonal.
    pub fn adjacency(&self) -> Array2<f64> {
        let n = self.len();
        let mut a = Array2::zeros((n, n));
        for &(s, d, _) in &self.edges {
            if s != d {
                a[[s, d]] = 1.0;
                a[[d, s]] = 1.0;
            }
        }
        a
    }

    /// Nodes reachable from the root over the subgraph's edges (undirected).
    pub fn connected_to_root(&self) -> Vec<bool> {
        let n = self.len();
        let mut adj = vec![Vec::new(); n];
        for &(s, d, _) in &self.edges {
            adj[s].push(d);
            adj[d].push(s);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([self.root]);
        seen[self.root] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    /// Keeps the flagged nodes (the root always survives), drops edges with a
    /// removed endpoint, then drops nodes no longer connected to the root.
    pub fn retain(&self, keep: &[bool]) -> RegionSubgraph {
        assert_eq!(keep.len(), self.len());
        let mut keep = keep.to_vec();
        keep[self.root] = true;
        let staged = self.select(&keep);
        let connected = staged.connected_to_root();
        if connected.iter().all(|&c| c) {
            staged
        } else {
            staged.select(&connected)
        }
    }

    fn select(&self, keep: &[bool]) -> RegionSubgraph {
        let mut remap = vec![usize::MAX; self.len()];
        let mut ids = Vec::new();
        let mut types = Vec::new();
        let mut rows = Vec::new();
        for i in 0..self.len() {
            if keep[i] {
                remap[i] = ids.len();
                ids.push(self.ids[i].clone());
                types.push(self.types[i]);
                rows.push(i);
            }
        }
        let edges = self
            .edges
            .iter()
            .filter(|(s, d, _)| keep[*s] && keep[*d])
            .map(|&(s, d, t)| (remap[s], remap[d], t))
            .collect();
        let features = if self.has_features() {
            self.features.select(ndarray::Axis(0), &rows)
        } else {
            Array2::zeros((ids.len(), 0))
        };
        RegionSubgraph {
            root: remap[self.root],
            ids,
            types,
            edges,
            features,
        }
    }
}

/// Extracts the region-induced subgraph of `region` under `pattern`.
pub fn extract(graph: &UrbanGraph, region: &str, pattern: &GraphPattern) -> Result<RegionSubgraph> {
    pattern.check()?;
    let root = graph.require_region(region)?;
    Ok(extract_index(graph, root, pattern))
}

pub(crate) fn extract_index(graph: &UrbanGraph, root: usize, pattern: &GraphPattern) -> RegionSubgraph {
    let mut depth: BTreeMap<usize, usize> = BTreeMap::new();
    depth.insert(root, 0);
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        let k = depth[&u];
        if k >= MAX_HOPS || (u != root && pattern.terminals.contains(&graph.node_type(u))) {
            continue;
        }
        for (v, ety) in graph.incident(u) {
            if !pattern.edge_types.contains(&ety)
                || !pattern.node_types.contains(&graph.node_type(v))
                || depth.contains_key(&v)
            {
                continue;
            }
            depth.insert(v, k + 1);
            queue.push_back(v);
        }
    }
    // graph indices follow id order, so BTreeMap order is id order
    let members: Vec<usize> = depth.keys().copied().collect();
    let local: BTreeMap<usize, usize> = members.iter().enumerate().map(|(i, &g)| (g, i)).collect();
    let mut edges = Vec::new();
    for &u in &members {
        for e in graph.out_edges(u) {
            if !pattern.edge_types.contains(&e.ty) {
                continue;
            }
            if let Some(&d) = local.get(&e.dst) {
                edges.push((local[&u], d, e.ty));
            }
        }
    }
    edges.sort();
    RegionSubgraph {
        root: local[&root],
        ids: members.iter().map(|&i| graph.node(i).id.clone()).collect(),
        types: members.iter().map(|&i| graph.node_type(i)).collect(),
        edges,
        features: Array2::zeros((members.len(), 0)),
    }
}

/// Splits `budget` slots across groups proportionally to their sizes;
/// leftover slots go to the largest groups (ties by position).
pub(crate) fn proportional_allocation(sizes: &[usize], budget: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total <= budget {
        return sizes.to_vec();
    }
    let mut alloc: Vec<usize> = sizes.iter().map(|&s| s * budget / total).collect();
    let mut left = budget - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    while left > 0 {
        let mut progressed = false;
        for &i in &order {
            if left == 0 {
                break;
            }
            if alloc[i] < sizes[i] {
                alloc[i] += 1;
                left -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    alloc
}

/// Caps the node count: keeps the root plus a type-stratified uniform sample
/// of `cap − 1` other nodes, then drops dangling edges and any node cut off
/// from the root.
pub fn subsample(sub: &RegionSubgraph, cap: usize, seed: u64) -> Result<RegionSubgraph> {
    if cap < 1 {
        return Err(Error::InvalidArgument("subsample cap must be at least 1".into()));
    }
    if sub.len() <= cap {
        return Ok(sub.clone());
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); NodeType::COUNT];
    for (i, &t) in sub.types.iter().enumerate() {
        if i != sub.root {
            groups[t.index()].push(i);
        }
    }
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let alloc = proportional_allocation(&sizes, cap - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; sub.len()];
    keep[sub.root] = true;
    for (group, &k) in groups.iter_mut().zip(&alloc) {
        group.shuffle(&mut rng);
        for &i in group.iter().take(k) {
            keep[i] = true;
        }
    }
    Ok(sub.retain(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, GraphConfig};

    fn pattern_all(terminals: &[NodeType]) -> GraphPattern {
        GraphPattern::new(NodeType::ALL, EdgeType::ALL, terminals.iter().copied()).unwrap()
    }

    fn worked_graph() -> UrbanGraph {
        let mut b = GraphBuilder::new();
        b.node("r1", NodeType::Region)
            .node("r2", NodeType::Region)
            .node("p1", NodeType::Poi)
            .node("c1", NodeType::PoiCategory)
            .edge("r1", "p1", EdgeType::Contains)
            .edge("c1", "p1", EdgeType::CateOf)
            .edge("r1", "r2", EdgeType::NearBy);
        b.build_unchecked(&GraphConfig::default()).unwrap()
    }

    #[test]
    fn region_only_pattern() {
        let g = worked_graph();
        let p = GraphPattern::new([NodeType::Region], [], [NodeType::Region]).unwrap();
        let s = extract(&g, "r1", &p).unwrap();
        assert_eq!(s.ids, vec!["r1"]);
        assert!(s.edges.is_empty());
    }

    #[test]
    fn worked_example_full_pattern() {
        let g = worked_graph();
        let s = extract(&g, "r1", &pattern_all(&[])).unwrap();
        assert_eq!(s.ids, vec!["c1", "p1", "r1", "r2"]);
        assert_eq!(s.edges.len(), 3);
        assert_eq!(s.root_id(), "r1");
    }

    #[test]
    fn two_hop_bound() {
        // r1 - r2 - r3 chain plus r2's POI: r3 and p2 are two hops, c2 three.
        let mut b = GraphBuilder::new();
        b.node("r1", NodeType::Region)
            .node("r2", NodeType::Region)
            .node("r3", NodeType::Region)
            .node("p2", NodeType::Poi)
            .node("c2", NodeType::PoiCategory)
            .edge("r1", "r2", EdgeType::NearBy)
            .edge("r2", "r3", EdgeType::NearBy)
            .edge("r2", "p2", EdgeType::Contains)
            .edge("c2", "p2", EdgeType::CateOf);
        let g = b.build(&GraphConfig::default()).unwrap();
        let s = extract(&g, "r1", &pattern_all(&[])).unwrap();
        assert_eq!(s.ids, vec!["p2", "r1", "r2", "r3"]);
        // neighbor regions as terminals stop at one hop
        let s = extract(&g, "r1", &pattern_all(&[NodeType::Region])).unwrap();
        assert_eq!(s.ids, vec!["r1", "r2"]);
    }

    #[test]
    fn excluded_types_never_appear() {
        let mut b = GraphBuilder::new();
        b.node("r1", NodeType::Region)
            .node("p1", NodeType::Poi)
            .node("c1", NodeType::PoiCategory)
            .node("b1", NodeType::Brand)
            .edge("r1", "p1", EdgeType::Contains)
            .edge("c1", "p1", EdgeType::CateOf)
            .edge("b1", "p1", EdgeType::BrandOf);
        let g = b.build(&GraphConfig::default()).unwrap();
        let full = extract(&g, "r1", &GraphPattern::full()).unwrap();
        assert_eq!(full.count_of(NodeType::Brand), 1);
        let p1 = extract(&g, "r1", &GraphPattern::preset("P1").unwrap()).unwrap();
        assert_eq!(p1.count_of(NodeType::Brand), 0);
    }

    #[test]
    fn invalid_requests() {
        let g = worked_graph();
        assert!(matches!(
            extract(&g, "p1", &GraphPattern::full()),
            Err(Error::UnknownRegion(_))
        ));
        assert!(GraphPattern::new([NodeType::Poi], [], []).is_err());
        assert!(GraphPattern::new([NodeType::Region], [], [NodeType::Brand]).is_err());
    }

    #[test]
    fn presets_parse_and_round_trip() {
        for (name, _) in PRESET_SOURCES {
            let p = GraphPattern::preset(name).unwrap();
            assert_eq!(GraphPattern::parse(&p.to_toml()).unwrap(), p);
        }
        assert!(GraphPattern::preset("P9").is_err());
    }

    fn star(n_poi: usize) -> RegionSubgraph {
        let mut b = GraphBuilder::new();
        b.node("r", NodeType::Region).node("c", NodeType::PoiCategory);
        for i in 0..n_poi {
            let id = format!("p{i:03}");
            b.node(id.clone(), NodeType::Poi)
                .edge("r", id.clone(), EdgeType::Contains)
                .edge("c", id, EdgeType::CateOf);
        }
        let g = b.build(&GraphConfig::default()).unwrap();
        extract(&g, "r", &GraphPattern::full()).unwrap()
    }

    #[test]
    fn subsample_noop_and_root_only() {
        let s = star(8);
        assert_eq!(s.len(), 10);
        assert_eq!(subsample(&s, 50, 1).unwrap(), s);
        let r = subsample(&s, 1, 1).unwrap();
        assert_eq!(r.ids, vec!["r"]);
        assert!(subsample(&s, 0, 1).is_err());
    }

    #[test]
    fn subsample_large() {
        let s = star(118);
        assert_eq!(s.len(), 120);
        let a = subsample(&s, 50, 7).unwrap();
        assert!(a.len() <= 50);
        assert_eq!(a.root_id(), "r");
        assert!(a.connected_to_root().iter().all(|&c| c));
        assert_eq!(a, subsample(&s, 50, 7).unwrap());
    }

    #[test]
    fn allocation_sums_to_budget() {
        assert_eq!(proportional_allocation(&[10, 5, 1], 8), vec![6, 2, 0]);
        assert_eq!(proportional_allocation(&[3, 3], 10), vec![3, 3]);
        let a = proportional_allocation(&[7, 0, 13, 2], 11);
        assert_eq!(a.iter().sum::<usize>(), 11);
    }
}
