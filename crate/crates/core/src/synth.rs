//! Synthetic grid cities with planted downstream signals.
//!
//! Regions form a `rows × cols` grid with `NearBy` between orthogonal
//! neighbors. Each region holds a random number of POIs, roads and
//! junctions; trips follow a gravity model over region sizes; image
//! features are a fixed random projection of each region's composition plus
//! noise; task labels are planted functions of the generated data.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FlowRecord, GraphBuilder, GraphConfig, Node, UrbanGraph};
use crate::harness::Labels;
use crate::pretrain::ImageSet;
use crate::schema::{EdgeType, NodeType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedTask {
    /// Affine in per-region POI-category counts.
    PoiAffine,
    /// Road and junction count per region.
    RoadDensity,
    /// Total trips leaving or entering the region.
    FlowVolume,
}

impl PlantedTask {
    pub fn name(self) -> &'static str {
        match self {
            PlantedTask::PoiAffine => "poi_affine",
            PlantedTask::RoadDensity => "road_density",
            PlantedTask::FlowVolume => "flow_volume",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub rows: usize,
    pub cols: usize,
    /// Inclusive per-region count ranges.
    pub pois: (usize, usize),
    pub roads: (usize, usize),
    pub junctions: (usize, usize),
    pub poi_categories: usize,
    pub brands: usize,
    pub road_categories: usize,
    pub junction_categories: usize,
    /// Probability that a POI carries a brand.
    pub brand_rate: f64,
    pub intervals: usize,
    /// Expected total trips per ordered region pair at unit size and distance.
    pub trip_scale: f64,
    pub image_dim: usize,
    pub images_per_region: usize,
    pub image_noise: f64,
    /// Label noise half-width as a fraction of the clean label's std.
    pub label_noise: f64,
    pub tasks: Vec<PlantedTask>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            rows: 3,
            cols: 3,
            pois: (2, 12),
            roads: (1, 4),
            junctions: (1, 3),
            poi_categories: 6,
            brands: 4,
            road_categories: 3,
            junction_categories: 2,
            brand_rate: 0.5,
            intervals: 24,
            trip_scale: 2.0,
            image_dim: 512,
            images_per_region: 2,
            image_noise: 0.1,
            label_noise: 0.05,
            tasks: vec![
                PlantedTask::PoiAffine,
                PlantedTask::RoadDensity,
                PlantedTask::FlowVolume,
            ],
        }
    }
}

impl SynthSpec {
    pub fn grid(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.rows == 0 || self.cols == 0 {
            return bad("grid must have at least one region");
        }
        for (name, (lo, hi)) in [("pois", self.pois), ("roads", self.roads), ("junctions", self.junctions)] {
            if lo > hi {
                return Err(Error::InvalidSpec(format!("{name} range {lo}..{hi} is empty")));
            }
        }
        if self.pois.1 > 0 && self.poi_categories == 0 {
            return bad("POIs need at least one POI category");
        }
        if self.roads.1 > 0 && self.road_categories == 0 {
            return bad("roads need at least one road category");
        }
        if self.junctions.1 > 0 && self.junction_categories == 0 {
            return bad("junctions need at least one junction category");
        }
        if self.brand_rate > 0.0 && self.brands == 0 {
            return bad("brand_rate > 0 needs at least one brand");
        }
        if !(0.0..=1.0).contains(&self.brand_rate) {
            return bad("brand_rate must be in [0, 1]");
        }
        if self.intervals == 0 {
            return bad("intervals must be positive");
        }
        if self.image_dim == 0 {
            return bad("image_dim must be positive");
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    /// Parses `RxC` grid notation.
    pub fn parse_grid(s: &str) -> Result<(usize, usize)> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::InvalidSpec(format!("grid `{s}` is not of the form RxC")))?;
        let p = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidSpec(format!("grid `{s}` is not of the form RxC")))
        };
        Ok((p(r)?, p(c)?))
    }
}

/// Generated city: graph, image features and planted task labels.
#[derive(Debug, Clone)]
pub struct City {
    pub graph: UrbanGraph,
    pub images: ImageSet,
    pub tasks: Vec<Labels>,
}

impl City {
    /// Writes `nodes.csv`, `edges.csv`, `flows.csv`, `images.csv` and
    /// `tasks/<name>.csv` into `dir`.
    pub fn write(&self, dir: &Path, comment: Option<&str>) -> Result<()> {
        self.graph.save(dir, comment)?;
        self.images.save(&dir.join("images.csv"), comment)?;
        for t in &self.tasks {
            t.save(&dir.join("tasks").join(format!("{}.csv", t.name)), comment)?;
        }
        Ok(())
    }

    pub fn task(&self, name: &str) -> Option<&Labels> {
        self.tasks.iter().find(|t| t.name == name)
    }
}

pub fn region_id(r: usize, c: usize) -> String {
    format!("region_{r:03}_{c:03}")
}

fn position(r: usize, c: usize, dx: f64, dy: f64) -> Option<(f64, f64)> {
    Some((
        round6(-74.0 + 0.01 * (c as f64 + dx)),
        round6(40.7 + 0.01 * (r as f64 + dy)),
    ))
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn range<R: Rng>(rng: &mut R, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
}

/// Generates a city; a pure function of `(spec, seed)`.
pub fn synth_city(spec: &SynthSpec, seed: u64) -> Result<City> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::new();
    for k in 0..spec.poi_categories {
        b.push_node(Node::new(format!("cat_{k:02}"), NodeType::PoiCategory, format!("poi category {k}")));
    }
    for k in 0..spec.brands {
        b.push_node(Node::new(format!("brand_{k:02}"), NodeType::Brand, format!("brand {k}")));
    }
    for k in 0..spec.road_categories {
        b.push_node(Node::new(format!("rcat_{k:02}"), NodeType::RoadCategory, format!("road class {k}")));
    }
    for k in 0..spec.junction_categories {
        b.push_node(Node::new(
            format!("jcat_{k:02}"),
            NodeType::JunctionCategory,
            format!("junction class {k}"),
        ));
    }

    let n = spec.rows * spec.cols;
    let mut cat_counts = vec![vec![0usize; spec.poi_categories]; n];
    let mut road_counts = vec![0usize; n];
    let mut junction_counts = vec![0usize; n];
    let (mut poi_id, mut road_id, mut junc_id) = (0usize, 0usize, 0usize);
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let k = r * spec.cols + c;
            let rid = region_id(r, c);
            b.push_node(Node {
                id: rid.clone(),
                ty: NodeType::Region,
                label: format!("cell {r}-{c}"),
                position: position(r, c, 0.5, 0.5),
            });
            if c + 1 < spec.cols {
                b.edge(rid.clone(), region_id(r, c + 1), EdgeType::NearBy);
            }
            if r + 1 < spec.rows {
                b.edge(rid.clone(), region_id(r + 1, c), EdgeType::NearBy);
            }
            for _ in 0..range(&mut rng, spec.pois) {
                let id = format!("poi_{poi_id:05}");
                poi_id += 1;
                let cat = rng.random_range(0..spec.poi_categories);
                cat_counts[k][cat] += 1;
                let (dx, dy) = (rng.random::<f64>(), rng.random::<f64>());
                b.push_node(Node {
                    id: id.clone(),
                    ty: NodeType::Poi,
                    label: format!("poi {poi_id}"),
                    position: position(r, c, dx, dy),
                });
                b.edge(rid.clone(), id.clone(), EdgeType::Contains);
                b.edge(format!("cat_{cat:02}"), id.clone(), EdgeType::CateOf);
                if spec.brands > 0 && rng.random_bool(spec.brand_rate) {
                    let brand = rng.random_range(0..spec.brands);
                    b.edge(format!("brand_{brand:02}"), id, EdgeType::BrandOf);
                }
            }
            road_counts[k] = range(&mut rng, spec.roads);
            for _ in 0..road_counts[k] {
                let id = format!("road_{road_id:04}");
                road_id += 1;
                let cat = rng.random_range(0..spec.road_categories);
                b.push_node(Node::new(id.clone(), NodeType::Road, format!("road {road_id}")));
                b.edge(rid.clone(), id.clone(), EdgeType::Contains);
                b.edge(format!("rcat_{cat:02}"), id, EdgeType::RCateOf);
            }
            junction_counts[k] = range(&mut rng, spec.junctions);
            for _ in 0..junction_counts[k] {
                let id = format!("junc_{junc_id:04}");
                junc_id += 1;
                let cat = rng.random_range(0..spec.junction_categories);
                b.push_node(Node::new(id.clone(), NodeType::Junction, format!("junction {junc_id}")));
                b.edge(rid.clone(), id.clone(), EdgeType::Contains);
                b.edge(format!("jcat_{cat:02}"), id, EdgeType::JCateOf);
            }
        }
    }

    // gravity-model trips, spread over intervals by an origin-specific profile
    let size: Vec<f64> = (0..n)
        .map(|k| 1.0 + cat_counts[k].iter().sum::<usize>() as f64)
        .collect();
    let l = spec.intervals;
    let mut out_trips = vec![0.0; n];
    let mut in_trips = vec![0.0; n];
    for i in 0..n {
        let peak = rng.random_range(0..l) as f64;
        let profile: Vec<f64> = (0..l)
            .map(|t| {
                let d = (t as f64 - peak).abs().min(l as f64 - (t as f64 - peak).abs());
                (-(d * d) / 8.0).exp() + 0.1
            })
            .collect();
        let z: f64 = profile.iter().sum();
        let (ri, ci) = (i / spec.cols, i % spec.cols);
        for j in 0..n {
            if i == j {
                continue;
            }
            let (rj, cj) = (j / spec.cols, j % spec.cols);
            let dist = ((ri as f64 - rj as f64).powi(2) + (ci as f64 - cj as f64).powi(2)).sqrt();
            let total = spec.trip_scale * size[i] * size[j] / (1.0 + dist);
            for (t, p) in profile.iter().enumerate() {
                let trips = (total * p / z).round() as u64;
                if trips > 0 {
                    b.flow(FlowRecord {
                        origin: region_id(ri, ci),
                        destination: region_id(rj, cj),
                        interval: t,
                        trips,
                    });
                    out_trips[i] += trips as f64;
                    in_trips[j] += trips as f64;
                }
            }
        }
    }
    let graph = b.build(&GraphConfig {
        intervals: l,
        ..GraphConfig::default()
    })?;

    // images: density vector (counts over their maxima) through a fixed random projection
    let comp_dim = spec.poi_categories + 2;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let proj: Vec<Vec<f64>> = (0..comp_dim)
        .map(|_| {
            (0..spec.image_dim)
                .map(|_| normal.sample(&mut rng) / (comp_dim as f64).sqrt())
                .collect()
        })
        .collect();
    let mut images = ImageSet::new(spec.image_dim);
    for k in 0..n {
        let mut comp: Vec<f64> = cat_counts[k]
            .iter()
            .map(|&c| c as f64 / spec.pois.1.max(1) as f64)
            .collect();
        comp.push(road_counts[k] as f64 / spec.roads.1.max(1) as f64);
        comp.push(junction_counts[k] as f64 / spec.junctions.1.max(1) as f64);
        let rid = region_id(k / spec.cols, k % spec.cols);
        for _ in 0..spec.images_per_region {
            let f: Vec<f64> = (0..spec.image_dim)
                .map(|j| {
                    let clean: f64 = comp.iter().zip(&proj).map(|(a, p)| a * p[j]).sum();
                    round6(clean + spec.image_noise * normal.sample(&mut rng))
                })
                .collect();
            images.push(rid.clone(), Array1::from(f))?;
        }
    }

    // planted labels
    let weights: Vec<f64> = (0..spec.poi_categories)
        .map(|_| rng.random_range(0.5..3.0) * if rng.random_bool(0.3) { -1.0 } else { 1.0 })
        .collect();
    let bias = rng.random_range(5.0..15.0);
    let mut tasks = Vec::new();
    for &task in &spec.tasks {
        let clean: Vec<f64> = (0..n)
            .map(|k| match task {
                PlantedTask::PoiAffine => {
                    bias + cat_counts[k]
                        .iter()
                        .zip(&weights)
                        .map(|(&c, w)| c as f64 * w)
                        .sum::<f64>()
                }
                PlantedTask::RoadDensity => road_counts[k] as f64 + 0.5 * junction_counts[k] as f64,
                PlantedTask::FlowVolume => (out_trips[k] + in_trips[k]) / 100.0,
            })
            .collect();
        let half = spec.label_noise * std_dev(&clean);
        let mut values = BTreeMap::new();
        for (k, y) in clean.iter().enumerate() {
            let noise = if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 };
            values.insert(region_id(k / spec.cols, k % spec.cols), round6(y + noise));
        }
        tasks.push(Labels::new(task.name(), values));
    }
    Ok(City { graph, images, tasks })
}
