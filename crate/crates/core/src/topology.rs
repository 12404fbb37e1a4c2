//! Mapper graph over the planar embedding.
//!
//! The embedding's bounding box is tiled by an `nx x ny` grid of closed,
//! overlapping rectangles. Points inside each rectangle are clustered with
//! DBSCAN; each (rectangle, cluster) pair becomes a node whose centre is the
//! mean class-style code of its members. Two nodes are joined when they
//! share at least one sample, weighted by the distance between centres.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::embedding::Embedding2D;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{ClassLabel, CsCode, Dataset};

/// Padding added to each side of the bounding box before tiling.
const BOX_PAD: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverConfig {
    pub nx: usize,
    pub ny: usize,
    /// Fraction of the bin width added on each side.
    pub overlap: f64,
}

impl Default for CoverConfig {
    fn default() -> Self {
        Self {
            nx: 8,
            ny: 8,
            overlap: 0.25,
        }
    }
}

impl CoverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::contract("cover needs at least one bin per axis"));
        }
        if !(0.0..0.5).contains(&self.overlap) {
            return Err(Error::contract("cover overlap must lie in [0, 0.5)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DbscanConfig {
    /// Fixed radius; when absent each bin uses `eps_scale` times the mean
    /// distance to the `eps_neighbor`-th nearest neighbour within the bin.
    pub eps: Option<f64>,
    pub eps_scale: f64,
    pub eps_neighbor: usize,
    /// Neighbour count needed for a core point, the point itself included.
    pub min_pts: usize,
    /// Cluster normal and abnormal members of a bin separately.
    pub stratified_clustering: bool,
}

impl Default for DbscanConfig {
    fn default() -> Self {
        Self {
            eps: None,
            eps_scale: 1.5,
            eps_neighbor: 3,
            min_pts: 4,
            stratified_clustering: false,
        }
    }
}

impl DbscanConfig {
    pub fn fixed(eps: f64, min_pts: usize) -> Self {
        Self {
            eps: Some(eps),
            min_pts,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(eps) = self.eps {
            if !(eps > 0.0) {
                return Err(Error::contract("dbscan eps must be positive"));
            }
        }
        if self.min_pts == 0 {
            return Err(Error::contract("dbscan min_pts must be at least 1"));
        }
        if self.eps_neighbor == 0 || !(self.eps_scale > 0.0) {
            return Err(Error::contract(
                "adaptive eps needs a positive scale and neighbour rank",
            ));
        }
        Ok(())
    }

    /// Radius to use for one bin's points.
    pub fn resolve_eps(&self, points: &[[f64; 2]]) -> f64 {
        self.eps.unwrap_or_else(|| {
            let k = self.eps_neighbor.min(points.len().saturating_sub(1));
            if k == 0 {
                return f64::MIN_POSITIVE;
            }
            let mean = points
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let mut d: Vec<f64> = points
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .map(|(_, q)| dist2d(p, q))
                        .collect();
                    d.sort_by(f64::total_cmp);
                    d[k - 1]
                })
                .sum::<f64>()
                / points.len() as f64;
            (self.eps_scale * mean).max(f64::MIN_POSITIVE)
        })
    }
}

/// One non-empty cover element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoverBin {
    pub ix: usize,
    pub iy: usize,
    /// Indices into the embedding, ascending.
    pub members: Vec<usize>,
}

fn dist2d(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Closed interval of bin `i` along one axis.
fn bin_interval(min: f64, width: f64, i: usize, overlap: f64) -> (f64, f64) {
    (
        min + i as f64 * width - overlap * width,
        min + (i + 1) as f64 * width + overlap * width,
    )
}

/// Non-empty bins in row-major order (`iy` outer, `ix` inner).
pub fn build_cover(emb: &Embedding2D, cfg: &CoverConfig) -> Result<Vec<CoverBin>> {
    cfg.validate()?;
    if emb.is_empty() {
        return Err(Error::EmptyInput("embedding has no points".into()));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &emb.coords {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    for d in 0..2 {
        lo[d] -= BOX_PAD;
        hi[d] += BOX_PAD;
    }
    let wx = (hi[0] - lo[0]) / cfg.nx as f64;
    let wy = (hi[1] - lo[1]) / cfg.ny as f64;
    let mut bins = Vec::new();
    for iy in 0..cfg.ny {
        let (y0, y1) = bin_interval(lo[1], wy, iy, cfg.overlap);
        for ix in 0..cfg.nx {
            let (x0, x1) = bin_interval(lo[0], wx, ix, cfg.overlap);
            let members: Vec<usize> = emb
                .coords
                .iter()
                .enumerate()
                .filter(|(_, p)| (x0..=x1).contains(&p[0]) && (y0..=y1).contains(&p[1]))
                .map(|(i, _)| i)
                .collect();
            if !members.is_empty() {
                bins.push(CoverBin { ix, iy, members });
            }
        }
    }
    Ok(bins)
}

/// DBSCAN with closed-ball neighbourhoods (self included).
///
/// Clusters are the connected components of core points, numbered by their
/// lowest-index core point. A border point joins the cluster of its
/// lowest-index core neighbour. Noise is labelled `-1`.
pub fn dbscan(points: &[[f64; 2]], eps: f64, min_pts: usize) -> Vec<i32> {
    let n = points.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist2d(&points[i], &points[j]) <= eps).collect())
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();
    let mut labels = vec![-1i32; n];
    let mut next = 0i32;
    for start in 0..n {
        if !core[start] || labels[start] >= 0 {
            continue;
        }
        labels[start] = next;
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &v in &neighbors[u] {
                if core[v] && labels[v] < 0 {
                    labels[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    for i in 0..n {
        if !core[i] {
            if let Some(&c) = neighbors[i].iter().find(|&&j| core[j]) {
                labels[i] = labels[c];
            }
        }
    }
    labels
}

/// DBSCAN on one bin's points under a config (adaptive or fixed eps).
pub fn cluster_bin(points: &[[f64; 2]], cfg: &DbscanConfig) -> Vec<i32> {
    dbscan(points, cfg.resolve_eps(points), cfg.min_pts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyNode {
    pub id: usize,
    #[serde(rename = "members")]
    pub member_ids: Vec<String>,
    pub center: CsCode,
    pub abnormal_ratio: f64,
    pub centroid2d: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TopologyGraph {
    pub nodes: Vec<TopologyNode>,
    pub edges: Vec<TopologyEdge>,
}

impl TopologyGraph {
    /// Graph over the given nodes with an edge for every pair sharing a member.
    pub fn from_nodes(nodes: Vec<TopologyNode>) -> Self {
        let sets: Vec<HashSet<&str>> = nodes
            .iter()
            .map(|n| n.member_ids.iter().map(String::as_str).collect())
            .collect();
        let mut edges = Vec::new();
        for a in 0..nodes.len() {
            for b in a + 1..nodes.len() {
                if !sets[a].is_disjoint(&sets[b]) {
                    edges.push(TopologyEdge {
                        a: nodes[a].id,
                        b: nodes[b].id,
                        weight: nodes[a].center.distance(&nodes[b].center),
                    });
                }
            }
        }
        Self { nodes, edges }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node ids must be `0..n` in order; edges must join distinct known nodes.
    pub fn validate(&self) -> Result<()> {
        for (k, node) in self.nodes.iter().enumerate() {
            if node.id != k {
                return Err(Error::contract(format!("node at position {k} has id {}", node.id)));
            }
            if node.member_ids.is_empty() {
                return Err(Error::contract(format!("node {k} has no members")));
            }
            if !(0.0..=1.0).contains(&node.abnormal_ratio) {
                return Err(Error::contract(format!("node {k} abnormal ratio out of range")));
            }
        }
        for e in &self.edges {
            if e.a == e.b || e.a >= self.nodes.len() || e.b >= self.nodes.len() {
                return Err(Error::contract(format!("invalid edge {}-{}", e.a, e.b)));
            }
            if !(e.weight >= 0.0) {
                return Err(Error::contract(format!("edge {}-{} has a negative weight", e.a, e.b)));
            }
        }
        Ok(())
    }
}

/// Assemble nodes from per-bin cluster labels.
///
/// `labels[k][m]` is the cluster of `covers[k].members[m]`. Node ids follow
/// bin order, then cluster id.
pub fn build_graph(
    covers: &[CoverBin],
    labels: &[Vec<i32>],
    dataset: &Dataset,
    emb: &Embedding2D,
) -> Result<TopologyGraph> {
    if covers.len() != labels.len() {
        return Err(Error::contract("one label vector per cover bin is required"));
    }
    if emb.len() != dataset.len() {
        return Err(Error::contract("embedding and dataset lengths differ"));
    }
    let mut nodes = Vec::new();
    for (bin, lab) in covers.iter().zip(labels) {
        if lab.len() != bin.members.len() {
            return Err(Error::contract("label vector length differs from bin size"));
        }
        let clusters = lab.iter().copied().max().unwrap_or(-1);
        for c in 0..=clusters {
            let members: Vec<usize> = bin
                .members
                .iter()
                .zip(lab)
                .filter(|&(_, &l)| l == c)
                .map(|(&m, _)| m)
                .collect();
            if members.is_empty() {
                continue;
            }
            nodes.push(make_node(nodes.len(), &members, dataset, emb));
        }
    }
    Ok(TopologyGraph::from_nodes(nodes))
}

fn make_node(id: usize, members: &[usize], dataset: &Dataset, emb: &Embedding2D) -> TopologyNode {
    let records: Vec<_> = members.iter().map(|&m| &dataset.records[m]).collect();
    let center = CsCode::mean(records.iter().map(|r| &r.cs)).expect("node has members");
    let abnormal = records.iter().filter(|r| r.label == ClassLabel::Abnormal).count();
    let mut c2 = [0.0; 2];
    for &m in members {
        c2[0] += emb.coords[m][0];
        c2[1] += emb.coords[m][1];
    }
    let k = members.len() as f64;
    TopologyNode {
        id,
        member_ids: records.iter().map(|r| r.id.clone()).collect(),
        center,
        abnormal_ratio: abnormal as f64 / k,
        centroid2d: [c2[0] / k, c2[1] / k],
    }
}

/// Cover, per-bin clustering and graph assembly in one call.
pub fn build_topology(
    dataset: &Dataset,
    emb: &Embedding2D,
    cover: &CoverConfig,
    dbscan_cfg: &DbscanConfig,
    exec: Execution,
) -> Result<TopologyGraph> {
    dbscan_cfg.validate()?;
    if emb.len() != dataset.len() {
        return Err(Error::contract("embedding and dataset lengths differ"));
    }
    let covers = build_cover(emb, cover)?;
    let labels = exec.map(&covers, |bin| {
        if dbscan_cfg.stratified_clustering {
            stratified_labels(bin, dataset, emb, dbscan_cfg)
        } else {
            let pts: Vec<[f64; 2]> = bin.members.iter().map(|&m| emb.coords[m]).collect();
            cluster_bin(&pts, dbscan_cfg)
        }
    });
    build_graph(&covers, &labels, dataset, emb)
}

/// Cluster each class separately; abnormal cluster ids follow the normal ones.
fn stratified_labels(bin: &CoverBin, dataset: &Dataset, emb: &Embedding2D, cfg: &DbscanConfig) -> Vec<i32> {
    let mut labels = vec![-1i32; bin.members.len()];
    let mut offset = 0;
    for class in [ClassLabel::Normal, ClassLabel::Abnormal] {
        let idx: Vec<usize> = (0..bin.members.len())
            .filter(|&k| dataset.records[bin.members[k]].label == class)
            .collect();
        let pts: Vec<[f64; 2]> = idx.iter().map(|&k| emb.coords[bin.members[k]]).collect();
        let lab = cluster_bin(&pts, cfg);
        let count = lab.iter().copied().max().unwrap_or(-1) + 1;
        for (&k, &l) in idx.iter().zip(&lab) {
            if l >= 0 {
                labels[k] = l + offset;
            }
        }
        offset += count;
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{IsCode, SampleRecord, Split, CS_DIM};
    use crate::rng;

    fn dataset_with(codes: &[(ClassLabel, [f64; CS_DIM])]) -> Dataset {
        Dataset::new(
            codes
                .iter()
                .enumerate()
                .map(|(i, (l, c))| SampleRecord::new(format!("r{i}"), *l, CsCode(*c), IsCode(vec![])))
                .collect(),
            Split::Test,
        )
    }

    fn code(v: f64) -> [f64; CS_DIM] {
        let mut c = [0.0; CS_DIM];
        c[0] = v;
        c
    }

    #[test]
    fn single_point_single_bin() {
        let emb = Embedding2D {
            coords: vec![[0.3, 0.7]],
        };
        let cfg = CoverConfig {
            nx: 1,
            ny: 1,
            overlap: 0.0,
        };
        let bins = build_cover(&emb, &cfg).unwrap();
        assert_eq!(
            bins,
            vec![CoverBin {
                ix: 0,
                iy: 0,
                members: vec![0]
            }]
        );
        assert!(build_cover(&Embedding2D { coords: vec![] }, &cfg).is_err());
    }

    #[test]
    fn overlap_membership_matches_interval_arithmetic() {
        // Box [0, 1] padded by 1e-9; two bins of width (1 + 2e-9)/2 with a
        // quarter-width overlap each side, i.e. bin 0 reaches ~0.625 and bin
        // 1 starts at ~0.375.
        let emb = Embedding2D {
            coords: vec![[0.0, 0.0], [0.3, 0.0], [0.5, 0.0], [1.0, 0.0]],
        };
        let cfg = CoverConfig {
            nx: 2,
            ny: 1,
            overlap: 0.25,
        };
        let bins = build_cover(&emb, &cfg).unwrap();
        assert_eq!(bins.len(), 2);
        assert_eq!(bins[0].members, vec![0, 1, 2]);
        assert_eq!(bins[1].members, vec![2, 3]);
    }

    #[test]
    fn zero_overlap_still_covers_everything() {
        let mut r = rng::seeded(5);
        let coords: Vec<[f64; 2]> = (0..200).map(|_| [rng::unit(&mut r), rng::unit(&mut r)]).collect();
        let emb = Embedding2D { coords };
        let bins = build_cover(
            &emb,
            &CoverConfig {
                nx: 4,
                ny: 3,
                overlap: 0.0,
            },
        )
        .unwrap();
        for i in 0..emb.len() {
            assert!(bins.iter().any(|b| b.members.contains(&i)));
        }
    }

    #[test]
    fn dbscan_small_cases() {
        assert!(dbscan(&[], 1.0, 4).is_empty());
        assert_eq!(dbscan(&[[0.0, 0.0]], 0.5, 1), vec![0]);
        assert_eq!(dbscan(&[[0.0, 0.0]], 0.5, 2), vec![-1]);
        // Two blobs and an outlier.
        let pts = [
            [0.0, 0.0],
            [0.1, 0.0],
            [0.0, 0.1],
            [5.0, 5.0],
            [5.1, 5.0],
            [5.0, 5.1],
            [9.0, 0.0],
        ];
        assert_eq!(dbscan(&pts, 0.2, 3), vec![0, 0, 0, 1, 1, 1, -1]);
    }

    #[test]
    fn border_point_joins_first_core_cluster() {
        // Point 0 reaches one core point of each cluster but is not core
        // itself. The right-hand cluster owns the lowest-index core point, so
        // it is numbered 0 and also claims the border point.
        let pts = [
            [1.0, 0.0],
            [2.0, 0.0],
            [2.3, 0.0],
            [2.6, 0.0],
            [2.9, 0.0],
            [-0.9, 0.0],
            [-0.6, 0.0],
            [-0.3, 0.0],
            [0.0, 0.0],
        ];
        assert_eq!(dbscan(&pts, 1.0, 4), vec![0, 0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn single_cluster_single_node() {
        let ds = dataset_with(&[
            (ClassLabel::Normal, code(1.0)),
            (ClassLabel::Normal, code(2.0)),
            (ClassLabel::Abnormal, code(3.0)),
            (ClassLabel::Abnormal, code(4.0)),
            (ClassLabel::Abnormal, code(5.0)),
        ]);
        let emb = Embedding2D {
            coords: vec![[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [0.1, 0.1], [0.05, 0.05]],
        };
        let covers = vec![CoverBin {
            ix: 0,
            iy: 0,
            members: (0..5).collect(),
        }];
        let g = build_graph(&covers, &[vec![0; 5]], &ds, &emb).unwrap();
        assert_eq!(g.nodes.len(), 1);
        assert!(g.edges.is_empty());
        assert_eq!(g.nodes[0].center.0[0], 3.0);
        assert_eq!(g.nodes[0].abnormal_ratio, 0.6);
        g.validate().unwrap();
    }

    #[test]
    fn shared_sample_creates_edge() {
        let ds = dataset_with(&[
            (ClassLabel::Normal, code(0.0)),
            (ClassLabel::Normal, code(1.0)),
            (ClassLabel::Abnormal, code(2.0)),
            (ClassLabel::Abnormal, code(3.0)),
        ]);
        let emb = Embedding2D {
            coords: vec![[0.0, 0.0], [0.2, 0.0], [0.5, 0.0], [1.0, 0.0]],
        };
        let cfg = CoverConfig {
            nx: 2,
            ny: 1,
            overlap: 0.25,
        };
        let covers = build_cover(&emb, &cfg).unwrap();
        assert_eq!(covers[0].members, vec![0, 1, 2]);
        assert_eq!(covers[1].members, vec![2, 3]);
        let labels: Vec<Vec<i32>> = covers.iter().map(|b| vec![0; b.members.len()]).collect();
        let g = build_graph(&covers, &labels, &ds, &emb).unwrap();
        assert_eq!(g.nodes.len(), 2);
        assert_eq!(g.edges.len(), 1);
        assert_eq!((g.edges[0].a, g.edges[0].b), (0, 1));
        // Centres 1.0 and 2.5 along the first component.
        assert_eq!(g.edges[0].weight, 1.5);
    }

    #[test]
    fn all_noise_gives_empty_graph() {
        let ds = dataset_with(&[(ClassLabel::Normal, code(0.0)), (ClassLabel::Normal, code(1.0))]);
        let emb = Embedding2D {
            coords: vec![[0.0, 0.0], [10.0, 0.0]],
        };
        let g = build_topology(
            &ds,
            &emb,
            &CoverConfig::default(),
            &DbscanConfig::fixed(0.1, 2),
            Execution::Sequential,
        )
        .unwrap();
        assert!(g.is_empty() && g.edges.is_empty());
    }

    #[test]
    fn stratified_clusters_are_class_pure() {
        let mut codes = Vec::new();
        let mut coords = Vec::new();
        for i in 0..20 {
            let label = if i % 2 == 0 {
                ClassLabel::Normal
            } else {
                ClassLabel::Abnormal
            };
            codes.push((label, code(i as f64)));
            coords.push([(i % 5) as f64 * 0.01, (i / 5) as f64 * 0.01]);
        }
        let ds = dataset_with(&codes);
        let emb = Embedding2D { coords };
        let cover = CoverConfig {
            nx: 1,
            ny: 1,
            overlap: 0.0,
        };
        let cfg = DbscanConfig {
            stratified_clustering: true,
            ..DbscanConfig::fixed(0.05, 2)
        };
        let g = build_topology(&ds, &emb, &cover, &cfg, Execution::Sequential).unwrap();
        assert_eq!(g.nodes.len(), 2);
        assert!(g
            .nodes
            .iter()
            .all(|n| n.abnormal_ratio == 0.0 || n.abnormal_ratio == 1.0));
        let mixed = build_topology(&ds, &emb, &cover, &DbscanConfig::fixed(0.05, 2), Execution::Sequential).unwrap();
        assert_eq!(mixed.nodes.len(), 1);
        assert_eq!(mixed.nodes[0].abnormal_ratio, 0.5);
    }

    #[test]
    fn adaptive_eps_uses_third_neighbor() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]];
        // Third-nearest distances: 3, 2, 2, 3 -> mean 2.5 -> eps 3.75.
        assert_eq!(DbscanConfig::default().resolve_eps(&pts), 3.75);
    }
}
