//! Shortest class-transfer paths over the Mapper graph.
//!
//! Distances live in the 8-D class-style space: the matrix holds the centre
//! distance for every edge and infinity elsewhere. Shortest paths use
//! Dijkstra ordered by `(length, node sequence)`, so among equally short
//! paths the lexicographically smallest id sequence wins.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClassLabel, CsCode};
use crate::rng;
use crate::topology::{TopologyGraph, TopologyNode};

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// Matrix with zero diagonal and no edges.
    pub fn unconnected(n: usize) -> Self {
        let mut data = vec![f64::INFINITY; n * n];
        for i in 0..n {
            data[i * n + i] = 0.0;
        }
        Self { n, data }
    }

    /// Set a symmetric edge weight.
    pub fn set(&mut self, i: usize, j: usize, w: f64) -> Result<()> {
        if i >= self.n || j >= self.n || i == j {
            return Err(Error::contract(format!("invalid edge {i}-{j}")));
        }
        if !(w >= 0.0) {
            return Err(Error::contract(format!("edge {i}-{j} weight must be nonnegative")));
        }
        self.data[i * self.n + j] = w;
        self.data[j * self.n + i] = w;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.get(i, j).is_finite()
    }
}

pub fn adjacency_matrix(g: &TopologyGraph) -> Result<DistanceMatrix> {
    g.validate()?;
    let mut m = DistanceMatrix::unconnected(g.len());
    for e in &g.edges {
        m.set(e.a, e.b, e.weight)?;
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathPlan {
    pub node_ids: Vec<usize>,
    pub cumulative_lengths: Vec<f64>,
}

impl PathPlan {
    pub fn total_length(&self) -> f64 {
        *self.cumulative_lengths.last().unwrap_or(&0.0)
    }

    pub fn source(&self) -> usize {
        self.node_ids[0]
    }

    pub fn goal(&self) -> usize {
        *self.node_ids.last().expect("plan has at least one node")
    }

    fn from_nodes(m: &DistanceMatrix, node_ids: Vec<usize>) -> Self {
        let mut cumulative_lengths = Vec::with_capacity(node_ids.len());
        let mut acc = 0.0;
        cumulative_lengths.push(acc);
        for w in node_ids.windows(2) {
            acc += m.get(w[0], w[1]);
            cumulative_lengths.push(acc);
        }
        Self {
            node_ids,
            cumulative_lengths,
        }
    }
}

/// Best known route to a node: length, then id sequence.
#[derive(Clone)]
struct Label {
    dist: f64,
    path: Vec<usize>,
}

impl Label {
    fn cmp(&self, other: &Label) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then_with(|| self.path.cmp(&other.path))
    }
}

fn dijkstra(m: &DistanceMatrix, src: usize) -> Vec<Option<Label>> {
    let n = m.len();
    let mut best: Vec<Option<Label>> = vec![None; n];
    let mut done = vec![false; n];
    best[src] = Some(Label {
        dist: 0.0,
        path: vec![src],
    });
    loop {
        let next = (0..n)
            .filter(|&v| !done[v])
            .filter_map(|v| best[v].as_ref().map(|l| (v, l)))
            .min_by(|a, b| a.1.cmp(b.1))
            .map(|(v, _)| v);
        let Some(u) = next else { break };
        done[u] = true;
        let here = best[u].clone().expect("selected node has a label");
        for v in 0..n {
            if done[v] || !m.has_edge(u, v) {
                continue;
            }
            let mut path = here.path.clone();
            path.push(v);
            let cand = Label {
                dist: here.dist + m.get(u, v),
                path,
            };
            if best[v].as_ref().is_none_or(|cur| cand.cmp(cur) == Ordering::Less) {
                best[v] = Some(cand);
            }
        }
    }
    best
}

fn check_id(m: &DistanceMatrix, id: usize) -> Result<()> {
    if id >= m.len() {
        return Err(Error::contract(format!(
            "node id {id} out of range for {} nodes",
            m.len()
        )));
    }
    Ok(())
}

pub fn shortest_path(m: &DistanceMatrix, src: usize, dst: usize) -> Result<PathPlan> {
    check_id(m, src)?;
    check_id(m, dst)?;
    let mut best = dijkstra(m, src);
    match best[dst].take() {
        Some(label) => Ok(PathPlan::from_nodes(m, label.path)),
        None => Err(Error::Unreachable { src, dst }),
    }
}

/// Shortest distance from `src` to every node (infinity when unreachable).
pub fn dijkstra_distances(m: &DistanceMatrix, src: usize) -> Result<Vec<f64>> {
    check_id(m, src)?;
    Ok(dijkstra(m, src)
        .into_iter()
        .map(|l| l.map_or(f64::INFINITY, |l| l.dist))
        .collect())
}

/// Node whose centre is closest to `cs`, lowest id on ties.
pub fn nearest_node(cs: &CsCode, g: &TopologyGraph, filter: Option<&dyn Fn(&TopologyNode) -> bool>) -> Result<usize> {
    let mut best: Option<(f64, usize)> = None;
    for node in &g.nodes {
        if filter.is_some_and(|f| !f(node)) {
            continue;
        }
        let d = cs.distance(&node.center);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, node.id));
        }
    }
    best.map(|(_, id)| id)
        .ok_or(Error::NoCandidate("no node matches the filter".into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalStrategy {
    PurestNearest,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GoalMode {
    PurestNearest { src: usize },
    Random { seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub goal_mode: GoalStrategy,
    /// Minimum share of the target class in a goal node.
    pub purity_threshold: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            goal_mode: GoalStrategy::PurestNearest,
            purity_threshold: 0.9,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.purity_threshold > 0.5 && self.purity_threshold <= 1.0) {
            return Err(Error::contract("purity_threshold must lie in (0.5, 1]"));
        }
        Ok(())
    }
}

/// Share of `target` among the node's members.
pub fn purity(node: &TopologyNode, target: ClassLabel) -> f64 {
    match target {
        ClassLabel::Abnormal => node.abnormal_ratio,
        ClassLabel::Normal => 1.0 - node.abnormal_ratio,
    }
}

pub fn qualifies(node: &TopologyNode, target: ClassLabel, threshold: f64) -> bool {
    purity(node, target) >= threshold
}

pub fn select_goal_node(
    g: &TopologyGraph,
    m: &DistanceMatrix,
    target: ClassLabel,
    mode: GoalMode,
    purity_threshold: f64,
) -> Result<usize> {
    let candidates: Vec<usize> = g
        .nodes
        .iter()
        .filter(|n| qualifies(n, target, purity_threshold))
        .map(|n| n.id)
        .collect();
    if candidates.is_empty() {
        return Err(Error::NoCandidate(format!(
            "no node is at least {purity_threshold} {target}"
        )));
    }
    match mode {
        GoalMode::Random { seed } => {
            let mut r = rng::seeded(seed);
            Ok(candidates[rng::index(&mut r, candidates.len())])
        }
        GoalMode::PurestNearest { src } => {
            let dist = dijkstra_distances(m, src)?;
            let mut best: Option<usize> = None;
            for &c in &candidates {
                if !dist[c].is_finite() {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some(b) => match dist[c].total_cmp(&dist[b]) {
                        Ordering::Less => true,
                        Ordering::Greater => false,
                        Ordering::Equal => purity(&g.nodes[c], target) > purity(&g.nodes[b], target),
                    },
                };
                if better {
                    best = Some(c);
                }
            }
            best.ok_or(Error::Unreachable {
                src,
                dst: candidates[0],
            })
        }
    }
}

/// Start node, goal node and the path between them for one query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub start: usize,
    pub goal: usize,
    pub plan: PathPlan,
}

pub fn plan_query(
    cs: &CsCode,
    target: ClassLabel,
    g: &TopologyGraph,
    m: &DistanceMatrix,
    cfg: &PlannerConfig,
    seed: u64,
) -> Result<QueryPlan> {
    let start = nearest_node(cs, g, None)?;
    let mode = match cfg.goal_mode {
        GoalStrategy::PurestNearest => GoalMode::PurestNearest { src: start },
        GoalStrategy::Random => GoalMode::Random { seed },
    };
    let goal = select_goal_node(g, m, target, mode, cfg.purity_threshold)?;
    let plan = shortest_path(m, start, goal)?;
    Ok(QueryPlan { start, goal, plan })
}
