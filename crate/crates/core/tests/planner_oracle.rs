use topocf::model::{CsCode, CS_DIM};
use topocf::planner::{nearest_node, shortest_path, DistanceMatrix};
use topocf::rng;
use topocf::topology::{TopologyGraph, TopologyNode};
use topocf::Error;

/// Every simple path from `src` to `dst` with its left-to-right weight sum.
fn all_simple_paths(m: &DistanceMatrix, src: usize, dst: usize) -> Vec<(f64, Vec<usize>)> {
    fn walk(m: &DistanceMatrix, path: &mut Vec<usize>, len: f64, dst: usize, out: &mut Vec<(f64, Vec<usize>)>) {
        let u = *path.last().unwrap();
        if u == dst {
            out.push((len, path.clone()));
            return;
        }
        for v in 0..m.len() {
            if m.has_edge(u, v) && !path.contains(&v) {
                path.push(v);
                walk(m, path, len + m.get(u, v), dst, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(m, &mut vec![src], 0.0, dst, &mut out);
    out
}

fn random_graph(seed: u64, integer_weights: bool) -> DistanceMatrix {
    let mut r = rng::seeded(seed);
    let n = 1 + rng::index(&mut r, 10);
    let max_edges = (n * (n - 1) / 2).min(20);
    let edges = if max_edges == 0 {
        0
    } else {
        rng::index(&mut r, max_edges + 1)
    };
    let mut m = DistanceMatrix::unconnected(n);
    for _ in 0..edges {
        let a = rng::index(&mut r, n);
        let b = rng::index(&mut r, n);
        if a == b {
            continue;
        }
        let w = if integer_weights {
            rng::index(&mut r, 4) as f64
        } else {
            rng::uniform(&mut r, 0.0, 3.0)
        };
        m.set(a, b, w).unwrap();
    }
    m
}

fn check_against_enumeration(m: &DistanceMatrix, check_sequence: bool) {
    for src in 0..m.len() {
        for dst in 0..m.len() {
            let paths = all_simple_paths(m, src, dst);
            let result = shortest_path(m, src, dst);
            if paths.is_empty() {
                assert!(matches!(result, Err(Error::Unreachable { .. })));
                continue;
            }
            let plan = result.unwrap();
            let best = paths.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            assert_eq!(plan.total_length(), best);
            assert_eq!(plan.node_ids.first(), Some(&src));
            assert_eq!(plan.node_ids.last(), Some(&dst));
            let mut acc = 0.0;
            for (k, w) in plan.node_ids.windows(2).enumerate() {
                assert!(m.has_edge(w[0], w[1]));
                acc += m.get(w[0], w[1]);
                assert_eq!(plan.cumulative_lengths[k + 1], acc);
            }
            if check_sequence {
                let lex = paths.iter().filter(|p| p.0 == best).map(|p| &p.1).min().unwrap();
                assert_eq!(&plan.node_ids, lex);
            }
        }
    }
}

#[test]
fn dijkstra_matches_enumeration_real_weights() {
    for seed in 0..200 {
        check_against_enumeration(&random_graph(seed, false), false);
    }
}

#[test]
fn dijkstra_tie_break_matches_enumeration() {
    // Small integer weights make ties common and sums exact.
    for seed in 1000..1200 {
        check_against_enumeration(&random_graph(seed, true), true);
    }
}

#[test]
fn nearest_node_matches_scan_and_is_scale_stable() {
    let mut r = rng::seeded(11);
    let nodes: Vec<TopologyNode> = (0..20)
        .map(|id| {
            let mut c = [0.0; CS_DIM];
            for v in &mut c {
                *v = rng::uniform(&mut r, -1.0, 1.0);
            }
            TopologyNode {
                id,
                member_ids: vec![format!("m{id}")],
                center: CsCode(c),
                abnormal_ratio: 0.0,
                centroid2d: [0.0; 2],
            }
        })
        .collect();
    let g = TopologyGraph { nodes, edges: vec![] };
    for _ in 0..50 {
        let mut q = [0.0; CS_DIM];
        for v in &mut q {
            *v = rng::uniform(&mut r, -1.0, 1.0);
        }
        let q = CsCode(q);
        let scan = (0..20)
            .min_by(|&a, &b| {
                q.distance(&g.nodes[a].center)
                    .total_cmp(&q.distance(&g.nodes[b].center))
            })
            .unwrap();
        assert_eq!(nearest_node(&q, &g, None).unwrap(), scan);

        let scale = 2.0f64.powi(rng::index(&mut r, 7) as i32 - 3);
        let mut scaled = g.clone();
        for n in &mut scaled.nodes {
            n.center.0.iter_mut().for_each(|v| *v *= scale);
        }
        let mut sq = q;
        sq.0.iter_mut().for_each(|v| *v *= scale);
        assert_eq!(nearest_node(&sq, &scaled, None).unwrap(), scan);
    }
}
