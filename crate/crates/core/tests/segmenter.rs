use topocf::codec::synthetic::{lesion_code, PhantomParams};
use topocf::codec::{make_dataset, Codec, SyntheticCodec};
use topocf::embedding::{fit, EmbeddingConfig};
use topocf::model::{ClassLabel, CsCode, Dataset, IsCode, SampleRecord, Split};
use topocf::planner::{PathPlan, QueryPlan};
use topocf::segmenter::*;
use topocf::topology::{build_topology, CoverConfig, DbscanConfig, TopologyGraph, TopologyNode};
use topocf::Execution;

fn plain_is() -> IsCode {
    PhantomParams {
        head_cx: 0.5,
        head_cy: 0.5,
        head_rx: 0.4,
        head_ry: 0.4,
        shade: 0.1,
        texture_seed: 3,
    }
    .to_code()
}

fn record(id: &str, label: ClassLabel, cs: CsCode) -> SampleRecord {
    SampleRecord::new(id, label, cs, plain_is())
}

fn chain(centers: &[CsCode]) -> (TopologyGraph, QueryPlan) {
    let nodes = centers
        .iter()
        .enumerate()
        .map(|(id, c)| TopologyNode {
            id,
            member_ids: vec![format!("m{id}")],
            center: *c,
            abnormal_ratio: if c.0[0] > 0.0 { 1.0 } else { 0.0 },
            centroid2d: [id as f64, 0.0],
        })
        .collect();
    let g = TopologyGraph::from_nodes(nodes);
    let ids: Vec<usize> = (0..centers.len()).collect();
    let plan = QueryPlan {
        start: 0,
        goal: ids.len() - 1,
        plan: PathPlan {
            cumulative_lengths: vec![0.0; ids.len()],
            node_ids: ids,
        },
    };
    (g, plan)
}

#[test]
fn normal_first_node_flips_at_zero() {
    let codec = SyntheticCodec::default();
    let q = record("q", ClassLabel::Abnormal, lesion_code(0.6, 0.5, 0.5, 0.08));
    let (g, plan) = chain(&[lesion_code(0.03, 0.5, 0.5, 0.08), lesion_code(0.0, 0.5, 0.5, 0.08)]);
    let trace = counterfactual_walk(&q, &plan, &g, &codec, &WalkConfig::default()).unwrap();
    assert_eq!(trace.flip_index, Some(0));
    assert_eq!(trace.steps.len(), 1);
    assert!(!trace.no_flip);
}

#[test]
fn walk_toward_normal_flips_and_ends_low() {
    let codec = SyntheticCodec::default();
    let q = record("q", ClassLabel::Abnormal, lesion_code(0.7, 0.45, 0.5, 0.08));
    let centers: Vec<CsCode> = [0.7, 0.5, 0.3, 0.1, 0.0]
        .iter()
        .map(|&a| lesion_code(a, 0.45, 0.5, 0.08))
        .collect();
    let (g, plan) = chain(&centers);
    let trace = counterfactual_walk(&q, &plan, &g, &codec, &WalkConfig::default()).unwrap();
    let flip = trace.flip_index.expect("walk flips");
    assert!(trace.steps.last().unwrap().p_abnormal < 0.5);
    for s in &trace.steps[..flip] {
        assert!(s.p_abnormal > 0.5);
    }
    for (k, s) in trace.steps.iter().enumerate() {
        assert_eq!(s.node_id, Some(k));
        assert_eq!(s.image, codec.decode(&s.cs, &q.is).unwrap());
    }
}

#[test]
fn own_node_only_gives_no_flip() {
    let codec = SyntheticCodec::default();
    let cs = lesion_code(0.6, 0.5, 0.5, 0.08);
    let q = record("q", ClassLabel::Abnormal, cs);
    let (g, plan) = chain(&[cs]);
    let trace = counterfactual_walk(&q, &plan, &g, &codec, &WalkConfig::default()).unwrap();
    assert!(trace.no_flip);
    assert_eq!(trace.flip_index, None);
    assert_eq!(trace.chosen(), &trace.steps[0]);
}

#[test]
fn degenerate_line_repeats_and_emits_all_ts() {
    let codec = SyntheticCodec::default();
    let q = record("q", ClassLabel::Abnormal, lesion_code(0.6, 0.5, 0.5, 0.08));
    let trace = linear_walk(&q, &q, &codec, &WalkConfig::with_mode(WalkMode::Linear)).unwrap();
    assert!(trace.no_flip);
    assert_eq!(trace.steps.len(), 10);
    let ts: Vec<f64> = trace.steps.iter().map(|s| s.t.unwrap()).collect();
    assert_eq!(ts, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]);
    for s in &trace.steps {
        assert_eq!(s.image, trace.steps[0].image);
    }
}

#[test]
fn linear_flip_matches_amplitude_crossing() {
    let codec = SyntheticCodec::default();
    let (lx, ly, sigma) = (0.5, 0.45, 0.07);
    let q = record("q", ClassLabel::Abnormal, lesion_code(0.6, lx, ly, sigma));
    let r = record("r", ClassLabel::Normal, lesion_code(0.0, lx, ly, sigma));
    // Boundary amplitude by bisection on the classifier.
    let p_at = |a: f64| {
        codec
            .classify(&codec.decode(&lesion_code(a, lx, ly, sigma), &q.is).unwrap())
            .unwrap()
    };
    let (mut lo, mut hi) = (0.0, 0.6);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if p_at(mid) <= 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let expected = linear_ts().position(|t| 0.6 * (1.0 - t) <= lo).unwrap();
    let trace = linear_walk(&q, &r, &codec, &WalkConfig::with_mode(WalkMode::Linear)).unwrap();
    assert_eq!(trace.flip_index, Some(expected));
}

#[test]
fn direct_reference_cases() {
    let codec = SyntheticCodec::default();
    let q = record("q", ClassLabel::Abnormal, lesion_code(0.6, 0.5, 0.5, 0.08));
    let cfg = WalkConfig::with_mode(WalkMode::DirectReference);
    let same = direct_reference(&q, &q, &codec, &cfg).unwrap();
    assert_eq!(same.steps.len(), 1);
    let original = query_image(&q, &codec).unwrap();
    assert_eq!(same.steps[0].image, original);
    let hm = difference_map(&original, &same.chosen().image).unwrap();
    assert!(postprocess(&hm, &PostprocConfig::default()).is_empty());

    let r = record("r", ClassLabel::Normal, lesion_code(0.0, 0.3, 0.3, 0.08));
    let t = direct_reference(&q, &r, &codec, &cfg).unwrap();
    assert_eq!(t.steps.len(), 1);
    assert!(t.steps[0].p_abnormal < 0.5);
    let hm = difference_map(&original, &t.chosen().image).unwrap();
    let (x, y) = hm.argmax().unwrap();
    let gt = topocf::codec::synthetic::LesionParams::from_code(&q.cs).fwhm_mask(64, 64);
    assert!(gt.get(x, y));
}

#[test]
fn no_abnormal_records_gives_empty_output() {
    let codec = SyntheticCodec::default();
    let ds = Dataset::new(
        vec![record("n", ClassLabel::Normal, lesion_code(0.0, 0.5, 0.5, 0.08))],
        Split::Test,
    );
    let out = segment_dataset(
        &ds,
        &TopologyGraph::default(),
        &codec,
        &SegmentSettings::default(),
        Execution::Sequential,
    )
    .unwrap();
    assert!(out.is_empty());
}

#[test]
fn dataset_run_is_deterministic_and_flips_are_minimal() {
    let data = make_dataset(20, 20, 7).unwrap();
    let codec = SyntheticCodec::default();
    let emb = fit(
        &data.dataset.cs_codes(),
        &EmbeddingConfig::default(),
        Execution::Parallel,
    )
    .unwrap()
    .embedding;
    let g = build_topology(
        &data.dataset,
        &emb,
        &CoverConfig::default(),
        &DbscanConfig::default(),
        Execution::Parallel,
    )
    .unwrap();
    for mode in [WalkMode::GraphPath, WalkMode::Linear, WalkMode::DirectReference] {
        let s = SegmentSettings {
            walk: WalkConfig::with_mode(mode),
            ..SegmentSettings::default()
        };
        let a = segment_dataset(&data.dataset, &g, &codec, &s, Execution::Sequential).unwrap();
        let b = segment_dataset(&data.dataset, &g, &codec, &s, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        for o in &a {
            let Ok(r) = &o.outcome else { continue };
            if let Some(f) = r.trace.flip_index {
                assert!(r.trace.steps[..f].iter().all(|st| st.p_abnormal > 0.5));
                assert!(r.trace.steps[f].p_abnormal <= 0.5);
            }
            assert_eq!(r.mask.shape(), (64, 64));
            let max = r.heatmap.max();
            assert!(max == 0.0 || max == 1.0);
        }
    }
}
