//! Counterfactual walks and segmentation by differencing.
//!
//! A walk decodes a sequence of class-style codes with the query's own
//! individual-style code and stops at the first image the classifier
//! assigns to the opposite class. The difference between the query image and
//! that counterfactual becomes the heatmap that post-processing turns into a
//! mask.

pub mod postprocess;

use serde::{Deserialize, Serialize};

pub use postprocess::{difference_map, postprocess, Heatmap, PostprocConfig, ThresholdMode};

use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{ClassLabel, CsCode, Dataset, Image, IsCode, Mask, SampleRecord};
use crate::planner::{adjacency_matrix, plan_query, PlannerConfig, QueryPlan};
use crate::topology::TopologyGraph;

/// Interpolation step of the straight-line walk.
pub const LINEAR_STEP: f64 = 0.1;
pub const LINEAR_STEPS: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkMode {
    #[default]
    GraphPath,
    Linear,
    DirectReference,
}

impl WalkMode {
    pub fn as_str(self) -> &'static str {
        match self {
            WalkMode::GraphPath => "graph_path",
            WalkMode::Linear => "linear",
            WalkMode::DirectReference => "direct_reference",
        }
    }
}

impl std::str::FromStr for WalkMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "graph" | "graph_path" => Ok(WalkMode::GraphPath),
            "linear" => Ok(WalkMode::Linear),
            "direct" | "direct_reference" => Ok(WalkMode::DirectReference),
            other => Err(Error::Config(format!("unknown walk mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkConfig {
    pub mode: WalkMode,
    pub flip_threshold: f64,
    /// Cap on decoded steps; the whole path (or all ten linear steps) when absent.
    pub max_steps: Option<usize>,
    pub linear_step: f64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            mode: WalkMode::GraphPath,
            flip_threshold: 0.5,
            max_steps: None,
            linear_step: LINEAR_STEP,
        }
    }
}

impl WalkConfig {
    pub fn with_mode(mode: WalkMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.flip_threshold > 0.0 && self.flip_threshold < 1.0) {
            return Err(Error::contract("flip_threshold must lie in (0, 1)"));
        }
        if self.linear_step != LINEAR_STEP {
            return Err(Error::contract("linear_step is fixed at 0.1"));
        }
        if self.max_steps == Some(0) {
            return Err(Error::contract("max_steps must be at least 1"));
        }
        Ok(())
    }

    /// Whether `p_abnormal` counts as the class opposite to `query`.
    pub fn is_flipped(&self, query: ClassLabel, p_abnormal: f64) -> bool {
        match query {
            ClassLabel::Abnormal => p_abnormal <= 1.0 - self.flip_threshold,
            ClassLabel::Normal => p_abnormal >= self.flip_threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    pub cs: CsCode,
    pub image: Image,
    pub p_abnormal: f64,
    pub node_id: Option<usize>,
    pub t: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CounterfactualTrace {
    pub steps: Vec<TraceStep>,
    pub flip_index: Option<usize>,
    pub no_flip: bool,
}

impl CounterfactualTrace {
    /// Step used for differencing: the flip step, or the last one.
    pub fn chosen(&self) -> &TraceStep {
        &self.steps[self.flip_index.unwrap_or(self.steps.len() - 1)]
    }
}

/// Decode and classify each code in order, stopping at the first flip.
fn walk(
    codes: impl Iterator<Item = (CsCode, Option<usize>, Option<f64>)>,
    query_label: ClassLabel,
    is: &IsCode,
    codec: &dyn Codec,
    cfg: &WalkConfig,
) -> Result<CounterfactualTrace> {
    let mut steps = Vec::new();
    let limit = cfg.max_steps.unwrap_or(usize::MAX);
    for (cs, node_id, t) in codes.take(limit) {
        let image = codec.decode(&cs, is)?;
        let p_abnormal = codec.classify(&image)?;
        steps.push(TraceStep {
            cs,
            image,
            p_abnormal,
            node_id,
            t,
        });
        if cfg.is_flipped(query_label, p_abnormal) {
            let flip = steps.len() - 1;
            return Ok(CounterfactualTrace {
                steps,
                flip_index: Some(flip),
                no_flip: false,
            });
        }
    }
    if steps.is_empty() {
        return Err(Error::EmptyInput("walk produced no steps".into()));
    }
    Ok(CounterfactualTrace {
        steps,
        flip_index: None,
        no_flip: true,
    })
}

/// Walk along the node centres of a planned path.
pub fn counterfactual_walk(
    query: &SampleRecord,
    plan: &QueryPlan,
    g: &TopologyGraph,
    codec: &dyn Codec,
    cfg: &WalkConfig,
) -> Result<CounterfactualTrace> {
    let mut codes = Vec::with_capacity(plan.plan.node_ids.len());
    for &id in &plan.plan.node_ids {
        let node = g
            .nodes
            .get(id)
            .ok_or_else(|| Error::contract(format!("plan refers to missing node {id}")))?;
        codes.push((node.center, Some(id), None));
    }
    walk(codes.into_iter(), query.label, &query.is, codec, cfg)
}

/// Interpolation parameters `0.1, 0.2, ..., 1.0`.
pub fn linear_ts() -> impl Iterator<Item = f64> {
    (1..=LINEAR_STEPS).map(|k| k as f64 / LINEAR_STEPS as f64)
}

/// Walk along the straight line from the query's code to the reference's.
pub fn linear_walk(
    query: &SampleRecord,
    reference: &SampleRecord,
    codec: &dyn Codec,
    cfg: &WalkConfig,
) -> Result<CounterfactualTrace> {
    let codes = linear_ts().map(|t| (query.cs.lerp(&reference.cs, t), None, Some(t)));
    walk(codes, query.label, &query.is, codec, cfg)
}

/// Single step: the reference's class-style code on the query's identity.
pub fn direct_reference(
    query: &SampleRecord,
    reference: &SampleRecord,
    codec: &dyn Codec,
    cfg: &WalkConfig,
) -> Result<CounterfactualTrace> {
    walk(
        std::iter::once((reference.cs, None, None)),
        query.label,
        &query.is,
        codec,
        cfg,
    )
}

/// Record of class `target` whose code is closest to `cs`, lowest index on ties.
pub fn nearest_record<'a>(cs: &CsCode, target: ClassLabel, ds: &'a Dataset) -> Result<&'a SampleRecord> {
    let mut best: Option<(f64, &SampleRecord)> = None;
    for r in ds.records.iter().filter(|r| r.label == target) {
        let d = cs.distance(&r.cs);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, r));
        }
    }
    best.map(|(_, r)| r)
        .ok_or_else(|| Error::NoCandidate(format!("dataset has no {target} reference")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationResult {
    pub id: String,
    pub mode: WalkMode,
    pub heatmap: Heatmap,
    pub mask: Mask,
    pub trace: CounterfactualTrace,
    pub plan: Option<QueryPlan>,
    pub reference_id: Option<String>,
    /// Class-style distance between query and reference (line modes).
    pub d: Option<f64>,
}

/// A per-record failure; the batch carries on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub message: String,
    pub exit_code: i32,
}

impl From<Error> for RecordFailure {
    fn from(e: Error) -> Self {
        Self {
            exit_code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecordOutcome {
    pub id: String,
    pub outcome: std::result::Result<SegmentationResult, RecordFailure>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SegmentSettings {
    pub walk: WalkConfig,
    pub planner: PlannerConfig,
    pub postproc: PostprocConfig,
    /// Base seed for random goal selection; record `i` uses `seed + i`.
    pub seed: u64,
}

impl SegmentSettings {
    pub fn validate(&self) -> Result<()> {
        self.walk.validate()?;
        self.planner.validate()?;
        self.postproc.validate()
    }
}

/// Query image: the stored one, or a reconstruction from its codes.
pub fn query_image(record: &SampleRecord, codec: &dyn Codec) -> Result<Image> {
    match &record.image {
        Some(img) => Ok(img.clone()),
        None => codec.decode(&record.cs, &record.is),
    }
}

pub fn segment_record(
    index: usize,
    ds: &Dataset,
    g: &TopologyGraph,
    m: &crate::planner::DistanceMatrix,
    codec: &dyn Codec,
    s: &SegmentSettings,
) -> Result<SegmentationResult> {
    let query = &ds.records[index];
    codec.contract().check_codes(&query.cs, &query.is)?;
    let original = query_image(query, codec)?;
    let plan = plan_query(
        &query.cs,
        query.label.opposite(),
        g,
        m,
        &s.planner,
        s.seed.wrapping_add(index as u64),
    )?;
    let (trace, plan, reference_id, d) = match s.walk.mode {
        WalkMode::GraphPath => {
            let trace = counterfactual_walk(query, &plan, g, codec, &s.walk)?;
            (trace, Some(plan), None, None)
        }
        WalkMode::Linear | WalkMode::DirectReference => {
            let reference = nearest_record(&g.nodes[plan.goal].center, query.label.opposite(), ds)?;
            let trace = if s.walk.mode == WalkMode::Linear {
                linear_walk(query, reference, codec, &s.walk)?
            } else {
                direct_reference(query, reference, codec, &s.walk)?
            };
            (
                trace,
                Some(plan),
                Some(reference.id.clone()),
                Some(query.cs.distance(&reference.cs)),
            )
        }
    };
    let heatmap = difference_map(&original, &trace.chosen().image)?;
    let mask = postprocess(&heatmap, &s.postproc);
    Ok(SegmentationResult {
        id: query.id.clone(),
        mode: s.walk.mode,
        heatmap,
        mask,
        trace,
        plan,
        reference_id,
        d,
    })
}

/// Segment every abnormal record, in dataset order.
pub fn segment_dataset(
    ds: &Dataset,
    g: &TopologyGraph,
    codec: &dyn Codec,
    s: &SegmentSettings,
    exec: Execution,
) -> Result<Vec<RecordOutcome>> {
    s.validate()?;
    let m = adjacency_matrix(g)?;
    let queries: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.records[i].label == ClassLabel::Abnormal)
        .collect();
    Ok(exec.map(&queries, |&i| RecordOutcome {
        id: ds.records[i].id.clone(),
        outcome: segment_record(i, ds, g, &m, codec, s).map_err(RecordFailure::from),
    }))
}
