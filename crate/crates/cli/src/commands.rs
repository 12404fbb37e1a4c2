//! Subcommand bodies. Each returns the files it read and wrote so that the
//! caller can record them in the run manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;
use topocf::codec::subprocess::{serve, Op};
use topocf::codec::{ArcCodec, Codec};
use topocf::embedding::fit;
use topocf::io::ndv1::Dtype;
use topocf::io::{
    format_decimal, read_codes, read_embedding, read_json, tables, write_atomic, write_embedding, write_image,
    write_json, write_mask, write_ndv1, Tensor,
};
use topocf::metrics::{mean_report, MetricsReport};
use topocf::model::{ClassLabel, Dataset, Mask};
use topocf::planner::{adjacency_matrix, plan_query, QueryPlan};
use topocf::segmenter::{segment_dataset, RecordFailure, SegmentSettings, WalkMode};
use topocf::topology::{build_topology, TopologyGraph};
use topocf::{Error, Execution, Result};

use crate::config::{CodecKind, PipelineConfig};
use crate::dataset::{self, pgm_path};
use crate::manifest::Timings;
use crate::svg;

/// Everything a subcommand needs besides its own arguments.
pub struct Context {
    pub config: PipelineConfig,
    pub seed: u64,
    pub exec: Execution,
    pub out_dir: PathBuf,
}

/// Files a subcommand touched, plus an optional non-zero exit status for
/// runs that wrote their outputs but had nothing succeed.
#[derive(Default)]
pub struct Report {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub timings: Timings,
    pub exit_code: i32,
}

fn load_codes(path: &Path) -> Result<Dataset> {
    let ds = read_codes(path)?;
    let report = topocf::model::validate_dataset(&ds);
    if let Some(f) = report.findings.first() {
        return Err(Error::InvalidDataset(format!("{}: {f:?}", path.display())));
    }
    Ok(ds)
}

fn load_graph(path: &Path) -> Result<TopologyGraph> {
    let g: TopologyGraph = read_json(path)?;
    g.validate()?;
    Ok(g)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Scenario {
    /// Lesion parameters read directly from the class-style code.
    Standard,
    /// Class-style codes on a curved arc.
    Arc,
}

pub fn synth(ctx: &Context, n_normal: usize, n_abnormal: usize, scenario: Scenario) -> Result<Report> {
    let mut rep = Report::default();
    let base = ctx.config.codec.synthetic();
    let data = rep.timings.stage("generate", || match scenario {
        Scenario::Standard => base.make_dataset_with(n_normal, n_abnormal, ctx.seed, ctx.exec),
        Scenario::Arc => ArcCodec::new(base.clone(), ctx.config.codec.arc.clone())
            .make_dataset(n_normal, n_abnormal, ctx.seed, ctx.exec),
    })?;
    rep.outputs = rep
        .timings
        .stage("write", || dataset::write_dataset(&ctx.out_dir, &data))?;
    Ok(rep)
}

pub fn embed(ctx: &Context, codes: &Path) -> Result<Report> {
    let mut rep = Report {
        inputs: vec![codes.to_path_buf()],
        ..Report::default()
    };
    let ds = load_codes(codes)?;
    let out = rep
        .timings
        .stage("tsne", || fit(&ds.cs_codes(), &ctx.config.embedding, ctx.exec))?;
    let ids: Vec<String> = ds.records.iter().map(|r| r.id.clone()).collect();
    let path = ctx.out_dir.join("embedding.csv");
    write_embedding(&path, &ids, &out.embedding)?;
    rep.outputs.push(path);
    Ok(rep)
}

/// The embedding rows, reordered to match the dataset.
fn aligned_embedding(ds: &Dataset, path: &Path) -> Result<topocf::embedding::Embedding2D> {
    let (ids, emb) = read_embedding(path)?;
    if ids.len() != ds.len() || ids.iter().zip(&ds.records).any(|(a, r)| *a != r.id) {
        return Err(Error::contract(format!(
            "{} does not list the codes' ids in the same order",
            path.display()
        )));
    }
    Ok(emb)
}

pub fn topology(ctx: &Context, codes: &Path, embedding: &Path) -> Result<Report> {
    let mut rep = Report {
        inputs: vec![codes.to_path_buf(), embedding.to_path_buf()],
        ..Report::default()
    };
    let ds = load_codes(codes)?;
    let emb = aligned_embedding(&ds, embedding)?;
    let g = rep.timings.stage("mapper", || {
        build_topology(&ds, &emb, &ctx.config.cover, &ctx.config.dbscan, ctx.exec)
    })?;
    let path = ctx.out_dir.join("graph.json");
    write_json(&path, &g)?;
    rep.outputs.push(path);
    Ok(rep)
}

#[derive(Serialize)]
struct PlanRow {
    id: String,
    target: ClassLabel,
    #[serde(flatten)]
    result: PlanResult,
}

#[derive(Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum PlanResult {
    Ok(QueryPlan),
    Failed(RecordFailure),
}

/// Exit status of a batch: 0 if anything succeeded (or there was nothing to
/// do), otherwise the first failure's code.
fn batch_status<'a>(failures: impl Iterator<Item = Option<&'a RecordFailure>>) -> i32 {
    let mut first = None;
    for f in failures {
        match f {
            None => return 0,
            Some(f) => {
                first.get_or_insert(f.exit_code);
            }
        }
    }
    first.unwrap_or(0)
}

fn report_failures<'a>(failures: impl Iterator<Item = (&'a str, &'a RecordFailure)>) {
    for (id, f) in failures {
        eprintln!("topocf: {id}: {}", f.message);
    }
}

pub fn plan(ctx: &Context, codes: &Path, graph: &Path, ids: &[String]) -> Result<Report> {
    let mut rep = Report {
        inputs: vec![codes.to_path_buf(), graph.to_path_buf()],
        ..Report::default()
    };
    let ds = load_codes(codes)?;
    let g = load_graph(graph)?;
    let queries: Vec<usize> = if ids.is_empty() {
        (0..ds.len())
            .filter(|&i| ds.records[i].label == ClassLabel::Abnormal)
            .collect()
    } else {
        ids.iter()
            .map(|id| {
                ds.records
                    .iter()
                    .position(|r| &r.id == id)
                    .ok_or_else(|| Error::Config(format!("no record `{id}` in {}", codes.display())))
            })
            .collect::<Result<_>>()?
    };
    let m = adjacency_matrix(&g)?;
    let rows: Vec<PlanRow> = rep.timings.stage("dijkstra", || {
        ctx.exec.map(&queries, |&i| {
            let r = &ds.records[i];
            let target = r.label.opposite();
            let result = match plan_query(
                &r.cs,
                target,
                &g,
                &m,
                &ctx.config.planner,
                ctx.seed.wrapping_add(i as u64),
            ) {
                Ok(p) => PlanResult::Ok(p),
                Err(e) => PlanResult::Failed(e.into()),
            };
            PlanRow {
                id: r.id.clone(),
                target,
                result,
            }
        })
    });
    rep.exit_code = batch_status(rows.iter().map(|r| match &r.result {
        PlanResult::Ok(_) => None,
        PlanResult::Failed(f) => Some(f),
    }));
    report_failures(rows.iter().filter_map(|r| match &r.result {
        PlanResult::Ok(_) => None,
        PlanResult::Failed(f) => Some((r.id.as_str(), f)),
    }));
    let path = ctx.out_dir.join("plans.json");
    write_json(&path, &rows)?;
    rep.outputs.push(path);
    Ok(rep)
}

#[derive(Serialize)]
struct StepRow {
    p_abnormal: f64,
    node_id: Option<usize>,
    t: Option<f64>,
}

#[derive(Serialize)]
struct SegmentRow {
    id: String,
    /// Index along the first axis of `heatmaps.ndv1`.
    heatmap_index: usize,
    #[serde(flatten)]
    result: SegmentResult,
}

#[derive(Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum SegmentResult {
    Ok {
        flip_index: Option<usize>,
        no_flip: bool,
        mask_area: u64,
        reference_id: Option<String>,
        d: Option<f64>,
        plan: Option<QueryPlan>,
        steps: Vec<StepRow>,
    },
    Failed(RecordFailure),
}

#[derive(Serialize)]
struct SegmentFile {
    mode: WalkMode,
    records: Vec<SegmentRow>,
}

pub fn segment(
    ctx: &Context,
    codes: &Path,
    graph: &Path,
    images: Option<&Path>,
    mode: Option<WalkMode>,
) -> Result<Report> {
    let mut rep = Report {
        inputs: vec![codes.to_path_buf(), graph.to_path_buf()],
        ..Report::default()
    };
    let mut ds = load_codes(codes)?;
    if let Some(dir) = images {
        dataset::attach_images(&mut ds, dir)?;
        rep.inputs.push(dir.to_path_buf());
    }
    let g = load_graph(graph)?;
    let codec = ctx.config.codec.build(None)?;
    let mut walk = ctx.config.walk.clone();
    if let Some(m) = mode {
        walk.mode = m;
    }
    let settings = SegmentSettings {
        walk,
        planner: ctx.config.planner.clone(),
        postproc: ctx.config.postproc.clone(),
        seed: ctx.seed,
    };
    let outcomes = rep.timings.stage("segment", || {
        segment_dataset(&ds, &g, codec.as_ref(), &settings, ctx.exec)
    })?;
    rep.exit_code = batch_status(outcomes.iter().map(|o| o.outcome.as_ref().err()));
    report_failures(
        outcomes
            .iter()
            .filter_map(|o| o.outcome.as_ref().err().map(|f| (o.id.as_str(), f))),
    );

    let contract = codec.contract();
    let (h, w) = (contract.height, contract.width);
    let mut heat = vec![0.0; outcomes.len() * h * w];
    let mut rows = Vec::with_capacity(outcomes.len());
    for (k, o) in outcomes.iter().enumerate() {
        let result = match &o.outcome {
            Ok(r) => {
                let p = pgm_path(&ctx.out_dir.join("masks"), &o.id)?;
                write_mask(&p, &r.mask)?;
                rep.outputs.push(p);
                let p = pgm_path(&ctx.out_dir.join("counterfactuals"), &o.id)?;
                write_image(&p, &r.trace.chosen().image)?;
                rep.outputs.push(p);
                if r.heatmap.data.len() == h * w {
                    heat[k * h * w..(k + 1) * h * w].copy_from_slice(&r.heatmap.data);
                }
                SegmentResult::Ok {
                    flip_index: r.trace.flip_index,
                    no_flip: r.trace.no_flip,
                    mask_area: topocf::metrics::mask_area(&r.mask),
                    reference_id: r.reference_id.clone(),
                    d: r.d,
                    plan: r.plan.clone(),
                    steps: r
                        .trace
                        .steps
                        .iter()
                        .map(|s| StepRow {
                            p_abnormal: s.p_abnormal,
                            node_id: s.node_id,
                            t: s.t,
                        })
                        .collect(),
                }
            }
            Err(f) => SegmentResult::Failed(f.clone()),
        };
        rows.push(SegmentRow {
            id: o.id.clone(),
            heatmap_index: k,
            result,
        });
    }
    std::fs::create_dir_all(ctx.out_dir.join("masks"))?;
    let p = ctx.out_dir.join("heatmaps.ndv1");
    write_ndv1(
        &p,
        &Tensor::new(Dtype::F32, vec![outcomes.len() as u64, h as u64, w as u64], heat)?,
    )?;
    rep.outputs.push(p);
    let p = ctx.out_dir.join("segments.json");
    write_json(
        &p,
        &SegmentFile {
            mode: settings.walk.mode,
            records: rows,
        },
    )?;
    rep.outputs.push(p);
    Ok(rep)
}

#[derive(Serialize)]
struct EvalFile {
    #[serde(flatten)]
    report: MetricsReport,
    /// Ids scored as empty predictions because no mask was found.
    missing_predictions: Vec<String>,
}

pub fn eval(ctx: &Context, pred: &Path, truth: &Path, codes: Option<&Path>) -> Result<Report> {
    let mut rep = Report {
        inputs: vec![pred.to_path_buf(), truth.to_path_buf()],
        ..Report::default()
    };
    let truths = dataset::read_mask_dir(truth)?;
    let preds = dataset::read_mask_dir(pred)?;
    let ids: Vec<String> = match codes {
        Some(c) => {
            rep.inputs.push(c.to_path_buf());
            load_codes(c)?
                .records
                .into_iter()
                .filter(|r| r.label == ClassLabel::Abnormal)
                .map(|r| r.id)
                .collect()
        }
        None => truths.keys().cloned().collect(),
    };
    let mut pairs: Vec<(Mask, Mask, String)> = Vec::with_capacity(ids.len());
    let mut missing = Vec::new();
    for id in ids {
        let gt = truths
            .get(&id)
            .ok_or_else(|| Error::InvalidDataset(format!("no ground-truth mask for `{id}` in {}", truth.display())))?;
        let p = match preds.get(&id) {
            Some(p) => p.clone(),
            None => {
                missing.push(id.clone());
                Mask::empty(gt.height(), gt.width())
            }
        };
        pairs.push((p, gt.clone(), id));
    }
    let report = rep.timings.stage("metrics", || {
        mean_report(pairs.iter().map(|(p, g, id)| (p, g, id.as_str())))
    })?;
    let csv_path = ctx.out_dir.join("report.csv");
    let header = ["id", "iou", "dice"].map(String::from);
    let rows = report
        .per_sample
        .iter()
        .map(|s| vec![s.id.clone(), format_decimal(s.iou), format_decimal(s.dice)])
        .collect();
    tables::write_table(&csv_path, &header, rows)?;
    let json_path = ctx.out_dir.join("report.json");
    write_json(
        &json_path,
        &EvalFile {
            report,
            missing_predictions: missing,
        },
    )?;
    rep.outputs.extend([json_path, csv_path]);
    Ok(rep)
}

pub fn plot(ctx: &Context, graph: Option<&Path>, embedding: Option<&Path>, codes: Option<&Path>) -> Result<Report> {
    let mut rep = Report::default();
    if graph.is_none() && embedding.is_none() {
        return Err(Error::Config("plot needs --graph and/or --embedding".into()));
    }
    if let Some(gp) = graph {
        rep.inputs.push(gp.to_path_buf());
        let g = load_graph(gp)?;
        let p = ctx.out_dir.join("graph.svg");
        write_atomic(&p, svg::graph_svg(&g).as_bytes())?;
        rep.outputs.push(p);
    }
    if let Some(ep) = embedding {
        let cp = codes.ok_or_else(|| Error::Config("--embedding needs --codes for the class colours".into()))?;
        rep.inputs.extend([ep.to_path_buf(), cp.to_path_buf()]);
        let ds = load_codes(cp)?;
        let emb = aligned_embedding(&ds, ep)?;
        let ids: Vec<String> = ds.records.iter().map(|r| r.id.clone()).collect();
        let labels: Vec<ClassLabel> = ds.records.iter().map(|r| r.label).collect();
        let p = ctx.out_dir.join("embedding.svg");
        write_atomic(&p, svg::embedding_svg(&ids, &emb, &labels).as_bytes())?;
        rep.outputs.push(p);
    }
    Ok(rep)
}

pub fn codec_serve(ctx: &Context, op: Op, request_dir: &Path, registry: Option<&Path>) -> Result<Report> {
    let mut rep = Report {
        inputs: vec![request_dir.join("request.csv")],
        ..Report::default()
    };
    if ctx.config.codec.kind == CodecKind::Subprocess {
        return Err(Error::Config(
            "codec-serve answers with the synthetic or arc codec only".into(),
        ));
    }
    let registry = match registry {
        Some(p) => {
            rep.inputs.push(p.to_path_buf());
            Some(dataset::read_registry(p)?)
        }
        None => None,
    };
    let codec: Box<dyn Codec> = ctx.config.codec.build(registry)?;
    rep.timings
        .stage(op.as_str(), || serve(codec.as_ref(), op, request_dir))?;
    rep.outputs = match op {
        Op::Decode => std::fs::read_dir(request_dir.join("out"))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<Vec<_>>>()?,
        Op::Encode => vec![request_dir.join("codes.csv")],
        Op::Classify => vec![request_dir.join("probs.csv")],
    };
    rep.outputs.sort();
    Ok(rep)
}
