//! `topocf`: counterfactual lesion segmentation from the command line.
//!
//! Exit codes: 0 success, 2 input or I/O error, 3 contract violation,
//! 4 planning failure.

mod commands;
mod config;
mod dataset;
mod manifest;
mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use topocf::codec::subprocess::Op;
use topocf::segmenter::WalkMode;
use topocf::{Execution, Result};

use commands::{Context, Report, Scenario};
use config::PipelineConfig;
use manifest::RunManifest;

#[derive(Parser)]
#[command(
    name = "topocf",
    version,
    about = "Topology-guided counterfactual lesion segmentation"
)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run every stage on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Out {
    /// Output directory.
    #[arg(short, long, env = "TOPOCF_OUT_DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Graph,
    Linear,
    Direct,
}

impl From<ModeArg> for WalkMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Graph => WalkMode::GraphPath,
            ModeArg::Linear => WalkMode::Linear,
            ModeArg::Direct => WalkMode::DirectReference,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum OpArg {
    Encode,
    Decode,
    Classify,
}

impl From<OpArg> for Op {
    fn from(o: OpArg) -> Self {
        match o {
            OpArg::Encode => Op::Encode,
            OpArg::Decode => Op::Decode,
            OpArg::Classify => Op::Classify,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate phantom images, masks, codes and the encode registry.
    Synth {
        #[arg(long)]
        normal: usize,
        #[arg(long)]
        abnormal: usize,
        #[arg(long, value_enum, default_value = "standard")]
        scenario: Scenario,
        #[command(flatten)]
        out: Out,
    },
    /// Embed class-style codes in 2-D (writes embedding.csv).
    Embed {
        #[arg(long)]
        codes: PathBuf,
        #[command(flatten)]
        out: Out,
    },
    /// Build the Mapper graph (writes graph.json).
    Topology {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        embedding: PathBuf,
        #[command(flatten)]
        out: Out,
    },
    /// Plan class-transfer paths (writes plans.json).
    Plan {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Records to plan for; every abnormal record by default.
        #[arg(long = "id")]
        ids: Vec<String>,
        #[command(flatten)]
        out: Out,
    },
    /// Segment every abnormal record (writes masks/, counterfactuals/,
    /// heatmaps.ndv1 and segments.json).
    Segment {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Query images; decoded from the codes when absent.
        #[arg(long)]
        images: Option<PathBuf>,
        /// Overrides the configured walk mode.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[command(flatten)]
        out: Out,
    },
    /// Score predicted masks against ground truth (writes report.json and report.csv).
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Score exactly the abnormal records listed here; missing predictions count as empty.
        #[arg(long)]
        codes: Option<PathBuf>,
        #[command(flatten)]
        out: Out,
    },
    /// Render graph.svg and/or embedding.svg.
    Plot {
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        embedding: Option<PathBuf>,
        #[arg(long)]
        codes: Option<PathBuf>,
        #[command(flatten)]
        out: Out,
    },
    /// Answer one codec protocol request with the configured in-process codec.
    CodecServe {
        #[arg(long, value_enum)]
        op: OpArg,
        #[arg(long)]
        request_dir: PathBuf,
        /// Registry written by `synth`, needed for encode.
        #[arg(long)]
        registry: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Embed { .. } => "embed",
            Command::Topology { .. } => "topology",
            Command::Plan { .. } => "plan",
            Command::Segment { .. } => "segment",
            Command::Eval { .. } => "eval",
            Command::Plot { .. } => "plot",
            Command::CodecServe { .. } => "codec-serve",
        }
    }

    fn out_dir(&self) -> &Path {
        match self {
            Command::Synth { out, .. }
            | Command::Embed { out, .. }
            | Command::Topology { out, .. }
            | Command::Plan { out, .. }
            | Command::Segment { out, .. }
            | Command::Eval { out, .. }
            | Command::Plot { out, .. } => &out.out,
            Command::CodecServe { request_dir, .. } => request_dir,
        }
    }
}

fn dispatch(ctx: &Context, command: &Command) -> Result<Report> {
    match command {
        Command::Synth {
            normal,
            abnormal,
            scenario,
            ..
        } => commands::synth(ctx, *normal, *abnormal, *scenario),
        Command::Embed { codes, .. } => commands::embed(ctx, codes),
        Command::Topology { codes, embedding, .. } => commands::topology(ctx, codes, embedding),
        Command::Plan { codes, graph, ids, .. } => commands::plan(ctx, codes, graph, ids),
        Command::Segment {
            codes,
            graph,
            images,
            mode,
            ..
        } => commands::segment(ctx, codes, graph, images.as_deref(), mode.map(WalkMode::from)),
        Command::Eval { pred, truth, codes, .. } => commands::eval(ctx, pred, truth, codes.as_deref()),
        Command::Plot {
            graph,
            embedding,
            codes,
            ..
        } => commands::plot(ctx, graph.as_deref(), embedding.as_deref(), codes.as_deref()),
        Command::CodecServe {
            op,
            request_dir,
            registry,
        } => commands::codec_serve(ctx, (*op).into(), request_dir, registry.as_deref()),
    }
}

fn run(cli: Cli) -> Result<i32> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let ctx = Context {
        seed: config.seed,
        exec: if cli.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
        out_dir: cli.command.out_dir().to_path_buf(),
        config,
    };
    std::fs::create_dir_all(&ctx.out_dir)?;
    let report = dispatch(&ctx, &cli.command)?;
    let mut manifest = RunManifest::new(cli.command.name(), ctx.seed, &ctx.config);
    let mut inputs = report.inputs;
    if let Some(p) = &cli.config {
        inputs.insert(0, p.clone());
    }
    manifest.record(&inputs, &report.outputs, &ctx.out_dir, report.timings)?;
    manifest.write(&ctx.out_dir)?;
    Ok(report.exit_code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("topocf: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
