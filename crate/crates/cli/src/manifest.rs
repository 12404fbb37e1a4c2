//! Run manifests: what a subcommand read, wrote and how long it took.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use topocf::io::{hex, write_json};
use topocf::Result;

use crate::config::PipelineConfig;

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// SHA-256 of a file, or of every file below a directory in path order.
/// The recorded path is relative to `base` when it lies below it.
pub fn digest(path: &Path, base: &Path) -> Result<FileDigest> {
    let mut h = Sha256::new();
    let mut bytes = 0u64;
    if path.is_dir() {
        for f in files_below(path)? {
            let data = fs::read(&f)?;
            let rel = f.strip_prefix(path).unwrap_or(&f).to_string_lossy().replace('\\', "/");
            h.update((rel.len() as u64).to_le_bytes());
            h.update(rel.as_bytes());
            h.update((data.len() as u64).to_le_bytes());
            h.update(&data);
            bytes += data.len() as u64;
        }
    } else {
        let data = fs::read(path)?;
        bytes = data.len() as u64;
        h.update(&data);
    }
    Ok(FileDigest {
        path: path.strip_prefix(base).unwrap_or(path).display().to_string(),
        sha256: hex(&h.finalize()),
        bytes,
    })
}

fn files_below(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Wall-clock seconds per named stage, in the order stages ran.
#[derive(Debug, Default)]
pub struct Timings {
    stages: Vec<(String, f64)>,
}

impl Timings {
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.stages.push((name.to_string(), start.elapsed().as_secs_f64()));
        out
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// The only field that differs between identical runs.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: &PipelineConfig) -> Self {
        Self {
            tool: "topocf",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed,
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    /// Digest every input and output; paths below `out_dir` are stored relative to it.
    pub fn record(&mut self, inputs: &[PathBuf], outputs: &[PathBuf], out_dir: &Path, timings: Timings) -> Result<()> {
        self.inputs = inputs.iter().map(|p| digest(p, out_dir)).collect::<Result<_>>()?;
        self.outputs = outputs.iter().map(|p| digest(p, out_dir)).collect::<Result<_>>()?;
        self.timings = timings.stages.into_iter().collect();
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join(format!("{}.manifest.json", self.command));
        write_json(&path, self)?;
        Ok(path)
    }
}
