//! Bridge to an external codec process through a directory of files.
//!
//! Each call writes `request.csv` into a fresh request directory and runs the
//! configured command through `sh -c`, with `{op}` and `{request_dir}`
//! substituted. The request header is `id,op` followed by
//! `cs_0..cs_7,is_0..is_{k-1}` for `decode`, or by `image` (a PGM path
//! relative to the request directory) for `encode` and `classify`. The
//! command answers with `out/<id>.pgm` per decode row, `codes.csv`
//! (`id,cs_*,is_*`) for encode, or `probs.csv` (`id,p_abnormal`) for
//! classify, and exits with status 0.
//!
//! [`serve`] is the other side of the same protocol, answering a request
//! directory with any in-process [`Codec`].

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use super::{Codec, CodecContract};
use crate::error::{BridgeError, Error, Result};
use crate::io::tables::{parse_f64, probs_bytes, read_csv, read_probs, write_table};
use crate::io::{format_decimal, pgm, write_atomic};
use crate::model::{CsCode, Image, IsCode, CS_DIM};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Encode,
    Decode,
    Classify,
}

impl Op {
    pub fn as_str(self) -> &'static str {
        match self {
            Op::Encode => "encode",
            Op::Decode => "decode",
            Op::Classify => "classify",
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Op {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encode" => Ok(Op::Encode),
            "decode" => Ok(Op::Decode),
            "classify" => Ok(Op::Classify),
            _ => Err(Error::Config(format!("unknown codec operation `{s}`"))),
        }
    }
}

/// Row ids used in request files, in row order.
pub fn request_id(i: usize) -> String {
    format!("r{i:04}")
}

/// Relative path of the input image for row `id` of an encode/classify request.
pub fn request_image_path(id: &str) -> String {
    format!("in/{id}.pgm")
}

fn quote(path: &Path) -> String {
    format!("'{}'", path.to_string_lossy().replace('\'', r"'\''"))
}

/// Expand `{op}` and `{request_dir}` (single-quoted for the shell).
pub fn expand_template(template: &str, op: Op, request_dir: &Path) -> String {
    template
        .replace("{op}", op.as_str())
        .replace("{request_dir}", &quote(request_dir))
}

fn bridge(reason: impl Into<String>) -> Error {
    Error::Bridge(BridgeError {
        reason: reason.into(),
        exit_code: None,
        stderr: String::new(),
    })
}

fn malformed(e: Error) -> Error {
    match e {
        Error::Bridge(_) => e,
        other => bridge(format!("malformed response: {other}")),
    }
}

fn decode_header(is_dim: usize) -> Vec<String> {
    let mut h = vec!["id".to_string(), "op".to_string()];
    h.extend((0..CS_DIM).map(|i| format!("cs_{i}")));
    h.extend((0..is_dim).map(|i| format!("is_{i}")));
    h
}

fn image_header() -> Vec<String> {
    ["id", "op", "image"].map(String::from).to_vec()
}

fn response_codes_header(is_dim: usize) -> Vec<String> {
    let mut h = vec!["id".to_string()];
    h.extend((0..CS_DIM).map(|i| format!("cs_{i}")));
    h.extend((0..is_dim).map(|i| format!("is_{i}")));
    h
}

/// Codec whose operations are answered by an external command.
///
/// Calls are serialized: one request directory and one process at a time.
pub struct SubprocessCodec {
    template: String,
    contract: CodecContract,
    timeout: Duration,
    lock: Mutex<()>,
}

impl SubprocessCodec {
    pub fn new(template: impl Into<String>, contract: CodecContract) -> Self {
        Self {
            template: template.into(),
            contract,
            timeout: DEFAULT_TIMEOUT,
            lock: Mutex::new(()),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    /// Write a request with `fill`, run the command, then read the response.
    fn call<T>(
        &self,
        op: Op,
        fill: impl FnOnce(&Path) -> Result<()>,
        read: impl FnOnce(&Path) -> Result<T>,
    ) -> Result<T> {
        let _guard = self.lock.lock().unwrap_or_else(|p| p.into_inner());
        let dir = tempfile::Builder::new().prefix("topocf-codec-").tempdir()?;
        fill(dir.path())?;
        self.run(op, dir.path())?;
        read(dir.path()).map_err(malformed)
    }

    fn run(&self, op: Op, request_dir: &Path) -> Result<()> {
        let cmd = expand_template(&self.template, op, request_dir);
        let stderr_file = tempfile::tempfile()?;
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(stderr_file.try_clone()?)
            .spawn()
            .map_err(|e| bridge(format!("cannot start `{cmd}`: {e}")))?;
        let deadline = Instant::now() + self.timeout;
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break Some(status);
            }
            if Instant::now() >= deadline {
                let _ = child.kill();
                let _ = child.wait();
                break None;
            }
            std::thread::sleep(Duration::from_millis(5));
        };
        let stderr = read_all(stderr_file);
        match status {
            Some(s) if s.success() => Ok(()),
            Some(s) => Err(Error::Bridge(BridgeError {
                reason: format!("`{cmd}` failed during {op}"),
                exit_code: s.code(),
                stderr,
            })),
            None => Err(Error::Bridge(BridgeError {
                reason: format!(
                    "`{cmd}` timed out after {:.3} s during {op}",
                    self.timeout.as_secs_f64()
                ),
                exit_code: None,
                stderr,
            })),
        }
    }

    fn write_images(&self, dir: &Path, images: &[Image]) -> Result<Vec<String>> {
        let mut rows = Vec::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            self.contract.check_image(img)?;
            let id = request_id(i);
            let rel = request_image_path(&id);
            pgm::write_image(&dir.join(&rel), img)?;
            rows.push(rel);
        }
        Ok(rows)
    }

    pub fn encode_batch(&self, images: &[Image]) -> Result<Vec<(CsCode, IsCode)>> {
        let is_dim = self.contract.is_dim;
        self.call(
            Op::Encode,
            |dir| {
                let rels = self.write_images(dir, images)?;
                let rows = rels
                    .into_iter()
                    .enumerate()
                    .map(|(i, rel)| vec![request_id(i), "encode".into(), rel])
                    .collect();
                write_table(&dir.join("request.csv"), &image_header(), rows)
            },
            |dir| {
                let path = dir.join("codes.csv");
                let expected = response_codes_header(is_dim);
                let t = read_csv(&path, |h| {
                    if h == expected.as_slice() {
                        Ok(())
                    } else {
                        Err(format!("codes header must be `{}`", expected.join(",")))
                    }
                })?;
                let mut by_id = HashMap::new();
                for (line, row) in t.rows {
                    let values = row[1..]
                        .iter()
                        .enumerate()
                        .map(|(k, s)| parse_f64(&path, line, k + 2, s))
                        .collect::<Result<Vec<_>>>()?;
                    let cs = CsCode::from_slice(&values[..CS_DIM])?;
                    let is = IsCode(values[CS_DIM..].to_vec());
                    self.contract.check_codes(&cs, &is)?;
                    by_id.insert(row[0].clone(), (cs, is));
                }
                collect_ids(images.len(), by_id, "codes.csv")
            },
        )
    }
}

fn read_all(mut f: fs::File) -> String {
    use std::io::{Read, Seek, SeekFrom};
    let mut s = String::new();
    if f.seek(SeekFrom::Start(0)).is_ok() {
        let mut bytes = Vec::new();
        let _ = f.read_to_end(&mut bytes);
        s = String::from_utf8_lossy(&bytes).into_owned();
    }
    s
}

/// Reorder a response keyed by id into request order, requiring every id.
fn collect_ids<T>(n: usize, mut by_id: HashMap<String, T>, file: &str) -> Result<Vec<T>> {
    (0..n)
        .map(|i| {
            let id = request_id(i);
            by_id
                .remove(&id)
                .ok_or_else(|| bridge(format!("malformed response: {file} has no row for `{id}`")))
        })
        .collect()
}

impl Codec for SubprocessCodec {
    fn contract(&self) -> CodecContract {
        self.contract
    }

    fn decode(&self, cs: &CsCode, is: &IsCode) -> Result<Image> {
        Ok(self.decode_batch(&[(*cs, is.clone())])?.remove(0))
    }

    fn encode(&self, image: &Image) -> Result<(CsCode, IsCode)> {
        Ok(self.encode_batch(std::slice::from_ref(image))?.remove(0))
    }

    fn classify(&self, image: &Image) -> Result<f64> {
        Ok(self.classify_batch(std::slice::from_ref(image))?[0])
    }

    fn decode_batch(&self, rows: &[(CsCode, IsCode)]) -> Result<Vec<Image>> {
        for (cs, is) in rows {
            self.contract.check_codes(cs, is)?;
        }
        self.call(
            Op::Decode,
            |dir| {
                let table = rows
                    .iter()
                    .enumerate()
                    .map(|(i, (cs, is))| {
                        let mut r = vec![request_id(i), "decode".into()];
                        r.extend(cs.0.iter().chain(&is.0).map(|&v| format_decimal(v)));
                        r
                    })
                    .collect();
                write_table(&dir.join("request.csv"), &decode_header(self.contract.is_dim), table)
            },
            |dir| {
                (0..rows.len())
                    .map(|i| {
                        let img = pgm::read_image(&dir.join("out").join(format!("{}.pgm", request_id(i))))?;
                        self.contract.check_image(&img)?;
                        Ok(img)
                    })
                    .collect()
            },
        )
    }

    fn classify_batch(&self, images: &[Image]) -> Result<Vec<f64>> {
        self.call(
            Op::Classify,
            |dir| {
                let rels = self.write_images(dir, images)?;
                let rows = rels
                    .into_iter()
                    .enumerate()
                    .map(|(i, rel)| vec![request_id(i), "classify".into(), rel])
                    .collect();
                write_table(&dir.join("request.csv"), &image_header(), rows)
            },
            |dir| {
                let probs = read_probs(&dir.join("probs.csv"))?;
                collect_ids(images.len(), probs.into_iter().collect(), "probs.csv")
            },
        )
    }
}

/// Resolve a request image path, refusing paths that leave the request directory.
fn request_file(request_dir: &Path, rel: &str, path: &Path, line: usize) -> Result<PathBuf> {
    let p = Path::new(rel);
    if p.is_absolute() || p.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
        return Err(Error::parse(
            path,
            line,
            3,
            format!("image path `{rel}` must stay inside the request directory"),
        ));
    }
    Ok(request_dir.join(p))
}

/// Answer the request in `request_dir` with `codec`, writing the response files.
pub fn serve(codec: &dyn Codec, op: Op, request_dir: &Path) -> Result<()> {
    let contract = codec.contract();
    let path = request_dir.join("request.csv");
    let expected = match op {
        Op::Decode => decode_header(contract.is_dim),
        Op::Encode | Op::Classify => image_header(),
    };
    let t = read_csv(&path, |h| {
        if h == expected.as_slice() {
            Ok(())
        } else {
            Err(format!("request header must be `{}`", expected.join(",")))
        }
    })?;
    for (line, row) in &t.rows {
        if row[1] != op.as_str() {
            return Err(Error::parse(
                &path,
                *line,
                2,
                format!("row op `{}` differs from `{op}`", row[1]),
            ));
        }
        let id = &row[0];
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(Error::parse(
                &path,
                *line,
                1,
                format!("row id `{id}` must be a plain file stem"),
            ));
        }
    }
    match op {
        Op::Decode => {
            for (line, row) in &t.rows {
                let values = row[2..]
                    .iter()
                    .enumerate()
                    .map(|(k, s)| parse_f64(&path, *line, k + 3, s))
                    .collect::<Result<Vec<_>>>()?;
                let cs = CsCode::from_slice(&values[..CS_DIM])?;
                let img = codec.decode(&cs, &IsCode(values[CS_DIM..].to_vec()))?;
                pgm::write_image(&request_dir.join("out").join(format!("{}.pgm", row[0])), &img)?;
            }
        }
        Op::Encode => {
            let mut rows = Vec::with_capacity(t.rows.len());
            for (line, row) in &t.rows {
                let img = pgm::read_image(&request_file(request_dir, &row[2], &path, *line)?)?;
                let (cs, is) = codec.encode(&img)?;
                let mut r = vec![row[0].clone()];
                r.extend(cs.0.iter().chain(&is.0).map(|&v| format_decimal(v)));
                rows.push(r);
            }
            write_table(
                &request_dir.join("codes.csv"),
                &response_codes_header(contract.is_dim),
                rows,
            )?;
        }
        Op::Classify => {
            let mut probs = Vec::with_capacity(t.rows.len());
            for (line, row) in &t.rows {
                let img = pgm::read_image(&request_file(request_dir, &row[2], &path, *line)?)?;
                probs.push((row[0].clone(), codec.classify(&img)?));
            }
            write_atomic(&request_dir.join("probs.csv"), &probs_bytes(&probs)?)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_expansion_quotes_the_directory() {
        let s = expand_template("run {op} --dir {request_dir}", Op::Decode, Path::new("/tmp/a b'c"));
        assert_eq!(s, r"run decode --dir '/tmp/a b'\''c'");
    }

    #[test]
    fn op_names() {
        for op in [Op::Encode, Op::Decode, Op::Classify] {
            assert_eq!(op.as_str().parse::<Op>().unwrap(), op);
        }
        assert!("train".parse::<Op>().is_err());
    }

    #[test]
    fn request_paths_are_confined() {
        let p = Path::new("request.csv");
        assert!(request_file(Path::new("/r"), "../x.pgm", p, 2).is_err());
        assert!(request_file(Path::new("/r"), "/etc/x.pgm", p, 2).is_err());
        assert_eq!(
            request_file(Path::new("/r"), "in/a.pgm", p, 2).unwrap(),
            Path::new("/r/in/a.pgm")
        );
    }
}
