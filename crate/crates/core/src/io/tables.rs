//! CSV tables: class/style codes, embeddings and classifier outputs.

use std::path::Path;

use super::{format_decimal, write_atomic};
use crate::embedding::Embedding2D;
use crate::error::{Error, Result};
use crate::model::{ClassLabel, CsCode, Dataset, IsCode, SampleRecord, Split, CS_DIM};

fn csv_text(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let wrap = |e: csv::Error| Error::contract(format!("csv: {e}"));
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(&row).map_err(wrap)?;
    }
    w.into_inner().map_err(|e| Error::contract(format!("csv: {e}")))
}

/// Parsed rows with 1-based line numbers; the header must match `expect`.
pub(crate) struct CsvRows {
    pub header: Vec<String>,
    pub rows: Vec<(usize, Vec<String>)>,
}

pub(crate) fn read_csv(path: &Path, expect: impl Fn(&[String]) -> std::result::Result<(), String>) -> Result<CsvRows> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    expect(&header).map_err(|m| Error::parse(path, 1, 1, m))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(CsvRows { header, rows })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        },
        _ => {
            let line = e.position().map_or(1, |p| p.line() as usize);
            Error::parse(path, line, 1, e.to_string())
        }
    }
}

pub(crate) fn parse_f64(path: &Path, line: usize, col: usize, s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, line, col, format!("`{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(path, line, col, format!("`{s}` is not finite")));
    }
    Ok(v)
}

pub fn codes_header(is_dim: usize) -> Vec<String> {
    let mut h = vec!["id".to_string(), "label".to_string()];
    h.extend((0..CS_DIM).map(|i| format!("cs_{i}")));
    h.extend((0..is_dim).map(|i| format!("is_{i}")));
    h
}

/// Number of `is_*` columns implied by a codes header, if it is well formed.
fn codes_is_dim(header: &[String]) -> std::result::Result<usize, String> {
    if header.len() < 2 + CS_DIM {
        return Err(format!("codes header needs id,label,cs_0..cs_{}", CS_DIM - 1));
    }
    let is_dim = header.len() - 2 - CS_DIM;
    let expected = codes_header(is_dim);
    match header.iter().zip(&expected).position(|(a, b)| a != b) {
        Some(i) => Err(format!(
            "column {} should be `{}`, found `{}`",
            i + 1,
            expected[i],
            header[i]
        )),
        None => Ok(is_dim),
    }
}

pub fn write_codes(path: &Path, ds: &Dataset) -> Result<()> {
    let is_dim = ds.records.first().map_or(0, |r| r.is.len());
    let rows = ds.records.iter().map(|r| {
        let mut row = vec![r.id.clone(), r.label.as_str().to_string()];
        row.extend(r.cs.0.iter().map(|&v| format_decimal(v)));
        row.extend(r.is.0.iter().map(|&v| format_decimal(v)));
        row
    });
    write_atomic(path, &csv_text(&codes_header(is_dim), rows)?)
}

pub fn read_codes(path: &Path) -> Result<Dataset> {
    let t = read_csv(path, |h| codes_is_dim(h).map(|_| ()))?;
    let is_dim = codes_is_dim(&t.header).expect("header validated");
    let mut records = Vec::with_capacity(t.rows.len());
    for (line, row) in t.rows {
        let label: ClassLabel = row[1]
            .parse()
            .map_err(|_| Error::parse(path, line, 2, format!("label `{}` is not normal/abnormal", row[1])))?;
        let mut cs = [0.0; CS_DIM];
        for (k, v) in cs.iter_mut().enumerate() {
            *v = parse_f64(path, line, 3 + k, &row[2 + k])?;
        }
        let is = (0..is_dim)
            .map(|k| parse_f64(path, line, 3 + CS_DIM + k, &row[2 + CS_DIM + k]))
            .collect::<Result<Vec<_>>>()?;
        records.push(SampleRecord::new(row[0].clone(), label, CsCode(cs), IsCode(is)));
    }
    Ok(Dataset::new(records, Split::Test))
}

pub fn write_embedding(path: &Path, ids: &[String], emb: &Embedding2D) -> Result<()> {
    if ids.len() != emb.len() {
        return Err(Error::contract("one id per embedded point is required"));
    }
    let header = ["id", "x", "y"].map(String::from);
    let rows = ids
        .iter()
        .zip(&emb.coords)
        .map(|(id, p)| vec![id.clone(), format_decimal(p[0]), format_decimal(p[1])]);
    write_atomic(path, &csv_text(&header, rows)?)
}

pub fn read_embedding(path: &Path) -> Result<(Vec<String>, Embedding2D)> {
    let t = read_csv(path, |h| {
        if h == ["id", "x", "y"] {
            Ok(())
        } else {
            Err("embedding header must be `id,x,y`".into())
        }
    })?;
    let mut ids = Vec::with_capacity(t.rows.len());
    let mut coords = Vec::with_capacity(t.rows.len());
    for (line, row) in t.rows {
        coords.push([parse_f64(path, line, 2, &row[1])?, parse_f64(path, line, 3, &row[2])?]);
        ids.push(row[0].clone());
    }
    Ok((ids, Embedding2D { coords }))
}

/// `id,p_abnormal` with six fractional digits.
pub fn probs_bytes(rows: &[(String, f64)]) -> Result<Vec<u8>> {
    let header = ["id", "p_abnormal"].map(String::from);
    csv_text(&header, rows.iter().map(|(id, p)| vec![id.clone(), format!("{p:.6}")]))
}

pub fn write_probs(path: &Path, rows: &[(String, f64)]) -> Result<()> {
    write_atomic(path, &probs_bytes(rows)?)
}

pub fn read_probs(path: &Path) -> Result<Vec<(String, f64)>> {
    let t = read_csv(path, |h| {
        if h == ["id", "p_abnormal"] {
            Ok(())
        } else {
            Err("probability header must be `id,p_abnormal`".into())
        }
    })?;
    t.rows
        .into_iter()
        .map(|(line, row)| {
            let p = parse_f64(path, line, 2, &row[1])?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::parse(path, line, 2, format!("probability {p} outside [0, 1]")));
            }
            Ok((row[0].clone(), p))
        })
        .collect()
}

pub fn write_table(path: &Path, header: &[String], rows: Vec<Vec<String>>) -> Result<()> {
    write_atomic(path, &csv_text(header, rows)?)
}
