//! Shared domain types and dataset bookkeeping.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimension of every class-style code.
pub const CS_DIM: usize = 8;
/// Smallest admissible image side.
pub const MIN_SIDE: usize = 8;

/// Single-channel row-major image with values in `[0, 1]`.
///
/// The constructor checks shape only; pixel range is checked by
/// [`Image::check_range`] and reported by [`validate_dataset`], since
/// ingestion paths rescale and the renderer clips.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_shape(height, width, data.len())?;
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Build from a per-pixel function of `(x, y)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Number of pixels that are non-finite or outside `[0, 1]`.
    pub fn out_of_range_count(&self) -> usize {
        self.data
            .iter()
            .filter(|v| !(v.is_finite() && (0.0..=1.0).contains(*v)))
            .count()
    }

    pub fn check_range(&self) -> Result<()> {
        match self.out_of_range_count() {
            0 => Ok(()),
            n => Err(Error::contract(format!("{n} pixel values outside [0, 1]"))),
        }
    }
}

fn check_shape(height: usize, width: usize, len: usize) -> Result<()> {
    if height < MIN_SIDE || width < MIN_SIDE {
        return Err(Error::contract(format!(
            "image shape {height}x{width} below the {MIN_SIDE}x{MIN_SIDE} minimum"
        )));
    }
    if len != height * width {
        return Err(Error::contract(format!(
            "pixel buffer of length {len} does not match shape {height}x{width}"
        )));
    }
    Ok(())
}

/// Binary mask, row-major, values in `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::contract(format!(
                "mask buffer of length {} does not match shape {height}x{width}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::contract(format!("mask value {v} is not binary")));
        }
        Ok(Self { height, width, data })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y) as u8);
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Normal,
    Abnormal,
}

impl ClassLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Normal => "normal",
            ClassLabel::Abnormal => "abnormal",
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            ClassLabel::Normal => ClassLabel::Abnormal,
            ClassLabel::Abnormal => ClassLabel::Normal,
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ClassLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "normal" => Ok(ClassLabel::Normal),
            "abnormal" => Ok(ClassLabel::Abnormal),
            other => Err(format!("unknown class label {other:?}")),
        }
    }
}

/// 8-component class-style code.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsCode(pub [f64; CS_DIM]);

impl CsCode {
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; CS_DIM] = values.try_into().map_err(|_| {
            Error::contract(format!(
                "class-style code must have {CS_DIM} components, got {}",
                values.len()
            ))
        })?;
        Ok(CsCode(arr))
    }

    pub fn values(&self) -> &[f64; CS_DIM] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn distance(&self, other: &CsCode) -> f64 {
        euclidean(&self.0, &other.0)
    }

    /// `self + t * (other - self)`, componentwise.
    pub fn lerp(&self, other: &CsCode, t: f64) -> CsCode {
        let mut out = [0.0; CS_DIM];
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.0[k] + t * (other.0[k] - self.0[k]);
        }
        CsCode(out)
    }

    /// Arithmetic mean of a non-empty set of codes, summed in iteration order.
    pub fn mean<'a>(codes: impl IntoIterator<Item = &'a CsCode>) -> Option<CsCode> {
        let mut sum = [0.0; CS_DIM];
        let mut n = 0usize;
        for c in codes {
            for (s, v) in sum.iter_mut().zip(c.0.iter()) {
                *s += v;
            }
            n += 1;
        }
        if n == 0 {
            return None;
        }
        Some(CsCode(sum.map(|s| s / n as f64)))
    }
}

impl AsRef<[f64]> for CsCode {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Individual-style code; its length is fixed per codec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsCode(pub Vec<f64>);

impl IsCode {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub label: ClassLabel,
    pub cs: CsCode,
    pub is: IsCode,
    pub image: Option<Image>,
    pub gt_mask: Option<Mask>,
}

impl SampleRecord {
    pub fn new(id: impl Into<String>, label: ClassLabel, cs: CsCode, is: IsCode) -> Self {
        Self {
            id: id.into(),
            label,
            cs,
            is,
            image: None,
            gt_mask: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    #[default]
    Test,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<SampleRecord>,
    pub split: Split,
}

impl Dataset {
    pub fn new(records: Vec<SampleRecord>, split: Split) -> Self {
        Self { records, split }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn cs_codes(&self) -> Vec<CsCode> {
        self.records.iter().map(|r| r.cs).collect()
    }

    pub fn find(&self, id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn count(&self, label: ClassLabel) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    Empty,
    DuplicateId {
        id: String,
    },
    IsDimMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    NonFiniteCode {
        id: String,
    },
    ImageShapeMismatch {
        id: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    PixelOutOfRange {
        id: String,
        count: usize,
    },
    MaskShapeMismatch {
        id: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub findings: Vec<Finding>,
}

/// Check every dataset invariant and list all violations. Never fails.
pub fn validate_dataset(d: &Dataset) -> ValidationReport {
    let mut findings = Vec::new();
    if d.records.is_empty() {
        findings.push(Finding::Empty);
    }
    let mut seen = HashSet::new();
    let mut reported = HashSet::new();
    let is_dim = d.records.first().map(|r| r.is.len());
    let shape = d.records.iter().find_map(|r| r.image.as_ref().map(Image::shape));
    for r in &d.records {
        if !seen.insert(r.id.as_str()) && reported.insert(r.id.as_str()) {
            findings.push(Finding::DuplicateId { id: r.id.clone() });
        }
        if let Some(expected) = is_dim {
            if r.is.len() != expected {
                findings.push(Finding::IsDimMismatch {
                    id: r.id.clone(),
                    expected,
                    found: r.is.len(),
                });
            }
        }
        if !r.cs.is_finite() || !r.is.is_finite() {
            findings.push(Finding::NonFiniteCode { id: r.id.clone() });
        }
        if let Some(img) = &r.image {
            if let Some(expected) = shape {
                if img.shape() != expected {
                    findings.push(Finding::ImageShapeMismatch {
                        id: r.id.clone(),
                        expected,
                        found: img.shape(),
                    });
                }
            }
            let count = img.out_of_range_count();
            if count > 0 {
                findings.push(Finding::PixelOutOfRange {
                    id: r.id.clone(),
                    count,
                });
            }
        }
        if let (Some(img), Some(mask)) = (&r.image, &r.gt_mask) {
            if img.shape() != mask.shape() {
                findings.push(Finding::MaskShapeMismatch { id: r.id.clone() });
            }
        }
    }
    ValidationReport {
        valid: findings.is_empty(),
        findings,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Stats {
    pub counts: BTreeMap<ClassLabel, usize>,
    pub records: usize,
    pub cs_dim: usize,
    pub is_dim: usize,
    pub image_shape: Option<(usize, usize)>,
}

impl Stats {
    pub fn count(&self, label: ClassLabel) -> usize {
        self.counts.get(&label).copied().unwrap_or(0)
    }
}

pub fn dataset_stats(d: &Dataset) -> Result<Stats> {
    let report = validate_dataset(d);
    if !report.valid {
        return Err(Error::InvalidDataset(format!("{:?}", report.findings)));
    }
    let mut counts = BTreeMap::from([(ClassLabel::Normal, 0), (ClassLabel::Abnormal, 0)]);
    for r in &d.records {
        *counts.entry(r.label).or_default() += 1;
    }
    Ok(Stats {
        counts,
        records: d.records.len(),
        cs_dim: CS_DIM,
        is_dim: d.records[0].is.len(),
        image_shape: d.records.iter().find_map(|r| r.image.as_ref().map(Image::shape)),
    })
}
