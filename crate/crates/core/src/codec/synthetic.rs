//! Analytic phantom codec.
//!
//! The individual-style code describes a head phantom
//! `[head_cx, head_cy, head_rx, head_ry, shade, texture_seed]`; the
//! class-style code describes an elliptical Gaussian lesion
//! `[amp, lx, ly, sigma, ecc, angle, rim, 0]`. Coordinates are fractions of
//! the image width/height and are evaluated at pixel centres.
//!
//! The lesion term is `amp * exp(-q/2)` where `q` is the rotated anisotropic
//! quadratic form with axis widths `sigma*W*sqrt(ecc)` and `sigma*W/sqrt(ecc)`.
//! A rim of height `rim * amp` is added on the band `|sqrt(q) - 1| <= 0.15`.
//! Ground truth is the half-maximum set `amp * exp(-q/2) >= amp/2`.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand_core::RngCore;
use sha2::{Digest, Sha256};

use super::{Codec, CodecContract};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{ClassLabel, CsCode, Dataset, Image, IsCode, Mask, SampleRecord, Split, CS_DIM};
use crate::rng;

pub const IS_DIM: usize = 6;
pub const DEFAULT_SIDE: usize = 64;
pub const DEFAULT_TEXTURE_AMPLITUDE: f64 = 0.02;

const OUTSIDE_LEVEL: f64 = 0.24;
const HEAD_LEVEL: f64 = 0.30;
const TEXTURE_CELLS: usize = 8;
const RIM_HALF_WIDTH: f64 = 0.15;

/// Classifier: sigmoid(SLOPE * (p99.5 - median - THRESHOLD)).
pub const CLASSIFIER_SLOPE: f64 = 40.0;
pub const CLASSIFIER_THRESHOLD: f64 = 0.15;

pub const HEAD_CENTER_RANGE: (f64, f64) = (0.35, 0.65);
pub const HEAD_RADIUS_RANGE: (f64, f64) = (0.25, 0.45);
pub const SHADE_RANGE: (f64, f64) = (0.0, 0.3);
pub const ABNORMAL_AMP_RANGE: (f64, f64) = (0.3, 0.8);
pub const SIGMA_RANGE: (f64, f64) = (0.02, 0.12);
/// Lesion widths drawn for generated abnormal records. Narrower lesions
/// cover less than the 0.5% of pixels the percentile classifier looks at.
pub const GENERATED_SIGMA_RANGE: (f64, f64) = (0.04, 0.12);
pub const ECC_RANGE: (f64, f64) = (0.5, 2.0);
pub const RIM_RANGE: (f64, f64) = (0.0, 0.5);
/// Lesion centres are drawn inside this fraction of the head ellipse.
const LESION_CENTER_SPREAD: f64 = 0.6;

/// Head phantom parameters (individual style).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhantomParams {
    pub head_cx: f64,
    pub head_cy: f64,
    pub head_rx: f64,
    pub head_ry: f64,
    pub shade: f64,
    pub texture_seed: u32,
}

impl PhantomParams {
    pub fn from_code(is: &IsCode) -> Result<Self> {
        let v = is.values();
        if v.len() != IS_DIM {
            return Err(Error::contract(format!(
                "synthetic individual-style code has {IS_DIM} components, got {}",
                v.len()
            )));
        }
        Ok(Self {
            head_cx: v[0],
            head_cy: v[1],
            head_rx: v[2],
            head_ry: v[3],
            shade: v[4],
            texture_seed: v[5].clamp(0.0, u32::MAX as f64) as u32,
        })
    }

    pub fn to_code(&self) -> IsCode {
        IsCode(vec![
            self.head_cx,
            self.head_cy,
            self.head_rx,
            self.head_ry,
            self.shade,
            self.texture_seed as f64,
        ])
    }
}

/// Lesion parameters (class style).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LesionParams {
    pub amp: f64,
    pub lx: f64,
    pub ly: f64,
    pub sigma: f64,
    pub ecc: f64,
    pub angle: f64,
    pub rim: f64,
}

impl LesionParams {
    pub fn from_code(cs: &CsCode) -> Self {
        let v = cs.values();
        Self {
            amp: v[0],
            lx: v[1],
            ly: v[2],
            sigma: v[3],
            ecc: v[4],
            angle: v[5],
            rim: v[6],
        }
    }

    pub fn to_code(&self) -> CsCode {
        CsCode([
            self.amp, self.lx, self.ly, self.sigma, self.ecc, self.angle, self.rim, 0.0,
        ])
    }

    /// Axis widths in pixels for an image of the given width.
    pub fn axis_widths(&self, width: usize) -> (f64, f64) {
        let s = self.sigma.max(1e-6) * width as f64;
        let e = self.ecc.max(1e-6).sqrt();
        (s * e, s / e)
    }

    /// Quadratic form `q` at pixel centre `(x, y)`.
    fn quad(&self, x: usize, y: usize, height: usize, width: usize) -> f64 {
        let (sa, sb) = self.axis_widths(width);
        let dx = x as f64 + 0.5 - self.lx * width as f64;
        let dy = y as f64 + 0.5 - self.ly * height as f64;
        let (s, c) = self.angle.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / sa) * (u / sa) + (v / sb) * (v / sb)
    }

    /// Gaussian lesion term (no rim).
    pub fn gaussian(&self, x: usize, y: usize, height: usize, width: usize) -> f64 {
        self.amp * (-0.5 * self.quad(x, y, height, width)).exp()
    }

    /// Gaussian term plus the rim band.
    pub fn intensity(&self, x: usize, y: usize, height: usize, width: usize) -> f64 {
        let q = self.quad(x, y, height, width);
        let mut v = self.amp * (-0.5 * q).exp();
        if (q.sqrt() - 1.0).abs() <= RIM_HALF_WIDTH {
            v += self.rim * self.amp;
        }
        v
    }

    /// Half-maximum region of the Gaussian term; empty when `amp <= 0`.
    pub fn fwhm_mask(&self, height: usize, width: usize) -> Mask {
        Mask::from_fn(height, width, |x, y| {
            self.amp > 0.0 && self.gaussian(x, y, height, width) >= self.amp / 2.0
        })
    }

    /// Analytic area of the half-maximum ellipse in pixels.
    pub fn fwhm_area(&self, width: usize) -> f64 {
        let (sa, sb) = self.axis_widths(width);
        PI * sa * sb * 2.0 * std::f64::consts::LN_2
    }
}

/// Code lookup keyed by the 8-bit quantized pixel content of an image.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SyntheticRegistry {
    entries: HashMap<[u8; 32], RegistryEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistryEntry {
    pub id: String,
    pub cs: CsCode,
    pub is: IsCode,
}

impl SyntheticRegistry {
    /// Digest of an image as stored on disk (8-bit quantization).
    pub fn digest(image: &Image) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((image.height() as u32).to_le_bytes());
        h.update((image.width() as u32).to_le_bytes());
        let bytes: Vec<u8> = image.data().iter().map(|&v| quantize_u8(v)).collect();
        h.update(&bytes);
        h.finalize().into()
    }

    /// Register an image; the first registration of a given content wins.
    pub fn insert(&mut self, image: &Image, entry: RegistryEntry) {
        self.entries.entry(Self::digest(image)).or_insert(entry);
    }

    pub fn insert_digest(&mut self, digest: [u8; 32], entry: RegistryEntry) {
        self.entries.entry(digest).or_insert(entry);
    }

    pub fn lookup(&self, image: &Image) -> Result<&RegistryEntry> {
        self.entries.get(&Self::digest(image)).ok_or(Error::NotInRegistry)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries sorted by id, with their digests.
    pub fn entries(&self) -> Vec<(&[u8; 32], &RegistryEntry)> {
        let mut v: Vec<_> = self.entries.iter().collect();
        v.sort_by(|a, b| a.1.id.cmp(&b.1.id).then(a.0.cmp(b.0)));
        v
    }
}

pub fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Output of [`SyntheticCodec::make_dataset`].
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub masks: Vec<Mask>,
    pub registry: SyntheticRegistry,
}

#[derive(Clone, Debug)]
pub struct SyntheticCodec {
    pub height: usize,
    pub width: usize,
    pub texture_amplitude: f64,
    registry: Option<SyntheticRegistry>,
}

impl Default for SyntheticCodec {
    fn default() -> Self {
        Self {
            height: DEFAULT_SIDE,
            width: DEFAULT_SIDE,
            texture_amplitude: DEFAULT_TEXTURE_AMPLITUDE,
            registry: None,
        }
    }
}

impl SyntheticCodec {
    pub fn new(height: usize, width: usize, texture_amplitude: f64) -> Self {
        Self {
            height,
            width,
            texture_amplitude,
            registry: None,
        }
    }

    pub fn with_registry(mut self, registry: SyntheticRegistry) -> Self {
        self.registry = Some(registry);
        self
    }

    pub fn registry(&self) -> Option<&SyntheticRegistry> {
        self.registry.as_ref()
    }

    fn background_value(&self, p: &PhantomParams, lattice: &[f64], x: usize, y: usize) -> f64 {
        let (h, w) = (self.height as f64, self.width as f64);
        let px = x as f64 + 0.5;
        let py = y as f64 + 0.5;
        let rx = (px - p.head_cx * w) / (p.head_rx * w).max(1e-9);
        let ry = (py - p.head_cy * h) / (p.head_ry * h).max(1e-9);
        let rho2 = rx * rx + ry * ry;
        let base = if rho2 <= 1.0 {
            HEAD_LEVEL * (1.0 - p.shade * rho2)
        } else {
            OUTSIDE_LEVEL
        };
        if lattice.is_empty() {
            return base;
        }
        base + self.texture_amplitude * bilinear(lattice, px / w, py / h)
    }

    fn texture_lattice(&self, p: &PhantomParams) -> Vec<f64> {
        if self.texture_amplitude == 0.0 {
            return Vec::new();
        }
        let mut r = rng::seeded(p.texture_seed as u64);
        (0..(TEXTURE_CELLS + 1) * (TEXTURE_CELLS + 1))
            .map(|_| rng::uniform(&mut r, -1.0, 1.0))
            .collect()
    }

    /// Lesion-free phantom for an individual-style code.
    pub fn background(&self, is: &IsCode) -> Result<Image> {
        let p = PhantomParams::from_code(is)?;
        let lattice = self.texture_lattice(&p);
        Image::from_fn(self.height, self.width, |x, y| {
            self.background_value(&p, &lattice, x, y).clamp(0.0, 1.0) as f32
        })
    }

    /// Render background plus an arbitrary additive term, clipped to `[0, 1]`.
    pub(crate) fn render_with(&self, is: &IsCode, extra: impl Fn(usize, usize) -> f64) -> Result<Image> {
        let p = PhantomParams::from_code(is)?;
        let lattice = self.texture_lattice(&p);
        Image::from_fn(self.height, self.width, |x, y| {
            (self.background_value(&p, &lattice, x, y) + extra(x, y)).clamp(0.0, 1.0) as f32
        })
    }

    pub fn make_dataset(&self, n_normal: usize, n_abnormal: usize, seed: u64) -> Result<SyntheticData> {
        self.make_dataset_with(n_normal, n_abnormal, seed, Execution::default())
    }

    /// Draw parameters sequentially from one SplitMix64 stream, then render.
    ///
    /// Records `s0000..` are the normals followed by the abnormals. Every
    /// drawn parameter is floored to a multiple of 1e-6 so that codes survive
    /// a decimal text round trip unchanged.
    pub fn make_dataset_with(
        &self,
        n_normal: usize,
        n_abnormal: usize,
        seed: u64,
        exec: Execution,
    ) -> Result<SyntheticData> {
        let mut r = rng::seeded(seed);
        let mut drawn = Vec::with_capacity(n_normal + n_abnormal);
        for k in 0..n_normal + n_abnormal {
            let label = if k < n_normal {
                ClassLabel::Normal
            } else {
                ClassLabel::Abnormal
            };
            let phantom = sample_phantom(&mut r);
            let lesion = sample_lesion(&mut r, &phantom, label);
            drawn.push((format!("s{k:04}"), label, phantom, lesion));
        }
        let rendered = exec.map(&drawn, |(_, _, phantom, lesion)| -> Result<(Image, Mask)> {
            let cs = lesion.to_code();
            let img = self.decode(&cs, &phantom.to_code())?;
            Ok((img, lesion.fwhm_mask(self.height, self.width)))
        });
        let mut records = Vec::with_capacity(drawn.len());
        let mut masks = Vec::with_capacity(drawn.len());
        let mut registry = SyntheticRegistry::default();
        for ((id, label, phantom, lesion), out) in drawn.into_iter().zip(rendered) {
            let (img, mask) = out?;
            let cs = lesion.to_code();
            let is = phantom.to_code();
            registry.insert(
                &img,
                RegistryEntry {
                    id: id.clone(),
                    cs,
                    is: is.clone(),
                },
            );
            let mut rec = SampleRecord::new(id, label, cs, is);
            rec.image = Some(img);
            rec.gt_mask = Some(mask.clone());
            records.push(rec);
            masks.push(mask);
        }
        Ok(SyntheticData {
            dataset: Dataset::new(records, Split::Test),
            masks,
            registry,
        })
    }
}

/// Default-codec dataset factory.
pub fn make_dataset(n_normal: usize, n_abnormal: usize, seed: u64) -> Result<SyntheticData> {
    SyntheticCodec::default().make_dataset(n_normal, n_abnormal, seed)
}

fn q6(x: f64) -> f64 {
    (x * 1e6).floor() / 1e6
}

fn draw(r: &mut impl RngCore, range: (f64, f64)) -> f64 {
    q6(rng::uniform(r, range.0, range.1))
}

pub(crate) fn sample_phantom(r: &mut impl RngCore) -> PhantomParams {
    PhantomParams {
        head_cx: draw(r, HEAD_CENTER_RANGE),
        head_cy: draw(r, HEAD_CENTER_RANGE),
        head_rx: draw(r, HEAD_RADIUS_RANGE),
        head_ry: draw(r, HEAD_RADIUS_RANGE),
        shade: draw(r, SHADE_RANGE),
        texture_seed: (r.next_u64() >> 32) as u32,
    }
}

/// Lesion centre uniform over the inner part of the head ellipse.
pub(crate) fn sample_center(r: &mut impl RngCore, p: &PhantomParams) -> (f64, f64) {
    loop {
        let u = rng::uniform(r, -1.0, 1.0);
        let v = rng::uniform(r, -1.0, 1.0);
        if u * u + v * v <= 1.0 {
            return (
                q6(p.head_cx + LESION_CENTER_SPREAD * u * p.head_rx),
                q6(p.head_cy + LESION_CENTER_SPREAD * v * p.head_ry),
            );
        }
    }
}

fn sample_lesion(r: &mut impl RngCore, p: &PhantomParams, label: ClassLabel) -> LesionParams {
    let amp = draw(r, ABNORMAL_AMP_RANGE);
    let (lx, ly) = sample_center(r, p);
    let lesion = LesionParams {
        amp,
        lx,
        ly,
        sigma: draw(r, GENERATED_SIGMA_RANGE),
        ecc: draw(r, ECC_RANGE),
        angle: draw(r, (0.0, PI)),
        rim: draw(r, RIM_RANGE),
    };
    match label {
        ClassLabel::Abnormal => lesion,
        ClassLabel::Normal => LesionParams { amp: 0.0, ..lesion },
    }
}

fn bilinear(lattice: &[f64], u: f64, v: f64) -> f64 {
    let n = TEXTURE_CELLS;
    let fx = (u * n as f64).clamp(0.0, n as f64);
    let fy = (v * n as f64).clamp(0.0, n as f64);
    let ix = (fx.floor() as usize).min(n - 1);
    let iy = (fy.floor() as usize).min(n - 1);
    let tx = fx - ix as f64;
    let ty = fy - iy as f64;
    let at = |i: usize, j: usize| lattice[j * (n + 1) + i];
    let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
    let bottom = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Linear-interpolated percentile of a sorted sample, `q` in `[0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile-contrast statistic `p99.5 - median` used by the classifier.
pub fn lesion_contrast(image: &Image) -> f64 {
    let mut v: Vec<f64> = image.data().iter().map(|&x| x as f64).collect();
    v.sort_by(f64::total_cmp);
    percentile(&v, 0.995) - percentile(&v, 0.5)
}

pub fn classify_contrast(m: f64) -> f64 {
    1.0 / (1.0 + (-CLASSIFIER_SLOPE * (m - CLASSIFIER_THRESHOLD)).exp())
}

impl Codec for SyntheticCodec {
    fn contract(&self) -> CodecContract {
        CodecContract::new(IS_DIM, self.height, self.width)
    }

    fn decode(&self, cs: &CsCode, is: &IsCode) -> Result<Image> {
        self.contract().check_codes(cs, is)?;
        let lesion = LesionParams::from_code(cs);
        let (h, w) = (self.height, self.width);
        self.render_with(is, |x, y| lesion.intensity(x, y, h, w))
    }

    fn encode(&self, image: &Image) -> Result<(CsCode, IsCode)> {
        let entry = self.registry.as_ref().ok_or(Error::NotInRegistry)?.lookup(image)?;
        Ok((entry.cs, entry.is.clone()))
    }

    fn classify(&self, image: &Image) -> Result<f64> {
        Ok(classify_contrast(lesion_contrast(image)))
    }
}

/// Class-style code with every component zero except the listed ones.
pub fn lesion_code(amp: f64, lx: f64, ly: f64, sigma: f64) -> CsCode {
    let mut v = [0.0; CS_DIM];
    v[0] = amp;
    v[1] = lx;
    v[2] = ly;
    v[3] = sigma;
    v[4] = 1.0;
    CsCode(v)
}
