//! Phantom codec whose lesion codes lie on a circular arc.
//!
//! The first two class-style components place a code at angle `phi` on a
//! circle of radius [`ArcScenario::radius`]. Lesion amplitude grows with
//! `phi` past `phi_normal`, starting at the smallest abnormal amplitude, so
//! normals and abnormals share one unbroken arc. Two
//! kinds of code content render as a global brightness offset that the
//! percentile classifier ignores:
//!
//! * distance from the circle, so straight chords between codes decode to
//!   images that no real sample looks like;
//! * a per-record style vector (`cs[5..7]`) carried only by normals, which
//!   brightens the image by its length. Directions are random, so averages
//!   over many normals carry little of it.
//!
//! Components 2..5 hold the lesion centre and width, scaled so they spread
//! less than the arc does.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::synthetic::{
    classify_contrast, lesion_contrast, sample_center, sample_phantom, LesionParams, RegistryEntry, SyntheticCodec,
    SyntheticData, SyntheticRegistry, GENERATED_SIGMA_RANGE, IS_DIM,
};
use super::{Codec, CodecContract};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{ClassLabel, CsCode, Dataset, Image, IsCode, SampleRecord, Split, CS_DIM};
use crate::rng;

const CENTER_SCALE: f64 = 0.5;
const SIGMA_SCALE: f64 = 2.0;
const SIGMA_MID: f64 = 0.08;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArcScenario {
    pub radius: f64,
    /// Largest angle of a normal code; amplitude is zero up to here.
    pub phi_normal: f64,
    /// Angle of the brightest lesion.
    pub phi_max: f64,
    /// Abnormal amplitudes are drawn from this range.
    pub amp_range: (f64, f64),
    /// Brightness offset per unit of distance inside the circle.
    pub off_arc_gain: f64,
    /// Length range of the normals' style vector.
    pub style_range: (f64, f64),
    /// Brightness offset per unit of style length.
    pub style_gain: f64,
}

impl Default for ArcScenario {
    fn default() -> Self {
        Self {
            radius: 1.0,
            phi_normal: 1.0,
            phi_max: PI - 0.2,
            amp_range: (0.3, 0.8),
            off_arc_gain: 1.0,
            style_range: (0.03, 0.06),
            style_gain: 3.0,
        }
    }
}

impl ArcScenario {
    /// Zero up to `phi_normal`, then rising linearly across `amp_range`.
    pub fn amp_at(&self, phi: f64) -> f64 {
        if phi <= self.phi_normal {
            return 0.0;
        }
        let s = ((phi - self.phi_normal) / (self.phi_max - self.phi_normal)).min(1.0);
        self.amp_range.0 + (self.amp_range.1 - self.amp_range.0) * s
    }

    pub fn phi_for_amp(&self, amp: f64) -> f64 {
        let s = (amp - self.amp_range.0) / (self.amp_range.1 - self.amp_range.0);
        self.phi_normal + s * (self.phi_max - self.phi_normal)
    }

    pub fn code(&self, phi: f64, lesion: &LesionParams, style: [f64; 2]) -> CsCode {
        let mut v = [0.0; CS_DIM];
        v[0] = self.radius * phi.cos();
        v[1] = self.radius * phi.sin();
        v[2] = (lesion.lx - 0.5) * CENTER_SCALE;
        v[3] = (lesion.ly - 0.5) * CENTER_SCALE;
        v[4] = (lesion.sigma - SIGMA_MID) * SIGMA_SCALE;
        v[5] = style[0];
        v[6] = style[1];
        CsCode(v)
    }

    /// Lesion and global offset encoded by a code.
    pub fn chart(&self, cs: &CsCode) -> (LesionParams, f64) {
        let c = &cs.0;
        let phi = c[1].atan2(c[0]);
        let rho = c[0].hypot(c[1]);
        let lesion = LesionParams {
            amp: self.amp_at(phi),
            lx: 0.5 + c[2] / CENTER_SCALE,
            ly: 0.5 + c[3] / CENTER_SCALE,
            sigma: (SIGMA_MID + c[4] / SIGMA_SCALE).max(0.01),
            ecc: 1.0,
            angle: 0.0,
            rim: 0.0,
        };
        let offset = self.style_gain * c[5].hypot(c[6]) - self.off_arc_gain * (self.radius - rho).abs();
        (lesion, offset)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ArcCodec {
    pub base: SyntheticCodec,
    pub scenario: ArcScenario,
    registry: Option<SyntheticRegistry>,
}

impl ArcCodec {
    pub fn new(base: SyntheticCodec, scenario: ArcScenario) -> Self {
        Self {
            base,
            scenario,
            registry: None,
        }
    }

    pub fn with_registry(mut self, registry: SyntheticRegistry) -> Self {
        self.registry = Some(registry);
        self
    }

    /// Normals first (`a0000..`), then abnormals; ground truth is the FWHM mask.
    pub fn make_dataset(
        &self,
        n_normal: usize,
        n_abnormal: usize,
        seed: u64,
        exec: Execution,
    ) -> Result<SyntheticData> {
        let sc = &self.scenario;
        let mut r = rng::seeded(seed);
        let mut drawn = Vec::with_capacity(n_normal + n_abnormal);
        for k in 0..n_normal + n_abnormal {
            let abnormal = k >= n_normal;
            let phantom = sample_phantom(&mut r);
            let (lx, ly) = sample_center(&mut r, &phantom);
            let sigma = rng::uniform(&mut r, GENERATED_SIGMA_RANGE.0, GENERATED_SIGMA_RANGE.1);
            let (phi, style) = if abnormal {
                let amp = rng::uniform(&mut r, sc.amp_range.0, sc.amp_range.1);
                (sc.phi_for_amp(amp), [0.0; 2])
            } else {
                let phi = rng::uniform(&mut r, 0.0, sc.phi_normal);
                let mag = rng::uniform(&mut r, sc.style_range.0, sc.style_range.1);
                let dir = rng::uniform(&mut r, 0.0, 2.0 * PI);
                (phi, [mag * dir.cos(), mag * dir.sin()])
            };
            let lesion = LesionParams {
                amp: sc.amp_at(phi),
                lx,
                ly,
                sigma,
                ecc: 1.0,
                angle: 0.0,
                rim: 0.0,
            };
            let label = if abnormal {
                ClassLabel::Abnormal
            } else {
                ClassLabel::Normal
            };
            let cs = sc.code(phi, &lesion, style);
            drawn.push((format!("a{k:04}"), label, cs, phantom.to_code()));
        }
        let rendered = exec.map(&drawn, |(_, _, cs, is)| -> Result<Image> { self.decode(cs, is) });
        let mut records = Vec::with_capacity(drawn.len());
        let mut masks = Vec::with_capacity(drawn.len());
        let mut registry = SyntheticRegistry::default();
        for ((id, label, cs, is), img) in drawn.into_iter().zip(rendered) {
            let img = img?;
            let mask = sc.chart(&cs).0.fwhm_mask(self.base.height, self.base.width);
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

impl Codec for ArcCodec {
    fn contract(&self) -> CodecContract {
        CodecContract::new(IS_DIM, self.base.height, self.base.width)
    }

    fn decode(&self, cs: &CsCode, is: &IsCode) -> Result<Image> {
        self.contract().check_codes(cs, is)?;
        let (lesion, offset) = self.scenario.chart(cs);
        let (h, w) = (self.base.height, self.base.width);
        self.base.render_with(is, |x, y| lesion.intensity(x, y, h, w) + offset)
    }

    fn encode(&self, image: &Image) -> Result<(CsCode, IsCode)> {
        let entry = self.registry.as_ref().ok_or(Error::NotInRegistry)?.lookup(image)?;
        Ok((entry.cs, entry.is.clone()))
    }

    fn classify(&self, image: &Image) -> Result<f64> {
        Ok(classify_contrast(lesion_contrast(image)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_inverts_code_on_the_arc() {
        let sc = ArcScenario::default();
        let lesion = LesionParams {
            amp: sc.amp_at(2.0),
            lx: 0.45,
            ly: 0.6,
            sigma: 0.07,
            ecc: 1.0,
            angle: 0.0,
            rim: 0.0,
        };
        let (back, offset) = sc.chart(&sc.code(2.0, &lesion, [0.0; 2]));
        assert!((back.amp - lesion.amp).abs() < 1e-12);
        assert!((back.lx - 0.45).abs() < 1e-12 && (back.ly - 0.6).abs() < 1e-12);
        assert!((back.sigma - 0.07).abs() < 1e-12);
        assert!(offset.abs() < 1e-12);
    }

    #[test]
    fn chords_leave_the_arc() {
        let sc = ArcScenario::default();
        let l = LesionParams {
            amp: 0.0,
            lx: 0.5,
            ly: 0.5,
            sigma: 0.08,
            ecc: 1.0,
            angle: 0.0,
            rim: 0.0,
        };
        let a = sc.code(0.3, &l, [0.0; 2]);
        let b = sc.code(2.5, &l, [0.0; 2]);
        let (_, off) = sc.chart(&a.lerp(&b, 0.5));
        assert!(off < -0.4);
    }

    #[test]
    fn dataset_labels_agree_with_classifier() {
        let codec = ArcCodec::default();
        let data = codec.make_dataset(20, 20, 3, Execution::Sequential).unwrap();
        for rec in &data.dataset.records {
            let p = codec.classify(rec.image.as_ref().unwrap()).unwrap();
            match rec.label {
                ClassLabel::Normal => assert!(p < 0.5, "{} p={p}", rec.id),
                ClassLabel::Abnormal => assert!(p > 0.5, "{} p={p}", rec.id),
            }
        }
        let par = codec.make_dataset(20, 20, 3, Execution::Parallel).unwrap();
        assert_eq!(par.dataset, data.dataset);
    }
}
