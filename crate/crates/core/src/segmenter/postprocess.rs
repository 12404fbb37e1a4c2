//! Difference maps and their conversion to binary masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Image, Mask};

pub const HISTOGRAM_BINS: usize = 256;

/// Per-pixel values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Heatmap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::contract("heatmap buffer does not match its shape"));
        }
        Ok(Self { height, width, data })
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Copy scaled so the maximum is 1 (all-zero maps stay zero).
    pub fn normalized(&self) -> Heatmap {
        let max = self.max();
        let data = if max > 0.0 {
            self.data.iter().map(|v| v / max).collect()
        } else {
            vec![0.0; self.data.len()]
        };
        Heatmap { data, ..*self }
    }

    pub fn argmax(&self) -> Option<(usize, usize)> {
        let (mut best, mut at) = (f64::NEG_INFINITY, None);
        for (i, &v) in self.data.iter().enumerate() {
            if v > best {
                best = v;
                at = Some((i % self.width, i / self.width));
            }
        }
        at
    }
}

/// Absolute difference normalized by its maximum.
pub fn difference_map(original: &Image, counterfactual: &Image) -> Result<Heatmap> {
    if original.shape() != counterfactual.shape() {
        return Err(Error::contract(format!(
            "cannot difference images of shape {:?} and {:?}",
            original.shape(),
            counterfactual.shape()
        )));
    }
    let (h, w) = original.shape();
    let data = original
        .data()
        .iter()
        .zip(counterfactual.data())
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .collect();
    Ok(Heatmap::new(h, w, data)?.normalized())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    Otsu,
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocConfig {
    pub threshold_mode: ThresholdMode,
    /// Cut used when `threshold_mode = "fixed"`; pixels at or above it are kept.
    pub fixed_threshold: f64,
    pub open_radius: usize,
    pub close_radius: usize,
    pub min_component_px: usize,
    pub connectivity: u8,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        Self {
            threshold_mode: ThresholdMode::Fixed,
            fixed_threshold: 0.5,
            open_radius: 1,
            close_radius: 2,
            min_component_px: 10,
            connectivity: 8,
        }
    }
}

impl PostprocConfig {
    pub fn otsu() -> Self {
        Self {
            threshold_mode: ThresholdMode::Otsu,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fixed_threshold) {
            return Err(Error::contract("fixed_threshold must lie in [0, 1]"));
        }
        if self.connectivity != 4 && self.connectivity != 8 {
            return Err(Error::contract("connectivity must be 4 or 8"));
        }
        Ok(())
    }
}

pub fn histogram_bin(v: f64) -> usize {
    ((v * HISTOGRAM_BINS as f64).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1)
}

/// Otsu split over the 256-bin histogram of `values` (assumed in `[0, 1]`).
///
/// Returns the largest bin index of the lower class; pixels in higher bins
/// are foreground. `None` when every value falls in one bin.
pub fn otsu_bin(values: &[f64]) -> Option<usize> {
    let mut hist = [0u64; HISTOGRAM_BINS];
    for &v in values {
        hist[histogram_bin(v)] += 1;
    }
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0u64, 0.0);
    let mut best: Option<(f64, usize)> = None;
    for (k, &count) in hist.iter().enumerate().take(HISTOGRAM_BINS - 1) {
        w0 += count;
        sum0 += k as f64 * count as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let mu0 = sum0 / w0 as f64;
        let mu1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (mu0 - mu1).powi(2);
        if best.is_none_or(|(b, _)| between > b) {
            best = Some((between, k));
        }
    }
    best.map(|(_, k)| k)
}

/// Foreground before morphology.
pub fn threshold(heatmap: &Heatmap, cfg: &PostprocConfig) -> Mask {
    let norm = heatmap.normalized();
    let keep: Vec<bool> = match cfg.threshold_mode {
        ThresholdMode::Fixed => norm.data.iter().map(|&v| v > 0.0 && v >= cfg.fixed_threshold).collect(),
        ThresholdMode::Otsu => match otsu_bin(&norm.data) {
            Some(k) => norm.data.iter().map(|&v| histogram_bin(v) > k).collect(),
            None => vec![false; norm.data.len()],
        },
    };
    let mut i = 0;
    Mask::from_fn(heatmap.height, heatmap.width, |_, _| {
        i += 1;
        keep[i - 1]
    })
}

/// Offsets of the digital disk `dx² + dy² < (r + 0.5)²`.
pub fn disk(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let lim = (radius as f64 + 0.5).powi(2);
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dx * dx + dy * dy) as f64) < lim {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Erosion (`all = true`) or dilation; neighbours outside the image are ignored.
fn morph(mask: &Mask, radius: usize, all: bool) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let se = disk(radius);
    let (h, w) = mask.shape();
    Mask::from_fn(h, w, |x, y| {
        let mut inside = se.iter().filter_map(|&(dx, dy)| {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h).then(|| mask.get(nx as usize, ny as usize))
        });
        if all {
            inside.all(|v| v)
        } else {
            inside.any(|v| v)
        }
    })
}

pub fn erode(mask: &Mask, radius: usize) -> Mask {
    morph(mask, radius, true)
}

pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    morph(mask, radius, false)
}

pub fn opening(mask: &Mask, radius: usize) -> Mask {
    dilate(&erode(mask, radius), radius)
}

pub fn closing(mask: &Mask, radius: usize) -> Mask {
    erode(&dilate(mask, radius), radius)
}

/// Connected components as lists of flat pixel indices, in scan order.
pub fn components(mask: &Mask, connectivity: u8) -> Vec<Vec<usize>> {
    let (h, w) = mask.shape();
    let data = mask.data();
    let mut seen = vec![false; data.len()];
    let mut out = Vec::new();
    for start in 0..data.len() {
        if data[start] == 0 || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut k = 0;
        while k < comp.len() {
            let (x, y) = ((comp[k] % w) as isize, (comp[k] / w) as isize);
            k += 1;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    if (dx == 0 && dy == 0) || (connectivity == 4 && dx != 0 && dy != 0) {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if data[j] == 1 && !seen[j] {
                        seen[j] = true;
                        comp.push(j);
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

pub fn remove_small_components(mask: &Mask, min_px: usize, connectivity: u8) -> Mask {
    let (h, w) = mask.shape();
    let mut keep = vec![0u8; h * w];
    for comp in components(mask, connectivity) {
        if comp.len() >= min_px {
            for i in comp {
                keep[i] = 1;
            }
        }
    }
    Mask::new(h, w, keep).expect("binary buffer of the right size")
}

/// Threshold, open, close, drop small components.
pub fn postprocess(heatmap: &Heatmap, cfg: &PostprocConfig) -> Mask {
    let m = threshold(heatmap, cfg);
    let m = opening(&m, cfg.open_radius);
    let m = closing(&m, cfg.close_radius);
    remove_small_components(&m, cfg.min_component_px, cfg.connectivity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::mask_area;

    fn square_heatmap(n: usize, x0: usize, y0: usize, side: usize, hi: f64, lo: f64) -> Heatmap {
        let mut data = vec![lo; n * n];
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                data[y * n + x] = hi;
            }
        }
        Heatmap::new(n, n, data).unwrap()
    }

    #[test]
    fn identical_images_give_zero_map() {
        let a = Image::filled(8, 8, 0.3).unwrap();
        let d = difference_map(&a, &a).unwrap();
        assert!(d.data.iter().all(|&v| v == 0.0));
        assert!(postprocess(&d, &PostprocConfig::default()).is_empty());
        assert!(postprocess(&d, &PostprocConfig::otsu()).is_empty());
    }

    #[test]
    fn single_pixel_difference() {
        let a = Image::filled(8, 8, 0.5).unwrap();
        let b = Image::from_fn(8, 8, |x, y| if (x, y) == (3, 5) { 0.1 } else { 0.5 }).unwrap();
        let d = difference_map(&a, &b).unwrap();
        assert_eq!(d.data[5 * 8 + 3], 1.0);
        assert_eq!(d.data.iter().filter(|&&v| v != 0.0).count(), 1);
        assert!(difference_map(&a, &Image::filled(8, 9, 0.5).unwrap()).is_err());
    }

    #[test]
    fn square_is_recovered_exactly_by_otsu() {
        let hm = square_heatmap(64, 10, 20, 20, 0.9, 0.05);
        // Levels land in bins 14 and 255; the first optimal split is bin 14.
        let norm = hm.normalized();
        assert_eq!(histogram_bin(norm.data[0]), 14);
        assert_eq!(otsu_bin(&norm.data), Some(14));
        let m = postprocess(&hm, &PostprocConfig::otsu());
        let expected = Mask::from_fn(64, 64, |x, y| (10..30).contains(&x) && (20..40).contains(&y));
        assert_eq!(m, expected);
        assert_eq!(postprocess(&hm, &PostprocConfig::default()), expected);
    }

    #[test]
    fn small_blob_is_removed() {
        let mut hm = square_heatmap(32, 4, 4, 12, 1.0, 0.0);
        for (x, y) in [(25, 25), (26, 25), (25, 26), (26, 26)] {
            hm.data[y * 32 + x] = 1.0;
        }
        let cfg = PostprocConfig {
            open_radius: 0,
            close_radius: 0,
            ..PostprocConfig::default()
        };
        let m = postprocess(&hm, &cfg);
        assert_eq!(mask_area(&m), 144);
        assert!(!m.get(25, 25));
    }

    #[test]
    fn disk_shapes() {
        assert_eq!(disk(0), vec![(0, 0)]);
        assert_eq!(disk(1).len(), 9);
        // r = 2: 5x5 minus the four corners.
        assert_eq!(disk(2).len(), 21);
    }

    #[test]
    fn morphology_respects_borders() {
        let full = Mask::from_fn(6, 6, |_, _| true);
        assert_eq!(erode(&full, 1), full);
        let dot = Mask::from_fn(6, 6, |x, y| (x, y) == (0, 0));
        assert_eq!(mask_area(&dilate(&dot, 1)), 4);
        assert!(opening(&dot, 1).is_empty());
        let gap = Mask::from_fn(9, 9, |x, y| (2..7).contains(&y) && x != 4 && (1..8).contains(&x));
        assert!(closing(&gap, 1).get(4, 4));
    }

    #[test]
    fn components_connectivity() {
        let diag = Mask::from_fn(4, 4, |x, y| x == y);
        assert_eq!(components(&diag, 8).len(), 1);
        assert_eq!(components(&diag, 4).len(), 4);
    }

    #[test]
    fn rescaling_does_not_change_mask() {
        let hm = square_heatmap(32, 5, 5, 10, 0.8, 0.1);
        for cfg in [PostprocConfig::default(), PostprocConfig::otsu()] {
            let base = postprocess(&hm, &cfg);
            for s in [0.25, 0.5, 1.0 / 0.8] {
                let scaled = Heatmap {
                    data: hm.data.iter().map(|v| v * s).collect(),
                    ..hm.clone()
                };
                assert_eq!(postprocess(&scaled, &cfg), base);
            }
        }
    }
}
