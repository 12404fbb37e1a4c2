//! Overlap metrics between predicted and ground-truth masks.
//!
//! All scores are computed from integer pixel counts with a single final
//! division. When both masks are empty the score is 1.0 (agreement on
//! absence); when exactly one is empty it is 0.0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Mask;

pub fn mask_area(m: &Mask) -> u64 {
    m.data().iter().map(|&v| v as u64).sum()
}

pub fn intersection_area(p: &Mask, g: &Mask) -> Result<u64> {
    same_shape(p, g)?;
    Ok(p.data().iter().zip(g.data()).map(|(&a, &b)| (a & b) as u64).sum())
}

pub fn iou(p: &Mask, g: &Mask) -> Result<f64> {
    let inter = intersection_area(p, g)?;
    let union = mask_area(p) + mask_area(g) - inter;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

pub fn dice(p: &Mask, g: &Mask) -> Result<f64> {
    let inter = intersection_area(p, g)?;
    let total = mask_area(p) + mask_area(g);
    Ok(if total == 0 {
        1.0
    } else {
        (2 * inter) as f64 / total as f64
    })
}

fn same_shape(p: &Mask, g: &Mask) -> Result<()> {
    if p.shape() != g.shape() {
        return Err(Error::contract(format!(
            "mask shapes differ: {:?} vs {:?}",
            p.shape(),
            g.shape()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    pub iou: f64,
    pub dice: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub mean_iou: f64,
    pub mean_dice: f64,
    pub per_sample: Vec<SampleScore>,
}

/// Per-pair scores and their arithmetic means (mIOU, mDICE).
pub fn mean_report<'a, I>(pairs: I) -> Result<MetricsReport>
where
    I: IntoIterator<Item = (&'a Mask, &'a Mask, &'a str)>,
{
    let mut per_sample = Vec::new();
    for (pred, gt, id) in pairs {
        per_sample.push(SampleScore {
            id: id.to_string(),
            iou: iou(pred, gt)?,
            dice: dice(pred, gt)?,
        });
    }
    if per_sample.is_empty() {
        return Err(Error::EmptyInput("no mask pairs to evaluate".into()));
    }
    let n = per_sample.len();
    let mean_iou = per_sample.iter().map(|s| s.iou).sum::<f64>() / n as f64;
    let mean_dice = per_sample.iter().map(|s| s.dice).sum::<f64>() / n as f64;
    Ok(MetricsReport {
        n,
        mean_iou,
        mean_dice,
        per_sample,
    })
}
