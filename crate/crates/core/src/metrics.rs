//! Segmentation and patch-quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Grid};
use crate::patching::PatchSpec;
use crate::volume_io::{Region, SegMask3D};

/// Smoothing term of the Dice score and Dice loss.
pub const DICE_EPS: f64 = 1e-6;
/// Probabilities below this are raised to it before taking the focal-loss logarithm.
pub const FOCAL_FLOOR: f64 = 1e-7;

/// A voxel value usable as a prediction: a probability or a hard label.
pub trait Prediction: Copy {
    fn prob(self) -> f64;
}

impl Prediction for f64 {
    fn prob(self) -> f64 {
        self
    }
}

impl Prediction for bool {
    fn prob(self) -> f64 {
        if self {
            1.0
        } else {
            0.0
        }
    }
}

/// `(2 sum(p t) + eps) / (sum(p^2) + sum(t^2) + eps)`.
pub fn dice<P: Prediction>(p: &Grid<P>, t: &BinaryMask, eps: f64) -> Result<f64> {
    p.ensure_same_shape(t)?;
    if !(eps >= 0.0) {
        return Err(Error::InvalidParameter(format!("dice eps must be >= 0 (got {eps})")));
    }
    let mut inter = 0.0;
    let mut sum_p2 = 0.0;
    let mut sum_t2 = 0.0;
    for (i, (&pv, &tv)) in p.data().iter().zip(t.data()).enumerate() {
        let pv = pv.prob();
        if !(0.0..=1.0).contains(&pv) {
            return Err(Error::OutOfRange { what: "prediction in [0, 1] at voxel", index: i, bound: 1 });
        }
        if tv {
            inter += pv;
            sum_t2 += 1.0;
        }
        sum_p2 += pv * pv;
    }
    Ok((2.0 * inter + eps) / (sum_p2 + sum_t2 + eps))
}

pub fn dice_loss<P: Prediction>(p: &Grid<P>, t: &BinaryMask, eps: f64) -> Result<f64> {
    Ok(1.0 - dice(p, t, eps)?)
}

/// `-alpha_t (1 - p_t)^gamma ln(p_t)` for one voxel, with `p_t` floored at [`FOCAL_FLOOR`].
pub fn focal_loss(p_t: f64, alpha_t: f64, gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_t) {
        return Err(Error::InvalidParameter(format!("p_t must lie in [0, 1] (got {p_t})")));
    }
    if !(alpha_t >= 0.0) || !(gamma >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha and gamma must be >= 0 (got {alpha_t}, {gamma})"
        )));
    }
    let p = p_t.max(FOCAL_FLOOR);
    Ok(-alpha_t * (1.0 - p).powf(gamma) * p.ln())
}

/// Mean focal loss over a probability grid and its binary target.
///
/// At a positive voxel `p_t = p` and `alpha_t = alpha`; at a negative voxel
/// `p_t = 1 - p` and `alpha_t = 1 - alpha`.
pub fn focal_loss_mean(p: &Grid<f64>, t: &BinaryMask, alpha: f64, gamma: f64) -> Result<f64> {
    p.ensure_same_shape(t)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("alpha must lie in [0, 1] (got {alpha})")));
    }
    let mut total = 0.0;
    for (&pv, &tv) in p.data().iter().zip(t.data()) {
        total += if tv {
            focal_loss(pv, alpha, gamma)?
        } else {
            focal_loss(1.0 - pv, 1.0 - alpha, gamma)?
        };
    }
    Ok(total / p.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(p: &BinaryMask, t: &BinaryMask) -> Result<ConfusionCounts> {
    p.ensure_same_shape(t)?;
    let mut c = ConfusionCounts::default();
    for (&pv, &tv) in p.data().iter().zip(t.data()) {
        match (pv, tv) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `TP / (TP + FN)`.
pub fn sensitivity(c: &ConfusionCounts) -> Result<f64> {
    if c.tp + c.fn_ == 0 {
        return Err(Error::UndefinedMetric("sensitivity (no positive voxels)"));
    }
    Ok(c.tp as f64 / (c.tp + c.fn_) as f64)
}

/// `TN / (TN + FP)`.
pub fn specificity(c: &ConfusionCounts) -> Result<f64> {
    if c.tn + c.fp == 0 {
        return Err(Error::UndefinedMetric("specificity (no negative voxels)"));
    }
    Ok(c.tn as f64 / (c.tn + c.fp) as f64)
}

/// Fraction of voxels carrying a tumor label (1, 2 or 4).
pub fn tumor_fraction(mask: &SegMask3D) -> f64 {
    let labels = mask.labels();
    let tumor = labels.data().iter().filter(|&&l| Region::WholeTumor.contains(l)).count();
    tumor as f64 / labels.len() as f64
}

/// Unweighted centroid of the whole-tumor voxels.
pub fn tumor_centroid(gt: &SegMask3D) -> Result<[f64; 3]> {
    let labels = gt.labels();
    let mut sums = [0u64; 3];
    let mut n = 0u64;
    for (i, &l) in labels.data().iter().enumerate() {
        if Region::WholeTumor.contains(l) {
            let p = labels.coords(i);
            for a in 0..3 {
                sums[a] += p[a] as u64;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("ground-truth mask has no tumor voxels".into()));
    }
    Ok(std::array::from_fn(|a| sums[a] as f64 / n as f64))
}

/// Euclidean distance from the whole-tumor centroid to the patch centre.
pub fn center_distance(patch: &PatchSpec, gt: &SegMask3D) -> Result<f64> {
    let c = tumor_centroid(gt)?;
    let m = patch.center();
    Ok((0..3).map(|a| (c[a] - m[a]).powi(2)).sum::<f64>().sqrt())
}
