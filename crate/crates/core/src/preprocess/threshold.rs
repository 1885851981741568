//! Histogram construction and Yen's entropic thresholding.
//!
//! For a cut `t` splitting the histogram into bins `0..=t` and `t+1..`, with
//! class masses `P1`, `P2` and sums of squared probabilities `S1`, `S2`, Yen's
//! criterion is
//!
//! ```text
//! TC(t) = ln(P1^2 * P2^2 / (S1 * S2))
//! ```
//!
//! Masses and squared sums are accumulated as exact integers from the bin
//! counts (the common normaliser cancels), so the criterion value for a cut
//! does not depend on summation order. Ties resolve to the lowest cut.

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Grid};

pub const DEFAULT_BINS: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub counts: Vec<u64>,
    pub min: f64,
    pub max: f64,
}

impl Histogram {
    /// Equal-width histogram over `[min, max]` of the data.
    pub fn of(img: &Grid<f64>, bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 bins (got {bins})")));
        }
        let (min, max) = img.min_max();
        let mut counts = vec![0u64; bins];
        let width = max - min;
        for &v in img.data() {
            counts[bin_of(v, min, width, bins)] += 1;
        }
        Ok(Histogram { counts, min, max })
    }

    pub fn bin_width(&self) -> f64 {
        (self.max - self.min) / self.counts.len() as f64
    }

    /// Intensity at the upper edge of bin `t`; a cut after bin `t` keeps values above it.
    pub fn upper_edge(&self, t: usize) -> f64 {
        self.min + (t + 1) as f64 * self.bin_width()
    }
}

#[inline]
fn bin_of(v: f64, min: f64, width: f64, bins: usize) -> usize {
    if width <= 0.0 {
        return 0;
    }
    let b = ((v - min) / width * bins as f64).floor();
    (b.max(0.0) as usize).min(bins - 1)
}

/// Yen's criterion for cut `t` given exact integer class statistics.
#[inline]
pub fn yen_criterion(mass_lo: u64, mass_hi: u64, sq_lo: u128, sq_hi: u128) -> f64 {
    2.0 * (mass_lo as f64).ln() + 2.0 * (mass_hi as f64).ln()
        - (sq_lo as f64).ln()
        - (sq_hi as f64).ln()
}

fn nonempty_bins(counts: &[u64]) -> usize {
    counts.iter().filter(|&&c| c > 0).count()
}

/// Single-level Yen threshold: index `t` of the last bin in the lower class.
pub fn yen_threshold(counts: &[u64]) -> Result<usize> {
    if nonempty_bins(counts) < 2 {
        return Err(Error::Degenerate(
            "histogram has fewer than two non-empty bins".into(),
        ));
    }
    let total: u64 = counts.iter().sum();
    let total_sq: u128 = counts.iter().map(|&c| c as u128 * c as u128).sum();
    let mut mass_lo = 0u64;
    let mut sq_lo = 0u128;
    let mut best: Option<(usize, f64)> = None;
    for (t, &c) in counts[..counts.len() - 1].iter().enumerate() {
        mass_lo += c;
        sq_lo += c as u128 * c as u128;
        let mass_hi = total - mass_lo;
        if mass_lo == 0 || mass_hi == 0 {
            continue;
        }
        let crit = yen_criterion(mass_lo, mass_hi, sq_lo, total_sq - sq_lo);
        if best.map_or(true, |(_, b)| crit > b) {
            best = Some((t, crit));
        }
    }
    Ok(best.expect("two non-empty bins admit a cut").0)
}

/// Multilevel Yen thresholds in ascending order.
///
/// The first cut splits the whole histogram; each further level re-applies
/// the criterion to the bins above the previous cut. Recursion stops early
/// when the upper class has fewer than two non-empty bins, so fewer than
/// `levels` cuts may be returned.
pub fn yen_thresholds(counts: &[u64], levels: usize) -> Result<Vec<usize>> {
    if levels == 0 {
        return Err(Error::InvalidParameter("yen levels must be at least 1".into()));
    }
    let mut out = vec![yen_threshold(counts)?];
    while out.len() < levels {
        let start = out[out.len() - 1] + 1;
        let upper = &counts[start..];
        if nonempty_bins(upper) < 2 {
            break;
        }
        out.push(start + yen_threshold(upper)?);
    }
    Ok(out)
}

/// Keep voxels strictly above the highest threshold. With no thresholds every
/// voxel is kept.
pub fn threshold_top_class(img: &Grid<f64>, thresholds: &[f64]) -> BinaryMask {
    match thresholds.last() {
        Some(&t) => img.map(|&v| v > t),
        None => img.map(|_| true),
    }
}
