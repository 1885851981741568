//! Intensity normalisation and region-of-interest extraction.
//!
//! The ROI chain runs, in order: Gaussian blur, cross sharpening, a 256-bin
//! histogram over the image's min..max, multilevel Yen thresholding, keeping
//! the top class, then opening and closing. It works on planar slices and on
//! whole volumes alike; volumes use the 3D analogue of each kernel.

pub mod filter;
pub mod morphology;
pub mod threshold;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Grid, Volume3D};
use crate::volume_io::{save_volume, VolumeFormat};

pub use filter::{convolve, gaussian_blur, gradient, sharpen, FilterKernel, GradientField};
pub use morphology::morph_open_close;
pub use threshold::{threshold_top_class, yen_threshold, yen_thresholds, Histogram};

/// `(x - mean) / std` with the population (divide-by-N) standard deviation.
pub fn zscore_normalize(vol: &Volume3D) -> Result<Volume3D> {
    let n = vol.len();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "normalisation needs at least 2 voxels (got {n})"
        )));
    }
    let mean = vol.data().iter().sum::<f64>() / n as f64;
    let var = vol.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if !(std > 0.0) {
        return Err(Error::Degenerate("volume is constant (zero standard deviation)".into()));
    }
    Ok(vol.map(|v| (v - mean) / std))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiParams {
    pub sigma: f64,
    pub blur_radius: usize,
    pub yen_levels: usize,
    pub se_radius: usize,
    pub bins: usize,
}

impl Default for RoiParams {
    fn default() -> Self {
        RoiParams {
            sigma: 1.0,
            blur_radius: 2,
            yen_levels: 1,
            se_radius: 1,
            bins: threshold::DEFAULT_BINS,
        }
    }
}

impl RoiParams {
    /// Reject settings the ROI chain cannot run with.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad(format!("sigma must be positive (got {})", self.sigma));
        }
        if self.yen_levels == 0 {
            return bad("yen_levels must be at least 1".into());
        }
        if self.se_radius == 0 {
            return bad("se_radius must be at least 1".into());
        }
        if self.bins < 2 {
            return bad(format!("need at least 2 histogram bins (got {})", self.bins));
        }
        Ok(())
    }
}

/// Every intermediate grid of the ROI chain, numbered as the stages run.
#[derive(Clone, Debug)]
pub struct RoiStages {
    pub original: Grid<f64>,
    pub blurred: Grid<f64>,
    pub enhanced: Grid<f64>,
    pub thresholded: BinaryMask,
    pub cleaned: BinaryMask,
    /// Intensity cut points on the enhanced image, ascending.
    pub thresholds: Vec<f64>,
}

impl RoiStages {
    pub fn mask(&self) -> &BinaryMask {
        &self.cleaned
    }

    /// Original intensities inside the ROI, zero elsewhere.
    pub fn roi_image(&self) -> Grid<f64> {
        let data = self
            .original
            .data()
            .iter()
            .zip(self.cleaned.data())
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect();
        Grid::from_vec(self.original.shape(), data).expect("same shape")
    }

    /// Write `<case>_<n>_<stage>.raw` (plus sidecar headers) for stages 1-6.
    pub fn dump(&self, dir: &Path, case_id: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let as_f64 = |m: &BinaryMask| m.map(|&b| if b { 1.0 } else { 0.0 });
        let stages: [(&str, Grid<f64>); 6] = [
            ("1_original", self.original.clone()),
            ("2_blur", self.blurred.clone()),
            ("3_enhanced", self.enhanced.clone()),
            ("4_threshold", as_f64(&self.thresholded)),
            ("5_open_close", as_f64(&self.cleaned)),
            ("6_roi", self.roi_image()),
        ];
        let mut paths = Vec::with_capacity(stages.len());
        for (name, grid) in stages {
            let path = dir.join(format!("{case_id}_{name}.raw"));
            save_volume(&grid, &path, VolumeFormat::RawF32)?;
            paths.push(path);
        }
        Ok(paths)
    }
}

/// Run the ROI chain and keep every stage.
pub fn extract_roi_stages(img: &Grid<f64>, params: &RoiParams) -> Result<RoiStages> {
    let blurred = gaussian_blur(img, params.sigma, params.blur_radius)?;
    let enhanced = sharpen(&blurred)?;
    let hist = Histogram::of(&enhanced, params.bins)?;
    let cuts = yen_thresholds(&hist.counts, params.yen_levels)?;
    let thresholds: Vec<f64> = cuts.iter().map(|&t| hist.upper_edge(t)).collect();
    let thresholded = threshold_top_class(&enhanced, &thresholds);
    let cleaned = morph_open_close(&thresholded, params.se_radius)?;
    Ok(RoiStages {
        original: img.clone(),
        blurred,
        enhanced,
        thresholded,
        cleaned,
        thresholds,
    })
}

/// Binary ROI of a normalised slice or volume.
pub fn extract_roi(img: &Grid<f64>, params: &RoiParams) -> Result<BinaryMask> {
    Ok(extract_roi_stages(img, params)?.cleaned)
}
