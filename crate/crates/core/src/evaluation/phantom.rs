//! Synthetic FLAIR-like phantoms with a known tumor.
//!
//! The background is Gaussian noise with standard deviation `noise_sigma`;
//! voxels inside an axis-aligned ellipsoid are raised by
//! `contrast * noise_sigma`. Labels follow the normalised ellipsoid radius
//! `r`: necrosis (1) for `r <= core_frac`, enhancing tumor (4) for
//! `r <= rim_frac`, edema (2) up to `r <= 1`.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{fmt_shape, Grid, Shape, Volume3D};
use crate::rng::{case_seed, SplitMix64};
use crate::volume_io::{save_case_dir, write_atomic, Case, SegMask3D, VolumeFormat};

/// BraTS volume dimensions.
pub const BRATS_SHAPE: Shape = [240, 240, 155];
/// Contrast (in noise standard deviations) below which a phantom is flagged low-signal.
pub const DETECTABLE_CONTRAST: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomParams {
    pub shape: Shape,
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    /// Tumor offset in units of `noise_sigma`.
    pub contrast: f64,
    pub noise_sigma: f64,
    pub core_frac: f64,
    pub rim_frac: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            shape: BRATS_SHAPE,
            center: [120.0, 120.0, 77.0],
            semi_axes: [30.0, 20.0, 25.0],
            contrast: DETECTABLE_CONTRAST,
            noise_sigma: 1.0,
            core_frac: 0.4,
            rim_frac: 0.6,
        }
    }
}

impl PhantomParams {
    fn validate(&self) -> Result<()> {
        if self.shape.iter().any(|&n| n == 0) {
            return Err(Error::InvalidParameter(format!("phantom shape {} has a zero extent", fmt_shape(self.shape))));
        }
        if !(self.noise_sigma > 0.0) || !(self.contrast >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need noise_sigma > 0 and contrast >= 0 (got {}, {})",
                self.noise_sigma, self.contrast
            )));
        }
        if !(0.0 < self.core_frac && self.core_frac <= self.rim_frac && self.rim_frac <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < core_frac <= rim_frac <= 1 (got {}, {})",
                self.core_frac, self.rim_frac
            )));
        }
        for a in 0..3 {
            let (c, r) = (self.center[a], self.semi_axes[a]);
            if !(r > 0.0) || c - r < 0.0 || c + r > (self.shape[a] - 1) as f64 {
                return Err(Error::OutOfRange {
                    what: "tumor extent along an axis",
                    index: (c + r).max(0.0).ceil() as usize,
                    bound: self.shape[a],
                });
            }
        }
        Ok(())
    }

    pub fn low_signal(&self) -> bool {
        self.contrast < DETECTABLE_CONTRAST
    }

    fn radius2(&self, p: Shape) -> f64 {
        (0..3)
            .map(|a| ((p[a] as f64 - self.center[a]) / self.semi_axes[a]).powi(2))
            .sum()
    }

    fn label_at(&self, p: Shape) -> u8 {
        let r2 = self.radius2(p);
        if r2 <= self.core_frac * self.core_frac {
            1
        } else if r2 <= self.rim_frac * self.rim_frac {
            4
        } else if r2 <= 1.0 {
            2
        } else {
            0
        }
    }
}

#[derive(Clone, Debug)]
pub struct Phantom {
    pub volume: Volume3D,
    pub mask: SegMask3D,
    pub params: PhantomParams,
    pub seed: u64,
}

impl Phantom {
    pub fn into_case(self, case_id: impl Into<String>) -> Result<Case> {
        Case::from_flair(case_id, self.volume, Some(self.mask))
    }

    pub fn tumor_voxels(&self) -> usize {
        self.mask.labels().data().iter().filter(|&&l| l != 0).count()
    }
}

pub fn generate_phantom(seed: u64, params: &PhantomParams) -> Result<Phantom> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.noise_sigma)
        .map_err(|e| Error::InvalidParameter(format!("noise distribution: {e}")))?;
    let lift = params.contrast * params.noise_sigma;
    let labels = Grid::from_fn(params.shape, |p| params.label_at(p))?;
    let mut data = Vec::with_capacity(labels.len());
    for &l in labels.data() {
        let v: f64 = noise.sample(&mut rng);
        data.push(if l != 0 { v + lift } else { v });
    }
    Ok(Phantom {
        volume: Grid::from_vec(params.shape, data)?,
        mask: SegMask3D::new(labels)?,
        params: params.clone(),
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Tumor centre on a voxel at least 64 voxels from every face.
    Interior,
    /// On any voxel where the ellipsoid fits.
    Anywhere,
}

/// Recipe for a reproducible corpus of single-tumor phantoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusParams {
    pub shape: Shape,
    pub contrast: f64,
    pub noise_sigma: f64,
    /// Semi-axes are drawn uniformly from this range.
    pub semi_axis_range: (f64, f64),
    pub placement: Placement,
    pub core_frac: f64,
    pub rim_frac: f64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            shape: BRATS_SHAPE,
            contrast: DETECTABLE_CONTRAST,
            noise_sigma: 1.0,
            semi_axis_range: (12.0, 30.0),
            placement: Placement::Interior,
            core_frac: 0.4,
            rim_frac: 0.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomCorpus {
    pub params: CorpusParams,
    pub seed: u64,
    pub count: usize,
}

const INTERIOR_MARGIN: f64 = 64.0;

impl PhantomCorpus {
    pub fn new(params: CorpusParams, seed: u64, count: usize) -> Self {
        PhantomCorpus { params, seed, count }
    }

    pub fn case_id(&self, i: usize) -> String {
        format!("phantom_{i:03}")
    }

    /// Tumor geometry and noise seed of case `i`.
    pub fn phantom_params(&self, i: usize) -> Result<(PhantomParams, u64)> {
        let p = &self.params;
        let mut rng = SplitMix64::new(case_seed(self.seed, &self.case_id(i)));
        let (lo, hi) = p.semi_axis_range;
        if !(0.0 < lo && lo <= hi) {
            return Err(Error::InvalidParameter(format!("bad semi-axis range ({lo}, {hi})")));
        }
        let semi_axes: [f64; 3] = std::array::from_fn(|_| lo + (hi - lo) * rng.unit_f64());
        let mut center = [0.0; 3];
        for a in 0..3 {
            let last = (p.shape[a] - 1) as f64;
            let (min, max) = match p.placement {
                Placement::Interior => (INTERIOR_MARGIN.max(semi_axes[a]), (last - INTERIOR_MARGIN).min(last - semi_axes[a])),
                Placement::Anywhere => (semi_axes[a], last - semi_axes[a]),
            };
            let (min, max) = (min.ceil(), max.floor());
            if min > max {
                return Err(Error::InvalidParameter(format!(
                    "volume {} too small for the requested tumor placement",
                    fmt_shape(p.shape)
                )));
            }
            center[a] = rng.inclusive(min as u64, max as u64) as f64;
        }
        let params = PhantomParams {
            shape: p.shape,
            center,
            semi_axes,
            contrast: p.contrast,
            noise_sigma: p.noise_sigma,
            core_frac: p.core_frac,
            rim_frac: p.rim_frac,
        };
        params.validate()?;
        Ok((params, rng.next_u64()))
    }

    pub fn phantom(&self, i: usize) -> Result<Phantom> {
        let (params, seed) = self.phantom_params(i)?;
        generate_phantom(seed, &params)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomManifest {
    pub case_id: String,
    pub seed: u64,
    pub params: PhantomParams,
    pub tumor_voxels: usize,
    pub low_signal: bool,
}

/// Write a phantom as a case directory plus `<case>_phantom.json`.
pub fn write_phantom(phantom: Phantom, case_id: &str, root: &Path, format: VolumeFormat) -> Result<PathBuf> {
    let manifest = PhantomManifest {
        case_id: case_id.to_string(),
        seed: phantom.seed,
        params: phantom.params.clone(),
        tumor_voxels: phantom.tumor_voxels(),
        low_signal: phantom.params.low_signal(),
    };
    let dir = save_case_dir(&phantom.into_case(case_id)?, root, format)?;
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    write_atomic(&dir.join(format!("{case_id}_phantom.json")), &bytes)?;
    Ok(dir)
}
