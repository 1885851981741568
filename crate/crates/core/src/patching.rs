//! Patch windows for the CCA and TDA pipelines and the baseline patchings.
//!
//! Every strategy first plans one or more [`Window`]s (origin, size and
//! provenance) and only then crops voxels, so evaluation can score windows
//! without copying data. Windows are always clamped inside the volume; no
//! padding is ever added.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cca::{self, CentroidMode};
use crate::error::{Error, Result};
use crate::grid::{fmt_shape, Connectivity, Shape, Slice2D, Volume3D};
use crate::homology::{strongest_component_centroid, Filtration};
use crate::metrics;
use crate::preprocess::{extract_roi, zscore_normalize, RoiParams};
use crate::rng::{case_seed, fnv1a64, SplitMix64};
use crate::volume_io::{axial_slice, save_mask, save_volume, write_atomic, Case, Modality, SegMask3D, VolumeFormat};

pub const PATCH_SIZE: usize = 128;
pub const DEFAULT_STRIDE: usize = 64;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Cca,
    Tda2d,
    CenteredCrop,
    FixedQuadrant,
    Random,
    RandomSeeded,
    Overlapping,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Cca,
        Strategy::Tda2d,
        Strategy::CenteredCrop,
        Strategy::FixedQuadrant,
        Strategy::Random,
        Strategy::RandomSeeded,
        Strategy::Overlapping,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Cca => "cca",
            Strategy::Tda2d => "tda2d",
            Strategy::CenteredCrop => "centered_crop",
            Strategy::FixedQuadrant => "fixed_quadrant",
            Strategy::Random => "random",
            Strategy::RandomSeeded => "random_seeded",
            Strategy::Overlapping => "overlapping",
        }
    }

    /// Whether the strategy yields more than one window per case.
    pub fn is_multi(self) -> bool {
        matches!(self, Strategy::FixedQuadrant | Strategy::Overlapping)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Strategy::ALL.iter().map(|st| st.name()).collect();
                Error::InvalidParameter(format!("unknown strategy {s:?} (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchParams {
    /// Side of the cubic (or square, for planar inputs) window.
    pub size: usize,
    pub min_voxels: usize,
    /// `None` picks 8 in the plane and 26 in a volume.
    pub connectivity: Option<Connectivity>,
    pub centroid_mode: CentroidMode,
    pub roi: RoiParams,
    /// Seed for `random` (unset: derived from the case id alone) and
    /// `random_seeded` (unset: 42).
    pub seed: Option<u64>,
    pub stride: usize,
}

impl Default for PatchParams {
    fn default() -> Self {
        PatchParams {
            size: PATCH_SIZE,
            min_voxels: cca::DEFAULT_MIN_VOXELS,
            connectivity: None,
            centroid_mode: CentroidMode::Union,
            roi: RoiParams::default(),
            seed: None,
            stride: DEFAULT_STRIDE,
        }
    }
}

impl PatchParams {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::InvalidParameter("patch size must be at least 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::InvalidParameter("stride must be at least 1".into()));
        }
        self.roi.validate()
    }

    fn connectivity_for(&self, shape: Shape) -> Connectivity {
        self.connectivity.unwrap_or_else(|| Connectivity::default_for(shape))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub case_id: String,
    pub strategy: Strategy,
    /// Position among the case's windows for multi-window strategies.
    pub index: usize,
    pub origin: Shape,
    pub size: Shape,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quadrant: Option<usize>,
}

impl PatchSpec {
    fn new(case_id: &str, strategy: Strategy, origin: Shape, size: Shape, bounds: Shape) -> Result<Self> {
        for a in 0..3 {
            if size[a] == 0 || origin[a] + size[a] > bounds[a] {
                return Err(Error::OutOfRange {
                    what: "patch window end",
                    index: origin[a] + size[a],
                    bound: bounds[a],
                });
            }
        }
        Ok(PatchSpec {
            case_id: case_id.to_string(),
            strategy,
            index: 0,
            origin,
            size,
            seed: None,
            stride: None,
            quadrant: None,
        })
    }

    /// Geometric centre, `origin + size / 2`.
    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] as f64 + self.size[a] as f64 / 2.0)
    }

    pub fn contains(&self, p: Shape) -> bool {
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] < self.origin[a] + self.size[a])
    }

    pub fn voxel_count(&self) -> usize {
        self.size.iter().product()
    }

    #[cfg(test)]
    pub(crate) fn test_window(origin: Shape, size: Shape) -> Self {
        PatchSpec::new("test", Strategy::CenteredCrop, origin, size, [usize::MAX / 4; 3]).unwrap()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// The point the window was placed around.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchor: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roi_voxels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
    /// Dice of the extracted mask against the whole-tumor label, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roi_dice: Option<f64>,
    /// Axial slice used by the planar pipeline.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slice: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub spec: PatchSpec,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub spec: PatchSpec,
    pub provenance: Provenance,
    pub data: BTreeMap<Modality, Volume3D>,
    pub mask_crop: Option<SegMask3D>,
}

impl Patch {
    pub fn extract(case: &Case, window: Window) -> Result<Patch> {
        let Window { spec, provenance } = window;
        let data = case
            .modalities()
            .iter()
            .map(|(&m, v)| Ok((m, v.crop(spec.origin, spec.size)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let mask_crop = case.mask().map(|m| m.crop(spec.origin, spec.size)).transpose()?;
        Ok(Patch { spec, provenance, data, mask_crop })
    }
}

/// Window size for a source of `shape`: cubic for volumes, square for planes.
pub fn patch_size(shape: Shape, side: usize) -> Result<Shape> {
    let size = [side, side, if shape[2] == 1 { 1 } else { side }];
    for a in 0..3 {
        if size[a] == 0 || size[a] > shape[a] {
            return Err(Error::InvalidParameter(format!(
                "patch size {} does not fit in volume {}",
                fmt_shape(size),
                fmt_shape(shape)
            )));
        }
    }
    Ok(size)
}

/// Origin of a `size` window centred on `centroid`, shifted inside `bounds`.
pub fn clamp_window(centroid: [f64; 3], size: Shape, bounds: Shape) -> Result<Shape> {
    let mut origin = [0usize; 3];
    for a in 0..3 {
        if size[a] > bounds[a] {
            return Err(Error::InvalidParameter(format!(
                "window {} exceeds bounds {}",
                fmt_shape(size),
                fmt_shape(bounds)
            )));
        }
        let start = centroid[a].round() as i64 - (size[a] / 2) as i64;
        origin[a] = start.clamp(0, (bounds[a] - size[a]) as i64) as usize;
    }
    Ok(origin)
}

pub fn centered_origin(shape: Shape, size: Shape) -> Shape {
    std::array::from_fn(|a| (shape[a] - size[a]) / 2)
}

/// Per-axis origins of a strided tiling: every multiple of `stride` whose
/// window fits, plus a window flush with the far face when the last step
/// does not land there.
pub fn overlapping_origins(bound: usize, size: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be at least 1".into()));
    }
    if size > bound {
        return Err(Error::InvalidParameter(format!("window {size} exceeds bound {bound}")));
    }
    let mut out: Vec<usize> = (0..).map(|k| k * stride).take_while(|&o| o + size <= bound).collect();
    if *out.last().expect("origin 0 always fits") + size != bound {
        out.push(bound - size);
    }
    Ok(out)
}

fn fallback_window(case_id: &str, strategy: Strategy, shape: Shape, size: Shape, warning: String) -> Result<Window> {
    log::warn!("{case_id}: {warning}; using centred crop");
    let spec = PatchSpec::new(case_id, strategy, centered_origin(shape, size), size, shape)?;
    Ok(Window {
        spec,
        provenance: Provenance {
            warnings: vec![format!("{warning}; fell back to centred crop")],
            ..Provenance::default()
        },
    })
}

/// Errors that mean "no usable signal" rather than a broken input.
fn is_signal_failure(e: &Error) -> bool {
    matches!(e, Error::Degenerate(_) | Error::Empty(_))
}

/// Window of the 3D CCA pipeline: normalise the FLAIR volume, extract the 3D
/// ROI, label it, drop small components and centre on the centroid.
pub fn cca_window(case: &Case, params: &PatchParams) -> Result<Window> {
    let flair = case.flair()?;
    let shape = flair.shape();
    let size = patch_size(shape, params.size)?;
    let id = case.case_id();
    let roi = match zscore_normalize(flair).and_then(|n| extract_roi(&n, &params.roi)) {
        Ok(roi) => roi,
        Err(e) if is_signal_failure(&e) => {
            return fallback_window(id, Strategy::Cca, shape, size, format!("ROI extraction failed: {e}"))
        }
        Err(e) => return Err(e),
    };
    let labelled = cca::label_components(&roi, params.connectivity_for(shape))?;
    let kept = cca::filter_small(&labelled, params.min_voxels);
    if kept.is_empty() {
        let msg = format!("no ROI component with at least {} voxels", params.min_voxels);
        let mut w = fallback_window(id, Strategy::Cca, shape, size, msg)?;
        w.provenance.roi_voxels = Some(0);
        w.provenance.components = Some(0);
        return Ok(w);
    }
    let centroid = cca::mask_centroid(&kept, params.centroid_mode)?;
    let spec = PatchSpec::new(id, Strategy::Cca, clamp_window(centroid, size, shape)?, size, shape)?;
    let roi_dice = case
        .mask()
        .map(|m| cca::mask_dice(&kept.mask(), &m.whole_tumor()))
        .transpose()?;
    Ok(Window {
        spec,
        provenance: Provenance {
            anchor: Some(centroid),
            roi_voxels: Some(kept.voxel_total()),
            components: Some(kept.len()),
            roi_dice,
            ..Provenance::default()
        },
    })
}

/// Window of the planar pipeline on one normalised slice: 2D ROI, then the
/// superlevel persistence of the slice restricted to the ROI, centred on the
/// most persistent component.
pub fn tda_window_2d(slice: &Slice2D, params: &PatchParams, case_id: &str) -> Result<Window> {
    let shape = slice.shape();
    if shape[2] != 1 {
        return Err(Error::InvalidParameter(format!("expected a planar slice, got {}", fmt_shape(shape))));
    }
    let size = patch_size(shape, params.size)?;
    let roi = match extract_roi(slice, &params.roi) {
        Ok(roi) => roi,
        Err(e) if is_signal_failure(&e) => {
            return fallback_window(case_id, Strategy::Tda2d, shape, size, format!("ROI extraction failed: {e}"))
        }
        Err(e) => return Err(e),
    };
    let roi_voxels = roi.count_true();
    if roi_voxels == 0 {
        return fallback_window(case_id, Strategy::Tda2d, shape, size, "empty ROI".into());
    }
    // Outside the ROI every pixel sits at the slice minimum, so it joins the
    // superlevel filtration last and never starts a component of its own.
    let (floor, _) = slice.min_max();
    let masked = Slice2D::from_vec(
        shape,
        slice.data().iter().zip(roi.data()).map(|(&v, &m)| if m { v } else { floor }).collect(),
    )?;
    let strongest = strongest_component_centroid(&masked, Filtration::Superlevel, params.connectivity_for(shape))?;
    let spec = PatchSpec::new(case_id, Strategy::Tda2d, clamp_window(strongest.centroid, size, shape)?, size, shape)?;
    Ok(Window {
        spec,
        provenance: Provenance {
            anchor: Some(strongest.centroid),
            roi_voxels: Some(roi_voxels),
            ..Provenance::default()
        },
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlicePatch {
    pub window: Window,
    pub data: Slice2D,
}

pub fn patch_tda_2d(slice: &Slice2D, params: &PatchParams) -> Result<SlicePatch> {
    let window = tda_window_2d(slice, params, "slice")?;
    let data = slice.crop(window.spec.origin, window.spec.size)?;
    Ok(SlicePatch { window, data })
}

/// The planar pipeline lifted to a volume: it runs on the axial slice whose
/// 2D ROI stands out most from the volume mean, scored as the ROI's summed
/// normalised intensity over the square root of its size. The window spans
/// the centred depth range.
pub fn tda2d_window(case: &Case, params: &PatchParams) -> Result<Window> {
    let flair = case.flair()?;
    let shape = flair.shape();
    let size = patch_size(shape, params.size)?;
    let id = case.case_id();
    let norm = match zscore_normalize(flair) {
        Ok(n) => n,
        Err(e) if is_signal_failure(&e) => {
            return fallback_window(id, Strategy::Tda2d, shape, size, format!("normalisation failed: {e}"))
        }
        Err(e) => return Err(e),
    };
    let mut best: Option<(usize, f64, Slice2D)> = None;
    for k in 0..shape[2] {
        let slice = axial_slice(&norm, k)?;
        let roi = match extract_roi(&slice, &params.roi) {
            Ok(roi) => roi,
            Err(e) if is_signal_failure(&e) => continue,
            Err(e) => return Err(e),
        };
        let (sum, n) = slice
            .data()
            .iter()
            .zip(roi.data())
            .filter(|(_, &m)| m)
            .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
        if n == 0 {
            continue;
        }
        let score = sum / (n as f64).sqrt();
        if best.as_ref().map_or(true, |b| score > b.1) {
            best = Some((k, score, slice));
        }
    }
    let Some((k, _, slice)) = best else {
        return fallback_window(id, Strategy::Tda2d, shape, size, "no slice has a non-empty ROI".into());
    };
    let planar = tda_window_2d(&slice, params, id)?;
    let z0 = centered_origin(shape, size)[2];
    let o = planar.spec.origin;
    let mut spec = PatchSpec::new(id, Strategy::Tda2d, [o[0], o[1], z0], size, shape)?;
    spec.index = 0;
    let mut provenance = planar.provenance;
    provenance.slice = Some(k);
    if let Some(a) = provenance.anchor.as_mut() {
        a[2] = k as f64;
    }
    Ok(Window { spec, provenance })
}

pub fn centered_window(case: &Case, params: &PatchParams) -> Result<Window> {
    let shape = case.shape();
    let size = patch_size(shape, params.size)?;
    let spec = PatchSpec::new(case.case_id(), Strategy::CenteredCrop, centered_origin(shape, size), size, shape)?;
    Ok(Window { spec, provenance: Provenance::default() })
}

/// Four windows at the lateral corners, `(0,0)`, `(0,b)`, `(b,0)`, `(b,b)`
/// in (x, y) with `b = bound - size`, at the centred depth.
pub fn quadrant_windows(case: &Case, params: &PatchParams) -> Result<Vec<Window>> {
    let shape = case.shape();
    let size = patch_size(shape, params.size)?;
    let z0 = centered_origin(shape, size)[2];
    let mut out = Vec::with_capacity(4);
    for x0 in [0, shape[0] - size[0]] {
        for y0 in [0, shape[1] - size[1]] {
            let mut spec = PatchSpec::new(case.case_id(), Strategy::FixedQuadrant, [x0, y0, z0], size, shape)?;
            spec.index = out.len();
            spec.quadrant = Some(out.len());
            out.push(Window { spec, provenance: Provenance::default() });
        }
    }
    Ok(out)
}

/// One window with a uniformly drawn origin per axis (x, then y, then z).
///
/// With a seed the stream is seeded from the seed and the case id; without
/// one it is seeded from the case id alone, so runs never depend on a clock.
pub fn random_window(case: &Case, seed: Option<u64>, strategy: Strategy, params: &PatchParams) -> Result<Window> {
    let shape = case.shape();
    let size = patch_size(shape, params.size)?;
    let id = case.case_id();
    let mut rng = SplitMix64::new(match seed {
        Some(s) => case_seed(s, id),
        None => fnv1a64(id.as_bytes()),
    });
    let origin: Shape = std::array::from_fn(|a| rng.below((shape[a] - size[a] + 1) as u64) as usize);
    let mut spec = PatchSpec::new(id, strategy, origin, size, shape)?;
    spec.seed = seed;
    Ok(Window { spec, provenance: Provenance::default() })
}

pub fn overlapping_windows(case: &Case, params: &PatchParams) -> Result<Vec<Window>> {
    let shape = case.shape();
    let size = patch_size(shape, params.size)?;
    let axes: Vec<Vec<usize>> = (0..3)
        .map(|a| overlapping_origins(shape[a], size[a], params.stride))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for &z in &axes[2] {
        for &y in &axes[1] {
            for &x in &axes[0] {
                let mut spec = PatchSpec::new(case.case_id(), Strategy::Overlapping, [x, y, z], size, shape)?;
                spec.index = out.len();
                spec.stride = Some(params.stride);
                out.push(Window { spec, provenance: Provenance::default() });
            }
        }
    }
    Ok(out)
}

/// Every window `strategy` places on `case`.
pub fn windows(case: &Case, strategy: Strategy, params: &PatchParams) -> Result<Vec<Window>> {
    Ok(match strategy {
        Strategy::Cca => vec![cca_window(case, params)?],
        Strategy::Tda2d => vec![tda2d_window(case, params)?],
        Strategy::CenteredCrop => vec![centered_window(case, params)?],
        Strategy::FixedQuadrant => quadrant_windows(case, params)?,
        Strategy::Random => vec![random_window(case, params.seed, strategy, params)?],
        Strategy::RandomSeeded => {
            vec![random_window(case, Some(params.seed.unwrap_or(DEFAULT_SEED)), strategy, params)?]
        }
        Strategy::Overlapping => overlapping_windows(case, params)?,
    })
}

pub fn extract_patches(case: &Case, strategy: Strategy, params: &PatchParams) -> Result<Vec<Patch>> {
    windows(case, strategy, params)?
        .into_iter()
        .map(|w| Patch::extract(case, w))
        .collect()
}

pub fn patch_cca_3d(case: &Case, params: &PatchParams) -> Result<Patch> {
    Patch::extract(case, cca_window(case, params)?)
}

pub fn patch_centered_crop(case: &Case, params: &PatchParams) -> Result<Patch> {
    Patch::extract(case, centered_window(case, params)?)
}

pub fn patch_fixed_quadrants(case: &Case, params: &PatchParams) -> Result<Vec<Patch>> {
    extract_patches(case, Strategy::FixedQuadrant, params)
}

pub fn patch_random(case: &Case, seed: Option<u64>, params: &PatchParams) -> Result<Patch> {
    let strategy = if seed.is_some() { Strategy::RandomSeeded } else { Strategy::Random };
    Patch::extract(case, random_window(case, seed, strategy, params)?)
}

pub fn patch_overlapping(case: &Case, params: &PatchParams) -> Result<Vec<Patch>> {
    extract_patches(case, Strategy::Overlapping, params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub window: Window,
    /// Output file per modality, relative to the manifest.
    pub files: BTreeMap<Modality, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_file: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchManifest {
    pub case_id: String,
    pub strategy: Strategy,
    pub params: PatchParams,
    pub patches: Vec<ManifestEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tumor_centroid: Option<[f64; 3]>,
}

/// Crop every window of `strategy` and write the patches plus a JSON
/// manifest under `out_dir/<case_id>/`. Returns the manifest path.
pub fn write_patch_set(
    case: &Case,
    strategy: Strategy,
    params: &PatchParams,
    out_dir: &Path,
    format: VolumeFormat,
) -> Result<PathBuf> {
    let id = case.case_id();
    let dir = out_dir.join(id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut entries = Vec::new();
    for window in windows(case, strategy, params)? {
        let stem = format!("{id}_{strategy}_{}", window.spec.index);
        let patch = Patch::extract(case, window)?;
        let mut files = BTreeMap::new();
        for (m, vol) in &patch.data {
            let name = format!("{stem}_{}.{}", m.name(), format.extension());
            save_volume(vol, &dir.join(&name), format)?;
            files.insert(*m, name);
        }
        let mask_file = match &patch.mask_crop {
            Some(mask) => {
                let name = format!("{stem}_seg.{}", format.extension());
                save_mask(mask, &dir.join(&name), format)?;
                Some(name)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            window: Window { spec: patch.spec, provenance: patch.provenance },
            files,
            mask_file,
        });
    }
    let tumor_centroid = match case.mask() {
        Some(m) => match metrics::tumor_centroid(m) {
            Ok(c) => Some(c),
            Err(Error::Empty(_)) => None,
            Err(e) => return Err(e),
        },
        None => None,
    };
    let manifest = PatchManifest {
        case_id: id.to_string(),
        strategy,
        params: params.clone(),
        patches: entries,
        tumor_centroid,
    };
    let path = dir.join(format!("{id}_{strategy}.json"));
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    write_atomic(&path, &bytes)?;
    Ok(path)
}
