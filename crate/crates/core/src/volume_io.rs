//! Loading and saving of scans and segmentation masks.
//!
//! Two on-disk formats are supported:
//!
//! * NIfTI-1 single file, plain (`.nii`) or gzip-compressed (`.nii.gz`).
//!   `scl_slope`/`scl_inter` are applied on load; the affine is ignored.
//! * raw-f32: little-endian `f32` samples, x fastest, next to a 5-line text
//!   sidecar with the same stem and a `.hdr` extension:
//!
//!   ```text
//!   RAWF32
//!   <nx>
//!   <ny>
//!   <nz>
//!   f32
//!   ```
//!
//! Volumes are held as `f64` in memory. Saving to either format stores `f32`,
//! so a round trip is exact for every value representable in `f32`, which
//! includes everything read from disk.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array3, ShapeBuilder};
use nifti::{IntoNdArray, NiftiObject, ReaderOptions};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{fmt_shape, BinaryMask, Grid, Shape, Slice2D, Volume3D};

pub const RAW_MAGIC: &str = "RAWF32";
pub const RAW_DTYPE: &str = "f32";

/// Legal BraTS label values.
pub const LABELS: [u8; 4] = [0, 1, 2, 4];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VolumeFormat {
    Nifti,
    RawF32,
}

impl VolumeFormat {
    /// Guess the format from a file name (`.nii`, `.nii.gz`, `.raw`).
    pub fn from_path(path: &Path) -> Option<Self> {
        let name = path.file_name()?.to_str()?;
        if name.ends_with(".nii") || name.ends_with(".nii.gz") {
            Some(VolumeFormat::Nifti)
        } else if name.ends_with(".raw") {
            Some(VolumeFormat::RawF32)
        } else {
            None
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            VolumeFormat::Nifti => "nii.gz",
            VolumeFormat::RawF32 => "raw",
        }
    }
}

impl FromStr for VolumeFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nifti" => Ok(VolumeFormat::Nifti),
            "raw-f32" | "raw" => Ok(VolumeFormat::RawF32),
            other => Err(Error::InvalidParameter(format!(
                "unknown volume format `{other}` (expected nifti or raw-f32)"
            ))),
        }
    }
}

impl fmt::Display for VolumeFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VolumeFormat::Nifti => "nifti",
            VolumeFormat::RawF32 => "raw-f32",
        })
    }
}

/// BraTS evaluation regions over the label set {0, 1, 2, 4}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    WholeTumor,
    TumorCore,
    Enhancing,
    Edema,
    Necrosis,
}

impl Region {
    pub const ALL: [Region; 5] = [
        Region::WholeTumor,
        Region::TumorCore,
        Region::Enhancing,
        Region::Edema,
        Region::Necrosis,
    ];

    pub fn contains(self, label: u8) -> bool {
        match self {
            Region::WholeTumor => matches!(label, 1 | 2 | 4),
            Region::TumorCore => matches!(label, 1 | 4),
            Region::Enhancing => label == 4,
            Region::Edema => label == 2,
            Region::Necrosis => label == 1,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Region::WholeTumor => "wt",
            Region::TumorCore => "tc",
            Region::Enhancing => "et",
            Region::Edema => "edema",
            Region::Necrosis => "necrosis",
        }
    }
}

/// Segmentation mask with labels restricted to {0, 1, 2, 4}.
#[derive(Clone, Debug, PartialEq)]
pub struct SegMask3D(Grid<u8>);

impl SegMask3D {
    pub fn new(labels: Grid<u8>) -> Result<Self> {
        if let Some(index) = labels.data().iter().position(|l| !LABELS.contains(l)) {
            return Err(Error::InvalidLabel {
                index,
                value: labels.data()[index] as f64,
            });
        }
        Ok(SegMask3D(labels))
    }

    /// Convert a float grid (as stored on disk) into labels.
    pub fn from_values(values: &Grid<f64>) -> Result<Self> {
        let mut out = Vec::with_capacity(values.len());
        for (index, &v) in values.data().iter().enumerate() {
            let label = v.round();
            if (v - label).abs() > 1e-6 || !LABELS.contains(&(label as u8)) || label < 0.0 {
                return Err(Error::InvalidLabel { index, value: v });
            }
            out.push(label as u8);
        }
        Ok(SegMask3D(Grid::from_vec(values.shape(), out)?))
    }

    pub fn labels(&self) -> &Grid<u8> {
        &self.0
    }

    pub fn shape(&self) -> Shape {
        self.0.shape()
    }

    pub fn region(&self, region: Region) -> BinaryMask {
        self.0.map(|&l| region.contains(l))
    }

    pub fn whole_tumor(&self) -> BinaryMask {
        self.region(Region::WholeTumor)
    }

    pub fn crop(&self, origin: Shape, size: Shape) -> Result<Self> {
        Ok(SegMask3D(self.0.crop(origin, size)?))
    }

    pub fn to_values(&self) -> Grid<f64> {
        self.0.map(|&l| l as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    T1,
    T1gd,
    T2,
    Flair,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::T1, Modality::T1gd, Modality::T2, Modality::Flair];

    pub fn name(self) -> &'static str {
        match self {
            Modality::T1 => "t1",
            Modality::T1gd => "t1gd",
            Modality::T2 => "t2",
            Modality::Flair => "flair",
        }
    }

    /// File-name suffixes accepted on disk; BraTS spells T1-Gd as `t1ce`.
    pub fn file_suffixes(self) -> &'static [&'static str] {
        match self {
            Modality::T1 => &["t1"],
            Modality::T1gd => &["t1ce", "t1gd"],
            Modality::T2 => &["t2"],
            Modality::Flair => &["flair"],
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One subject: up to four co-registered modalities plus an optional mask.
#[derive(Clone, Debug)]
pub struct Case {
    case_id: String,
    modalities: BTreeMap<Modality, Volume3D>,
    mask: Option<SegMask3D>,
}

impl Case {
    pub fn new(
        case_id: impl Into<String>,
        modalities: BTreeMap<Modality, Volume3D>,
        mask: Option<SegMask3D>,
    ) -> Result<Self> {
        let case_id = case_id.into();
        let mut shape: Option<Shape> = None;
        let shapes = modalities
            .values()
            .map(|v| v.shape())
            .chain(mask.iter().map(|m| m.shape()));
        for s in shapes {
            match shape {
                None => shape = Some(s),
                Some(expected) if expected != s => {
                    return Err(Error::ShapeMismatch {
                        expected: fmt_shape(expected),
                        found: format!("{} in case {case_id}", fmt_shape(s)),
                    })
                }
                Some(_) => {}
            }
        }
        if shape.is_none() {
            return Err(Error::Empty(format!("case {case_id} has no volumes")));
        }
        Ok(Case {
            case_id,
            modalities,
            mask,
        })
    }

    /// Single-modality case, the common shape for phantoms.
    pub fn from_flair(
        case_id: impl Into<String>,
        flair: Volume3D,
        mask: Option<SegMask3D>,
    ) -> Result<Self> {
        let mut m = BTreeMap::new();
        m.insert(Modality::Flair, flair);
        Case::new(case_id, m, mask)
    }

    pub fn case_id(&self) -> &str {
        &self.case_id
    }

    pub fn shape(&self) -> Shape {
        self.modalities
            .values()
            .next()
            .map(|v| v.shape())
            .or_else(|| self.mask.as_ref().map(|m| m.shape()))
            .expect("case holds at least one grid")
    }

    pub fn modalities(&self) -> &BTreeMap<Modality, Volume3D> {
        &self.modalities
    }

    pub fn modality(&self, m: Modality) -> Option<&Volume3D> {
        self.modalities.get(&m)
    }

    pub fn flair(&self) -> Result<&Volume3D> {
        self.modality(Modality::Flair)
            .ok_or_else(|| Error::MissingModality {
                case: self.case_id.clone(),
                modality: Modality::Flair.to_string(),
            })
    }

    pub fn mask(&self) -> Option<&SegMask3D> {
        self.mask.as_ref()
    }
}

/// Sidecar header path for a raw-f32 data file.
pub fn raw_header_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("hdr")
}

fn check_finite(vol: Volume3D) -> Result<Volume3D> {
    match vol.first_non_finite() {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(vol),
    }
}

pub fn load_volume(path: &Path, format: VolumeFormat) -> Result<Volume3D> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let vol = match format {
        VolumeFormat::RawF32 => load_raw(path)?,
        VolumeFormat::Nifti => load_nifti(path)?,
    };
    check_finite(vol)
}

fn parse_raw_header(path: &Path) -> Result<Shape> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Header {
        path: path.to_path_buf(),
        reason,
    };
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if lines.len() != 5 {
        return Err(bad(format!("expected 5 lines, found {}", lines.len())));
    }
    if lines[0] != RAW_MAGIC {
        return Err(bad(format!("bad magic `{}`", lines[0])));
    }
    let mut shape = [0usize; 3];
    for (axis, line) in lines[1..4].iter().enumerate() {
        shape[axis] = line
            .parse()
            .map_err(|_| bad(format!("axis {axis} extent `{line}` is not an integer")))?;
        if shape[axis] == 0 {
            return Err(bad(format!("axis {axis} extent is zero")));
        }
    }
    if lines[4] != RAW_DTYPE {
        return Err(bad(format!("unsupported dtype `{}`", lines[4])));
    }
    Ok(shape)
}

fn load_raw(path: &Path) -> Result<Volume3D> {
    let shape = parse_raw_header(&raw_header_path(path))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::ShapeMismatch {
            expected: format!("a multiple of 4 bytes for shape {}", fmt_shape(shape)),
            found: format!("{} bytes", bytes.len()),
        });
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Grid::from_vec(shape, data)
}

fn load_nifti(path: &Path) -> Result<Volume3D> {
    let obj = ReaderOptions::new()
        .read_file(path)
        .map_err(|e| Error::Nifti(format!("{}: {e}", path.display())))?;
    let arr = obj
        .into_volume()
        .into_ndarray::<f64>()
        .map_err(|e| Error::Nifti(format!("{}: {e}", path.display())))?;
    let dims = arr.shape().to_vec();
    if dims.is_empty() || dims.len() > 3 && dims[3..].iter().any(|&d| d != 1) {
        return Err(Error::Nifti(format!(
            "{}: expected a 2D or 3D volume, got dims {dims:?}",
            path.display()
        )));
    }
    let mut shape = [1usize; 3];
    for (axis, &d) in dims.iter().take(3).enumerate() {
        shape[axis] = d;
    }
    // Reversed axes iterate with x fastest.
    let data: Vec<f64> = arr.t().iter().copied().collect();
    Grid::from_vec(shape, data)
}

pub fn save_volume(vol: &Volume3D, path: &Path, format: VolumeFormat) -> Result<()> {
    match format {
        VolumeFormat::RawF32 => {
            let mut bytes = Vec::with_capacity(vol.len() * 4);
            for &v in vol.data() {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
            let s = vol.shape();
            let header = format!("{RAW_MAGIC}\n{}\n{}\n{}\n{RAW_DTYPE}\n", s[0], s[1], s[2]);
            write_atomic(&raw_header_path(path), header.as_bytes())?;
            write_atomic(path, &bytes)
        }
        VolumeFormat::Nifti => save_nifti(vol, path),
    }
}

fn save_nifti(vol: &Volume3D, path: &Path) -> Result<()> {
    let s = vol.shape();
    let data: Vec<f32> = vol.data().iter().map(|&v| v as f32).collect();
    let arr = Array3::from_shape_vec((s[0], s[1], s[2]).f(), data)
        .map_err(|e| Error::Nifti(e.to_string()))?;
    let dir = parent_dir(path);
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("volume.nii");
    let suffix = if name.ends_with(".gz") { ".nii.gz" } else { ".nii" };
    let tmp = tempfile::Builder::new()
        .prefix(".tmp-")
        .suffix(suffix)
        .tempfile_in(dir)
        .map_err(|e| Error::io(dir, e))?;
    nifti::writer::WriterOptions::new(tmp.path())
        .write_nifti(&arr)
        .map_err(|e| match e {
            nifti::NiftiError::Io(io) => Error::io(path, io),
            other => Error::Nifti(format!("{}: {other}", path.display())),
        })?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn load_mask(path: &Path, format: VolumeFormat) -> Result<SegMask3D> {
    SegMask3D::from_values(&load_volume(path, format)?)
}

pub fn save_mask(mask: &SegMask3D, path: &Path, format: VolumeFormat) -> Result<()> {
    save_volume(&mask.to_values(), path, format)
}

fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

/// Write through a temporary file in the target directory, then rename, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = parent_dir(path);
    let mut tmp = tempfile::Builder::new()
        .prefix(".tmp-")
        .tempfile_in(dir)
        .map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// The axial plane `z = k` as a depth-1 grid.
pub fn axial_slice(vol: &Volume3D, k: usize) -> Result<Slice2D> {
    let s = vol.shape();
    if k >= s[2] {
        return Err(Error::OutOfRange {
            what: "axial slice",
            index: k,
            bound: s[2],
        });
    }
    vol.crop([0, 0, k], [s[0], s[1], 1])
}

/// Locate `<dir>/<case>_<suffix>.<ext>` for any known extension.
fn find_case_file(dir: &Path, case_id: &str, suffixes: &[&str]) -> Option<(PathBuf, VolumeFormat)> {
    for suffix in suffixes {
        for ext in ["nii.gz", "nii", "raw"] {
            let p = dir.join(format!("{case_id}_{suffix}.{ext}"));
            if p.is_file() {
                let fmt = VolumeFormat::from_path(&p)?;
                return Some((p, fmt));
            }
        }
    }
    None
}

/// Load a case directory laid out BraTS-style:
/// `<dir>/<case>_<modality>.{nii.gz,nii,raw}` and `<dir>/<case>_seg.*`,
/// where `<case>` is the directory name.
pub fn load_case_dir(dir: &Path) -> Result<Case> {
    let case_id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::InvalidParameter(format!("bad case directory {}", dir.display())))?
        .to_string();
    let mut modalities = BTreeMap::new();
    for m in Modality::ALL {
        if let Some((p, fmt)) = find_case_file(dir, &case_id, m.file_suffixes()) {
            modalities.insert(m, load_volume(&p, fmt)?);
        }
    }
    let mask = match find_case_file(dir, &case_id, &["seg"]) {
        Some((p, fmt)) => Some(load_mask(&p, fmt)?),
        None => None,
    };
    Case::new(case_id, modalities, mask)
}

/// Write a case in the layout read by [`load_case_dir`].
pub fn save_case_dir(case: &Case, root: &Path, format: VolumeFormat) -> Result<PathBuf> {
    let dir = root.join(case.case_id());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let ext = format.extension();
    for (m, vol) in case.modalities() {
        save_volume(vol, &dir.join(format!("{}_{m}.{ext}", case.case_id())), format)?;
    }
    if let Some(mask) = case.mask() {
        save_mask(mask, &dir.join(format!("{}_seg.{ext}", case.case_id())), format)?;
    }
    Ok(dir)
}
