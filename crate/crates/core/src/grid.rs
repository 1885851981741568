//! Dense 2D/3D grids shared by every stage of the pipeline.
//!
//! A grid is stored x-fastest (`x + nx * (y + ny * z)`), the same layout as
//! NIfTI, so axis 0 is sagittal, axis 1 coronal and axis 2 axial. A 2D image
//! is a grid with `nz == 1`.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Shape = [usize; 3];

/// Dense scalar grid.
#[derive(Clone, PartialEq)]
pub struct Grid<T> {
    shape: Shape,
    data: Vec<T>,
}

/// Intensity volume (the unit of ingestion).
pub type Volume3D = Grid<f64>;
/// Single axial plane; a grid with depth 1.
pub type Slice2D = Grid<f64>;
/// Boolean mask over a 2D or 3D grid.
pub type BinaryMask = Grid<bool>;

pub(crate) fn shape_len(shape: Shape) -> usize {
    shape[0] * shape[1] * shape[2]
}

pub(crate) fn fmt_shape(shape: Shape) -> String {
    format!("({}, {}, {})", shape[0], shape[1], shape[2])
}

impl<T> Grid<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&n| n == 0) {
            return Err(Error::InvalidParameter(format!(
                "grid shape {} has a zero extent",
                fmt_shape(shape)
            )));
        }
        if data.len() != shape_len(shape) {
            return Err(Error::ShapeMismatch {
                expected: format!("{} voxels for shape {}", shape_len(shape), fmt_shape(shape)),
                found: format!("{} voxels", data.len()),
            });
        }
        Ok(Grid { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(Shape) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(shape_len(shape));
        for z in 0..shape[2] {
            for y in 0..shape[1] {
                for x in 0..shape[0] {
                    data.push(f([x, y, z]));
                }
            }
        }
        Self::from_vec(shape, data)
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_2d(&self) -> bool {
        self.shape[2] == 1
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn flat_index(&self, p: Shape) -> usize {
        p[0] + self.shape[0] * (p[1] + self.shape[1] * p[2])
    }

    #[inline]
    pub fn coords(&self, index: usize) -> Shape {
        let nx = self.shape[0];
        let ny = self.shape[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    pub fn contains(&self, p: Shape) -> bool {
        p.iter().zip(self.shape.iter()).all(|(&c, &n)| c < n)
    }

    pub fn get(&self, p: Shape) -> Option<&T> {
        if self.contains(p) {
            Some(&self.data[self.flat_index(p)])
        } else {
            None
        }
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            shape: self.shape,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Same-shape check used by every binary operation.
    pub fn ensure_same_shape<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: fmt_shape(self.shape),
                found: fmt_shape(other.shape),
            });
        }
        Ok(())
    }
}

impl<T: Clone> Grid<T> {
    pub fn filled(shape: Shape, value: T) -> Result<Self> {
        Self::from_vec(shape, vec![value; shape_len(shape)])
    }

    /// Copy out the window `[origin, origin + size)`.
    pub fn crop(&self, origin: Shape, size: Shape) -> Result<Self> {
        for axis in 0..3 {
            if size[axis] == 0 || origin[axis] + size[axis] > self.shape[axis] {
                return Err(Error::OutOfRange {
                    what: "crop window end",
                    index: origin[axis] + size[axis],
                    bound: self.shape[axis],
                });
            }
        }
        let mut data = Vec::with_capacity(shape_len(size));
        for z in origin[2]..origin[2] + size[2] {
            for y in origin[1]..origin[1] + size[1] {
                let start = self.flat_index([origin[0], y, z]);
                data.extend_from_slice(&self.data[start..start + size[0]]);
            }
        }
        Ok(Grid { shape: size, data })
    }
}

impl Grid<f64> {
    /// First flat index holding NaN or an infinity.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

impl Grid<bool> {
    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

impl<T> Index<Shape> for Grid<T> {
    type Output = T;

    fn index(&self, p: Shape) -> &T {
        &self.data[self.flat_index(p)]
    }
}

impl<T> IndexMut<Shape> for Grid<T> {
    fn index_mut(&mut self, p: Shape) -> &mut T {
        let i = self.flat_index(p);
        &mut self.data[i]
    }
}

impl<T> fmt::Debug for Grid<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

/// Voxel adjacency. `Four`/`Eight` are the planar variants and only apply to
/// grids with depth 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Connectivity {
    Four,
    Eight,
    Six,
    Eighteen,
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            _ => Err(Error::InvalidParameter(format!(
                "connectivity must be one of 4, 8, 6, 18, 26 (got {n})"
            ))),
        }
    }

    pub fn count(self) -> u32 {
        match self {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }

    /// The natural default for a grid: 8 in the plane, 26 in a volume.
    pub fn default_for(shape: Shape) -> Self {
        if shape[2] == 1 {
            Connectivity::Eight
        } else {
            Connectivity::TwentySix
        }
    }

    fn max_changed_axes(self) -> usize {
        match self {
            Connectivity::Four | Connectivity::Six => 1,
            Connectivity::Eight | Connectivity::Eighteen => 2,
            Connectivity::TwentySix => 3,
        }
    }

    /// Neighbour offsets valid for `shape`.
    pub fn offsets(self, shape: Shape) -> Result<Vec<[isize; 3]>> {
        let planar = matches!(self, Connectivity::Four | Connectivity::Eight);
        if planar && shape[2] != 1 {
            return Err(Error::InvalidParameter(format!(
                "{}-connectivity is planar but the grid is {}",
                self.count(),
                fmt_shape(shape)
            )));
        }
        let limit = self.max_changed_axes();
        let mut out = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let changed = [dx, dy, dz].iter().filter(|&&d| d != 0).count();
                    if changed == 0 || changed > limit {
                        continue;
                    }
                    if shape[2] == 1 && dz != 0 {
                        continue;
                    }
                    out.push([dx, dy, dz]);
                }
            }
        }
        Ok(out)
    }
}

impl TryFrom<u32> for Connectivity {
    type Error = Error;

    fn try_from(n: u32) -> Result<Self> {
        Connectivity::from_count(n)
    }
}

impl From<Connectivity> for u32 {
    fn from(c: Connectivity) -> u32 {
        c.count()
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.count())
    }
}

#[inline]
pub(crate) fn offset_point(p: Shape, d: [isize; 3], shape: Shape) -> Option<Shape> {
    let mut q = [0usize; 3];
    for axis in 0..3 {
        let c = p[axis] as isize + d[axis];
        if c < 0 || c >= shape[axis] as isize {
            return None;
        }
        q[axis] = c as usize;
    }
    Some(q)
}
