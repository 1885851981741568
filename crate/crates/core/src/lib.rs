//! Tumor-centered patch extraction for 3D brain MRI.
//!
//! The crate covers the whole patching pipeline: volume I/O, intensity
//! normalisation and ROI extraction, 0-dimensional cubical persistence,
//! connected-component analysis, the CCA/TDA patch generators and the
//! baseline patchings they are compared against, patch-quality metrics, and a
//! phantom-driven evaluation harness.

pub mod cca;
pub mod error;
pub mod evaluation;
pub mod grid;
pub mod homology;
pub mod metrics;
pub mod patching;
pub mod preprocess;
pub mod rng;
mod union_find;
pub mod volume_io;

pub use error::{Error, Result};
pub use grid::{BinaryMask, Connectivity, Grid, Shape, Slice2D, Volume3D};
pub use volume_io::{Case, Modality, Region, SegMask3D, VolumeFormat};
