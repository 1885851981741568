//! Command-line surface and its translation into validated run settings.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use tumorpatch::cca::{CentroidMode, DEFAULT_MIN_VOXELS};
use tumorpatch::evaluation::{CorpusParams, Placement, DETECTABLE_CONTRAST};
use tumorpatch::patching::{PatchParams, Strategy, DEFAULT_STRIDE, PATCH_SIZE};
use tumorpatch::preprocess::RoiParams;
use tumorpatch::{Connectivity, Error, Result, Shape, VolumeFormat};

pub const OUTPUT_ENV: &str = "TUMORPATCH_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "tumorpatch", version, about = "Tumor-centered patch extraction for 3D brain MRI")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write patches and a JSON manifest for every case under INPUT.
    Extract(ExtractArgs),
    /// Compare patching strategies against ground-truth masks.
    Evaluate(EvaluateArgs),
    /// Write a synthetic phantom corpus.
    Phantom(PhantomArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Nifti,
    RawF32,
}

impl From<FormatArg> for VolumeFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Nifti => VolumeFormat::Nifti,
            FormatArg::RawF32 => VolumeFormat::RawF32,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum CentroidArg {
    Union,
    Largest,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PlacementArg {
    Interior,
    Anywhere,
}

/// Patch and ROI parameters shared by `extract` and `evaluate`.
#[derive(Debug, Args)]
pub struct PatchArgs {
    /// JSON file with patch parameters; unknown keys are rejected. Cannot be
    /// combined with the individual parameter flags.
    #[arg(long, conflicts_with_all = [
        "size", "min_voxels", "stride", "connectivity", "centroid",
        "yen_levels", "sigma", "blur_radius", "se_radius", "bins",
    ])]
    pub config: Option<PathBuf>,
    /// Patch side in voxels.
    #[arg(long, default_value_t = PATCH_SIZE)]
    pub size: usize,
    /// Smallest ROI component kept by the CCA pipeline.
    #[arg(long, default_value_t = DEFAULT_MIN_VOXELS)]
    pub min_voxels: usize,
    /// Stride of the overlapping tiling.
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    pub stride: usize,
    /// Voxel adjacency: 6, 18 or 26 for volumes, 4 or 8 for slices [default: 26 for volumes, 8 for slices].
    #[arg(long)]
    pub connectivity: Option<u32>,
    /// Which components the CCA anchor averages over.
    #[arg(long, value_enum, default_value = "union")]
    pub centroid: CentroidArg,
    /// Number of Yen thresholds; the ROI is the top class.
    #[arg(long, default_value_t = RoiParams::default().yen_levels)]
    pub yen_levels: usize,
    /// Gaussian blur standard deviation in voxels.
    #[arg(long, default_value_t = RoiParams::default().sigma)]
    pub sigma: f64,
    /// Gaussian kernel half-width in voxels.
    #[arg(long, default_value_t = RoiParams::default().blur_radius)]
    pub blur_radius: usize,
    /// Structuring-element radius of the opening/closing.
    #[arg(long, default_value_t = RoiParams::default().se_radius)]
    pub se_radius: usize,
    /// Histogram bins for thresholding.
    #[arg(long, default_value_t = RoiParams::default().bins)]
    pub bins: usize,
}

impl PatchArgs {
    pub fn params(&self, seed: Option<u64>) -> Result<PatchParams> {
        let mut params = match &self.config {
            Some(path) => read_params(path)?,
            None => PatchParams {
                size: self.size,
                min_voxels: self.min_voxels,
                connectivity: self.connectivity.map(Connectivity::from_count).transpose()?,
                centroid_mode: match self.centroid {
                    CentroidArg::Union => CentroidMode::Union,
                    CentroidArg::Largest => CentroidMode::Largest,
                },
                roi: RoiParams {
                    sigma: self.sigma,
                    blur_radius: self.blur_radius,
                    yen_levels: self.yen_levels,
                    se_radius: self.se_radius,
                    bins: self.bins,
                },
                seed: None,
                stride: self.stride,
            },
        };
        if seed.is_some() {
            params.seed = seed;
        }
        params.validate()?;
        Ok(params)
    }
}

fn read_params(path: &Path) -> Result<PatchParams> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidParameter(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))
}

fn parse_shape(s: &str) -> std::result::Result<Shape, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    <[usize; 3]>::try_from(parts).map_err(|_| "expected three comma-separated extents".to_string())
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected MIN,MAX")?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    Ok((lo, hi))
}

/// Phantom corpus geometry shared by `evaluate` and `phantom`.
#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Volume extents X,Y,Z.
    #[arg(long, value_parser = parse_shape, default_value = "240,240,155")]
    pub shape: Shape,
    /// Tumor contrast in noise standard deviations.
    #[arg(long, default_value_t = DETECTABLE_CONTRAST)]
    pub contrast: f64,
    /// Background noise standard deviation.
    #[arg(long, default_value_t = 1.0)]
    pub noise_sigma: f64,
    /// Range MIN,MAX the tumor semi-axes are drawn from.
    #[arg(long, value_parser = parse_range, default_value = "12,30")]
    pub semi_axes: (f64, f64),
    /// `interior` keeps the tumor centre 64 voxels from every face.
    #[arg(long, value_enum, default_value = "interior")]
    pub placement: PlacementArg,
}

impl CorpusArgs {
    pub fn params(&self) -> CorpusParams {
        CorpusParams {
            shape: self.shape,
            contrast: self.contrast,
            noise_sigma: self.noise_sigma,
            semi_axis_range: self.semi_axes,
            placement: match self.placement {
                PlacementArg::Interior => Placement::Interior,
                PlacementArg::Anywhere => Placement::Anywhere,
            },
            ..CorpusParams::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// A case directory or a directory of case directories.
    pub input: PathBuf,
    /// Output directory.
    #[arg(env = OUTPUT_ENV)]
    pub output: PathBuf,
    /// One of cca, tda2d, centered_crop, fixed_quadrant, random, random_seeded, overlapping.
    #[arg(long, default_value = "cca", value_parser = parse_strategy)]
    pub strategy: Strategy,
    /// Seed for the random strategies [default: derived from the case id; 42 for random_seeded].
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub patch: PatchArgs,
    #[arg(long, value_enum, default_value = "nifti")]
    pub format: FormatArg,
    /// Also write the ROI stages (and the CCA component table) under `<case>/debug/`.
    #[arg(long)]
    pub debug_dump: bool,
    /// Worker threads [default: all cores].
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Output directory for the reports.
    #[arg(env = OUTPUT_ENV)]
    pub output: PathBuf,
    /// Comma-separated strategies.
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy,
          default_value = "cca,tda2d,centered_crop,fixed_quadrant,random,random_seeded,overlapping")]
    pub strategies: Vec<Strategy>,
    /// Evaluate case directories under this path instead of phantoms (repeatable).
    #[arg(long = "input", conflicts_with = "phantoms")]
    pub inputs: Vec<PathBuf>,
    /// Number of phantoms to generate when no input is given.
    #[arg(long, default_value_t = 50)]
    pub phantoms: usize,
    /// Phantom corpus seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed passed to the random strategies [default: derived from the case id; 42 for random_seeded].
    #[arg(long)]
    pub patch_seed: Option<u64>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub patch: PatchArgs,
    /// Leave wall time out of the reports so reruns are byte-identical.
    #[arg(long)]
    pub no_timing: bool,
    /// Worker threads [default: all cores].
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Output directory.
    #[arg(env = OUTPUT_ENV)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, value_enum, default_value = "nifti")]
    pub format: FormatArg,
}

/// Validated settings of an `extract` run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    pub strategy: Strategy,
    pub params: PatchParams,
    pub format: VolumeFormat,
    pub debug_dump: bool,
    pub jobs: Option<usize>,
}

impl ExtractArgs {
    pub fn config(&self) -> Result<RunConfig> {
        check_jobs(self.jobs)?;
        if !self.input.is_dir() {
            return Err(Error::InvalidParameter(format!("input {} is not a directory", self.input.display())));
        }
        Ok(RunConfig {
            input: self.input.clone(),
            output: self.output.clone(),
            strategy: self.strategy,
            params: self.patch.params(self.seed)?,
            format: self.format.into(),
            debug_dump: self.debug_dump,
            jobs: self.jobs,
        })
    }
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.trim().parse().map_err(|e: Error| e.to_string())
}

pub fn check_jobs(jobs: Option<usize>) -> Result<()> {
    if jobs == Some(0) {
        return Err(Error::InvalidParameter("--jobs must be at least 1".into()));
    }
    Ok(())
}
