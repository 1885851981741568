//! Corpus-level comparison of patching strategies against ground truth.
//!
//! Every window a strategy places is scored against the case's label mask:
//! per-region recall and Dice (treating the window as the prediction),
//! sensitivity and specificity of the window as a whole-tumor detector,
//! tumor fraction and distance from the tumor centroid. Cases are processed
//! in parallel and reduced in `case_id` order, so reports do not depend on
//! the number of workers.

mod phantom;
mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Shape;
use crate::metrics::{self, ConfusionCounts, DICE_EPS};
use crate::patching::{windows, PatchParams, PatchSpec, Strategy};
use crate::volume_io::{load_case_dir, Case, Region, SegMask3D};

pub use phantom::{
    generate_phantom, write_phantom, CorpusParams, Phantom, PhantomCorpus, PhantomManifest, PhantomParams,
    Placement, BRATS_SHAPE, DETECTABLE_CONTRAST,
};
pub use report::{read_case_rows, write_reports, CaseRow};

/// Anything that can hand out cases by index.
pub trait CaseSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn case_id(&self, i: usize) -> String;

    fn load(&self, i: usize) -> Result<Case>;
}

impl CaseSource for PhantomCorpus {
    fn len(&self) -> usize {
        self.count
    }

    fn case_id(&self, i: usize) -> String {
        PhantomCorpus::case_id(self, i)
    }

    fn load(&self, i: usize) -> Result<Case> {
        self.phantom(i)?.into_case(self.case_id(i))
    }
}

impl CaseSource for [Case] {
    fn len(&self) -> usize {
        <[Case]>::len(self)
    }

    fn case_id(&self, i: usize) -> String {
        self[i].case_id().to_string()
    }

    fn load(&self, i: usize) -> Result<Case> {
        Ok(self[i].clone())
    }
}

/// BraTS-style case directories, loaded lazily.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseDirs(pub Vec<PathBuf>);

impl CaseDirs {
    /// Every subdirectory of `root` in name order, or `root` itself when it
    /// has no subdirectories.
    pub fn scan(root: &Path) -> Result<Self> {
        let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
        let mut dirs = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(root, e))?.path();
            if path.is_dir() {
                dirs.push(path);
            }
        }
        dirs.sort();
        if dirs.is_empty() {
            dirs.push(root.to_path_buf());
        }
        Ok(CaseDirs(dirs))
    }
}

impl CaseSource for CaseDirs {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn case_id(&self, i: usize) -> String {
        self.0[i]
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.0[i].display().to_string())
    }

    fn load(&self, i: usize) -> Result<Case> {
        load_case_dir(&self.0[i])
    }
}

/// One value per evaluation region.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerRegion<T> {
    pub wt: T,
    pub tc: T,
    pub et: T,
    pub edema: T,
    pub necrosis: T,
}

impl<T: Copy> PerRegion<T> {
    pub fn from_fn(mut f: impl FnMut(Region) -> T) -> Self {
        PerRegion {
            wt: f(Region::WholeTumor),
            tc: f(Region::TumorCore),
            et: f(Region::Enhancing),
            edema: f(Region::Edema),
            necrosis: f(Region::Necrosis),
        }
    }

    pub fn get(&self, r: Region) -> T {
        match r {
            Region::WholeTumor => self.wt,
            Region::TumorCore => self.tc,
            Region::Enhancing => self.et,
            Region::Edema => self.edema,
            Region::Necrosis => self.necrosis,
        }
    }
}

/// Voxel counts for the labels 0, 1, 2 and 4.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    #[serde(rename = "0")]
    pub background: u64,
    #[serde(rename = "1")]
    pub necrosis: u64,
    #[serde(rename = "2")]
    pub edema: u64,
    #[serde(rename = "4")]
    pub enhancing: u64,
}

impl LabelCounts {
    pub fn of(mask: &SegMask3D) -> Self {
        let mut c = LabelCounts::default();
        for &l in mask.labels().data() {
            c.add(l, 1);
        }
        c
    }

    fn add(&mut self, label: u8, n: u64) {
        match label {
            0 => self.background += n,
            1 => self.necrosis += n,
            2 => self.edema += n,
            4 => self.enhancing += n,
            _ => unreachable!("SegMask3D holds only BraTS labels"),
        }
    }

    pub fn total(&self) -> u64 {
        self.background + self.tumor()
    }

    pub fn tumor(&self) -> u64 {
        self.necrosis + self.edema + self.enhancing
    }

    pub fn region(&self, r: Region) -> u64 {
        [(1, self.necrosis), (2, self.edema), (4, self.enhancing)]
            .iter()
            .filter(|(l, _)| r.contains(*l))
            .map(|(_, n)| n)
            .sum()
    }

    pub fn tumor_fraction(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.tumor() as f64 / self.total() as f64
        }
    }

    /// Tumor voxels per background voxel; `None` without background.
    pub fn tumor_to_background(&self) -> Option<f64> {
        (self.background > 0).then(|| self.tumor() as f64 / self.background as f64)
    }

    fn merge(&mut self, other: &LabelCounts) {
        self.background += other.background;
        self.necrosis += other.necrosis;
        self.edema += other.edema;
        self.enhancing += other.enhancing;
    }
}

/// Ground truth of one case, reduced to what window scoring needs.
#[derive(Clone, Debug)]
pub struct Truth {
    shape: Shape,
    tumor: Vec<(Shape, u8)>,
    counts: LabelCounts,
    centroid: Option<[f64; 3]>,
}

impl Truth {
    pub fn new(mask: &SegMask3D) -> Result<Self> {
        let labels = mask.labels();
        let tumor: Vec<(Shape, u8)> = labels
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != 0)
            .map(|(i, &l)| (labels.coords(i), l))
            .collect();
        let centroid = match metrics::tumor_centroid(mask) {
            Ok(c) => Some(c),
            Err(Error::Empty(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Truth { shape: mask.shape(), tumor, counts: LabelCounts::of(mask), centroid })
    }

    pub fn counts(&self) -> LabelCounts {
        self.counts
    }

    pub fn centroid(&self) -> Option<[f64; 3]> {
        self.centroid
    }

    pub fn evaluate(&self, spec: &PatchSpec) -> Result<PatchEvaluation> {
        for a in 0..3 {
            if spec.origin[a] + spec.size[a] > self.shape[a] {
                return Err(Error::OutOfRange {
                    what: "evaluated window end",
                    index: spec.origin[a] + spec.size[a],
                    bound: self.shape[a],
                });
            }
        }
        let volume = spec.voxel_count() as u64;
        let mut inside = LabelCounts::default();
        for &(p, l) in &self.tumor {
            if spec.contains(p) {
                inside.add(l, 1);
            }
        }
        inside.background = volume - inside.tumor();
        let recall = PerRegion::from_fn(|r| {
            let total = self.counts.region(r);
            (total > 0).then(|| inside.region(r) as f64 / total as f64)
        });
        let dice = PerRegion::from_fn(|r| {
            let total = self.counts.region(r);
            (total > 0).then(|| {
                (2.0 * inside.region(r) as f64 + DICE_EPS) / ((volume + total) as f64 + DICE_EPS)
            })
        });
        let tp = inside.tumor();
        let confusion = ConfusionCounts {
            tp,
            fp: volume - tp,
            fn_: self.counts.tumor() - tp,
            tn: self.counts.background - (volume - tp),
        };
        Ok(PatchEvaluation {
            case_id: spec.case_id.clone(),
            strategy: spec.strategy,
            index: spec.index,
            origin: spec.origin,
            size: spec.size,
            counts: inside,
            recall,
            dice,
            sensitivity: defined(metrics::sensitivity(&confusion))?,
            specificity: defined(metrics::specificity(&confusion))?,
            tumor_fraction: inside.tumor_fraction(),
            center_distance: self.centroid.map(|c| {
                let m = spec.center();
                (0..3).map(|a| (c[a] - m[a]).powi(2)).sum::<f64>().sqrt()
            }),
        })
    }
}

fn defined(v: Result<f64>) -> Result<Option<f64>> {
    match v {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Scores of one window against the case's ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchEvaluation {
    pub case_id: String,
    pub strategy: Strategy,
    pub index: usize,
    pub origin: Shape,
    pub size: Shape,
    /// Label counts inside the window.
    pub counts: LabelCounts,
    /// Share of each region's voxels inside the window; `None` if the case lacks the region.
    pub recall: PerRegion<Option<f64>>,
    /// Dice of the window (as an all-positive prediction) against each region.
    pub dice: PerRegion<Option<f64>>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub tumor_fraction: f64,
    /// `None` when the case has no tumor.
    pub center_distance: Option<f64>,
}

/// Names of the per-patch quantities, in column order.
pub const METRICS: [&str; 14] = [
    "tumor_fraction",
    "center_distance",
    "recall_wt",
    "recall_tc",
    "recall_et",
    "recall_edema",
    "recall_necrosis",
    "dice_wt",
    "dice_tc",
    "dice_et",
    "dice_edema",
    "dice_necrosis",
    "sensitivity",
    "specificity",
];

/// The per-patch quantities as a flat row, aligned with [`METRICS`].
pub type MetricRow = [Option<f64>; METRICS.len()];

impl PatchEvaluation {
    pub fn metrics(&self) -> MetricRow {
        let mut row = [None; METRICS.len()];
        row[0] = Some(self.tumor_fraction);
        row[1] = self.center_distance;
        for (k, r) in Region::ALL.iter().enumerate() {
            row[2 + k] = self.recall.get(*r);
            row[7 + k] = self.dice.get(*r);
        }
        row[12] = self.sensitivity;
        row[13] = self.specificity;
        row
    }
}

/// Mean of the defined values, `None` if there are none.
pub fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn median_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().flatten().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// All windows of one strategy on one case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub patches: Vec<PatchEvaluation>,
    /// Window with the highest whole-tumor recall (ties: higher tumor
    /// fraction, then lower index).
    pub best_index: usize,
    pub best: MetricRow,
    /// Per-metric mean over the case's windows.
    pub mean: MetricRow,
    pub warnings: Vec<String>,
    /// Dice of the extracted ROI mask against the whole tumor, for CCA.
    pub roi_dice: Option<f64>,
    pub full_counts: LabelCounts,
    /// Label counts summed over every window of the case.
    pub patched_counts: LabelCounts,
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseFailure {
    pub case_id: String,
    pub error: String,
}

/// Corpus means of one view (best window or mean window) of the cases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewAggregate {
    /// Mean over cases of each metric, aligned with [`METRICS`].
    pub means: MetricRow,
    pub median_tumor_fraction: Option<f64>,
}

impl ViewAggregate {
    pub fn of<'a>(rows: impl Iterator<Item = &'a MetricRow> + Clone) -> Self {
        ViewAggregate {
            means: std::array::from_fn(|k| mean_defined(rows.clone().map(|r| r[k]))),
            median_tumor_fraction: median_defined(rows.map(|r| r[0])),
        }
    }

    pub fn mean_of(&self, metric: &str) -> Option<f64> {
        METRICS.iter().position(|m| *m == metric).and_then(|k| self.means[k])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: Strategy,
    pub cases: Vec<CaseResult>,
    pub failures: Vec<CaseFailure>,
    pub patch_count: usize,
    pub best: ViewAggregate,
    pub mean: ViewAggregate,
    /// Patching time summed over cases; `None` when timing is disabled.
    pub seconds: Option<f64>,
}

impl StrategyReport {
    fn new(strategy: Strategy, mut cases: Vec<CaseResult>, mut failures: Vec<CaseFailure>, timed: bool) -> Self {
        cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        failures.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        StrategyReport {
            strategy,
            patch_count: cases.iter().map(|c| c.patches.len()).sum(),
            best: ViewAggregate::of(cases.iter().map(|c| &c.best)),
            mean: ViewAggregate::of(cases.iter().map(|c| &c.mean)),
            seconds: timed.then(|| cases.iter().filter_map(|c| c.seconds).sum()),
            cases,
            failures,
        }
    }

    pub fn full_counts(&self) -> LabelCounts {
        let mut c = LabelCounts::default();
        for case in &self.cases {
            c.merge(&case.full_counts);
        }
        c
    }

    pub fn patched_counts(&self) -> LabelCounts {
        let mut c = LabelCounts::default();
        for case in &self.cases {
            c.merge(&case.patched_counts);
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceRow {
    pub counts: LabelCounts,
    pub tumor_fraction: f64,
    pub tumor_to_background: Option<f64>,
}

impl ImbalanceRow {
    fn of(counts: LabelCounts) -> Self {
        ImbalanceRow {
            counts,
            tumor_fraction: counts.tumor_fraction(),
            tumor_to_background: counts.tumor_to_background(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyImbalance {
    pub strategy: Strategy,
    pub patched: ImbalanceRow,
    /// Patched over full-volume tumor fraction, over the cases this strategy processed.
    pub improvement: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseImbalance {
    pub case_id: String,
    pub full: LabelCounts,
    pub patched: Vec<(Strategy, LabelCounts)>,
}

/// Class balance of the corpus before and after each strategy's patching.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceReport {
    pub full: ImbalanceRow,
    pub strategies: Vec<StrategyImbalance>,
    pub cases: Vec<CaseImbalance>,
}

pub fn imbalance_report(reports: &[StrategyReport]) -> ImbalanceReport {
    let mut cases: Vec<CaseImbalance> = Vec::new();
    for report in reports {
        for c in &report.cases {
            let row = match cases.iter_mut().find(|r| r.case_id == c.case_id) {
                Some(row) => row,
                None => {
                    cases.push(CaseImbalance { case_id: c.case_id.clone(), full: c.full_counts, patched: Vec::new() });
                    cases.last_mut().expect("just pushed")
                }
            };
            row.patched.push((report.strategy, c.patched_counts));
        }
    }
    cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let mut full = LabelCounts::default();
    for c in &cases {
        full.merge(&c.full);
    }
    let strategies = reports
        .iter()
        .map(|r| {
            let before = r.full_counts();
            let after = r.patched_counts();
            StrategyImbalance {
                strategy: r.strategy,
                patched: ImbalanceRow::of(after),
                improvement: (before.tumor() > 0).then(|| after.tumor_fraction() / before.tumor_fraction()),
            }
        })
        .collect();
    ImbalanceReport { full: ImbalanceRow::of(full), strategies, cases }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub reports: Vec<StrategyReport>,
    pub imbalance: ImbalanceReport,
}

impl Comparison {
    pub fn report(&self, strategy: Strategy) -> Option<&StrategyReport> {
        self.reports.iter().find(|r| r.strategy == strategy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    /// Record wall time. Timed reports are not byte-reproducible.
    pub timing: bool,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { timing: true, jobs: None }
    }
}

fn score_case(case: &Case, strategy: Strategy, params: &PatchParams, timing: bool) -> Result<CaseResult> {
    let mask = case
        .mask()
        .ok_or_else(|| Error::Empty(format!("case {} has no ground-truth mask", case.case_id())))?;
    let start = Instant::now();
    let placed = windows(case, strategy, params)?;
    let seconds = timing.then(|| start.elapsed().as_secs_f64());
    let truth = Truth::new(mask)?;
    let patches = placed.iter().map(|w| truth.evaluate(&w.spec)).collect::<Result<Vec<_>>>()?;
    if patches.is_empty() {
        return Err(Error::Empty(format!("{strategy} placed no window on {}", case.case_id())));
    }
    let key = |p: &PatchEvaluation| (p.recall.wt.unwrap_or(f64::NEG_INFINITY), p.tumor_fraction);
    let mut best = 0;
    for (k, p) in patches.iter().enumerate().skip(1) {
        let (r, f) = key(p);
        let (br, bf) = key(&patches[best]);
        if r > br || (r == br && f > bf) {
            best = k;
        }
    }
    let rows: Vec<MetricRow> = patches.iter().map(PatchEvaluation::metrics).collect();
    let mut patched = LabelCounts::default();
    for p in &patches {
        patched.merge(&p.counts);
    }
    Ok(CaseResult {
        case_id: case.case_id().to_string(),
        best_index: best,
        best: rows[best],
        mean: std::array::from_fn(|k| mean_defined(rows.iter().map(|r| r[k]))),
        warnings: placed.iter().flat_map(|w| w.provenance.warnings.iter().cloned()).collect(),
        roi_dice: placed[best].provenance.roi_dice,
        full_counts: truth.counts(),
        patched_counts: patched,
        seconds,
        patches,
    })
}

/// Run every strategy over every case and aggregate.
///
/// A case that fails to load or to patch is recorded as a failure for the
/// affected strategies; the rest of the corpus is unaffected.
pub fn compare_strategies<S: CaseSource + ?Sized>(
    source: &S,
    strategies: &[Strategy],
    params: &PatchParams,
    options: EvalOptions,
) -> Result<Comparison> {
    if strategies.is_empty() {
        return Err(Error::InvalidParameter("no strategies to compare".into()));
    }
    let run = || -> Vec<Vec<std::result::Result<CaseResult, CaseFailure>>> {
        (0..source.len())
            .into_par_iter()
            .map(|i| {
                let fail = |e: Error| CaseFailure { case_id: source.case_id(i), error: e.to_string() };
                match source.load(i) {
                    Ok(case) => strategies
                        .iter()
                        .map(|&s| {
                            score_case(&case, s, params, options.timing).map_err(|e| {
                                log::warn!("{} / {s}: {e}", case.case_id());
                                fail(e)
                            })
                        })
                        .collect(),
                    Err(e) => {
                        log::warn!("{}: {e}", source.case_id(i));
                        let f = fail(e);
                        strategies.iter().map(|_| Err(f.clone())).collect()
                    }
                }
            })
            .collect()
    };
    let per_case = match options.jobs {
        Some(0) => return Err(Error::InvalidParameter("jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let mut ok: Vec<Vec<CaseResult>> = strategies.iter().map(|_| Vec::new()).collect();
    let mut failed: Vec<Vec<CaseFailure>> = strategies.iter().map(|_| Vec::new()).collect();
    for case in per_case {
        for (k, r) in case.into_iter().enumerate() {
            match r {
                Ok(r) => ok[k].push(r),
                Err(f) => failed[k].push(f),
            }
        }
    }
    let reports: Vec<StrategyReport> = strategies
        .iter()
        .zip(ok.into_iter().zip(failed))
        .map(|(&s, (ok, failed))| StrategyReport::new(s, ok, failed, options.timing))
        .collect();
    let imbalance = imbalance_report(&reports);
    Ok(Comparison { reports, imbalance })
}

pub fn evaluate_strategy<S: CaseSource + ?Sized>(
    source: &S,
    strategy: Strategy,
    params: &PatchParams,
    options: EvalOptions,
) -> Result<StrategyReport> {
    let mut c = compare_strategies(source, &[strategy], params, options)?;
    Ok(c.reports.remove(0))
}
